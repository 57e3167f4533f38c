#pragma once

// One-shot shedding decision: the constrained QP over the Koopman
// predictor, feeder quantization, and the safety margin that absorbs
// prediction and quantization error.
//
// Step convention: prediction k (k = 1..T) is the state k coarse steps
// after the measured g_1 under the constant input u,
//   g_hat_k(u) = A^k g_1 + S_k u,  S_k = sum_{j<k} A^j B.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "kls/koopman.hpp"

namespace kls {

/// Generic strictly convex QP: min 0.5 x'Hx + f'x  s.t.  C x >= b.
struct QpProblem {
    Eigen::MatrixXd H;
    Eigen::VectorXd f;
    Eigen::MatrixXd C;
    Eigen::VectorXd b;
};

struct QpSolution {
    Eigen::VectorXd x;
    Eigen::VectorXd lambda; // one multiplier per row of C
    std::vector<int> active;
    double objective = 0.0;
    double kkt_residual = 0.0; // max of stationarity, primal, dual and complementarity residuals
    int iterations = 0;
};

/// Dual active-set method of Goldfarb and Idnani. Throws InfeasibleError
/// (step -1) when the constraints admit no point.
QpSolution solve_dense_qp(const QpProblem& qp);
double kkt_residual(const QpProblem& qp, const Eigen::VectorXd& x, const Eigen::VectorXd& lambda);

struct SafetyConfig {
    double omega_min = -0.02;     // pu, every predicted step
    double omega_inf_min = -0.01; // pu, last predicted step
    double zeta = 0.0;            // margin added to both limits
    int T = 59;                   // predicted steps
    Eigen::MatrixXd R;            // empty means identity
};
void to_json(nlohmann::json& j, const SafetyConfig& c);
void from_json(const nlohmann::json& j, SafetyConfig& c);

/// Predicted frequency rows: C g_hat_k(u) = c[k-1] + h.row(k-1) u.
struct FrequencyMap {
    Eigen::VectorXd c; // T
    Eigen::MatrixXd h; // T x q
};
FrequencyMap frequency_map(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::VectorXd& g1, int T);

struct ControlSolution {
    Eigen::VectorXd u;
    double objective = 0.0; // u'Ru
    double kkt_residual = 0.0;
    int iterations = 0;
    std::vector<double> predicted; // C g_hat_k(u), k = 1..T
};

/// min u'Ru s.t. predicted frequency >= omega_min + zeta for k = 1..T,
/// >= omega_inf_min + zeta at k = T, and 0 <= u <= 1. Infeasibility is
/// reported with the constraint worst violated at u = 1.
ControlSolution solve_qp(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::VectorXd& g1,
                         const SafetyConfig& cfg);

/// Nearest admissible level; exact halves round up. Levels are the
/// multiples of d_i up to 1 plus 1 itself (the whole bus, whose last
/// feeder may be smaller than d_i).
Eigen::VectorXd quantize(const Eigen::VectorXd& u, const Eigen::VectorXd& d);
/// Smallest admissible level >= u_i.
Eigen::VectorXd quantize_ceil(const Eigen::VectorXd& u, const Eigen::VectorXd& d);

struct SafetyMargin {
    double zeta = 0.0;
    double max_pred_err = 0.0;
    /// |C S_k|_2 |d|_2 / 2 for k = 1..T (Cauchy-Schwarz, since every
    /// rounding error obeys |e|_2 <= |d|_2 / 2). Used in zeta.
    std::vector<double> quant_terms;
    /// sum_i |(C S_k)_i| d_i / 2, the exact worst case over rounding
    /// errors; never larger than quant_terms.
    std::vector<double> worst_case_terms;
    int worst_step = 0; // 1-based k of the largest quantization term
    double spectral_radius = 0.0;
    bool spectral_warning = false; // radius >= 1.05
};

SafetyMargin zeta_margin(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::VectorXd& d,
                         double max_pred_err, int T);

/// Per-bus quantization step in pu of each bus load.
Eigen::VectorXd feeder_step(double d_mw, const std::vector<double>& bus_mw);

struct PlanOptions {
    double d_mw = 0.0;   // feeder size; 0 disables quantization
    bool ceil = false;   // KLS-C rounding
    bool margin = true;  // add zeta from zeta_margin; otherwise use cfg.zeta
};

struct ShedPlan {
    Eigen::VectorXd u_cont;
    Eigen::VectorXd u_quant; // equals u_cont when quantization is disabled
    Eigen::VectorXd d;       // pu of bus load (empty when disabled)
    std::vector<double> bus_mw;
    double zeta = 0.0;
    SafetyMargin margin;
    ControlSolution qp;
    std::vector<double> predicted_cont;  // w_hat_k, k = 1..T
    std::vector<double> predicted_quant;

    double shed_mw() const;
};
void to_json(nlohmann::json& j, const ShedPlan& p);

/// encode -> margin -> QP -> quantize.
ShedPlan kls_pipeline(const std::vector<double>& window, double omega, const KoopmanModel& model,
                      const SafetyConfig& cfg, const std::vector<double>& bus_mw, const PlanOptions& opt);

} // namespace kls
