#pragma once

// Finite-horizon system-level analysis of the identified predictor.
//
// Stacked dynamics over t = 0..T:  x = Z Acal x + Z Bcal u + gamma, with
// Acal = blkdiag(A_0, ..., A_{T-1}, 0), Bcal = blkdiag(B_0, ..., B_{T-1}, 0),
// Z the block-downshift and gamma = [x_0; w_1; ...; w_T]. A response
// [Tg; Tu] maps gamma to [x; u].
//
// Model error is Delta = Z [Acal - Acal_id, Bcal - Bcal_id], so the true
// system satisfies [I - Z Acal, -Z Bcal] Tbar = I - Delta Tbar for the
// identified response Tbar.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace kls {

struct StackedSystem {
    int T = 0;
    int p = 0;
    int q = 0;
    Eigen::MatrixXd A; // (T+1)p x (T+1)p
    Eigen::MatrixXd B; // (T+1)p x (T+1)q
    Eigen::MatrixXd Z; // (T+1)p x (T+1)p
};

StackedSystem build_stacked(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, int T);
/// Time-varying variant: A_t, B_t for t = 0..T-1.
StackedSystem build_stacked(const std::vector<Eigen::MatrixXd>& A, const std::vector<Eigen::MatrixXd>& B);
Eigen::MatrixXd downshift(int blocks, int block_size);

struct SystemResponse {
    Eigen::MatrixXd Tg; // (T+1)p x (T+1)p
    Eigen::MatrixXd Tu; // (T+1)q x (T+1)p
    Eigen::MatrixXd stacked() const; // [Tg; Tu]
};

/// (I - M)^{-1} for nilpotent M as the finite sum sum_{k<=K} M^k.
Eigen::MatrixXd nilpotent_inverse(const Eigen::MatrixXd& M, int K);

/// Tg = (I - Z A)^{-1} (I + Z B Tu). Throws NumericError if the response
/// identity misses by more than 1e-10.
SystemResponse response_of(const StackedSystem& s, const Eigen::MatrixXd& Tu);
/// max |[I - Z A, -Z B][Tg; Tu] - I|.
double sls_residual(const StackedSystem& s, const SystemResponse& r);

/// Z [A_true - A_id, B_true - B_id].
Eigen::MatrixXd model_error(const StackedSystem& truth, const StackedSystem& identified);

/// Drops the first block column of Tbar / first block row of Delta
/// (the x_0 channel, which Delta never touches).
Eigen::MatrixXd drop_first_block_col(const Eigen::MatrixXd& M, int block);
Eigen::MatrixXd drop_first_block_row(const Eigen::MatrixXd& M, int block);

/// Response of the true system under the controller Tu_bar Tg_bar^{-1}:
/// Tbar + Tbar Delta (I - Tbar Delta)^{-1} Tbar. Throws BoundInapplicable
/// when |Tbar^g Delta^g|_2 >= 1.
Eigen::MatrixXd true_response_under_identified(const SystemResponse& identified, const Eigen::MatrixXd& Delta,
                                               int p, int T);

struct Deviation {
    Eigen::VectorXd vector; // [x_bar; u_bar] - [x; u]
    double norm = 0.0;
};

/// (Tbar - T) gamma + Tbar Delta (I - Tbar Delta)^{-1} Tbar gamma, where T
/// is the true system's response to the same Tu (exact disturbance feedback).
Deviation open_loop_deviation(const SystemResponse& identified, const SystemResponse& ideal,
                              const Eigen::MatrixXd& Delta, const Eigen::VectorXd& gamma, int p, int T);

/// Brute-force time stepping of x_{t+1} = A_t x_t + B_t u_t + w_{t+1} with
/// causal feedback u_t = sum_{s<=t} K_{t,s} x_s. Returns [x; u].
Eigen::VectorXd simulate_feedback(const std::vector<Eigen::MatrixXd>& A, const std::vector<Eigen::MatrixXd>& B,
                                  const Eigen::MatrixXd& K, const Eigen::VectorXd& gamma);
/// Same with feedforward u = Tu gamma.
Eigen::VectorXd simulate_feedforward(const std::vector<Eigen::MatrixXd>& A, const std::vector<Eigen::MatrixXd>& B,
                                     const Eigen::MatrixXd& Tu, const Eigen::VectorXd& gamma);
/// K = Tu Tg^{-1}.
Eigen::MatrixXd controller_of(const SystemResponse& r);

/// Random matrix with induced 2-norm exactly eps.
Eigen::MatrixXd random_on_sphere(int rows, int cols, double eps, std::uint64_t seed);
double induced_norm(const Eigen::MatrixXd& M);

struct DeviationLevel {
    double epsilon = 0.0;
    double max_deviation = 0.0;
    double max_bound = 0.0;
    bool bound_holds = true;  // deviation <= bound for every sample
    bool neumann_ok = true;   // |Tbar^g Delta^g| < 1 for every sample
};

struct DeviationReport {
    std::vector<DeviationLevel> levels;
    bool monotone = true; // max deviation strictly decreasing along decreasing positive levels
    std::string csv() const;
};

struct DeviationCheckConfig {
    int T = 10;
    int samples = 20;
    std::uint64_t seed = 1;
    double response_scale = 0.1; // entries of the causal Tu blocks
    double disturbance_scale = 0.1;
};

/// For each eps, samples per-step perturbations |dA_t| = |dB_t| = eps and
/// records the largest open-loop deviation and its norm-chain bound
/// 2 eps (|(I - Z A)^{-1}| + |Tbar^g| |(I - Tbar Delta)^{-1}|) |Tbar gamma|.
DeviationReport deviation_bound_check(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                      const std::vector<double>& levels, const DeviationCheckConfig& cfg);

} // namespace kls
