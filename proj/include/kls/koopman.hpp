#pragma once

// Delay-embedded Koopman predictor g_{t+1} = A g_t + B u_t with
// g_t = [w_t; phi(window_t)], its multi-step loss, exact gradients and
// the training loop.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "kls/dataset.hpp"
#include "kls/encoder.hpp"

namespace kls {

struct TrainMeta {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int epochs = 0;
    bool converged = false;
    /// max over training trajectories of |w_hat_t - w_t| for open-loop
    /// rollouts from the first sample, overall and per step t = 1..T.
    double max_pred_err = 0.0;
    std::vector<double> max_pred_err_per_step;
};

struct KoopmanModel {
    std::string method = "kls";
    Eigen::MatrixXd A; // p x p
    Eigen::MatrixXd B; // p x q
    Encoder encoder;
    Eigen::VectorXd theta; // encoder parameters
    double tau = 0.3;      // embedding window
    double dt_embed = 0.01;
    TrainMeta meta;

    int p() const { return static_cast<int>(A.rows()); }
    int q() const { return static_cast<int>(B.cols()); }

    /// g = [omega; phi(window)].
    Eigen::VectorXd encode(const std::vector<double>& window, double omega) const;
    /// Batched: X is input_len x N, omega has N entries.
    Eigen::MatrixXd encode_batch(const Eigen::MatrixXd& X, const Eigen::RowVectorXd& omega) const;
    /// Window of a stored trajectory at coarse index k in this model's embedding.
    std::vector<double> window(const Trajectory& tr, int k) const;
    /// Encoded state at coarse index k.
    Eigen::VectorXd state(const Trajectory& tr, int k) const;

    void check() const;
};

void to_json(nlohmann::json& j, const KoopmanModel& m);
void from_json(const nlohmann::json& j, KoopmanModel& m);
void save_model(const KoopmanModel& m, const std::string& path);
KoopmanModel load_model(const std::string& path);

/// Predicted states g_hat_{1->t}, t = 2..T, as columns of a p x (T-1)
/// matrix. U is q x (T-1); column t-2 is the input applied between t-1 and t.
Eigen::MatrixXd rollout(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::VectorXd& g1,
                        const Eigen::MatrixXd& U);
/// Constant-input convenience.
Eigen::MatrixXd rollout_constant(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::VectorXd& g1,
                                 const Eigen::VectorXd& u, int T);

/// Predicted frequency w_hat_1..w_hat_T of a trajectory under constant
/// input u, starting from the measured first sample.
std::vector<double> predict_omega(const KoopmanModel& m, const Trajectory& tr, const Eigen::VectorXd& u);

/// Training sequences in matrix form. Column i*T + t belongs to trajectory
/// i at coarse index t.
struct SeqData {
    Eigen::MatrixXd X;          // input_len x n*T
    Eigen::RowVectorXd omega;   // n*T
    Eigen::MatrixXd U;          // q x n*T (input applied after index t; last column unused)
    int n = 0;
    int T = 0;
};

/// Windows are built with the given tau/dt_embed; inputs are each
/// record's applied shedding held constant.
SeqData make_sequences(const std::vector<Record>& records, double tau, double dt_embed);
SeqData subset(const SeqData& d, const std::vector<int>& traj);

struct LossOptions {
    int max_span = 20;          // largest t - s; 0 means the full horizon
    double omega_weight = 1.0;  // weight on the frequency row of every residual
};

struct LossGrad {
    double loss = 0.0;
    Eigen::MatrixXd dA;
    Eigen::MatrixXd dB;
    Eigen::VectorXd dtheta;
};

/// sum_i sum_s sum_{t>s, t-s<=span} || W (g_hat_{s->t} - g_t) ||^2.
double loss(const KoopmanModel& m, const SeqData& d, const LossOptions& opt = {});
/// Loss with exact reverse-mode gradients. Throws NumericError naming the
/// first non-finite gradient entry.
LossGrad loss_and_gradients(const KoopmanModel& m, const SeqData& d, const LossOptions& opt = {});

struct TrainConfig {
    enum class Optimizer { Adam, Momentum };
    Optimizer optimizer = Optimizer::Adam;
    double learning_rate = 1e-3;
    double lr_decay = 0.998; // per-epoch multiplicative factor
    double momentum = 0.9;
    int epochs = 2000;
    int batch_size = 20; // trajectories per step, 0 = full batch
    std::uint64_t seed = 1;
    double tolerance = 1e-12; // stop once the epoch loss falls below
    int max_span = 20;
    double omega_weight = 1e4;
    int log_every = 0; // epochs between stderr progress lines, 0 = silent
};
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Initial model: A = 0.99 I, small random B and encoder parameters.
KoopmanModel init_model(const EncoderSpec& spec, int q, double tau, double dt_embed, std::uint64_t seed);

/// Per-channel 1/std of the windows (1 for constant channels).
std::vector<double> channel_scales(const SeqData& d, int channels);

/// Runs the optimizer on a prepared initial model.
KoopmanModel train(KoopmanModel model, const SeqData& data, const TrainConfig& cfg);
/// Convenience: builds sequences, sets input scales and trains.
KoopmanModel train(const std::vector<Record>& records, EncoderSpec spec, double tau, double dt_embed,
                   const TrainConfig& cfg);

/// Fills meta.max_pred_err from open-loop rollouts over the data.
void record_prediction_error(KoopmanModel& m, const SeqData& d);

struct LatentCorrelation {
    std::vector<double> r_inertia;
    std::vector<double> r_deficit;
    std::vector<bool> degenerate;
    int best_inertia = -1; // latent index (0-based within phi)
    int best_deficit = -1;
};

/// Pearson r of every latent coordinate (first post-fault window) against
/// the two labels.
LatentCorrelation latent_correlation(const KoopmanModel& m, const std::vector<Record>& records,
                                     const std::vector<double>& inertia, const std::vector<double>& deficit);

/// Pearson correlation; zero-variance input yields 0 and sets *degenerate.
double pearson(const std::vector<double>& x, const std::vector<double>& y, bool* degenerate = nullptr);

} // namespace kls
