#pragma once

// Observable encoders phi: delay window -> latent observables.
//
// Inputs are channel-major windows [w(t-tau..t), y_1(t-tau..t), ...],
// batched as columns. Trainable parameters live in a flat vector owned by
// the caller so optimizers and finite-difference checks can treat every
// variant the same way.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace kls {

enum class Activation { Tanh, Relu, Identity };

struct EncoderSpec {
    enum class Kind { Mlp, ResConv, PassThrough, Rbf };
    Kind kind = Kind::Mlp;
    int channels = 1;
    int window_len = 1;
    int latent = 15; // output size for Mlp/ResConv; derived for the fixed kinds

    // Mlp: hidden widths. ResConv: widths of the two hidden FC layers.
    std::vector<int> hidden = {64, 64};
    Activation activation = Activation::Tanh;

    // ResConv
    std::vector<int> conv_channels = {16, 16, 16};
    std::vector<int> kernels = {5, 3, 3};

    // PassThrough / Rbf: trailing samples taken per channel. The current
    // frequency sample is excluded since it is already g[0].
    int lags = 1;

    // Per-channel multiplier applied to the window before Mlp/ResConv.
    std::vector<double> input_scale;

    // Rbf dictionary over the standardized instantaneous state
    // z = [w_t; pass-through features]: exp(-|z - c|^2 / (2 bw^2)).
    Eigen::MatrixXd centers; // dim(z) x count
    Eigen::VectorXd z_mean;
    Eigen::VectorXd z_scale; // multiplier
    double bandwidth = 1.0;
};

void to_json(nlohmann::json& j, const EncoderSpec& s);
void from_json(const nlohmann::json& j, EncoderSpec& s);

/// Intermediate activations saved by forward() for backward().
struct EncoderCache {
    std::vector<Eigen::MatrixXd> m;
};

class Encoder {
public:
    Encoder();
    explicit Encoder(EncoderSpec spec);

    const EncoderSpec& spec() const { return spec_; }
    int input_len() const { return spec_.channels * spec_.window_len; }
    int output_dim() const { return out_dim_; }
    std::size_t param_count() const { return n_params_; }
    bool trainable() const { return n_params_ > 0; }

    /// Small random parameters, deterministic in the seed.
    Eigen::VectorXd init_params(std::uint64_t seed) const;

    /// X: input_len x N raw windows -> output_dim x N.
    Eigen::MatrixXd forward(const Eigen::VectorXd& theta, const Eigen::MatrixXd& X,
                            EncoderCache* cache = nullptr) const;

    /// Adds d(sum <dY, Y>)/d(theta) to grad.
    void backward(const Eigen::VectorXd& theta, const EncoderCache& cache, const Eigen::MatrixXd& dY,
                  Eigen::VectorXd& grad) const;

    /// Human-readable location of parameter index i (for error messages).
    std::string param_name(std::size_t i) const;

private:
    struct Block {
        std::string name;
        std::size_t offset;
        int rows;
        int cols;
    };
    EncoderSpec spec_;
    int out_dim_ = 0;
    std::size_t n_params_ = 0;
    std::vector<Block> blocks_;

    std::size_t add_block(const std::string& name, int rows, int cols);
    Eigen::MatrixXd scaled_input(const Eigen::MatrixXd& X) const;
    Eigen::MatrixXd pass_features(const Eigen::MatrixXd& X) const;

    Eigen::MatrixXd mlp_forward(const Eigen::VectorXd& theta, std::size_t first_block, const Eigen::MatrixXd& X,
                                EncoderCache* cache) const;
    Eigen::MatrixXd mlp_backward(const Eigen::VectorXd& theta, std::size_t first_block, const EncoderCache& cache,
                                 std::size_t cache_offset, const Eigen::MatrixXd& dY, Eigen::VectorXd& grad) const;

    Eigen::MatrixXd resconv_forward(const Eigen::VectorXd& theta, const Eigen::MatrixXd& X,
                                    EncoderCache* cache) const;
    void resconv_backward(const Eigen::VectorXd& theta, const EncoderCache& cache, const Eigen::MatrixXd& dY,
                          Eigen::VectorXd& grad) const;
    Eigen::MatrixXd rbf_forward(const Eigen::MatrixXd& X) const;
};

double activate(Activation a, double x);

} // namespace kls
