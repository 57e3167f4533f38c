#include "kls/encoder.hpp"

#include <cmath>
#include <random>

#include "kls/errors.hpp"

namespace kls {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using MapM = Eigen::Map<const Mat>;
using MapMw = Eigen::Map<Mat>;

void apply_activation(Activation a, Mat& z) {
    switch (a) {
    case Activation::Tanh: z = z.array().tanh(); break;
    case Activation::Relu: z = z.array().max(0.0); break;
    case Activation::Identity: break;
    }
}

// d(act)/dz expressed through the activation output h.
void mul_derivative(Activation a, const Mat& h, Mat& d) {
    switch (a) {
    case Activation::Tanh: d.array() *= 1.0 - h.array().square(); break;
    case Activation::Relu: d.array() *= (h.array() > 0.0).cast<double>(); break;
    case Activation::Identity: break;
    }
}

// Same-padded 1-D convolution on transposed batches: rows are samples,
// column c*L + t holds channel c at time t.
Mat conv_forward(const Mat& in, int cin, int L, const MapM& W, int k) {
    const int cout = static_cast<int>(W.rows());
    const int pad = k / 2;
    Mat out = Mat::Zero(in.rows(), static_cast<Eigen::Index>(cout) * L);
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
            for (int j = 0; j < k; ++j) {
                const double w = W(co, ci * k + j);
                for (int t = 0; t < L; ++t) {
                    const int s = t + j - pad;
                    if (s < 0 || s >= L) continue;
                    out.col(co * L + t) += w * in.col(ci * L + s);
                }
            }
    return out;
}

void conv_backward(const Mat& in, int cin, int L, const MapM& W, int k, const Mat& dout, MapMw dW, Mat* din) {
    const int cout = static_cast<int>(W.rows());
    const int pad = k / 2;
    if (din) *din = Mat::Zero(in.rows(), in.cols());
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
            for (int j = 0; j < k; ++j) {
                const double w = W(co, ci * k + j);
                double acc = 0.0;
                for (int t = 0; t < L; ++t) {
                    const int s = t + j - pad;
                    if (s < 0 || s >= L) continue;
                    acc += dout.col(co * L + t).dot(in.col(ci * L + s));
                    if (din) din->col(ci * L + s) += w * dout.col(co * L + t);
                }
                dW(co, ci * k + j) += acc;
            }
}

// Per-channel affine a*s + b on transposed batches.
Mat channel_affine(const Mat& s, int L, const double* a, const double* b) {
    Mat z(s.rows(), s.cols());
    const int C = static_cast<int>(s.cols()) / L;
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < L; ++t) z.col(c * L + t) = a[c] * s.col(c * L + t).array() + b[c];
    return z;
}

void channel_affine_backward(const Mat& s, int L, const double* a, const Mat& dz, double* da, double* db, Mat& ds) {
    const int C = static_cast<int>(s.cols()) / L;
    ds.resize(s.rows(), s.cols());
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < L; ++t) {
            da[c] += dz.col(c * L + t).dot(s.col(c * L + t));
            db[c] += dz.col(c * L + t).sum();
            ds.col(c * L + t) = a[c] * dz.col(c * L + t);
        }
}

const char* kind_name(EncoderSpec::Kind k) {
    switch (k) {
    case EncoderSpec::Kind::Mlp: return "mlp";
    case EncoderSpec::Kind::ResConv: return "resconv";
    case EncoderSpec::Kind::PassThrough: return "passthrough";
    case EncoderSpec::Kind::Rbf: return "rbf";
    }
    return "?";
}

const char* activation_name(Activation a) {
    switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
    }
    return "?";
}

} // namespace

double activate(Activation a, double x) {
    switch (a) {
    case Activation::Tanh: return std::tanh(x);
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Identity: return x;
    }
    return x;
}

namespace {
EncoderSpec passthrough_spec() {
    EncoderSpec s;
    s.kind = EncoderSpec::Kind::PassThrough;
    return s;
}
} // namespace

Encoder::Encoder() : Encoder(passthrough_spec()) {}

Encoder::Encoder(EncoderSpec spec) : spec_(std::move(spec)) {
    auto& s = spec_;
    if (s.channels < 1 || s.window_len < 1) throw ConfigError("encoder: channels and window_len must be >= 1");
    if (s.input_scale.empty()) s.input_scale.assign(static_cast<std::size_t>(s.channels), 1.0);
    if (static_cast<int>(s.input_scale.size()) != s.channels) throw ConfigError("encoder: input_scale size mismatch");
    const int in = input_len();
    switch (s.kind) {
    case EncoderSpec::Kind::Mlp: {
        if (s.latent < 1) throw ConfigError("encoder: latent dimension must be >= 1");
        int prev = in;
        for (std::size_t l = 0; l <= s.hidden.size(); ++l) {
            const int width = l < s.hidden.size() ? s.hidden[l] : s.latent;
            if (width < 1) throw ConfigError("encoder: layer widths must be >= 1");
            add_block("mlp" + std::to_string(l) + ".W", width, prev);
            add_block("mlp" + std::to_string(l) + ".b", width, 1);
            prev = width;
        }
        out_dim_ = s.latent;
        break;
    }
    case EncoderSpec::Kind::ResConv: {
        if (s.latent < 1) throw ConfigError("encoder: latent dimension must be >= 1");
        if (s.conv_channels.size() != 3 || s.kernels.size() != 3 || s.hidden.size() != 2)
            throw ConfigError("encoder: resconv needs 3 conv layers and 2 hidden FC widths");
        int cin = s.channels;
        for (int l = 0; l < 3; ++l) {
            const int k = s.kernels[static_cast<std::size_t>(l)];
            const int co = s.conv_channels[static_cast<std::size_t>(l)];
            if (k < 1 || k % 2 == 0 || co < 1) throw ConfigError("encoder: kernels must be odd and widths >= 1");
            add_block("conv" + std::to_string(l) + ".W", co, cin * k);
            add_block("conv" + std::to_string(l) + ".scale", co, 1);
            add_block("conv" + std::to_string(l) + ".shift", co, 1);
            cin = co;
        }
        add_block("res.W", cin, s.channels);
        add_block("res.scale", cin, 1);
        add_block("res.shift", cin, 1);
        int prev = cin + s.channels;
        for (std::size_t l = 0; l < 3; ++l) {
            const int width = l < 2 ? s.hidden[l] : s.latent;
            if (width < 1) throw ConfigError("encoder: layer widths must be >= 1");
            add_block("fc" + std::to_string(l) + ".W", width, prev);
            add_block("fc" + std::to_string(l) + ".b", width, 1);
            prev = width;
        }
        out_dim_ = s.latent;
        break;
    }
    case EncoderSpec::Kind::PassThrough:
    case EncoderSpec::Kind::Rbf: {
        if (s.lags < 1 || s.lags > s.window_len) throw ConfigError("encoder: lags must lie in [1, window_len]");
        const int pass = s.channels * s.lags - 1;
        out_dim_ = pass;
        if (s.kind == EncoderSpec::Kind::Rbf) {
            const int zdim = pass + 1;
            if (s.centers.cols() > 0 && s.centers.rows() != zdim)
                throw ConfigError("encoder: rbf center dimension mismatch");
            if (s.z_mean.size() == 0) s.z_mean = Vec::Zero(zdim);
            if (s.z_scale.size() == 0) s.z_scale = Vec::Ones(zdim);
            if (s.z_mean.size() != zdim || s.z_scale.size() != zdim)
                throw ConfigError("encoder: rbf standardization size mismatch");
            if (!(s.bandwidth > 0.0)) throw ConfigError("encoder: rbf bandwidth must be positive");
            out_dim_ += static_cast<int>(s.centers.cols());
        }
        s.latent = out_dim_;
        break;
    }
    }
}

std::size_t Encoder::add_block(const std::string& name, int rows, int cols) {
    blocks_.push_back({name, n_params_, rows, cols});
    n_params_ += static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    return blocks_.size() - 1;
}

std::string Encoder::param_name(std::size_t i) const {
    for (const auto& b : blocks_) {
        const std::size_t n = static_cast<std::size_t>(b.rows) * static_cast<std::size_t>(b.cols);
        if (i >= b.offset && i < b.offset + n) {
            const std::size_t k = i - b.offset;
            return "encoder." + b.name + "(" + std::to_string(k % static_cast<std::size_t>(b.rows)) + "," +
                   std::to_string(k / static_cast<std::size_t>(b.rows)) + ")";
        }
    }
    return "encoder[" + std::to_string(i) + "]";
}

Vec Encoder::init_params(std::uint64_t seed) const {
    Vec theta = Vec::Zero(static_cast<Eigen::Index>(n_params_));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
        const auto& b = blocks_[bi];
        const bool last = bi + 2 == blocks_.size();
        const auto n = static_cast<Eigen::Index>(b.rows) * b.cols;
        auto seg = theta.segment(static_cast<Eigen::Index>(b.offset), n);
        if (b.name.ends_with(".W")) {
            const double sd = (last ? 0.3 : 1.0) / std::sqrt(static_cast<double>(b.cols));
            for (Eigen::Index i = 0; i < n; ++i) seg[i] = sd * normal(rng);
        } else if (b.name.ends_with(".scale")) {
            seg.setOnes();
        }
    }
    return theta;
}

Mat Encoder::scaled_input(const Mat& X) const {
    Mat xs = X;
    const int L = spec_.window_len;
    for (int c = 0; c < spec_.channels; ++c) xs.middleRows(c * L, L) *= spec_.input_scale[static_cast<std::size_t>(c)];
    return xs;
}

Mat Encoder::pass_features(const Mat& X) const {
    const int L = spec_.window_len;
    const int lags = spec_.lags;
    Mat out(spec_.channels * lags - 1, X.cols());
    int r = 0;
    for (int c = 0; c < spec_.channels; ++c)
        for (int l = 0; l < lags; ++l) {
            if (c == 0 && l == lags - 1) continue;
            out.row(r++) = X.row(c * L + L - lags + l);
        }
    return out;
}

Mat Encoder::rbf_forward(const Mat& X) const {
    const Mat pass = pass_features(X);
    const auto count = spec_.centers.cols();
    Mat out(pass.rows() + count, X.cols());
    out.topRows(pass.rows()) = pass;
    if (count == 0) return out;
    const int L = spec_.window_len;
    Mat z(pass.rows() + 1, X.cols());
    z.row(0) = X.row(L - 1);
    z.bottomRows(pass.rows()) = pass;
    z = (z.colwise() - spec_.z_mean).array().colwise() * spec_.z_scale.array();
    const double inv = 1.0 / (2.0 * spec_.bandwidth * spec_.bandwidth);
    for (Eigen::Index j = 0; j < count; ++j)
        out.row(pass.rows() + j) = (-(z.colwise() - spec_.centers.col(j)).colwise().squaredNorm() * inv).array().exp();
    return out;
}

Mat Encoder::mlp_forward(const Vec& theta, std::size_t first_block, const Mat& X, EncoderCache* cache) const {
    const std::size_t layers = spec_.hidden.size() + 1;
    Mat h = X;
    if (cache) cache->m.push_back(h);
    for (std::size_t l = 0; l < layers; ++l) {
        const auto& bw = blocks_[first_block + 2 * l];
        const auto& bb = blocks_[first_block + 2 * l + 1];
        MapM W(theta.data() + bw.offset, bw.rows, bw.cols);
        Eigen::Map<const Vec> b(theta.data() + bb.offset, bb.rows);
        Mat z = W * h;
        z.colwise() += b;
        if (l + 1 < layers) apply_activation(spec_.activation, z);
        h = std::move(z);
        if (cache) cache->m.push_back(h);
    }
    return h;
}

Mat Encoder::mlp_backward(const Vec& theta, std::size_t first_block, const EncoderCache& cache,
                          std::size_t cache_offset, const Mat& dY, Vec& grad) const {
    const std::size_t layers = spec_.hidden.size() + 1;
    Mat d = dY;
    for (std::size_t l = layers; l-- > 0;) {
        const auto& bw = blocks_[first_block + 2 * l];
        const auto& bb = blocks_[first_block + 2 * l + 1];
        const Mat& h_out = cache.m[cache_offset + l + 1];
        const Mat& h_in = cache.m[cache_offset + l];
        if (l + 1 < layers) mul_derivative(spec_.activation, h_out, d);
        MapM W(theta.data() + bw.offset, bw.rows, bw.cols);
        MapMw(grad.data() + bw.offset, bw.rows, bw.cols).noalias() += d * h_in.transpose();
        Eigen::Map<Vec>(grad.data() + bb.offset, bb.rows) += d.rowwise().sum();
        Mat prev = W.transpose() * d;
        d = std::move(prev);
    }
    return d;
}

// Cache layout: [x^T, s1, h1, s2, h2, s3, sr, h3, mlp-head cache...]
Mat Encoder::resconv_forward(const Vec& theta, const Mat& X, EncoderCache* cache) const {
    const int L = spec_.window_len;
    const Mat xt = scaled_input(X).transpose();
    auto W = [&](std::size_t bi) {
        const auto& b = blocks_[bi];
        return MapM(theta.data() + b.offset, b.rows, b.cols);
    };
    auto P = [&](std::size_t bi) { return theta.data() + blocks_[bi].offset; };
    std::vector<Mat> saved;
    Mat in = xt;
    int cin = spec_.channels;
    Mat s3;
    for (int l = 0; l < 3; ++l) {
        const std::size_t base = static_cast<std::size_t>(3 * l);
        const int k = spec_.kernels[static_cast<std::size_t>(l)];
        Mat s = conv_forward(in, cin, L, W(base), k);
        if (l < 2) {
            Mat h = channel_affine(s, L, P(base + 1), P(base + 2));
            apply_activation(spec_.activation, h);
            saved.push_back(s);
            saved.push_back(h);
            in = std::move(h);
            cin = spec_.conv_channels[static_cast<std::size_t>(l)];
        } else {
            s3 = std::move(s);
        }
    }
    const int c3 = spec_.conv_channels[2];
    Mat sr = conv_forward(xt, spec_.channels, L, W(9), 1);
    Mat h3 = channel_affine(s3, L, P(7), P(8)) + channel_affine(sr, L, P(10), P(11));
    apply_activation(spec_.activation, h3);

    Mat f0(c3 + spec_.channels, X.cols());
    for (int c = 0; c < c3; ++c) f0.row(c) = h3.middleCols(c * L, L).rowwise().mean().transpose();
    for (int c = 0; c < spec_.channels; ++c) f0.row(c3 + c) = xt.col(c * L + L - 1).transpose();
    if (cache) {
        cache->m.clear();
        cache->m.push_back(xt);
        for (auto& m : saved) cache->m.push_back(std::move(m));
        cache->m.push_back(std::move(s3));
        cache->m.push_back(std::move(sr));
        cache->m.push_back(std::move(h3));
    }
    return mlp_forward(theta, 12, f0, cache);
}

void Encoder::resconv_backward(const Vec& theta, const EncoderCache& cache, const Mat& dY, Vec& grad) const {
    const int L = spec_.window_len;
    const int c3 = spec_.conv_channels[2];
    auto W = [&](std::size_t bi) {
        const auto& b = blocks_[bi];
        return MapM(theta.data() + b.offset, b.rows, b.cols);
    };
    auto G = [&](std::size_t bi) {
        const auto& b = blocks_[bi];
        return MapMw(grad.data() + b.offset, b.rows, b.cols);
    };
    auto P = [&](std::size_t bi) { return theta.data() + blocks_[bi].offset; };
    auto GP = [&](std::size_t bi) { return grad.data() + blocks_[bi].offset; };

    const Mat& xt = cache.m[0];
    const Mat& s1 = cache.m[1];
    const Mat& h1 = cache.m[2];
    const Mat& s2 = cache.m[3];
    const Mat& h2 = cache.m[4];
    const Mat& s3 = cache.m[5];
    const Mat& sr = cache.m[6];
    const Mat& h3 = cache.m[7];

    const Mat df0 = mlp_backward(theta, 12, cache, 8, dY, grad);
    Mat dz(h3.rows(), h3.cols());
    for (int c = 0; c < c3; ++c)
        for (int t = 0; t < L; ++t) dz.col(c * L + t) = df0.row(c).transpose() / static_cast<double>(L);
    mul_derivative(spec_.activation, h3, dz);

    Mat ds;
    channel_affine_backward(sr, L, P(10), dz, GP(10), GP(11), ds);
    conv_backward(xt, spec_.channels, L, W(9), 1, ds, G(9), nullptr);

    channel_affine_backward(s3, L, P(7), dz, GP(7), GP(8), ds);
    Mat dh;
    conv_backward(h2, spec_.conv_channels[1], L, W(6), spec_.kernels[2], ds, G(6), &dh);

    mul_derivative(spec_.activation, h2, dh);
    channel_affine_backward(s2, L, P(4), dh, GP(4), GP(5), ds);
    conv_backward(h1, spec_.conv_channels[0], L, W(3), spec_.kernels[1], ds, G(3), &dh);

    mul_derivative(spec_.activation, h1, dh);
    channel_affine_backward(s1, L, P(1), dh, GP(1), GP(2), ds);
    conv_backward(xt, spec_.channels, L, W(0), spec_.kernels[0], ds, G(0), nullptr);
}

Mat Encoder::forward(const Vec& theta, const Mat& X, EncoderCache* cache) const {
    if (X.rows() != input_len())
        throw ArgumentError("encoder: input length " + std::to_string(X.rows()) + " != " + std::to_string(input_len()));
    if (static_cast<std::size_t>(theta.size()) != n_params_) throw ArgumentError("encoder: parameter count mismatch");
    switch (spec_.kind) {
    case EncoderSpec::Kind::Mlp:
        if (cache) cache->m.clear();
        return mlp_forward(theta, 0, scaled_input(X), cache);
    case EncoderSpec::Kind::ResConv: return resconv_forward(theta, X, cache);
    case EncoderSpec::Kind::PassThrough: return pass_features(X);
    case EncoderSpec::Kind::Rbf: return rbf_forward(X);
    }
    return {};
}

void Encoder::backward(const Vec& theta, const EncoderCache& cache, const Mat& dY, Vec& grad) const {
    if (static_cast<std::size_t>(grad.size()) != n_params_) throw ArgumentError("encoder: gradient size mismatch");
    switch (spec_.kind) {
    case EncoderSpec::Kind::Mlp: mlp_backward(theta, 0, cache, 0, dY, grad); break;
    case EncoderSpec::Kind::ResConv: resconv_backward(theta, cache, dY, grad); break;
    default: break;
    }
}

void to_json(nlohmann::json& j, const EncoderSpec& s) {
    j = nlohmann::json{{"kind", kind_name(s.kind)},
                       {"channels", s.channels},
                       {"window_len", s.window_len},
                       {"latent", s.latent},
                       {"hidden", s.hidden},
                       {"activation", activation_name(s.activation)},
                       {"conv_channels", s.conv_channels},
                       {"kernels", s.kernels},
                       {"lags", s.lags},
                       {"input_scale", s.input_scale},
                       {"bandwidth", s.bandwidth}};
    if (s.kind == EncoderSpec::Kind::Rbf) {
        auto& c = j["centers"] = nlohmann::json::array();
        for (Eigen::Index k = 0; k < s.centers.cols(); ++k)
            c.push_back(std::vector<double>(s.centers.col(k).data(), s.centers.col(k).data() + s.centers.rows()));
        j["z_mean"] = std::vector<double>(s.z_mean.data(), s.z_mean.data() + s.z_mean.size());
        j["z_scale"] = std::vector<double>(s.z_scale.data(), s.z_scale.data() + s.z_scale.size());
    }
}

void from_json(const nlohmann::json& j, EncoderSpec& s) {
    const std::string kind = j.at("kind");
    if (kind == "mlp") s.kind = EncoderSpec::Kind::Mlp;
    else if (kind == "resconv") s.kind = EncoderSpec::Kind::ResConv;
    else if (kind == "passthrough") s.kind = EncoderSpec::Kind::PassThrough;
    else if (kind == "rbf") s.kind = EncoderSpec::Kind::Rbf;
    else throw ConfigError("unknown encoder kind '" + kind + "'");
    const std::string act = j.value("activation", "tanh");
    if (act == "tanh") s.activation = Activation::Tanh;
    else if (act == "relu") s.activation = Activation::Relu;
    else if (act == "identity") s.activation = Activation::Identity;
    else throw ConfigError("unknown activation '" + act + "'");
    s.channels = j.at("channels");
    s.window_len = j.at("window_len");
    s.latent = j.value("latent", s.latent);
    s.hidden = j.value("hidden", s.hidden);
    s.conv_channels = j.value("conv_channels", s.conv_channels);
    s.kernels = j.value("kernels", s.kernels);
    s.lags = j.value("lags", s.lags);
    s.input_scale = j.value("input_scale", std::vector<double>{});
    s.bandwidth = j.value("bandwidth", 1.0);
    if (j.contains("centers")) {
        const auto& c = j.at("centers");
        const std::size_t n = c.size();
        const std::size_t d = n ? c[0].size() : 0;
        s.centers.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
        for (std::size_t k = 0; k < n; ++k) {
            const auto v = c[k].get<std::vector<double>>();
            if (v.size() != d) throw ConfigError("encoder: ragged rbf centers");
            for (std::size_t r = 0; r < d; ++r) s.centers(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = v[r];
        }
        const auto zm = j.at("z_mean").get<std::vector<double>>();
        const auto zs = j.at("z_scale").get<std::vector<double>>();
        s.z_mean = Eigen::Map<const Vec>(zm.data(), static_cast<Eigen::Index>(zm.size()));
        s.z_scale = Eigen::Map<const Vec>(zs.data(), static_cast<Eigen::Index>(zs.size()));
    }
}

} // namespace kls
