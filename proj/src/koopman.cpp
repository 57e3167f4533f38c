#include "kls/koopman.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "kls/errors.hpp"
#include "kls/parallel.hpp"

namespace kls {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

nlohmann::json matrix_json(const Mat& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Mat matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw IoError("matrix data size mismatch");
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    return m;
}

constexpr int kChunk = 32; // trajectories per loss chunk

struct ChunkResult {
    double loss = 0.0;
    Mat dA;
    Mat dB;
};

int span_of(const LossOptions& opt, int T) {
    if (opt.max_span < 0) throw ArgumentError("loss: max_span must be >= 0");
    return opt.max_span == 0 ? T - 1 : std::min(opt.max_span, T - 1);
}

// Rollout loss over trajectories [i0, i1); accumulates dG for their columns
// when dG is non-null.
ChunkResult chunk_loss(const Mat& A, const Mat& B, const Mat& G, const SeqData& d, int i0, int i1, int K,
                       const Vec& w, Mat* dG) {
    const int T = d.T;
    const int M = (i1 - i0) * (T - 1);
    const auto p = A.rows();
    ChunkResult out;
    std::vector<int> start(static_cast<std::size_t>(M)), traj(static_cast<std::size_t>(M)), s_of(static_cast<std::size_t>(M));
    for (int i = i0, c = 0; i < i1; ++i)
        for (int s = 0; s < T - 1; ++s, ++c) {
            start[static_cast<std::size_t>(c)] = i * T + s;
            traj[static_cast<std::size_t>(c)] = i;
            s_of[static_cast<std::size_t>(c)] = s;
        }
    auto gather = [&](const Mat& src, int k, bool input) {
        Mat out_m(src.rows(), M);
        for (int c = 0; c < M; ++c) {
            const int s = s_of[static_cast<std::size_t>(c)];
            const int t = input ? std::min(s + k - 1, T - 2) : std::min(s + k, T - 1);
            out_m.col(c) = src.col(traj[static_cast<std::size_t>(c)] * T + t);
        }
        return out_m;
    };
    Mat g(p, M);
    for (int c = 0; c < M; ++c) g.col(c) = G.col(start[static_cast<std::size_t>(c)]);

    const bool grad = dG != nullptr;
    std::vector<Mat> prev_states, residual_grads, inputs;
    for (int k = 1; k <= K; ++k) {
        const Mat Uk = gather(d.U, k, true);
        Mat next = A * g;
        next.noalias() += B * Uk;
        Mat r = next - gather(G, k, false);
        for (int c = 0; c < M; ++c)
            if (s_of[static_cast<std::size_t>(c)] + k > T - 1) r.col(c).setZero();
        out.loss += (r.array().square().colwise() * w.array()).sum();
        if (grad) {
            prev_states.push_back(std::move(g));
            residual_grads.push_back(2.0 * (r.array().colwise() * w.array()).matrix());
            inputs.push_back(Uk);
        }
        g = std::move(next);
    }
    if (!grad) return out;

    out.dA = Mat::Zero(p, p);
    out.dB = Mat::Zero(p, B.cols());
    Mat lam = Mat::Zero(p, M);
    for (int k = K; k >= 1; --k) {
        const Mat& E = residual_grads[static_cast<std::size_t>(k - 1)];
        Mat l2 = A.transpose() * lam;
        l2 += E;
        lam = std::move(l2);
        out.dA.noalias() += lam * prev_states[static_cast<std::size_t>(k - 1)].transpose();
        out.dB.noalias() += lam * inputs[static_cast<std::size_t>(k - 1)].transpose();
        for (int c = 0; c < M; ++c) {
            const int s = s_of[static_cast<std::size_t>(c)];
            if (s + k > T - 1) continue;
            dG->col(traj[static_cast<std::size_t>(c)] * T + s + k) -= E.col(c);
        }
    }
    const Mat dg0 = A.transpose() * lam;
    for (int c = 0; c < M; ++c) dG->col(start[static_cast<std::size_t>(c)]) += dg0.col(c);
    return out;
}

Vec row_weights(int p, double omega_weight) {
    Vec w = Vec::Ones(p);
    w[0] = omega_weight;
    return w;
}

void check_dims(const KoopmanModel& m, const SeqData& d) {
    m.check();
    if (d.n < 1 || d.T < 2) throw ArgumentError("loss: need at least one trajectory with T >= 2");
    if (d.X.rows() != m.encoder.input_len()) throw ArgumentError("loss: window length does not match encoder");
    if (d.U.rows() != m.q()) throw ArgumentError("loss: input dimension does not match B");
}

std::vector<std::pair<int, int>> chunks_of(int n) {
    std::vector<std::pair<int, int>> c;
    for (int i = 0; i < n; i += kChunk) c.emplace_back(i, std::min(n, i + kChunk));
    return c;
}

} // namespace

Vec KoopmanModel::encode(const std::vector<double>& window, double omega) const {
    if (static_cast<int>(window.size()) != encoder.input_len())
        throw ArgumentError("encode: window length " + std::to_string(window.size()) + " != " +
                            std::to_string(encoder.input_len()));
    const Mat X = Eigen::Map<const Vec>(window.data(), static_cast<Eigen::Index>(window.size()));
    Eigen::RowVectorXd w(1);
    w[0] = omega;
    return encode_batch(X, w).col(0);
}

Mat KoopmanModel::encode_batch(const Mat& X, const Eigen::RowVectorXd& omega) const {
    if (X.cols() != omega.size()) throw ArgumentError("encode: batch size mismatch");
    Mat g(1 + encoder.output_dim(), X.cols());
    g.row(0) = omega;
    if (encoder.output_dim() > 0) g.bottomRows(encoder.output_dim()) = encoder.forward(theta, X);
    return g;
}

std::vector<double> KoopmanModel::window(const Trajectory& tr, int k) const {
    return build_embedding(tr, tau, dt_embed, k);
}

Vec KoopmanModel::state(const Trajectory& tr, int k) const {
    return encode(window(tr, k), tr.omega.at(static_cast<std::size_t>(k)));
}

void KoopmanModel::check() const {
    if (A.rows() != A.cols()) throw ArgumentError("model: A must be square");
    if (B.rows() != A.rows()) throw ArgumentError("model: B row count must equal p");
    if (A.rows() != 1 + encoder.output_dim()) throw ArgumentError("model: p must equal 1 + encoder output");
    if (static_cast<std::size_t>(theta.size()) != encoder.param_count())
        throw ArgumentError("model: encoder parameter count mismatch");
}

void to_json(nlohmann::json& j, const KoopmanModel& m) {
    j = nlohmann::json{{"version", 1},
                       {"method", m.method},
                       {"p", m.p()},
                       {"q", m.q()},
                       {"tau", m.tau},
                       {"dt_embed", m.dt_embed},
                       {"A", matrix_json(m.A)},
                       {"B", matrix_json(m.B)},
                       {"encoder",
                        {{"spec", m.encoder.spec()},
                         {"params", std::vector<double>(m.theta.data(), m.theta.data() + m.theta.size())}}},
                       {"training",
                        {{"initial_loss", m.meta.initial_loss},
                         {"final_loss", m.meta.final_loss},
                         {"epochs", m.meta.epochs},
                         {"converged", m.meta.converged},
                         {"max_pred_err", m.meta.max_pred_err},
                         {"max_pred_err_per_step", m.meta.max_pred_err_per_step}}}};
}

void from_json(const nlohmann::json& j, KoopmanModel& m) {
    if (j.at("version").get<int>() != 1) throw IoError("unsupported model version");
    m.method = j.at("method");
    m.tau = j.at("tau");
    m.dt_embed = j.at("dt_embed");
    m.A = matrix_from_json(j.at("A"));
    m.B = matrix_from_json(j.at("B"));
    m.encoder = Encoder(j.at("encoder").at("spec").get<EncoderSpec>());
    const auto params = j.at("encoder").at("params").get<std::vector<double>>();
    m.theta = Eigen::Map<const Vec>(params.data(), static_cast<Eigen::Index>(params.size()));
    const auto& t = j.at("training");
    m.meta.initial_loss = t.at("initial_loss");
    m.meta.final_loss = t.at("final_loss");
    m.meta.epochs = t.at("epochs");
    m.meta.converged = t.at("converged");
    m.meta.max_pred_err = t.at("max_pred_err");
    m.meta.max_pred_err_per_step = t.at("max_pred_err_per_step").get<std::vector<double>>();
    m.check();
}

void save_model(const KoopmanModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << nlohmann::json(m).dump(1) << '\n';
    if (!out) throw IoError("write failed for '" + path + "'");
}

KoopmanModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model '" + path + "'");
    try {
        return nlohmann::json::parse(in).get<KoopmanModel>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
}

Mat rollout(const Mat& A, const Mat& B, const Vec& g1, const Mat& U) {
    if (A.rows() != A.cols() || B.rows() != A.rows() || g1.size() != A.rows() || U.rows() != B.cols())
        throw ArgumentError("rollout: dimension mismatch");
    Mat out(A.rows(), U.cols());
    Vec g = g1;
    for (Eigen::Index t = 0; t < U.cols(); ++t) {
        Vec next = A * g + B * U.col(t);
        g = std::move(next);
        out.col(t) = g;
    }
    return out;
}

Mat rollout_constant(const Mat& A, const Mat& B, const Vec& g1, const Vec& u, int T) {
    if (T < 1) throw ArgumentError("rollout: T must be >= 1");
    return rollout(A, B, g1, u.replicate(1, T - 1));
}

std::vector<double> predict_omega(const KoopmanModel& m, const Trajectory& tr, const Vec& u) {
    const Mat r = rollout_constant(m.A, m.B, m.state(tr, 0), u, tr.T());
    std::vector<double> w(static_cast<std::size_t>(tr.T()));
    w[0] = tr.omega[0];
    for (int t = 1; t < tr.T(); ++t) w[static_cast<std::size_t>(t)] = r(0, t - 1);
    return w;
}

SeqData make_sequences(const std::vector<Record>& records, double tau, double dt_embed) {
    if (records.empty()) throw ArgumentError("make_sequences: no records");
    SeqData d;
    d.n = static_cast<int>(records.size());
    d.T = records.front().trajectory.T();
    const auto q = static_cast<Eigen::Index>(records.front().trajectory.applied_u.size());
    const auto len = static_cast<Eigen::Index>(build_embedding(records.front().trajectory, tau, dt_embed, 0).size());
    d.X.resize(len, static_cast<Eigen::Index>(d.n) * d.T);
    d.omega.resize(d.X.cols());
    d.U.resize(q, d.X.cols());
    for (int i = 0; i < d.n; ++i) {
        const Trajectory& tr = records[static_cast<std::size_t>(i)].trajectory;
        if (tr.T() != d.T) throw ArgumentError("make_sequences: trajectories differ in length");
        if (static_cast<Eigen::Index>(tr.applied_u.size()) != q)
            throw ArgumentError("make_sequences: trajectories differ in input dimension");
        const Vec u = Eigen::Map<const Vec>(tr.applied_u.data(), q);
        for (int t = 0; t < d.T; ++t) {
            const auto col = static_cast<Eigen::Index>(i) * d.T + t;
            const auto w = build_embedding(tr, tau, dt_embed, t);
            d.X.col(col) = Eigen::Map<const Vec>(w.data(), len);
            d.omega[col] = tr.omega[static_cast<std::size_t>(t)];
            d.U.col(col) = u;
        }
    }
    return d;
}

SeqData subset(const SeqData& d, const std::vector<int>& traj) {
    SeqData s;
    s.n = static_cast<int>(traj.size());
    s.T = d.T;
    const auto cols = static_cast<Eigen::Index>(s.n) * d.T;
    s.X.resize(d.X.rows(), cols);
    s.omega.resize(cols);
    s.U.resize(d.U.rows(), cols);
    for (int k = 0; k < s.n; ++k) {
        const int i = traj[static_cast<std::size_t>(k)];
        if (i < 0 || i >= d.n) throw ArgumentError("subset: trajectory index out of range");
        s.X.middleCols(static_cast<Eigen::Index>(k) * d.T, d.T) = d.X.middleCols(static_cast<Eigen::Index>(i) * d.T, d.T);
        s.omega.segment(static_cast<Eigen::Index>(k) * d.T, d.T) = d.omega.segment(static_cast<Eigen::Index>(i) * d.T, d.T);
        s.U.middleCols(static_cast<Eigen::Index>(k) * d.T, d.T) = d.U.middleCols(static_cast<Eigen::Index>(i) * d.T, d.T);
    }
    return s;
}

double loss(const KoopmanModel& m, const SeqData& d, const LossOptions& opt) {
    check_dims(m, d);
    const Mat G = m.encode_batch(d.X, d.omega);
    const int K = span_of(opt, d.T);
    const Vec w = row_weights(m.p(), opt.omega_weight);
    const auto chunks = chunks_of(d.n);
    std::vector<double> parts(chunks.size());
    parallel_for(chunks.size(), [&](std::size_t c) {
        parts[c] = chunk_loss(m.A, m.B, G, d, chunks[c].first, chunks[c].second, K, w, nullptr).loss;
    });
    return std::accumulate(parts.begin(), parts.end(), 0.0);
}

LossGrad loss_and_gradients(const KoopmanModel& m, const SeqData& d, const LossOptions& opt) {
    check_dims(m, d);
    EncoderCache cache;
    Mat G(m.p(), d.X.cols());
    G.row(0) = d.omega;
    if (m.encoder.output_dim() > 0) G.bottomRows(m.p() - 1) = m.encoder.forward(m.theta, d.X, &cache);
    const int K = span_of(opt, d.T);
    const Vec w = row_weights(m.p(), opt.omega_weight);
    const auto chunks = chunks_of(d.n);
    std::vector<ChunkResult> parts(chunks.size());
    Mat dG = Mat::Zero(G.rows(), G.cols());
    parallel_for(chunks.size(), [&](std::size_t c) {
        parts[c] = chunk_loss(m.A, m.B, G, d, chunks[c].first, chunks[c].second, K, w, &dG);
    });
    LossGrad out;
    out.dA = Mat::Zero(m.p(), m.p());
    out.dB = Mat::Zero(m.p(), m.q());
    for (const auto& part : parts) {
        out.loss += part.loss;
        out.dA += part.dA;
        out.dB += part.dB;
    }
    out.dtheta = Vec::Zero(static_cast<Eigen::Index>(m.encoder.param_count()));
    if (m.encoder.trainable()) m.encoder.backward(m.theta, cache, dG.bottomRows(m.p() - 1), out.dtheta);

    for (Eigen::Index c = 0; c < out.dA.cols(); ++c)
        for (Eigen::Index r = 0; r < out.dA.rows(); ++r)
            if (!std::isfinite(out.dA(r, c)))
                throw NumericError("non-finite gradient at A(" + std::to_string(r) + "," + std::to_string(c) + ")");
    for (Eigen::Index c = 0; c < out.dB.cols(); ++c)
        for (Eigen::Index r = 0; r < out.dB.rows(); ++r)
            if (!std::isfinite(out.dB(r, c)))
                throw NumericError("non-finite gradient at B(" + std::to_string(r) + "," + std::to_string(c) + ")");
    for (Eigen::Index i = 0; i < out.dtheta.size(); ++i)
        if (!std::isfinite(out.dtheta[i]))
            throw NumericError("non-finite gradient at " + m.encoder.param_name(static_cast<std::size_t>(i)));
    return out;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"optimizer", c.optimizer == TrainConfig::Optimizer::Adam ? "adam" : "momentum"},
                       {"learning_rate", c.learning_rate},
                       {"lr_decay", c.lr_decay},
                       {"momentum", c.momentum},
                       {"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"seed", c.seed},
                       {"tolerance", c.tolerance},
                       {"max_span", c.max_span},
                       {"omega_weight", c.omega_weight}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    const std::string opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam") c.optimizer = TrainConfig::Optimizer::Adam;
    else if (opt == "momentum") c.optimizer = TrainConfig::Optimizer::Momentum;
    else throw ConfigError("unknown optimizer '" + opt + "'");
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.lr_decay = j.value("lr_decay", d.lr_decay);
    c.momentum = j.value("momentum", d.momentum);
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.seed = j.value("seed", d.seed);
    c.tolerance = j.value("tolerance", d.tolerance);
    c.max_span = j.value("max_span", d.max_span);
    c.omega_weight = j.value("omega_weight", d.omega_weight);
    c.log_every = j.value("log_every", d.log_every);
}

KoopmanModel init_model(const EncoderSpec& spec, int q, double tau, double dt_embed, std::uint64_t seed) {
    if (q < 1) throw ArgumentError("init_model: q must be >= 1");
    KoopmanModel m;
    m.encoder = Encoder(spec);
    m.tau = tau;
    m.dt_embed = dt_embed;
    const int p = 1 + m.encoder.output_dim();
    m.A = 0.99 * Mat::Identity(p, p);
    std::mt19937_64 rng(seed ^ 0xb5ad4eceda1ce2a9ULL);
    std::normal_distribution<double> normal(0.0, 1e-3);
    m.B.resize(p, q);
    for (Eigen::Index c = 0; c < q; ++c)
        for (Eigen::Index r = 0; r < p; ++r) m.B(r, c) = normal(rng);
    m.theta = m.encoder.init_params(seed);
    return m;
}

std::vector<double> channel_scales(const SeqData& d, int channels) {
    const auto L = d.X.rows() / channels;
    std::vector<double> s(static_cast<std::size_t>(channels), 1.0);
    for (int c = 0; c < channels; ++c) {
        const auto block = d.X.middleRows(c * L, L);
        const double mean = block.mean();
        const double var = (block.array() - mean).square().mean();
        if (var > 0.0) s[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var);
    }
    return s;
}

namespace {

Vec pack(const KoopmanModel& m) {
    Vec x(m.A.size() + m.B.size() + m.theta.size());
    x << m.A.reshaped(), m.B.reshaped(), m.theta;
    return x;
}

void unpack(const Vec& x, KoopmanModel& m) {
    const auto a = m.A.size(), b = m.B.size();
    m.A = x.head(a).reshaped(m.A.rows(), m.A.cols());
    m.B = x.segment(a, b).reshaped(m.B.rows(), m.B.cols());
    m.theta = x.tail(m.theta.size());
}

Vec pack_grad(const LossGrad& g) {
    Vec x(g.dA.size() + g.dB.size() + g.dtheta.size());
    x << g.dA.reshaped(), g.dB.reshaped(), g.dtheta;
    return x;
}

} // namespace

void record_prediction_error(KoopmanModel& m, const SeqData& d) {
    const Mat G = m.encode_batch(d.X, d.omega);
    std::vector<double> per(static_cast<std::size_t>(d.T), 0.0);
    for (int i = 0; i < d.n; ++i) {
        const auto c0 = static_cast<Eigen::Index>(i) * d.T;
        const Mat r = rollout(m.A, m.B, G.col(c0), d.U.middleCols(c0, d.T - 1));
        for (int t = 1; t < d.T; ++t) {
            const double e = std::abs(r(0, t - 1) - d.omega[c0 + t]);
            per[static_cast<std::size_t>(t)] = std::max(per[static_cast<std::size_t>(t)], e);
        }
    }
    m.meta.max_pred_err_per_step = per;
    m.meta.max_pred_err = *std::max_element(per.begin(), per.end());
}

KoopmanModel train(KoopmanModel model, const SeqData& data, const TrainConfig& cfg) {
    if (data.n < 1) throw ArgumentError("train: empty dataset");
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");
    if (!(cfg.tolerance > 0.0)) throw ConfigError("train: tolerance must be positive");
    if (cfg.epochs < 0) throw ConfigError("train: epochs must be >= 0");
    const LossOptions opt{cfg.max_span, cfg.omega_weight};

    model.meta = TrainMeta{};
    model.meta.initial_loss = loss(model, data, opt);
    const double initial = model.meta.initial_loss;
    if (!std::isfinite(initial)) throw TrainingError("initial loss is not finite");

    Vec x = pack(model);
    Vec m1 = Vec::Zero(x.size()), m2 = Vec::Zero(x.size());
    const double b1 = 0.9, b2 = 0.999, eps = 1e-10;
    long step = 0;
    double lr = cfg.learning_rate;
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(static_cast<std::size_t>(data.n));
    std::iota(order.begin(), order.end(), 0);
    const int bs = cfg.batch_size <= 0 ? data.n : std::min(cfg.batch_size, data.n);

    int epoch = 0;
    for (; epoch < cfg.epochs; ++epoch) {
        if (bs < data.n) std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (int b0 = 0; b0 < data.n; b0 += bs) {
            const SeqData* batch = &data;
            SeqData sub;
            if (bs < data.n) {
                sub = subset(data, std::vector<int>(order.begin() + b0, order.begin() + std::min(data.n, b0 + bs)));
                batch = &sub;
            }
            const LossGrad lg = loss_and_gradients(model, *batch, opt);
            epoch_loss += lg.loss;
            const Vec g = pack_grad(lg);
            ++step;
            if (cfg.optimizer == TrainConfig::Optimizer::Adam) {
                m1 = b1 * m1 + (1.0 - b1) * g;
                m2 = b2 * m2 + (1.0 - b2) * g.cwiseAbs2();
                const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
                const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
                x.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
            } else {
                m1 = cfg.momentum * m1 - lr * g;
                x += m1;
            }
            unpack(x, model);
        }
        lr *= cfg.lr_decay;
        if (!std::isfinite(epoch_loss) || epoch_loss > 10.0 * initial)
            throw TrainingError("training diverged at epoch " + std::to_string(epoch + 1) +
                                " (loss " + std::to_string(epoch_loss) + " vs initial " + std::to_string(initial) +
                                "); try a smaller learning rate");
        if (cfg.log_every > 0 && (epoch + 1) % cfg.log_every == 0)
            std::cerr << "epoch " << epoch + 1 << " loss " << epoch_loss << '\n';
        if (epoch_loss < cfg.tolerance) {
            model.meta.converged = true;
            ++epoch;
            break;
        }
    }
    model.meta.epochs = epoch;
    model.meta.final_loss = loss(model, data, opt);
    if (model.meta.final_loss < cfg.tolerance) model.meta.converged = true;
    record_prediction_error(model, data);
    return model;
}

KoopmanModel train(const std::vector<Record>& records, EncoderSpec spec, double tau, double dt_embed,
                   const TrainConfig& cfg) {
    const SeqData data = make_sequences(records, tau, dt_embed);
    spec.window_len = static_cast<int>(data.X.rows()) / spec.channels;
    if (spec.kind == EncoderSpec::Kind::Mlp || spec.kind == EncoderSpec::Kind::ResConv)
        spec.input_scale = channel_scales(data, spec.channels);
    KoopmanModel m = init_model(spec, static_cast<int>(data.U.rows()), tau, dt_embed, cfg.seed);
    return train(std::move(m), data, cfg);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y, bool* degenerate) {
    if (x.size() != y.size() || x.size() < 2) throw ArgumentError("pearson: need equal lengths >= 2");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    const double scale = std::max(std::abs(mx), std::abs(my)) + 1.0;
    const bool degen = sxx <= 1e-28 * scale * scale * n || syy <= 1e-28 * scale * scale * n;
    if (degenerate) *degenerate = degen;
    if (degen) return 0.0;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

LatentCorrelation latent_correlation(const KoopmanModel& m, const std::vector<Record>& records,
                                     const std::vector<double>& inertia, const std::vector<double>& deficit) {
    if (records.size() < 3) throw ArgumentError("latent_correlation: need at least 3 scenarios");
    if (inertia.size() != records.size() || deficit.size() != records.size())
        throw ArgumentError("latent_correlation: label count mismatch");
    const int p = m.p();
    std::vector<std::vector<double>> latents(static_cast<std::size_t>(p - 1));
    for (const auto& r : records) {
        const Vec g = m.state(r.trajectory, 0);
        for (int i = 1; i < p; ++i) latents[static_cast<std::size_t>(i - 1)].push_back(g[i]);
    }
    LatentCorrelation out;
    double best_i = -1.0, best_d = -1.0;
    for (int i = 0; i < p - 1; ++i) {
        bool d1 = false, d2 = false;
        const double ri = pearson(latents[static_cast<std::size_t>(i)], inertia, &d1);
        const double rd = pearson(latents[static_cast<std::size_t>(i)], deficit, &d2);
        out.r_inertia.push_back(ri);
        out.r_deficit.push_back(rd);
        out.degenerate.push_back(d1 || d2);
        if (std::abs(ri) > best_i) {
            best_i = std::abs(ri);
            out.best_inertia = i;
        }
        if (std::abs(rd) > best_d) {
            best_d = std::abs(rd);
            out.best_deficit = i;
        }
    }
    return out;
}

} // namespace kls
