#include "kls/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "kls/errors.hpp"

namespace kls {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat solve_ridge(const Mat& Xt, const Mat& Yt, double lambda) {
    const auto n = Xt.cols();
    Mat aug(Xt.rows() + n, n);
    aug << Xt, std::sqrt(lambda) * Mat::Identity(n, n);
    Mat rhs(Yt.rows() + n, Yt.cols());
    rhs << Yt, Mat::Zero(n, Yt.cols());
    return aug.colPivHouseholderQr().solve(rhs);
}

} // namespace

DmdcFit fit_dmdc(const Mat& Z, const Mat& U, const Mat& Znext, const DmdcOptions& opt) {
    if (Z.cols() != U.cols() || Z.cols() != Znext.cols() || Z.rows() != Znext.rows())
        throw ArgumentError("fit_dmdc: snapshot dimensions disagree");
    if (Z.cols() < 1) throw ArgumentError("fit_dmdc: no snapshots");
    if (opt.ridge < 0.0) throw ConfigError("fit_dmdc: ridge must be >= 0");
    const auto p = Z.rows(), q = U.rows();
    Mat X(p + q, Z.cols());
    X << Z, U;
    const Mat Xt = X.transpose();
    const Mat Yt = Znext.transpose();

    DmdcFit fit;
    Mat theta_t;
    Eigen::ColPivHouseholderQR<Mat> qr(Xt);
    qr.setThreshold(opt.rank_tol);
    fit.rank = static_cast<int>(qr.rank());
    if (opt.ridge > 0.0) {
        fit.ridge = opt.ridge;
        theta_t = solve_ridge(Xt, Yt, opt.ridge);
    } else if (fit.rank == p + q) {
        theta_t = qr.solve(Yt);
    } else if (opt.ridge_fallback) {
        fit.ridge = opt.fallback_ridge;
        theta_t = solve_ridge(Xt, Yt, opt.fallback_ridge);
    } else {
        throw ConditioningError("fit_dmdc: snapshot matrix has rank " + std::to_string(fit.rank) + " < " +
                                std::to_string(p + q) + " and ridge fallback is disabled");
    }
    const Mat theta = theta_t.transpose();
    fit.A = theta.leftCols(p);
    fit.B = theta.rightCols(q);
    fit.residual = (Znext - fit.A * Z - fit.B * U).squaredNorm();
    if (!fit.A.allFinite() || !fit.B.allFinite()) throw NumericError("fit_dmdc: non-finite solution");
    return fit;
}

Mat kmeans(const Mat& data, int k, std::uint64_t seed, int iterations) {
    const auto N = data.cols();
    if (k < 1) throw ArgumentError("kmeans: k must be >= 1");
    if (N < k) throw ArgumentError("kmeans: fewer points than centers");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Mat centers(data.rows(), k);
    centers.col(0) = data.col(static_cast<Eigen::Index>(unit(rng) * static_cast<double>(N)) % N);
    Vec d2 = (data.colwise() - centers.col(0)).colwise().squaredNorm().transpose();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            double r = unit(rng) * total;
            for (pick = 0; pick < N - 1; ++pick) {
                r -= d2[pick];
                if (r <= 0.0) break;
            }
        } else {
            pick = static_cast<Eigen::Index>(unit(rng) * static_cast<double>(N)) % N;
        }
        centers.col(c) = data.col(pick);
        d2 = d2.cwiseMin((data.colwise() - centers.col(c)).colwise().squaredNorm().transpose());
    }
    std::vector<int> assign(static_cast<std::size_t>(N), -1);
    for (int it = 0; it < iterations; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < N; ++i) {
            Eigen::Index best = 0;
            (centers.colwise() - data.col(i)).colwise().squaredNorm().minCoeff(&best);
            if (assign[static_cast<std::size_t>(i)] != static_cast<int>(best)) {
                assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
                changed = true;
            }
        }
        if (!changed) break;
        Mat sum = Mat::Zero(data.rows(), k);
        std::vector<int> count(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < N; ++i) {
            sum.col(assign[static_cast<std::size_t>(i)]) += data.col(i);
            ++count[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c)
            if (count[static_cast<std::size_t>(c)] > 0) centers.col(c) = sum.col(c) / count[static_cast<std::size_t>(c)];
    }
    return centers;
}

double median_pairwise_distance(const Mat& centers) {
    std::vector<double> d;
    for (Eigen::Index i = 0; i < centers.cols(); ++i)
        for (Eigen::Index j = i + 1; j < centers.cols(); ++j) d.push_back((centers.col(i) - centers.col(j)).norm());
    if (d.empty()) return 1.0;
    const auto mid = d.begin() + static_cast<long>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    double med = *mid;
    if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), mid));
    return med > 0.0 ? med : 1.0;
}

namespace {

KoopmanModel fit_lifted(const std::vector<Record>& records, const BaselineConfig& cfg, int rbf_count,
                        const std::string& method) {
    if (records.empty()) throw ArgumentError("baseline fit: no records");
    if (rbf_count < 0) throw ConfigError("baseline fit: rbf count must be >= 0");
    const double tau = cfg.use_window ? cfg.tau : 0.0;
    const SeqData d = make_sequences(records, tau, cfg.dt_embed);
    const int channels = records.front().trajectory.channels;

    EncoderSpec spec;
    spec.kind = EncoderSpec::Kind::Rbf;
    spec.channels = channels;
    spec.window_len = static_cast<int>(d.X.rows()) / channels;
    spec.lags = spec.window_len;

    if (rbf_count > 0) {
        // Standardize the instantaneous state z = [w_t; pass-through features].
        const Encoder plain(spec);
        Mat z(plain.output_dim() + 1, d.X.cols());
        z.row(0) = d.omega;
        z.bottomRows(plain.output_dim()) = plain.forward(Vec(), d.X);
        spec.z_mean = z.rowwise().mean();
        spec.z_scale.resize(z.rows());
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
            const double sd = std::sqrt((z.row(r).array() - spec.z_mean[r]).square().mean());
            spec.z_scale[r] = sd > 0.0 ? 1.0 / sd : 1.0;
        }
        const Mat zs = (z.colwise() - spec.z_mean).array().colwise() * spec.z_scale.array();
        spec.centers = kmeans(zs, rbf_count, cfg.seed);
        spec.bandwidth = median_pairwise_distance(spec.centers);
    }

    KoopmanModel m;
    m.method = method;
    m.encoder = Encoder(spec);
    m.tau = tau;
    m.dt_embed = cfg.dt_embed;
    const Mat G = m.encode_batch(d.X, d.omega);

    const auto pairs = static_cast<Eigen::Index>(d.n) * (d.T - 1);
    Mat Z(G.rows(), pairs), Zn(G.rows(), pairs), U(d.U.rows(), pairs);
    Eigen::Index c = 0;
    for (int i = 0; i < d.n; ++i)
        for (int t = 0; t + 1 < d.T; ++t, ++c) {
            const auto col = static_cast<Eigen::Index>(i) * d.T + t;
            Z.col(c) = G.col(col);
            Zn.col(c) = G.col(col + 1);
            U.col(c) = d.U.col(col);
        }
    const DmdcFit fit = fit_dmdc(Z, U, Zn, cfg.dmdc);
    m.A = fit.A;
    m.B = fit.B;
    m.meta.final_loss = fit.residual;
    m.meta.initial_loss = fit.residual;
    m.meta.converged = true;
    record_prediction_error(m, d);
    return m;
}

} // namespace

KoopmanModel fit_dmdc_model(const std::vector<Record>& records, const BaselineConfig& cfg) {
    return fit_lifted(records, cfg, 0, "dmd");
}

KoopmanModel fit_edmd_model(const std::vector<Record>& records, const BaselineConfig& cfg) {
    return fit_lifted(records, cfg, cfg.rbf_count, "edmd");
}

} // namespace kls
