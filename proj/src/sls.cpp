#include "kls/sls.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "kls/errors.hpp"

namespace kls {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Mat random_normal(int rows, int cols, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = scale * n(rng);
    return m;
}

} // namespace

Mat downshift(int blocks, int block_size) {
    if (blocks < 1 || block_size < 1) throw ArgumentError("downshift: sizes must be >= 1");
    const int n = blocks * block_size;
    Mat Z = Mat::Zero(n, n);
    for (int t = 0; t + 1 < blocks; ++t)
        Z.block((t + 1) * block_size, t * block_size, block_size, block_size).setIdentity();
    return Z;
}

StackedSystem build_stacked(const std::vector<Mat>& A, const std::vector<Mat>& B) {
    if (A.empty() || A.size() != B.size()) throw ArgumentError("build_stacked: need T >= 1 matching A_t, B_t");
    StackedSystem s;
    s.T = static_cast<int>(A.size());
    s.p = static_cast<int>(A[0].rows());
    s.q = static_cast<int>(B[0].cols());
    const int n = (s.T + 1) * s.p, m = (s.T + 1) * s.q;
    s.A = Mat::Zero(n, n);
    s.B = Mat::Zero(n, m);
    for (int t = 0; t < s.T; ++t) {
        const auto ts = static_cast<std::size_t>(t);
        if (A[ts].rows() != s.p || A[ts].cols() != s.p || B[ts].rows() != s.p || B[ts].cols() != s.q)
            throw ArgumentError("build_stacked: inconsistent block sizes");
        s.A.block(t * s.p, t * s.p, s.p, s.p) = A[ts];
        s.B.block(t * s.p, t * s.q, s.p, s.q) = B[ts];
    }
    s.Z = downshift(s.T + 1, s.p);
    return s;
}

StackedSystem build_stacked(const Mat& A, const Mat& B, int T) {
    if (T < 1) throw ArgumentError("build_stacked: T must be >= 1");
    return build_stacked(std::vector<Mat>(static_cast<std::size_t>(T), A), std::vector<Mat>(static_cast<std::size_t>(T), B));
}

Mat SystemResponse::stacked() const {
    Mat s(Tg.rows() + Tu.rows(), Tg.cols());
    s << Tg, Tu;
    return s;
}

Mat nilpotent_inverse(const Mat& M, int K) {
    Mat sum = Mat::Identity(M.rows(), M.cols());
    Mat pw = Mat::Identity(M.rows(), M.cols());
    for (int k = 1; k <= K; ++k) {
        pw = pw * M;
        sum += pw;
    }
    return sum;
}

double sls_residual(const StackedSystem& s, const SystemResponse& r) {
    const auto n = s.A.rows();
    const Mat lhs = (Mat::Identity(n, n) - s.Z * s.A) * r.Tg - s.Z * s.B * r.Tu;
    return (lhs - Mat::Identity(n, n)).cwiseAbs().maxCoeff();
}

SystemResponse response_of(const StackedSystem& s, const Mat& Tu) {
    const auto n = s.A.rows();
    if (Tu.rows() != s.B.cols() || Tu.cols() != n) throw ArgumentError("response_of: Tu has the wrong shape");
    for (int i = 0; i <= s.T; ++i)
        for (int j = i + 1; j <= s.T; ++j)
            if (Tu.block(i * s.q, j * s.p, s.q, s.p).cwiseAbs().maxCoeff() != 0.0)
                throw ArgumentError("response_of: Tu must be block lower triangular");
    SystemResponse r;
    r.Tu = Tu;
    r.Tg = nilpotent_inverse(s.Z * s.A, s.T) * (Mat::Identity(n, n) + s.Z * s.B * Tu);
    const double res = sls_residual(s, r);
    const double scale = 1.0 + r.Tg.cwiseAbs().maxCoeff();
    if (!(res <= 1e-10 * scale))
        throw NumericError("response_of: response identity residual " + std::to_string(res));
    return r;
}

Mat model_error(const StackedSystem& truth, const StackedSystem& id) {
    if (truth.A.rows() != id.A.rows() || truth.B.cols() != id.B.cols())
        throw ArgumentError("model_error: stacked systems differ in shape");
    Mat D(truth.A.rows(), truth.A.cols() + truth.B.cols());
    D << truth.Z * (truth.A - id.A), truth.Z * (truth.B - id.B);
    return D;
}

Mat drop_first_block_col(const Mat& M, int block) { return M.rightCols(M.cols() - block); }
Mat drop_first_block_row(const Mat& M, int block) { return M.bottomRows(M.rows() - block); }

double induced_norm(const Mat& M) {
    if (M.size() == 0) return 0.0;
    Eigen::BDCSVD<Mat> svd(M);
    return svd.singularValues()[0];
}

Mat true_response_under_identified(const SystemResponse& id, const Mat& Delta, int p, int T) {
    const Mat Tbar = id.stacked();
    if (Delta.rows() != Tbar.cols() || Delta.cols() != Tbar.rows())
        throw ArgumentError("true_response: Delta has the wrong shape");
    const double contraction = induced_norm(drop_first_block_col(Tbar, p) * drop_first_block_row(Delta, p));
    if (!(contraction < 1.0))
        throw BoundInapplicable("true_response: Neumann series does not contract (|T Delta| = " +
                                    std::to_string(contraction) + ")",
                                contraction);
    const Mat TD = Tbar * Delta;
    return Tbar + TD * nilpotent_inverse(TD, T) * Tbar;
}

Deviation open_loop_deviation(const SystemResponse& id, const SystemResponse& ideal, const Mat& Delta,
                              const Vec& gamma, int p, int T) {
    const Mat Tbar = id.stacked();
    if (gamma.size() != Tbar.cols()) throw ArgumentError("open_loop_deviation: gamma has the wrong length");
    const double contraction = induced_norm(drop_first_block_col(Tbar, p) * drop_first_block_row(Delta, p));
    if (!(contraction < 1.0))
        throw BoundInapplicable("open_loop_deviation: Neumann series does not contract", contraction);
    const Mat TD = Tbar * Delta;
    const Vec tg = Tbar * gamma;
    Deviation d;
    d.vector = (Tbar - ideal.stacked()) * gamma + TD * (nilpotent_inverse(TD, T) * tg);
    d.norm = d.vector.norm();
    return d;
}

Mat controller_of(const SystemResponse& r) {
    return r.Tg.transpose().partialPivLu().solve(r.Tu.transpose()).transpose();
}

namespace {

Vec simulate(const std::vector<Mat>& A, const std::vector<Mat>& B, const Vec& gamma, const Mat* K, const Mat* Tu) {
    const int T = static_cast<int>(A.size());
    const int p = static_cast<int>(A[0].rows());
    const int q = static_cast<int>(B[0].cols());
    if (gamma.size() != (T + 1) * p) throw ArgumentError("simulate: gamma has the wrong length");
    Vec x = Vec::Zero((T + 1) * p), u = Vec::Zero((T + 1) * q);
    x.segment(0, p) = gamma.segment(0, p);
    for (int t = 0; t <= T; ++t) {
        Vec ut = Vec::Zero(q);
        if (K) {
            for (int s = 0; s <= t; ++s) ut += K->block(t * q, s * p, q, p) * x.segment(s * p, p);
        } else {
            for (int s = 0; s <= t; ++s) ut += Tu->block(t * q, s * p, q, p) * gamma.segment(s * p, p);
        }
        u.segment(t * q, q) = ut;
        if (t < T) {
            const auto ts = static_cast<std::size_t>(t);
            x.segment((t + 1) * p, p) = A[ts] * x.segment(t * p, p) + B[ts] * ut + gamma.segment((t + 1) * p, p);
        }
    }
    Vec out(x.size() + u.size());
    out << x, u;
    return out;
}

} // namespace

Vec simulate_feedback(const std::vector<Mat>& A, const std::vector<Mat>& B, const Mat& K, const Vec& gamma) {
    return simulate(A, B, gamma, &K, nullptr);
}

Vec simulate_feedforward(const std::vector<Mat>& A, const std::vector<Mat>& B, const Mat& Tu, const Vec& gamma) {
    return simulate(A, B, gamma, nullptr, &Tu);
}

Mat random_on_sphere(int rows, int cols, double eps, std::uint64_t seed) {
    if (eps < 0.0) throw ArgumentError("random_on_sphere: eps must be >= 0");
    if (eps == 0.0) return Mat::Zero(rows, cols);
    std::mt19937_64 rng(seed);
    Mat m = random_normal(rows, cols, 1.0, rng);
    return m * (eps / induced_norm(m));
}

std::string DeviationReport::csv() const {
    std::ostringstream os;
    os << "epsilon,max_deviation,max_bound,bound_holds,neumann_ok\n";
    os << std::setprecision(12);
    for (const auto& l : levels)
        os << l.epsilon << ',' << l.max_deviation << ',' << l.max_bound << ',' << (l.bound_holds ? 1 : 0) << ','
           << (l.neumann_ok ? 1 : 0) << '\n';
    return os.str();
}

DeviationReport deviation_bound_check(const Mat& A, const Mat& B, const std::vector<double>& levels,
                                      const DeviationCheckConfig& cfg) {
    if (levels.empty()) throw ArgumentError("deviation_bound_check: no levels");
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i] < 0.0) throw ArgumentError("deviation_bound_check: levels must be >= 0");
        if (i > 0 && !(levels[i] < levels[i - 1])) throw ArgumentError("deviation_bound_check: levels must decrease");
    }
    if (cfg.samples < 1 || cfg.T < 1) throw ArgumentError("deviation_bound_check: samples and T must be >= 1");
    const int p = static_cast<int>(A.rows()), q = static_cast<int>(B.cols()), T = cfg.T;

    std::mt19937_64 rng(cfg.seed);
    Mat Tu = Mat::Zero((T + 1) * q, (T + 1) * p);
    for (int t = 0; t <= T; ++t)
        for (int s = 0; s <= t; ++s) Tu.block(t * q, s * p, q, p) = random_normal(q, p, cfg.response_scale, rng);
    Vec gamma = random_normal((T + 1) * p, 1, cfg.disturbance_scale, rng);
    gamma.head(p) = random_normal(p, 1, 1.0, rng);

    const StackedSystem id = build_stacked(A, B, T);
    const SystemResponse Rid = response_of(id, Tu);
    const Mat Tbar = Rid.stacked();
    const Vec tg = Tbar * gamma;
    const double n_tbar_g = induced_norm(drop_first_block_col(Tbar, p));

    DeviationReport rep;
    for (std::size_t li = 0; li < levels.size(); ++li) {
        const double eps = levels[li];
        DeviationLevel lv;
        lv.epsilon = eps;
        for (int s = 0; s < cfg.samples; ++s) {
            std::vector<Mat> At, Bt;
            for (int t = 0; t < T; ++t) {
                const std::uint64_t base = mix(cfg.seed ^ mix(li * 1000003ULL + static_cast<std::uint64_t>(s) * 1009ULL + static_cast<std::uint64_t>(t)));
                At.push_back(A + random_on_sphere(p, p, eps, base));
                Bt.push_back(B + random_on_sphere(p, q, eps, mix(base)));
            }
            const StackedSystem truth = build_stacked(At, Bt);
            const SystemResponse ideal = response_of(truth, Tu);
            const Mat Delta = model_error(truth, id);
            const Mat TD = Tbar * Delta;
            const double contraction = induced_norm(drop_first_block_col(Tbar, p) * drop_first_block_row(Delta, p));
            if (!(contraction < 1.0)) {
                lv.neumann_ok = false;
                continue;
            }
            const Deviation dev = open_loop_deviation(Rid, ideal, Delta, gamma, p, T);
            const Mat inv_a = nilpotent_inverse(truth.Z * truth.A, T);
            const Mat inv_td = nilpotent_inverse(TD, T);
            const double bound =
                2.0 * eps * (induced_norm(inv_a) + n_tbar_g * induced_norm(inv_td)) * tg.norm();
            lv.max_deviation = std::max(lv.max_deviation, dev.norm);
            lv.max_bound = std::max(lv.max_bound, bound);
            if (dev.norm > bound * (1.0 + 1e-9) + 1e-15) lv.bound_holds = false;
        }
        rep.levels.push_back(lv);
    }
    for (std::size_t i = 1; i < rep.levels.size(); ++i) {
        const auto& a = rep.levels[i - 1];
        const auto& b = rep.levels[i];
        if (b.epsilon > 0.0 ? !(b.max_deviation < a.max_deviation) : b.max_deviation != 0.0) rep.monotone = false;
    }
    return rep;
}

} // namespace kls
