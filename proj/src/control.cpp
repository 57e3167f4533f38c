#include "kls/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kls/errors.hpp"

namespace kls {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

} // namespace

double kkt_residual(const QpProblem& qp, const Vec& x, const Vec& lambda) {
    const Vec s = qp.C * x - qp.b;
    double r = (qp.H * x + qp.f - qp.C.transpose() * lambda).cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < s.size(); ++j) {
        r = std::max(r, std::max(0.0, -s[j]));
        r = std::max(r, std::max(0.0, -lambda[j]));
        r = std::max(r, std::abs(lambda[j] * s[j]));
    }
    return r;
}

QpSolution solve_dense_qp(const QpProblem& qp) {
    const auto n = qp.H.rows();
    const auto m = qp.C.rows();
    if (qp.H.cols() != n || qp.f.size() != n || qp.C.cols() != n || qp.b.size() != m)
        throw ArgumentError("qp: dimension mismatch");
    Eigen::LLT<Mat> llt(qp.H);
    if (llt.info() != Eigen::Success) throw ArgumentError("qp: Hessian is not positive definite");
    const Mat Hinv = llt.solve(Mat::Identity(n, n));

    const double scale = 1.0 + (m > 0 ? qp.b.cwiseAbs().maxCoeff() : 0.0);
    const double tol = 1e-13 * scale;
    Vec x = -Hinv * qp.f;
    std::vector<int> active;
    std::vector<double> lam;
    QpSolution sol;
    const int max_iter = 50 * static_cast<int>(m + n) + 50;

    for (int iter = 0;; ++iter) {
        if (iter > max_iter) throw NumericError("qp: iteration limit reached");
        Eigen::Index p = -1;
        double worst = -tol;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (std::find(active.begin(), active.end(), static_cast<int>(j)) != active.end()) continue;
            const double s = qp.C.row(j).dot(x) - qp.b[j];
            const double rel = s / std::max(1.0, qp.C.row(j).norm());
            if (rel < worst) {
                worst = rel;
                p = j;
            }
        }
        sol.iterations = iter;
        if (p < 0) break;

        const Vec np = qp.C.row(p).transpose();
        double lam_p = 0.0;
        for (int inner = 0;; ++inner) {
            if (inner > max_iter) throw NumericError("qp: inner iteration limit reached");
            const auto k = static_cast<Eigen::Index>(active.size());
            Vec z, r;
            if (k == 0) {
                z = Hinv * np;
                r.resize(0);
            } else {
                Mat N(n, k);
                for (Eigen::Index a = 0; a < k; ++a) N.col(a) = qp.C.row(active[static_cast<std::size_t>(a)]).transpose();
                const Mat HN = Hinv * N;
                const Mat M = N.transpose() * HN;
                const Mat Nstar = M.ldlt().solve(HN.transpose()); // k x n
                r = Nstar * np;
                z = Hinv * np - HN * r;
            }
            double t1 = kInf;
            Eigen::Index l = -1;
            for (Eigen::Index a = 0; a < k; ++a)
                if (r[a] > 1e-14) {
                    const double ratio = lam[static_cast<std::size_t>(a)] / r[a];
                    if (ratio < t1) {
                        t1 = ratio;
                        l = a;
                    }
                }
            const double zn = z.dot(np);
            const double sp = np.dot(x) - qp.b[p];
            const double t2 = (z.norm() > 1e-14 * std::max(1.0, np.norm()) && zn > 0.0) ? -sp / zn : kInf;
            const double t = std::min(t1, t2);
            if (t == kInf) {
                sol.x = x;
                throw InfeasibleError("qp: constraints are infeasible", -1, false, -sp);
            }
            for (Eigen::Index a = 0; a < k; ++a) lam[static_cast<std::size_t>(a)] -= t * r[a];
            lam_p += t;
            if (t2 < kInf) x += t * z;
            if (t2 <= t1) {
                active.push_back(static_cast<int>(p));
                lam.push_back(lam_p);
                break;
            }
            active.erase(active.begin() + l);
            lam.erase(lam.begin() + l);
        }
    }
    sol.x = x;
    sol.lambda = Vec::Zero(m);
    for (std::size_t a = 0; a < active.size(); ++a) sol.lambda[active[a]] = std::max(0.0, lam[a]);
    sol.active = active;
    sol.objective = 0.5 * x.dot(qp.H * x) + qp.f.dot(x);
    sol.kkt_residual = kkt_residual(qp, x, sol.lambda);
    return sol;
}

void to_json(nlohmann::json& j, const SafetyConfig& c) {
    j = nlohmann::json{{"omega_min", c.omega_min}, {"omega_inf_min", c.omega_inf_min}, {"zeta", c.zeta}, {"T", c.T}};
}

void from_json(const nlohmann::json& j, SafetyConfig& c) {
    const SafetyConfig d;
    c.omega_min = j.value("omega_min", d.omega_min);
    c.omega_inf_min = j.value("omega_inf_min", d.omega_inf_min);
    c.zeta = j.value("zeta", d.zeta);
    c.T = j.value("T", d.T);
}

FrequencyMap frequency_map(const Mat& A, const Mat& B, const Vec& g1, int T) {
    if (T < 1) throw ArgumentError("frequency_map: T must be >= 1");
    if (A.rows() != A.cols() || B.rows() != A.rows() || g1.size() != A.rows())
        throw ArgumentError("frequency_map: dimension mismatch");
    FrequencyMap fm;
    fm.c.resize(T);
    fm.h.resize(T, B.cols());
    Vec g = g1;
    Mat S = Mat::Zero(A.rows(), B.cols());
    Mat Apow = Mat::Identity(A.rows(), A.cols());
    for (int k = 1; k <= T; ++k) {
        S += Apow * B;
        Apow = A * Apow;
        g = A * g;
        fm.c[k - 1] = g[0];
        fm.h.row(k - 1) = S.row(0);
    }
    return fm;
}

ControlSolution solve_qp(const Mat& A, const Mat& B, const Vec& g1, const SafetyConfig& cfg) {
    if (cfg.zeta < 0.0) throw ConfigError("control: zeta must be >= 0");
    if (!(cfg.omega_min <= cfg.omega_inf_min && cfg.omega_inf_min <= 0.0))
        throw ConfigError("control: need omega_min <= omega_inf_min <= 0");
    const auto q = B.cols();
    Mat R = cfg.R.size() == 0 ? Mat::Identity(q, q) : cfg.R;
    if (R.rows() != q || R.cols() != q) throw ConfigError("control: R must be q x q");
    if (!R.isApprox(R.transpose(), 1e-12)) throw ConfigError("control: R must be symmetric");

    const FrequencyMap fm = frequency_map(A, B, g1, cfg.T);
    const int T = cfg.T;
    QpProblem qp;
    qp.H = 2.0 * R;
    qp.f = Vec::Zero(q);
    qp.C.resize(T + 1 + 2 * q, q);
    qp.b.resize(T + 1 + 2 * q);
    for (int k = 0; k < T; ++k) {
        qp.C.row(k) = fm.h.row(k);
        qp.b[k] = cfg.omega_min + cfg.zeta - fm.c[k];
    }
    qp.C.row(T) = fm.h.row(T - 1);
    qp.b[T] = cfg.omega_inf_min + cfg.zeta - fm.c[T - 1];
    qp.C.middleRows(T + 1, q) = Mat::Identity(q, q);
    qp.b.segment(T + 1, q).setZero();
    qp.C.bottomRows(q) = -Mat::Identity(q, q);
    qp.b.tail(q).setConstant(-1.0);

    QpSolution s;
    try {
        s = solve_dense_qp(qp);
    } catch (const InfeasibleError&) {
        const Vec ones = Vec::Ones(q);
        int step = 1;
        bool steady = false;
        double worst = kInf;
        for (int k = 0; k <= T; ++k) {
            const double v = qp.C.row(k).dot(ones) - qp.b[k];
            if (v < worst) {
                worst = v;
                step = k < T ? k + 1 : T;
                steady = k == T;
            }
        }
        throw InfeasibleError("control: frequency limits cannot be met even with full shedding (worst " +
                                  std::string(steady ? "steady-state" : "transient") + " constraint at step " +
                                  std::to_string(step) + ", short by " + std::to_string(-worst) + " pu)",
                              step, steady, -worst);
    }
    ControlSolution out;
    out.u = s.x.cwiseMax(0.0).cwiseMin(1.0);
    out.objective = out.u.dot(R * out.u);
    out.kkt_residual = s.kkt_residual;
    out.iterations = s.iterations;
    const Vec pred = fm.c + fm.h * out.u;
    out.predicted.assign(pred.data(), pred.data() + pred.size());
    return out;
}

namespace {

void check_quant_args(const Vec& u, const Vec& d) {
    if (u.size() != d.size()) throw ArgumentError("quantize: size mismatch");
    for (Eigen::Index i = 0; i < d.size(); ++i)
        if (!(d[i] > 0.0)) throw ArgumentError("quantize: d must be positive");
}

// Largest multiple of d not above 1.
double cap_of(double d) { return std::floor(1.0 / d + 1e-9) * d; }

} // namespace

Vec quantize(const Vec& u, const Vec& d) {
    check_quant_args(u, d);
    Vec out(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        const double cap = cap_of(d[i]);
        if (u[i] > cap) {
            out[i] = u[i] - cap >= 0.5 * (1.0 - cap) ? 1.0 : cap;
            continue;
        }
        const double r = u[i] / d[i];
        const double n = std::floor(r + 0.5 + 1e-12 * std::max(1.0, std::abs(r)));
        out[i] = std::min(std::max(0.0, n) * d[i], cap);
    }
    return out;
}

Vec quantize_ceil(const Vec& u, const Vec& d) {
    check_quant_args(u, d);
    Vec out(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        const double cap = cap_of(d[i]);
        if (u[i] > cap + 1e-12) {
            out[i] = 1.0;
            continue;
        }
        const double r = u[i] / d[i];
        const double n = std::ceil(r - 1e-12 * std::max(1.0, std::abs(r)));
        out[i] = std::min(std::max(0.0, n) * d[i], cap);
    }
    return out;
}

SafetyMargin zeta_margin(const Mat& A, const Mat& B, const Vec& d, double max_pred_err, int T) {
    if (T < 1) throw ArgumentError("zeta_margin: T must be >= 1");
    if (d.size() != B.cols()) throw ArgumentError("zeta_margin: d must have one entry per input");
    if (max_pred_err < 0.0) throw ArgumentError("zeta_margin: prediction error must be >= 0");
    for (Eigen::Index i = 0; i < d.size(); ++i)
        if (d[i] < 0.0) throw ArgumentError("zeta_margin: d must be non-negative");
    SafetyMargin sm;
    sm.max_pred_err = max_pred_err;
    const double dnorm = d.norm();
    Mat S = Mat::Zero(A.rows(), B.cols());
    Mat Apow = Mat::Identity(A.rows(), A.cols());
    double best = -1.0;
    for (int k = 1; k <= T; ++k) {
        S += Apow * B;
        Apow = A * Apow;
        const Eigen::RowVectorXd cs = S.row(0);
        const double qt = 0.5 * cs.norm() * dnorm;
        sm.quant_terms.push_back(qt);
        sm.worst_case_terms.push_back(0.5 * cs.cwiseAbs().dot(d.transpose()));
        if (qt > best) {
            best = qt;
            sm.worst_step = k;
        }
    }
    sm.zeta = best + max_pred_err;
    const Eigen::VectorXcd ev = A.eigenvalues();
    sm.spectral_radius = ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0;
    sm.spectral_warning = sm.spectral_radius >= 1.05;
    return sm;
}

Vec feeder_step(double d_mw, const std::vector<double>& bus_mw) {
    if (!(d_mw > 0.0)) throw ArgumentError("feeder_step: feeder size must be positive");
    Vec d(static_cast<Eigen::Index>(bus_mw.size()));
    for (std::size_t i = 0; i < bus_mw.size(); ++i) {
        if (!(bus_mw[i] > 0.0)) throw ArgumentError("feeder_step: bus load must be positive");
        d[static_cast<Eigen::Index>(i)] = std::min(1.0, d_mw / bus_mw[i]);
    }
    return d;
}

double ShedPlan::shed_mw() const {
    double s = 0.0;
    for (std::size_t i = 0; i < bus_mw.size(); ++i) s += u_quant[static_cast<Eigen::Index>(i)] * bus_mw[i];
    return s;
}

void to_json(nlohmann::json& j, const ShedPlan& p) {
    auto buses = nlohmann::json::array();
    for (Eigen::Index i = 0; i < p.u_cont.size(); ++i) {
        const double mw = i < static_cast<Eigen::Index>(p.bus_mw.size()) ? p.bus_mw[static_cast<std::size_t>(i)] : 0.0;
        buses.push_back({{"bus", i}, {"u_continuous", p.u_cont[i]}, {"quantized", p.u_quant[i]}, {"MW", p.u_quant[i] * mw}});
    }
    j = nlohmann::json{{"buses", buses},
                       {"zeta", p.zeta},
                       {"total_MW", p.shed_mw()},
                       {"objective", p.qp.objective},
                       {"kkt_residual", p.qp.kkt_residual},
                       {"predicted_continuous", p.predicted_cont},
                       {"predicted_quantized", p.predicted_quant}};
}

ShedPlan kls_pipeline(const std::vector<double>& window, double omega, const KoopmanModel& model,
                      const SafetyConfig& cfg, const std::vector<double>& bus_mw, const PlanOptions& opt) {
    if (static_cast<int>(bus_mw.size()) != model.q()) throw ArgumentError("kls_pipeline: bus count must equal q");
    const Vec g1 = model.encode(window, omega);
    ShedPlan plan;
    plan.bus_mw = bus_mw;
    const bool quantized = opt.d_mw > 0.0;
    if (quantized) plan.d = feeder_step(opt.d_mw, bus_mw);
    SafetyConfig c = cfg;
    if (opt.margin) {
        const Vec d = quantized ? plan.d : Vec::Zero(model.q());
        plan.margin = zeta_margin(model.A, model.B, d, model.meta.max_pred_err, cfg.T);
        c.zeta = plan.margin.zeta;
    }
    plan.zeta = c.zeta;
    plan.qp = solve_qp(model.A, model.B, g1, c);
    plan.u_cont = plan.qp.u;
    if (quantized) plan.u_quant = opt.ceil ? quantize_ceil(plan.u_cont, plan.d) : quantize(plan.u_cont, plan.d);
    else plan.u_quant = plan.u_cont;
    const FrequencyMap fm = frequency_map(model.A, model.B, g1, cfg.T);
    const Vec pc = fm.c + fm.h * plan.u_cont;
    const Vec pq = fm.c + fm.h * plan.u_quant;
    plan.predicted_cont.assign(pc.data(), pc.data() + pc.size());
    plan.predicted_quant.assign(pq.data(), pq.data() + pq.size());
    return plan;
}

} // namespace kls
