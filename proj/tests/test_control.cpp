#include "doctest.h"

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "kls/control.hpp"
#include "kls/errors.hpp"

using namespace kls;

namespace {

Eigen::MatrixXd scalar(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }

// Predicted frequency C g_hat_k(u), k = 1..T, by direct iteration.
std::vector<double> predicted(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::VectorXd& g1,
                              const Eigen::VectorXd& u, int T) {
    std::vector<double> out;
    Eigen::VectorXd g = g1;
    for (int k = 1; k <= T; ++k) {
        g = (A * g + B * u).eval();
        out.push_back(g[0]);
    }
    return out;
}

bool satisfies(const std::vector<double>& w, double lo, double lo_inf, double tol = 0.0) {
    for (double v : w)
        if (v < lo - tol) return false;
    return w.back() >= lo_inf - tol;
}

} // namespace

TEST_CASE("scalar shedding QP matches a grid search") {
    SafetyConfig cfg;
    cfg.T = 10;
    const Eigen::VectorXd g1 = Eigen::VectorXd::Constant(1, -0.03);
    const ControlSolution sol = solve_qp(scalar(0.9), scalar(0.05), g1, cfg);
    double best = -1.0;
    for (int i = 0; i <= 10000; ++i) {
        const double u = i * 1e-4;
        if (satisfies(predicted(scalar(0.9), scalar(0.05), g1, Eigen::VectorXd::Constant(1, u), 10), -0.02, -0.01,
                      1e-12)) {
            best = u;
            break;
        }
    }
    CHECK(best == doctest::Approx(0.14).epsilon(1e-3));
    CHECK(std::abs(sol.u[0] - best) <= 2e-4);
    CHECK(std::abs(sol.u[0] - 0.14) <= 2e-4);
    CHECK(sol.kkt_residual <= 1e-8);
    REQUIRE(sol.predicted.size() == 10);
    CHECK(sol.predicted[0] == doctest::Approx(-0.02).epsilon(1e-9));
}

TEST_CASE("no shedding when the prediction is already safe") {
    SafetyConfig cfg;
    cfg.T = 5;
    const ControlSolution sol = solve_qp(scalar(0.5), scalar(0.1), Eigen::VectorXd::Constant(1, -0.005), cfg);
    CHECK(sol.u[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("infeasible plans report the violated constraint") {
    SafetyConfig cfg;
    cfg.T = 4;
    try {
        solve_qp(scalar(1.0), scalar(0.001), Eigen::VectorXd::Constant(1, -0.05), cfg);
        FAIL("expected InfeasibleError");
    } catch (const InfeasibleError& e) {
        CHECK(e.step() >= 1);
        CHECK(e.step() <= 4);
        CHECK(e.violation() > 0.0);
    }
}

TEST_CASE("dense QP solutions satisfy KKT") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 1 + trial % 5;
        const int m = 2 + trial % 7;
        const Eigen::MatrixXd M = test::randn(n, n, rng);
        QpProblem qp;
        qp.H = M * M.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
        qp.f = test::randn(n, 1, rng);
        qp.C = test::randn(m, n, rng);
        const Eigen::VectorXd x0 = test::randn(n, 1, rng);
        qp.b = qp.C * x0 - Eigen::VectorXd::Constant(m, 0.5); // x0 is strictly feasible
        const QpSolution s = solve_dense_qp(qp);
        CHECK(s.kkt_residual <= 1e-8);
        CHECK(kkt_residual(qp, s.x, s.lambda) <= 1e-8);
        CHECK((qp.C * s.x - qp.b).minCoeff() >= -1e-9);
        CHECK(s.lambda.minCoeff() >= -1e-12);
        const double f = 0.5 * s.x.dot(qp.H * s.x) + qp.f.dot(s.x);
        const double f0 = 0.5 * x0.dot(qp.H * x0) + qp.f.dot(x0);
        CHECK(f <= f0 + 1e-10);
    }
    QpProblem bad;
    bad.H = Eigen::MatrixXd::Identity(1, 1);
    bad.f = Eigen::VectorXd::Zero(1);
    bad.C = Eigen::MatrixXd(2, 1);
    bad.C << 1.0, -1.0;
    bad.b = Eigen::Vector2d(1.0, 0.0); // x >= 1 and x <= 0
    CHECK_THROWS_AS(solve_dense_qp(bad), InfeasibleError);
}

TEST_CASE("multi-input control problems are optimal among feasible points") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::MatrixXd A = test::stable(3, 0.9, rng);
        Eigen::MatrixXd B = test::randn(3, 2, rng, 0.02).cwiseAbs();
        Eigen::VectorXd g1 = test::randn(3, 1, rng, 0.01);
        SafetyConfig cfg;
        cfg.T = 8;
        ControlSolution s;
        try {
            s = solve_qp(A, B, g1, cfg);
        } catch (const InfeasibleError&) {
            continue;
        }
        CHECK(s.kkt_residual <= 1e-8);
        CHECK(satisfies(predicted(A, B, g1, s.u, 8), cfg.omega_min, cfg.omega_inf_min, 1e-9));
        for (int i = 0; i < 200; ++i) {
            const Eigen::Vector2d v(U(rng), U(rng));
            if (satisfies(predicted(A, B, g1, v, 8), cfg.omega_min, cfg.omega_inf_min))
                CHECK(v.squaredNorm() >= s.objective - 1e-10);
        }
    }
}

TEST_CASE("quantization") {
    auto q = [](double u, double d) { return quantize(Eigen::VectorXd::Constant(1, u), Eigen::VectorXd::Constant(1, d))[0]; };
    auto c = [](double u, double d) { return quantize_ceil(Eigen::VectorXd::Constant(1, u), Eigen::VectorXd::Constant(1, d))[0]; };
    CHECK(q(0.37, 0.25) == doctest::Approx(0.25));
    CHECK(q(0.45, 0.1) == doctest::Approx(0.5));
    CHECK(q(0.0, 0.1) == 0.0);
    CHECK(q(1.0, 0.3) == 1.0);
    CHECK(q(0.94, 0.3) == doctest::Approx(0.9));
    CHECK(c(0.37, 0.25) == doctest::Approx(0.5));
    CHECK(c(0.5, 0.25) == doctest::Approx(0.5));
    CHECK(c(0.95, 0.3) == 1.0);
    CHECK(c(0.85, 0.3) == doctest::Approx(0.9));

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(0.0, 1.0), D(0.01, 0.3);
    for (int i = 0; i < 500; ++i) {
        const double u = U(rng), d = D(rng);
        const double n = q(u, d), up = c(u, d);
        CHECK(up >= n - 1e-15);
        CHECK(std::abs(n - u) <= 0.5 * d + 1e-12);
        CHECK(n <= 1.0);
        CHECK(up <= 1.0);
        CHECK((n == 1.0 || std::abs(n / d - std::round(n / d)) <= 1e-9));
    }
    CHECK_THROWS_AS(quantize(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(1)), ArgumentError);

    const Eigen::VectorXd d = feeder_step(10.0, {700.0, 500.0});
    CHECK(d[0] == doctest::Approx(10.0 / 700.0));
    CHECK(d[1] == doctest::Approx(0.02));
}

TEST_CASE("margin example") {
    // A = 0.5, B = 1, d = 0.1: quantization terms 0.05 and 0.075.
    const SafetyMargin m = zeta_margin(scalar(0.5), scalar(1.0), Eigen::VectorXd::Constant(1, 0.1), 0.02, 2);
    REQUIRE(m.quant_terms.size() == 2);
    CHECK(m.quant_terms[0] == doctest::Approx(0.05));
    CHECK(m.quant_terms[1] == doctest::Approx(0.075));
    CHECK(m.zeta == doctest::Approx(0.095));
    CHECK(m.worst_step == 2);
    CHECK(m.spectral_radius == doctest::Approx(0.5));
    CHECK_FALSE(m.spectral_warning);
    CHECK(zeta_margin(scalar(1.1), scalar(1.0), Eigen::VectorXd::Constant(1, 0.1), 0.0, 2).spectral_warning);
}

TEST_CASE("quantization error never exceeds the margin terms") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> U(0.0, 1.0), D(0.01, 0.2);
    for (int trial = 0; trial < 1000; ++trial) {
        const int p = 2 + trial % 3, qn = 1 + trial % 4, T = 6;
        const Eigen::MatrixXd A = test::stable(p, 0.95, rng);
        const Eigen::MatrixXd B = test::randn(p, qn, rng, 0.1);
        const Eigen::VectorXd g1 = test::randn(p, 1, rng, 0.01);
        Eigen::VectorXd u(qn), d(qn);
        for (int i = 0; i < qn; ++i) {
            u[i] = U(rng);
            d[i] = D(rng);
        }
        const SafetyMargin m = zeta_margin(A, B, d, 0.0, T);
        const auto a = predicted(A, B, g1, u, T);
        const auto b = predicted(A, B, g1, quantize(u, d), T);
        for (int k = 0; k < T; ++k) {
            const double err = std::abs(a[static_cast<std::size_t>(k)] - b[static_cast<std::size_t>(k)]);
            CHECK(err <= m.worst_case_terms[static_cast<std::size_t>(k)] + 1e-12);
            CHECK(m.worst_case_terms[static_cast<std::size_t>(k)] <= m.quant_terms[static_cast<std::size_t>(k)] + 1e-15);
        }
    }
}

TEST_CASE("the margin keeps quantized plans feasible and grows with the feeder size") {
    std::mt19937_64 rng(5);
    const Eigen::MatrixXd A = test::stable(3, 0.9, rng);
    Eigen::MatrixXd B = test::randn(3, 2, rng, 0.02).cwiseAbs();
    B.row(0) = Eigen::RowVector2d(0.01, 0.008);
    const Eigen::VectorXd g1 = Eigen::Vector3d(-0.015, 0.002, -0.001);
    SafetyConfig cfg;
    cfg.T = 10;
    const std::vector<double> bus = {500.0, 400.0};
    double prev = -1.0;
    for (double d_mw : {5.0, 10.0, 20.0}) {
        const Eigen::VectorXd d = feeder_step(d_mw, bus);
        const SafetyMargin m = zeta_margin(A, B, d, 0.0, cfg.T);
        CHECK(m.zeta >= prev);
        prev = m.zeta;
        SafetyConfig with = cfg;
        with.zeta = m.zeta;
        ControlSolution s;
        try {
            s = solve_qp(A, B, g1, with);
        } catch (const InfeasibleError&) {
            continue;
        }
        CHECK(satisfies(predicted(A, B, g1, quantize(s.u, d), cfg.T), cfg.omega_min, cfg.omega_inf_min, 1e-12));
    }
}
