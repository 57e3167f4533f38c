#include "doctest.h"

#include <random>

#include "helpers.hpp"
#include "kls/errors.hpp"
#include "kls/sls.hpp"

using namespace kls;

namespace {

// Random block-lower-triangular (T+1)q x (T+1)p matrix.
Eigen::MatrixXd causal(int T, int q, int p, std::mt19937_64& rng, double scale) {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero((T + 1) * q, (T + 1) * p);
    for (int t = 0; t <= T; ++t)
        for (int s = 0; s <= t; ++s) M.block(t * q, s * p, q, p) = test::randn(q, p, rng, scale);
    return M;
}

std::vector<Eigen::MatrixXd> repeat(const Eigen::MatrixXd& M, int T) {
    return std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(T), M);
}

} // namespace

TEST_CASE("stacked operator identities") {
    std::mt19937_64 rng(1);
    const int T = 4, p = 2, q = 1;
    const Eigen::MatrixXd A = test::randn(p, p, rng), B = test::randn(p, q, rng);
    const StackedSystem s = build_stacked(A, B, T);
    CHECK(s.A.rows() == (T + 1) * p);
    CHECK(s.B.cols() == (T + 1) * q);
    CHECK(s.A.bottomRightCorner(p, p).isZero());

    Eigen::MatrixXd Zk = Eigen::MatrixXd::Identity(s.Z.rows(), s.Z.cols());
    for (int k = 0; k < T; ++k) Zk = Zk * s.Z;
    CHECK_FALSE(Zk.isZero());
    CHECK((Zk * s.Z).isZero());

    const Eigen::MatrixXd ZA = s.Z * s.A;
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(ZA.rows(), ZA.cols());
    CHECK(((I - ZA) * nilpotent_inverse(ZA, T) - I).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((I - ZA).inverse().isApprox(nilpotent_inverse(ZA, T), 1e-12));
}

TEST_CASE("scalar horizon-two response by hand") {
    const double a = 0.7, b = 2.0;
    const StackedSystem s = build_stacked(Eigen::MatrixXd::Constant(1, 1, a), Eigen::MatrixXd::Constant(1, 1, b), 2);
    const SystemResponse r0 = response_of(s, Eigen::MatrixXd::Zero(3, 3));
    Eigen::Matrix3d expect;
    expect << 1, 0, 0, a, 1, 0, a * a, a, 1;
    CHECK((r0.Tg - expect).cwiseAbs().maxCoeff() <= 1e-15);

    // u_0 = k x_0 only: x_1 = (a + b k) x_0 + w_1, x_2 = a x_1 + w_2.
    const double k = -0.2;
    Eigen::Matrix3d Tu = Eigen::Matrix3d::Zero();
    Tu(0, 0) = k;
    const SystemResponse r = response_of(s, Tu);
    Eigen::Matrix3d e2;
    e2 << 1, 0, 0, a + b * k, 1, 0, a * (a + b * k), a, 1;
    CHECK((r.Tg - e2).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(sls_residual(s, r) <= 1e-15);

    Eigen::Matrix3d upper = Eigen::Matrix3d::Zero();
    upper(0, 2) = 1.0;
    CHECK_THROWS_AS(response_of(s, upper), ArgumentError);
}

TEST_CASE("response formulas match time stepping") {
    std::mt19937_64 rng(7);
    const int T = 6, p = 3, q = 2;
    const Eigen::MatrixXd A = test::stable(p, 0.9, rng), B = test::randn(p, q, rng);
    const StackedSystem s = build_stacked(A, B, T);
    const Eigen::MatrixXd Tu = causal(T, q, p, rng, 0.2);
    const SystemResponse r = response_of(s, Tu);
    const Eigen::VectorXd gamma = test::randn((T + 1) * p, 1, rng);

    const Eigen::VectorXd ff = simulate_feedforward(repeat(A, T), repeat(B, T), Tu, gamma);
    CHECK((ff - r.stacked() * gamma).cwiseAbs().maxCoeff() <= 1e-9);
    const Eigen::VectorXd fb = simulate_feedback(repeat(A, T), repeat(B, T), controller_of(r), gamma);
    CHECK((fb - r.stacked() * gamma).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("true system under the identified controller") {
    std::mt19937_64 rng(9);
    const int T = 5, p = 2, q = 1;
    const Eigen::MatrixXd A = test::stable(p, 0.8, rng), B = test::randn(p, q, rng);
    std::vector<Eigen::MatrixXd> At, Bt;
    for (int t = 0; t < T; ++t) {
        At.push_back(A + random_on_sphere(p, p, 0.05, 100 + static_cast<std::uint64_t>(t)));
        Bt.push_back(B + random_on_sphere(p, q, 0.05, 200 + static_cast<std::uint64_t>(t)));
    }
    const StackedSystem id = build_stacked(A, B, T);
    const StackedSystem truth = build_stacked(At, Bt);
    const Eigen::MatrixXd Tu = causal(T, q, p, rng, 0.1);
    const SystemResponse r = response_of(id, Tu);
    const Eigen::MatrixXd Delta = model_error(truth, id);
    const Eigen::MatrixXd R = true_response_under_identified(r, Delta, p, T);
    const Eigen::VectorXd gamma = test::randn((T + 1) * p, 1, rng);

    const Eigen::VectorXd actual = simulate_feedback(At, Bt, controller_of(r), gamma);
    CHECK((R * gamma - actual).cwiseAbs().maxCoeff() <= 1e-9);

    const SystemResponse ideal = response_of(truth, Tu);
    const Deviation dev = open_loop_deviation(r, ideal, Delta, gamma, p, T);
    const Eigen::VectorXd exact = simulate_feedforward(At, Bt, Tu, gamma);
    CHECK((dev.vector - (actual - exact)).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(dev.norm == doctest::Approx((actual - exact).norm()));

    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(Delta.rows(), Delta.cols());
    CHECK((true_response_under_identified(r, zero, p, T) - r.stacked()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(open_loop_deviation(r, r, zero, gamma, p, T).norm == 0.0);

    CHECK_THROWS_AS(true_response_under_identified(r, 1e3 * Delta, p, T), BoundInapplicable);
}

TEST_CASE("perturbations have the requested induced norm") {
    for (double eps : {0.0, 1e-3, 0.5}) CHECK(induced_norm(random_on_sphere(3, 4, eps, 5)) == doctest::Approx(eps));
    CHECK_THROWS_AS(random_on_sphere(2, 2, -1.0, 1), ArgumentError);
}

TEST_CASE("deviation shrinks with the perturbation and stays under the bound") {
    std::mt19937_64 rng(3);
    const Eigen::MatrixXd A = test::stable(3, 0.9, rng), B = test::randn(3, 2, rng, 0.3);
    DeviationCheckConfig cfg;
    cfg.T = 8;
    cfg.samples = 10;
    const DeviationReport rep = deviation_bound_check(A, B, {1e-1, 1e-2, 1e-3, 0.0}, cfg);
    REQUIRE(rep.levels.size() == 4);
    CHECK(rep.monotone);
    for (const auto& l : rep.levels) {
        CHECK(l.bound_holds);
        CHECK(l.neumann_ok);
        CHECK(l.max_deviation <= l.max_bound + 1e-15);
    }
    CHECK(rep.levels[0].max_deviation > rep.levels[1].max_deviation);
    CHECK(rep.levels[3].max_deviation <= 1e-12);
    CHECK(rep.csv().rfind("epsilon", 0) == 0);
}
