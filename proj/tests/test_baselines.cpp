#include "doctest.h"

#include <random>

#include "helpers.hpp"
#include "kls/baselines.hpp"
#include "kls/errors.hpp"

using namespace kls;

namespace {

const std::vector<Record>& small_records() {
    static const std::vector<Record> recs = [] {
        DatasetConfig cfg;
        cfg.n_train = 12;
        cfg.T = 20;
        const GridConfig g = default_grid();
        return generate(g, train_scenarios(g, cfg), cfg);
    }();
    return recs;
}

double one_step_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Z,
                         const Eigen::MatrixXd& U, const Eigen::MatrixXd& Zn) {
    return (Zn - A * Z - B * U).squaredNorm();
}

} // namespace

TEST_CASE("dmdc recovers a planted system") {
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd A = test::stable(4, 0.95, rng);
    const Eigen::MatrixXd B = test::randn(4, 2, rng);
    const Eigen::MatrixXd Z = test::randn(4, 40, rng);
    const Eigen::MatrixXd U = test::randn(2, 40, rng);
    const DmdcFit fit = fit_dmdc(Z, U, A * Z + B * U);
    CHECK((fit.A - A).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((fit.B - B).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(fit.rank == 6);
    CHECK(fit.ridge == 0.0);
    CHECK(fit.residual <= 1e-20);
}

TEST_CASE("ridge matches the regularized normal equations") {
    std::mt19937_64 rng(2);
    const Eigen::MatrixXd Z = test::randn(3, 15, rng);
    const Eigen::MatrixXd U = test::randn(1, 15, rng);
    const Eigen::MatrixXd Zn = test::randn(3, 15, rng);
    DmdcOptions opt;
    opt.ridge = 0.7;
    const DmdcFit fit = fit_dmdc(Z, U, Zn, opt);
    Eigen::MatrixXd Phi(4, 15);
    Phi << Z, U;
    const Eigen::MatrixXd K = Zn * Phi.transpose() * (Phi * Phi.transpose() + 0.7 * Eigen::MatrixXd::Identity(4, 4)).inverse();
    CHECK((fit.A - K.leftCols(3)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((fit.B - K.rightCols(1)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("rank deficiency falls back to the minimum-norm solution") {
    std::mt19937_64 rng(3);
    Eigen::MatrixXd Z = test::randn(3, 20, rng);
    Z.row(2) = Z.row(0) + Z.row(1);
    const Eigen::MatrixXd U = Eigen::MatrixXd::Zero(1, 20);
    const Eigen::MatrixXd Zn = test::randn(3, 20, rng);
    const DmdcFit fit = fit_dmdc(Z, U, Zn);
    CHECK(fit.rank == 2);
    CHECK(fit.ridge > 0.0);
    CHECK(fit.B.cwiseAbs().maxCoeff() <= 1e-8);
    const Eigen::MatrixXd pinv = Z.transpose().completeOrthogonalDecomposition().pseudoInverse().transpose();
    CHECK((fit.A - Zn * pinv).cwiseAbs().maxCoeff() <= 1e-4);

    DmdcOptions strict;
    strict.ridge_fallback = false;
    CHECK_THROWS_AS(fit_dmdc(Z, U, Zn, strict), ConditioningError);
    CHECK_THROWS_AS(fit_dmdc(Z, test::randn(1, 19, rng), Zn), ArgumentError);
}

TEST_CASE("dmdc is optimal in sample") {
    std::mt19937_64 rng(4);
    const Eigen::MatrixXd Z = test::randn(3, 30, rng);
    const Eigen::MatrixXd U = test::randn(2, 30, rng);
    const Eigen::MatrixXd Zn = test::randn(3, 30, rng);
    const DmdcFit fit = fit_dmdc(Z, U, Zn);
    const double best = one_step_residual(fit.A, fit.B, Z, U, Zn);
    CHECK(fit.residual == doctest::Approx(best));
    for (int i = 0; i < 50; ++i) {
        const Eigen::MatrixXd dA = test::randn(3, 3, rng, 1e-3);
        const Eigen::MatrixXd dB = test::randn(3, 2, rng, 1e-3);
        CHECK(one_step_residual(fit.A + dA, fit.B + dB, Z, U, Zn) >= best);
    }
}

TEST_CASE("kmeans and bandwidth helpers") {
    Eigen::MatrixXd pts(1, 6);
    pts << 0.0, 0.1, 0.2, 10.0, 10.1, 10.2;
    Eigen::MatrixXd c = kmeans(pts, 2, 5);
    REQUIRE(c.cols() == 2);
    if (c(0, 0) > c(0, 1)) std::swap(c(0, 0), c(0, 1));
    CHECK(c(0, 0) == doctest::Approx(0.1));
    CHECK(c(0, 1) == doctest::Approx(10.1));
    CHECK(kmeans(pts, 2, 5) == kmeans(pts, 2, 5));

    Eigen::MatrixXd three(1, 3);
    three << 0.0, 1.0, 3.0; // distances 1, 2, 3
    CHECK(median_pairwise_distance(three) == doctest::Approx(2.0));
    CHECK(median_pairwise_distance(Eigen::MatrixXd::Zero(2, 1)) == 1.0);
}

TEST_CASE("edmd with an empty dictionary equals dmdc") {
    BaselineConfig cfg;
    cfg.rbf_count = 0;
    const KoopmanModel dmd = fit_dmdc_model(small_records(), cfg);
    const KoopmanModel edmd = fit_edmd_model(small_records(), cfg);
    CHECK(dmd.A == edmd.A);
    CHECK(dmd.B == edmd.B);
    CHECK(dmd.p() == 6);
    CHECK(dmd.q() == 5);
}

TEST_CASE("edmd models are deterministic and lift the instantaneous state") {
    BaselineConfig cfg;
    cfg.rbf_count = 10;
    const KoopmanModel a = fit_edmd_model(small_records(), cfg);
    const KoopmanModel b = fit_edmd_model(small_records(), cfg);
    CHECK(a.A == b.A);
    CHECK(a.B == b.B);
    CHECK(a.p() == 16);
    const Eigen::VectorXd g = a.state(small_records()[0].trajectory, 3);
    const auto inst = small_records()[0].trajectory.instant(3);
    for (int i = 0; i < 6; ++i) CHECK(g[i] == inst[static_cast<std::size_t>(i)]);
    for (int i = 6; i < 16; ++i) {
        CHECK(g[i] > 0.0);
        CHECK(g[i] <= 1.0);
    }

    BaselineConfig win = cfg;
    win.rbf_count = 0;
    win.use_window = true;
    CHECK(fit_dmdc_model(small_records(), win).p() == 31 * 6);
}
