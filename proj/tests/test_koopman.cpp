#include "doctest.h"

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "kls/errors.hpp"
#include "kls/koopman.hpp"

using namespace kls;

namespace {

// g = [w; y] straight from one-sample windows of two channels.
KoopmanModel linear_model(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    EncoderSpec s;
    s.kind = EncoderSpec::Kind::PassThrough;
    s.channels = static_cast<int>(A.rows());
    s.window_len = 1;
    KoopmanModel m;
    m.encoder = Encoder(s);
    m.A = A;
    m.B = B;
    m.theta = Eigen::VectorXd();
    m.tau = 0.0;
    return m;
}

// Trajectories of g_{t+1} = A g_t + B u with constant u per trajectory.
SeqData planted(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, int n, int T, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    SeqData d;
    d.n = n;
    d.T = T;
    const auto p = A.rows(), q = B.cols();
    d.X.resize(p, n * T);
    d.omega.resize(n * T);
    d.U.resize(q, n * T);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd g(p), u(q);
        for (auto k = 0; k < p; ++k) g[k] = U(rng);
        for (auto k = 0; k < q; ++k) u[k] = U(rng);
        for (int t = 0; t < T; ++t) {
            d.X.col(i * T + t) = g;
            d.omega[i * T + t] = g[0];
            d.U.col(i * T + t) = u;
            g = (A * g + B * u).eval();
        }
    }
    return d;
}

Eigen::MatrixXd mat(std::initializer_list<std::initializer_list<double>> rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index r = 0;
    for (const auto& row : rows) {
        Eigen::Index c = 0;
        for (double v : row) m(r, c++) = v;
        ++r;
    }
    return m;
}

} // namespace

TEST_CASE("rollout agrees with geometric and explicit-sum oracles") {
    const Eigen::MatrixXd A = 0.5 * Eigen::MatrixXd::Identity(3, 3);
    const Eigen::VectorXd g1 = Eigen::Vector3d(1.0, -2.0, 4.0);
    const Eigen::MatrixXd r = rollout_constant(A, Eigen::MatrixXd::Zero(3, 1), g1, Eigen::VectorXd::Zero(1), 6);
    REQUIRE(r.cols() == 5);
    for (int t = 0; t < 5; ++t) CHECK((r.col(t) - std::pow(0.5, t + 1) * g1).norm() <= 1e-15);

    std::mt19937_64 rng(4);
    const Eigen::MatrixXd A2 = test::stable(4, 0.9, rng);
    const Eigen::MatrixXd B2 = test::randn(4, 2, rng);
    const Eigen::MatrixXd U = test::randn(2, 7, rng);
    const Eigen::VectorXd g = test::randn(4, 1, rng);
    const Eigen::MatrixXd out = rollout(A2, B2, g, U);
    for (int k = 1; k <= 7; ++k) {
        Eigen::MatrixXd Ak = Eigen::MatrixXd::Identity(4, 4);
        for (int i = 0; i < k; ++i) Ak = Ak * A2;
        Eigen::VectorXd expect = Ak * g;
        for (int j = 0; j < k; ++j) {
            Eigen::MatrixXd P = Eigen::MatrixXd::Identity(4, 4);
            for (int i = 0; i < k - 1 - j; ++i) P = P * A2;
            expect += P * B2 * U.col(j);
        }
        CHECK((out.col(k - 1) - expect).norm() <= 1e-12);
    }
    CHECK_THROWS_AS(rollout(A2, B2, g, test::randn(3, 2, rng)), ArgumentError);
}

TEST_CASE("scalar loss and gradient by hand") {
    const double a = 0.8, b = 0.5, u = 0.2, w = 3.0;
    const double g0 = 1.0, g1 = 0.7, g2 = 0.65;
    KoopmanModel m = linear_model(mat({{a}}), mat({{b}}));
    SeqData d;
    d.n = 1;
    d.T = 3;
    d.X = mat({{g0, g1, g2}});
    d.omega = d.X.row(0);
    d.U = mat({{u, u, u}});

    const double r1 = a * g0 + b * u - g1;
    const double r2 = a * (a * g0 + b * u) + b * u - g2;
    const double r3 = a * g1 + b * u - g2;
    LossOptions full{0, w};
    CHECK(loss(m, d, full) == doctest::Approx(w * (r1 * r1 + r2 * r2 + r3 * r3)).epsilon(1e-14));
    LossOptions one{1, w};
    CHECK(loss(m, d, one) == doctest::Approx(w * (r1 * r1 + r3 * r3)).epsilon(1e-14));

    const LossGrad lg = loss_and_gradients(m, d, full);
    const double dA = w * (2 * r1 * g0 + 2 * r2 * (2 * a * g0 + b * u) + 2 * r3 * g1);
    const double dB = w * (2 * r1 * u + 2 * r2 * (a * u + u) + 2 * r3 * u);
    CHECK(lg.loss == doctest::Approx(loss(m, d, full)));
    CHECK(lg.dA(0, 0) == doctest::Approx(dA).epsilon(1e-12));
    CHECK(lg.dB(0, 0) == doctest::Approx(dB).epsilon(1e-12));
}

TEST_CASE("loss is additive over trajectories") {
    std::mt19937_64 rng(2);
    const Eigen::MatrixXd A = test::stable(2, 0.8, rng);
    const Eigen::MatrixXd B = test::randn(2, 1, rng);
    const SeqData d = planted(A, B, 5, 8, 3);
    KoopmanModel m = linear_model(0.9 * A, B);
    const LossOptions opt{3, 7.0};
    double parts = 0.0;
    for (int i = 0; i < d.n; ++i) parts += loss(m, subset(d, {i}), opt);
    CHECK(loss(m, d, opt) == doctest::Approx(parts).epsilon(1e-12));
    CHECK(loss(linear_model(A, B), d, opt) <= 1e-25);
}

TEST_CASE("gradients through an mlp encoder match finite differences") {
    EncoderSpec s;
    s.kind = EncoderSpec::Kind::Mlp;
    s.channels = 2;
    s.window_len = 3;
    s.latent = 2;
    s.hidden = {4};
    KoopmanModel m = init_model(s, 1, 0.0, 0.01, 6);
    std::mt19937_64 rng(10);
    m.A += 0.05 * test::randn(3, 3, rng);
    SeqData d;
    d.n = 3;
    d.T = 5;
    d.X = test::randn(6, 15, rng);
    d.omega = 0.1 * test::randn(1, 15, rng);
    d.U = test::randn(1, 15, rng);
    const LossOptions opt{3, 2.0};
    const LossGrad lg = loss_and_gradients(m, d, opt);
    const double h = 1e-6;
    auto fd = [&](auto&& perturb) {
        KoopmanModel p = m, q = m;
        perturb(p, h);
        perturb(q, -h);
        return (loss(p, d, opt) - loss(q, d, opt)) / (2 * h);
    };
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            CHECK(lg.dA(r, c) == doctest::Approx(fd([&](KoopmanModel& k, double e) { k.A(r, c) += e; })).epsilon(1e-6));
    for (int r = 0; r < 3; ++r)
        CHECK(lg.dB(r, 0) == doctest::Approx(fd([&](KoopmanModel& k, double e) { k.B(r, 0) += e; })).epsilon(1e-6));
    for (Eigen::Index i = 0; i < m.theta.size(); ++i)
        CHECK(lg.dtheta[i] == doctest::Approx(fd([&](KoopmanModel& k, double e) { k.theta[i] += e; })).epsilon(1e-6));
}

TEST_CASE("planted linear system is recovered") {
    const Eigen::MatrixXd A = mat({{0.9, 0.1}, {-0.2, 0.7}});
    const Eigen::MatrixXd B = mat({{0.05}, {0.3}});
    const SeqData d = planted(A, B, 20, 10, 7);
    KoopmanModel m = linear_model(Eigen::MatrixXd::Identity(2, 2) * 0.5, Eigen::MatrixXd::Zero(2, 1));
    TrainConfig cfg;
    cfg.optimizer = TrainConfig::Optimizer::Momentum;
    cfg.learning_rate = 0.005;
    cfg.lr_decay = 1.0;
    cfg.batch_size = 0;
    cfg.epochs = 20000;
    cfg.max_span = 1;
    cfg.omega_weight = 1.0;
    cfg.tolerance = 1e-24;
    const KoopmanModel fit = train(m, d, cfg);
    CHECK((fit.A - A).cwiseAbs().maxCoeff() <= 1e-7);
    CHECK((fit.B - B).cwiseAbs().maxCoeff() <= 1e-7);
    double mae = 0.0;
    int count = 0;
    for (int i = 0; i < d.n; ++i) {
        const Eigen::MatrixXd r = rollout(fit.A, fit.B, d.X.col(i * d.T), d.U.middleCols(i * d.T, d.T - 1));
        for (int t = 1; t < d.T; ++t, ++count) mae += std::abs(r(0, t - 1) - d.omega[i * d.T + t]);
    }
    CHECK(mae / count <= 1e-6);
    CHECK(fit.meta.max_pred_err <= 1e-6);
}

TEST_CASE("training bookkeeping") {
    std::mt19937_64 rng(3);
    const Eigen::MatrixXd A = test::stable(2, 0.8, rng);
    const Eigen::MatrixXd B = test::randn(2, 1, rng);
    const SeqData d = planted(A, B, 6, 6, 5);
    const KoopmanModel m = linear_model(0.5 * Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Zero(2, 1));

    TrainConfig none;
    none.epochs = 0;
    const KoopmanModel same = train(m, d, none);
    CHECK(same.meta.epochs == 0);
    CHECK(same.A == m.A);
    CHECK(same.meta.final_loss == same.meta.initial_loss);

    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 2;
    cfg.omega_weight = 1.0;
    const KoopmanModel a = train(m, d, cfg);
    const KoopmanModel b = train(m, d, cfg);
    CHECK(a.A == b.A);
    CHECK(a.B == b.B);
    CHECK(a.meta.final_loss < a.meta.initial_loss);

    TrainConfig wild = cfg;
    wild.optimizer = TrainConfig::Optimizer::Momentum;
    wild.learning_rate = 50.0;
    CHECK_THROWS_AS(train(m, d, wild), TrainingError);

    TrainConfig bad = cfg;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(train(m, d, bad), ConfigError);
}

TEST_CASE("model json round trip") {
    EncoderSpec s;
    s.channels = 2;
    s.window_len = 4;
    s.latent = 3;
    s.hidden = {5};
    const KoopmanModel m = init_model(s, 2, 0.03, 0.01, 8);
    const auto dir = test::tmp_dir("model_io");
    save_model(m, (dir / "m.json").string());
    const KoopmanModel back = load_model((dir / "m.json").string());
    CHECK(back.A == m.A);
    CHECK(back.B == m.B);
    CHECK(back.theta == m.theta);
    CHECK(back.tau == m.tau);
    CHECK_THROWS_AS(load_model((dir / "missing.json").string()), IoError);
}

TEST_CASE("pearson correlation") {
    const std::vector<double> x = {1, 2, 3};
    CHECK(pearson(x, {2, 4, 6}) == doctest::Approx(1.0));
    CHECK(pearson(x, {3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(pearson(x, {1, 3, 2}) == doctest::Approx(0.5));
    bool deg = false;
    CHECK(pearson(x, {5, 5, 5}, &deg) == 0.0);
    CHECK(deg);
    CHECK_THROWS_AS(pearson({1.0}, {1.0}), ArgumentError);
}
