#include "doctest.h"

#include <fstream>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "kls/baselines.hpp"
#include "kls/errors.hpp"
#include "kls/eval.hpp"

using namespace kls;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

struct Fixture {
    GridConfig grid = default_grid();
    EvalConfig cfg;
    std::vector<Record> train;
    std::vector<Record> test;
    KoopmanModel dmd;

    Fixture() {
        cfg.data.n_train = 15;
        cfg.data.n_test = 3;
        train = generate(grid, train_scenarios(grid, cfg.data), cfg.data);
        test = generate(grid, test_scenarios(grid, cfg.data), cfg.data);
        dmd = fit_dmdc_model(train, BaselineConfig{});
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

} // namespace

TEST_CASE("safety metric examples and bounds") {
    CHECK(safety(49.0, 49.5) == 1.0);
    CHECK(safety(48.5, 49.0) == 0.0);
    CHECK(safety(48.75, 49.25) == doctest::Approx(0.5));
    CHECK(safety(49.0, 49.0) == doctest::Approx(0.5));
    CHECK(safety(50.0, 50.0) == 1.0);
    CHECK(safety(40.0, 40.0) == 0.0);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> U(48.0, 50.0);
    for (int i = 0; i < 200; ++i) {
        const double n = U(rng), s = U(rng), dn = 0.1 * U(rng) - 4.8;
        const double v = safety(n, s);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(safety(n + std::abs(dn), s) >= v);
        CHECK(safety(n, s + std::abs(dn)) >= v);
    }
    SafetyAnchors bad;
    bad.nadir1 = bad.nadir0;
    CHECK_THROWS_AS(safety(49.0, 49.0, bad), ConfigError);
}

TEST_CASE("control cost examples and bounds") {
    CHECK(control_cost(49.5, 50.0) == 0.0);
    CHECK(control_cost(49.0, 49.5) == 1.0);
    CHECK(control_cost(49.25, 49.6) == doctest::Approx(0.5));
    CHECK(control_cost(48.0, 48.0) == 1.0);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> U(48.5, 50.2);
    for (int i = 0; i < 200; ++i) {
        const double n = U(rng), s = U(rng);
        const double v = control_cost(n, s);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(control_cost(n + 0.05, s) <= v);
        CHECK(control_cost(n, s + 0.05) <= v);
    }
}

TEST_CASE("trajectory mae") {
    CHECK(trajectory_mae({1, 2, 3}, {1, 1, 1}) == doctest::Approx(1.0));
    CHECK(trajectory_mae({0.5}, {0.5}) == 0.0);
    CHECK_THROWS_AS(trajectory_mae({1, 2}, {1}), ArgumentError);
}

TEST_CASE("quantiles and summaries") {
    CHECK(quantile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
    CHECK(quantile({4, 1, 3, 2}, 0.0) == 1.0);
    CHECK(quantile({4, 1, 3, 2}, 1.0) == 4.0);
    CHECK(quantile({1, 2, 3, 4, 5}, 0.95) == doctest::Approx(4.8));

    MetricsRow a{"s1", "m", 0, 0, 49.0, 49.5, 49.0, 1.0, 1.0, 0.001, 10.0, false};
    MetricsRow b{"s2", "m", 0, 0, 48.75, 49.25, 48.7, 0.5, 1.0, 0.003, 30.0, false};
    const auto sum = summarize({a, b});
    REQUIRE(sum.size() == 1);
    CHECK(sum[0].count == 2);
    CHECK(sum[0].mae_median == doctest::Approx(0.002));
    CHECK(sum[0].safety_mean == doctest::Approx(0.75));
    CHECK(sum[0].safe_fraction == doctest::Approx(0.5));
    CHECK(sum[0].shed_mean_mw == doctest::Approx(20.0));

    const std::string one = metrics_csv({a});
    CHECK(lines(one) == 2);
    CHECK(one.rfind(metrics_csv_header(), 0) == 0);
    CHECK(metrics_csv({a, b}) == metrics_csv({a, b}));
    CHECK(lines(summary_csv(sum)) == 2);
}

TEST_CASE("scored rows agree with the metric functions") {
    const Fixture& f = fixture();
    const ScenarioSpec& sc = f.test[0].scenario;
    Trajectory tr;
    PolicyOptions opt;
    opt.label = "dmd";
    const MetricsRow row = evaluate_policy(f.grid, sc, f.dmd, f.cfg, opt, &tr);
    CHECK(row.safety == doctest::Approx(safety(row.nadir_hz, row.ssv_hz)));
    CHECK(row.control_cost == doctest::Approx(control_cost(row.nadir_hz, row.ssv_hz)));
    CHECK(row.ssv_hz == doctest::Approx(f.grid.f0 * (1.0 + tr.omega.back())));
    CHECK(row.fine_nadir_hz <= row.nadir_hz + 1e-12);
    CHECK(row.shed_mw >= 0.0);
    CHECK(prediction_mae(f.dmd, f.test[0].trajectory) >= 0.0);

    const Trajectory unshed = simulate_unshed(f.grid, sc, f.cfg.data);
    CHECK(unshed.shed_time < 0.0);
    const Trajectory full = simulate_with_shed(f.grid, sc, std::vector<double>(f.grid.loads.size(), 0.3), f.cfg.data);
    CHECK(*std::min_element(full.omega.begin(), full.omega.end()) >=
          *std::min_element(unshed.omega.begin(), unshed.omega.end()));
}

TEST_CASE("conventional policy") {
    const Fixture& f = fixture();
    const ScenarioSpec ref = reference_scenario(f.grid, 350.0, f.cfg.data.fault_time);
    CHECK(ref.fault.deficit_mw == 350.0);

    ConventionalPolicy pol;
    pol.proportion = 0.1;
    const MetricsRow shed = evaluate_conventional(f.grid, ref, pol, f.cfg);
    CHECK(shed.shed_mw == doctest::Approx(0.1 * f.grid.total_load_mw()));

    const ScenarioSpec mild = reference_scenario(f.grid, 100.0, f.cfg.data.fault_time);
    CHECK(evaluate_conventional(f.grid, mild, pol, f.cfg).shed_mw == 0.0);

    const ConventionalPolicy tuned = tune_proportion(f.grid, ref, f.cfg);
    CHECK(tuned.safe_reference);
    CHECK(std::abs(tuned.proportion / 0.005 - std::round(tuned.proportion / 0.005)) <= 1e-9);
    CHECK(evaluate_conventional(f.grid, ref, tuned, f.cfg).safety >= 0.9);
    if (tuned.proportion > 0.0) {
        ConventionalPolicy less = tuned;
        less.proportion -= 0.005;
        CHECK(evaluate_conventional(f.grid, ref, less, f.cfg).safety < 0.9);
    }
}

TEST_CASE("compare writes deterministic reports") {
    const Fixture& f = fixture();
    CompareConfig cc;
    cc.methods = {"dmd", "conventional"};
    cc.plot_scenarios = 1;
    const auto dir = test::tmp_dir("compare");
    cc.out_dir = (dir / "a").string();
    const auto rows = compare(f.grid, f.test, {{"dmd", f.dmd}}, f.cfg, cc);
    CHECK(rows.size() == 2 * f.test.size());
    cc.out_dir = (dir / "b").string();
    compare(f.grid, f.test, {{"dmd", f.dmd}}, f.cfg, cc);
    const std::string m = slurp(dir / "a" / "metrics.csv");
    CHECK(m == slurp(dir / "b" / "metrics.csv"));
    CHECK(lines(m) == 1 + rows.size());
    CHECK(std::filesystem::exists(dir / "a" / "summary.csv"));
    CHECK(std::filesystem::exists(dir / "a" / "mae_box.svg"));

    cc.methods = {"kls"};
    CHECK_THROWS_AS(compare(f.grid, f.test, {{"dmd", f.dmd}}, f.cfg, cc), IoError);
}
