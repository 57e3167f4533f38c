#include "doctest.h"

#include <cmath>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "kls/dataset.hpp"
#include "kls/errors.hpp"

using namespace kls;

namespace {

// Two channels: w(t) = 0.001 t on a 10 ms grid over the last second, y = 5.
Trajectory ramp_trajectory() {
    Trajectory tr;
    tr.channels = 2;
    tr.window_len = 101;
    tr.dt_embed = 0.01;
    tr.tau = 1.0;
    tr.time = {1.0};
    tr.omega = {0.001};
    std::vector<double> w;
    for (int i = 0; i <= 100; ++i) w.push_back(0.001 * (i * 0.01));
    for (int i = 0; i <= 100; ++i) w.push_back(5.0);
    tr.windows = {w};
    return tr;
}

Record tiny_record(std::size_t i) {
    Record r;
    r.scenario.id = "r" + std::to_string(i);
    r.scenario.inertia_scale = {1.0};
    r.scenario.u = {0.0};
    r.trajectory.id = r.scenario.id;
    r.trajectory.channels = 1;
    r.trajectory.window_len = 1;
    r.trajectory.time = {0.0};
    r.trajectory.omega = {static_cast<double>(i)};
    r.trajectory.windows = {{static_cast<double>(i)}};
    r.trajectory.applied_u = {0.0};
    return r;
}

} // namespace

TEST_CASE("ramp embedding picks every tenth fine sample") {
    const Trajectory tr = ramp_trajectory();
    const auto e = build_embedding(tr, 0.3, 0.1, 0);
    REQUIRE(e.size() == 8);
    const double expected[] = {0.0007, 0.0008, 0.0009, 0.001};
    for (int i = 0; i < 4; ++i) CHECK(e[static_cast<std::size_t>(i)] == doctest::Approx(expected[i]).epsilon(1e-12));
    for (int i = 4; i < 8; ++i) CHECK(e[static_cast<std::size_t>(i)] == 5.0);

    const auto instant = build_embedding(tr, 0.0, 0.01, 0);
    REQUIRE(instant.size() == 2);
    CHECK(instant[0] == tr.omega[0]);
    CHECK(instant[1] == 5.0);

    CHECK_THROWS_AS(build_embedding(tr, 1.2, 0.1, 0), WindowError);
    CHECK_THROWS_AS(build_embedding(tr, 0.3, 0.015, 0), ArgumentError);
    CHECK_THROWS_AS(build_embedding(tr, 0.25, 0.1, 0), ArgumentError);
    CHECK_THROWS_AS(build_embedding(tr, 0.3, 0.1, 1), ArgumentError);
}

TEST_CASE("constant trajectory gives a constant window") {
    Trajectory tr = ramp_trajectory();
    for (double& v : tr.windows[0]) v = 0.25;
    for (double v : build_embedding(tr, 0.5, 0.05, 0)) CHECK(v == 0.25);
}

TEST_CASE("fault enumeration covers N-1 to N-3 within the deficit band") {
    const GridConfig g = default_grid();
    const auto faults = enumerate_faults(g, FaultSetConfig{}, 1.0);
    CHECK(faults.size() == 14);
    double lo = 1e9, hi = 0.0;
    for (const auto& f : faults) {
        CHECK_NOTHROW(f.validate(g));
        lo = std::min(lo, f.deficit_mw);
        hi = std::max(hi, f.deficit_mw);
    }
    CHECK(lo == doctest::Approx(0.05 * g.total_load_mw()));
    CHECK(hi == doctest::Approx(0.15 * g.total_load_mw()));
}

TEST_CASE("scenario sampling") {
    const GridConfig g = default_grid();
    ScenarioRanges r;
    r.faults = enumerate_faults(g, FaultSetConfig{}, 1.0);

    SUBCASE("band zero gives nominal inertia") {
        r.band = 0.0;
        for (const auto& s : sample_scenarios(3, 50, 4, 5, r))
            for (double m : s.inertia_scale) CHECK(m == 1.0);
    }
    SUBCASE("same seed gives identical lists, prefixes shared") {
        const auto a = sample_scenarios(9, 20, 4, 5, r);
        const auto b = sample_scenarios(9, 20, 4, 5, r);
        const auto c = sample_scenarios(9, 5, 4, 5, r);
        CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
        for (std::size_t i = 0; i < c.size(); ++i) CHECK(nlohmann::json(c[i]) == nlohmann::json(a[i]));
    }
    SUBCASE("multiplier mean converges") {
        r.band = 0.3;
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& s : sample_scenarios(5, 10000, 4, 5, r))
            for (double m : s.inertia_scale) {
                CHECK(m >= 0.7);
                CHECK(m <= 1.3);
                sum += m;
                ++n;
            }
        CHECK(std::abs(sum / static_cast<double>(n) - 1.0) <= 0.01);
    }
    SUBCASE("bad ranges") {
        r.band = 1.2;
        CHECK_THROWS_AS(sample_scenarios(1, 3, 4, 5, r), ConfigError);
    }
}

TEST_CASE("train and test splits are disjoint and deterministic") {
    const GridConfig g = default_grid();
    DatasetConfig cfg;
    cfg.n_train = 30;
    cfg.n_test = 20;
    const auto tr = train_scenarios(g, cfg);
    const auto te = test_scenarios(g, cfg);
    std::set<std::string> ids;
    std::set<std::uint64_t> seeds;
    for (const auto& s : tr) {
        ids.insert(s.id);
        seeds.insert(s.seed);
    }
    for (const auto& s : te) {
        CHECK(ids.count(s.id) == 0);
        CHECK(seeds.count(s.seed) == 0);
    }
    for (const auto& s : tr)
        for (double u : s.u) CHECK(u <= cfg.u_max);

    cfg.n_train = 4;
    cfg.n_test = 2;
    const auto dir = test::tmp_dir("determinism");
    const auto a = generate(g, train_scenarios(g, cfg), cfg);
    const auto b = generate(g, train_scenarios(g, cfg), cfg);
    write_jsonl(a, (dir / "a.jsonl").string());
    write_jsonl(b, (dir / "b.jsonl").string());
    CHECK(sha256_file((dir / "a.jsonl").string()) == sha256_file((dir / "b.jsonl").string()));
    for (const auto& rec : a) {
        REQUIRE(rec.trajectory.T() == cfg.T);
        const auto e = build_embedding(rec.trajectory, cfg.tau, cfg.dt_embed, 3);
        CHECK(e.size() == embedding_length(cfg.tau, cfg.dt_embed, channel_count(g)));
        CHECK(e.size() == 31u * 6u);
        CHECK(rec.trajectory.applied_u == rec.scenario.u);
    }
}

TEST_CASE("noise is applied to windows and the coarse frequency follows") {
    const GridConfig g = default_grid();
    DatasetConfig cfg;
    cfg.n_train = 2;
    cfg.noise_sigma = 1e-4;
    const auto clean = generate(g, train_scenarios(g, DatasetConfig{cfg.n_train, cfg.n_test}), DatasetConfig{cfg.n_train, cfg.n_test});
    const auto noisy = generate(g, train_scenarios(g, cfg), cfg);
    for (std::size_t i = 0; i < noisy.size(); ++i) {
        const auto& t = noisy[i].trajectory;
        for (int k = 0; k < t.T(); ++k)
            CHECK(t.omega[static_cast<std::size_t>(k)] == t.windows[static_cast<std::size_t>(k)][static_cast<std::size_t>(t.window_len - 1)]);
        CHECK(t.omega != clean[i].trajectory.omega);
    }
}

TEST_CASE("split persistence") {
    std::vector<Record> recs;
    for (std::size_t i = 0; i < 900; ++i) recs.push_back(tiny_record(i));
    const auto dir = test::tmp_dir("split");

    const DatasetManifest m = split_and_persist(recs, 600, 300, dir.string(), {{"note", "x"}});
    CHECK(m.split("train").count == 600);
    CHECK(m.split("test").count == 300);
    const auto train = load_split(dir.string(), "train");
    const auto test = load_split(dir.string(), "test");
    REQUIRE(train.size() == 600);
    REQUIRE(test.size() == 300);
    CHECK(train.front().scenario.id == "r0");
    CHECK(test.front().scenario.id == "r600");
    CHECK(read_manifest(dir.string()).extra.at("note") == "x");

    const auto dir2 = test::tmp_dir("split_all_train");
    const std::vector<Record> few(recs.begin(), recs.begin() + 5);
    split_and_persist(few, 1, 0, dir2.string());
    CHECK(load_split(dir2.string(), "train").size() == 5);
    CHECK(load_split(dir2.string(), "test").empty());
    CHECK(std::filesystem::exists(dir2 / "test.jsonl"));

    {
        std::ofstream out(dir2 / "train.jsonl", std::ios::app);
        out << "\n";
    }
    CHECK_THROWS_AS(load_split(dir2.string(), "train"), IoError);
    CHECK_THROWS_AS(split_and_persist(few, 0, 0, dir2.string()), ArgumentError);
}

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}
