#include "kls/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <openssl/evp.h>

#include "kls/errors.hpp"
#include "kls/parallel.hpp"

namespace kls {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string make_id(const std::string& prefix, std::size_t i) {
    std::ostringstream os;
    os << prefix << '-' << std::setw(5) << std::setfill('0') << i;
    return os.str();
}

void combinations(std::size_t n, std::size_t k, std::size_t start, std::vector<std::size_t>& cur,
                  std::vector<std::vector<std::size_t>>& out) {
    if (cur.size() == k) {
        out.push_back(cur);
        return;
    }
    for (std::size_t i = start; i < n; ++i) {
        cur.push_back(i);
        combinations(n, k, i + 1, cur, out);
        cur.pop_back();
    }
}

} // namespace

std::vector<FaultEvent> enumerate_faults(const GridConfig& grid, const FaultSetConfig& cfg, double fault_time) {
    const std::size_t n = grid.machines.size();
    if (cfg.max_order == 0) throw ConfigError("fault set: max_order must be >= 1");
    if (!(cfg.deficit_lo > 0.0 && cfg.deficit_hi >= cfg.deficit_lo)) throw ConfigError("fault set: bad deficit span");
    std::vector<std::vector<std::size_t>> sets;
    for (std::size_t k = 1; k <= std::min(cfg.max_order, n); ++k) {
        std::vector<std::size_t> cur;
        combinations(n, k, 0, cur, sets);
    }
    auto raw_of = [&](const std::vector<std::size_t>& s) {
        double r = 0.0;
        for (std::size_t i : s) r += grid.machines[i].trip_unit_mw;
        return r;
    };
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& s : sets) {
        lo = std::min(lo, raw_of(s));
        hi = std::max(hi, raw_of(s));
    }
    if (!(hi > 0.0)) throw ConfigError("fault set: machines need positive trip_unit_mw");
    const double load = grid.total_load_mw();
    std::vector<FaultEvent> faults;
    for (const auto& s : sets) {
        const double raw = raw_of(s);
        if (raw <= 0.0) continue;
        const double frac = hi > lo ? (raw - lo) / (hi - lo) : 0.0;
        FaultEvent f;
        f.time = fault_time;
        f.deficit_mw = load * (cfg.deficit_lo + frac * (cfg.deficit_hi - cfg.deficit_lo));
        f.tripped = s;
        double sum = 0.0;
        for (std::size_t k = 0; k < s.size(); ++k) {
            f.lost_mw.push_back(f.deficit_mw * grid.machines[s[k]].trip_unit_mw / raw);
            sum += f.lost_mw.back();
        }
        f.deficit_mw = sum;
        faults.push_back(std::move(f));
    }
    if (faults.empty()) throw ConfigError("fault set is empty");
    return faults;
}

double ScenarioSpec::system_inertia(const GridConfig& grid) const {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < grid.machines.size(); ++i) {
        const double h = grid.machines[i].inertia * grid.machines[i].rating_mva;
        num += h * inertia_scale.at(i);
        den += h;
    }
    return num / den;
}

GridConfig ScenarioSpec::apply(const GridConfig& grid) const {
    if (inertia_scale.size() != grid.machines.size()) throw ArgumentError("scenario: inertia scale count mismatch");
    GridConfig g = grid;
    for (std::size_t i = 0; i < g.machines.size(); ++i) g.machines[i].inertia *= inertia_scale[i];
    return g;
}

void to_json(nlohmann::json& j, const ScenarioSpec& s) {
    j = nlohmann::json{{"id", s.id},
                       {"seed", s.seed},
                       {"inertia_scale", s.inertia_scale},
                       {"fault_index", s.fault_index},
                       {"fault", s.fault},
                       {"u", s.u}};
}

void from_json(const nlohmann::json& j, ScenarioSpec& s) {
    s.id = j.at("id").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.inertia_scale = j.at("inertia_scale").get<std::vector<double>>();
    s.fault_index = j.at("fault_index").get<int>();
    s.fault = j.at("fault").get<FaultEvent>();
    s.u = j.at("u").get<std::vector<double>>();
}

std::vector<ScenarioSpec> sample_scenarios(std::uint64_t seed, std::size_t n, std::size_t machines,
                                           std::size_t loads, const ScenarioRanges& ranges) {
    if (n == 0) throw ArgumentError("sample_scenarios: n must be positive");
    if (!(ranges.band >= 0.0 && ranges.band < 1.0)) throw ConfigError("sample_scenarios: band must lie in [0,1)");
    if (!(ranges.u_max >= 0.0 && ranges.u_max <= 1.0)) throw ConfigError("sample_scenarios: u_max must lie in [0,1]");
    if (ranges.faults.empty()) throw ConfigError("sample_scenarios: empty fault set");
    std::vector<ScenarioSpec> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        ScenarioSpec& s = out[i];
        s.id = make_id(ranges.id_prefix, i);
        s.seed = splitmix64(splitmix64(seed) ^ (i + 1));
        std::mt19937_64 rng(s.seed);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        s.inertia_scale.resize(machines);
        for (auto& m : s.inertia_scale) m = 1.0 - ranges.band + 2.0 * ranges.band * unit(rng);
        s.fault_index = static_cast<int>(std::min<std::size_t>(
            static_cast<std::size_t>(unit(rng) * static_cast<double>(ranges.faults.size())), ranges.faults.size() - 1));
        s.fault = ranges.faults[static_cast<std::size_t>(s.fault_index)];
        s.u.resize(loads);
        for (auto& u : s.u) u = ranges.u_max * unit(rng);
    }
    return out;
}

Sampling DatasetConfig::sampling() const {
    Sampling s;
    s.dt_embed = dt_embed;
    s.dt_pred = dt_pred;
    s.tau = tau;
    s.coarse_points = T;
    s.first_sample = fault_time + shed_delay;
    return s;
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
    j = nlohmann::json{{"n_train", c.n_train},
                       {"n_test", c.n_test},
                       {"seed", c.seed},
                       {"band", c.band},
                       {"tau", c.tau},
                       {"dt_embed", c.dt_embed},
                       {"dt_pred", c.dt_pred},
                       {"T", c.T},
                       {"fault_time", c.fault_time},
                       {"shed_delay", c.shed_delay},
                       {"u_max", c.u_max},
                       {"noise_sigma", c.noise_sigma},
                       {"fault_max_order", c.faults.max_order},
                       {"deficit_lo", c.faults.deficit_lo},
                       {"deficit_hi", c.faults.deficit_hi}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
    const DatasetConfig d;
    c.n_train = j.value("n_train", d.n_train);
    c.n_test = j.value("n_test", d.n_test);
    c.seed = j.value("seed", d.seed);
    c.band = j.value("band", d.band);
    c.tau = j.value("tau", d.tau);
    c.dt_embed = j.value("dt_embed", d.dt_embed);
    c.dt_pred = j.value("dt_pred", d.dt_pred);
    c.T = j.value("T", d.T);
    c.fault_time = j.value("fault_time", d.fault_time);
    c.shed_delay = j.value("shed_delay", d.shed_delay);
    c.u_max = j.value("u_max", d.u_max);
    c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    c.faults.max_order = j.value("fault_max_order", d.faults.max_order);
    c.faults.deficit_lo = j.value("deficit_lo", d.faults.deficit_lo);
    c.faults.deficit_hi = j.value("deficit_hi", d.faults.deficit_hi);
}

namespace {

std::vector<ScenarioSpec> scenarios_for(const GridConfig& grid, const DatasetConfig& cfg, std::size_t n,
                                        std::uint64_t stream, const std::string& prefix) {
    ScenarioRanges r;
    r.band = cfg.band;
    r.u_max = cfg.u_max;
    r.faults = enumerate_faults(grid, cfg.faults, cfg.fault_time);
    r.id_prefix = prefix;
    return sample_scenarios(splitmix64(cfg.seed * 2 + stream), n, grid.machines.size(), grid.loads.size(), r);
}

} // namespace

std::vector<ScenarioSpec> train_scenarios(const GridConfig& grid, const DatasetConfig& cfg) {
    return scenarios_for(grid, cfg, cfg.n_train, 0, "train");
}

std::vector<ScenarioSpec> test_scenarios(const GridConfig& grid, const DatasetConfig& cfg) {
    return scenarios_for(grid, cfg, cfg.n_test, 1, "test");
}

std::vector<Record> generate(const GridConfig& grid, const std::vector<ScenarioSpec>& scenarios,
                             const DatasetConfig& cfg) {
    std::vector<Record> out(scenarios.size());
    const Sampling sampling = cfg.sampling();
    parallel_for(scenarios.size(), [&](std::size_t i) {
        const ScenarioSpec& s = scenarios[i];
        ShedSchedule shed;
        shed.mode = ShedSchedule::Mode::Timed;
        shed.u = s.u;
        shed.time = cfg.fault_time + cfg.shed_delay;
        FaultEvent fault = s.fault;
        fault.time = cfg.fault_time;
        Trajectory tr = simulate(s.apply(grid), fault, shed, sampling);
        tr.id = s.id;
        if (cfg.noise_sigma > 0.0) {
            std::mt19937_64 rng(splitmix64(s.seed ^ 0x6e6f697365ULL));
            std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
            for (std::size_t k = 0; k < tr.windows.size(); ++k) {
                for (double& v : tr.windows[k]) v += noise(rng);
                tr.omega[k] = tr.windows[k][static_cast<std::size_t>(tr.window_len - 1)];
            }
        }
        out[i] = Record{s, std::move(tr)};
    });
    return out;
}

std::vector<double> build_embedding(const Trajectory& tr, double tau, double dt_embed, int k) {
    if (k < 0 || k >= tr.T()) throw ArgumentError("build_embedding: coarse index out of range");
    if (!(dt_embed > 0.0) || tau < 0.0) throw ArgumentError("build_embedding: bad tau/dt");
    const double stride_r = dt_embed / tr.dt_embed;
    const long stride = std::lround(stride_r);
    if (stride < 1 || std::abs(stride_r - static_cast<double>(stride)) > 1e-6)
        throw ArgumentError("build_embedding: dt_embed must be a multiple of the stored fine step");
    const long n = std::lround(tau / dt_embed);
    if (std::abs(tau / dt_embed - static_cast<double>(n)) > 1e-6)
        throw ArgumentError("build_embedding: tau must be a multiple of dt_embed");
    if (n * stride > tr.window_len - 1) throw WindowError("build_embedding: insufficient history for tau");
    const auto& w = tr.windows[static_cast<std::size_t>(k)];
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>((n + 1) * tr.channels));
    for (int c = 0; c < tr.channels; ++c) {
        const long end = static_cast<long>(c) * tr.window_len + tr.window_len - 1;
        for (long l = 0; l <= n; ++l) out.push_back(w[static_cast<std::size_t>(end - (n - l) * stride)]);
    }
    return out;
}

const SplitInfo& DatasetManifest::split(const std::string& name) const {
    for (const auto& s : splits)
        if (s.name == name) return s;
    throw IoError("manifest has no split named '" + name + "'");
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
    j = nlohmann::json{{"version", m.version}, {"tau", m.tau}, {"dt_embed", m.dt_embed}, {"dt_pred", m.dt_pred}, {"T", m.T}};
    auto& s = j["splits"] = nlohmann::json::array();
    for (const auto& x : m.splits)
        s.push_back({{"name", x.name}, {"file", x.file}, {"count", x.count}, {"sha256", x.sha256}});
    if (!m.extra.is_null()) j["generator"] = m.extra;
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
    m.version = j.at("version").get<int>();
    m.tau = j.at("tau").get<double>();
    m.dt_embed = j.at("dt_embed").get<double>();
    m.dt_pred = j.at("dt_pred").get<double>();
    m.T = j.at("T").get<int>();
    m.splits.clear();
    for (const auto& x : j.at("splits"))
        m.splits.push_back({x.at("name"), x.at("file"), x.at("count"), x.at("sha256")});
    m.extra = j.value("generator", nlohmann::json{});
}

void write_jsonl(const std::vector<Record>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    for (const Record& r : records) {
        out << nlohmann::json{{"scenario", r.scenario}, {"trajectory", r.trajectory}}.dump() << '\n';
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<Record> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<Record> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back(Record{j.at("scenario").get<ScenarioSpec>(), j.at("trajectory").get<Trajectory>()});
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

DatasetManifest split_and_persist(const std::vector<Record>& records, double ratio_train, double ratio_test,
                                  const std::string& dir, const nlohmann::json& extra) {
    if (ratio_train < 0.0 || ratio_test < 0.0 || ratio_train + ratio_test <= 0.0)
        throw ArgumentError("split_and_persist: ratios must be non-negative and not both zero");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
    const std::size_t n = records.size();
    const auto n_train = static_cast<std::size_t>(
        std::llround(static_cast<double>(n) * ratio_train / (ratio_train + ratio_test)));
    const std::vector<Record> train(records.begin(), records.begin() + static_cast<long>(n_train));
    const std::vector<Record> test(records.begin() + static_cast<long>(n_train), records.end());

    DatasetManifest m;
    m.extra = extra;
    if (!records.empty()) {
        const Trajectory& t = records.front().trajectory;
        m.tau = t.tau;
        m.dt_embed = t.dt_embed;
        m.dt_pred = t.dt_pred;
        m.T = t.T();
    }
    for (const auto& [name, part] : {std::pair{std::string("train"), &train}, std::pair{std::string("test"), &test}}) {
        const std::string file = name + ".jsonl";
        const std::string path = (std::filesystem::path(dir) / file).string();
        write_jsonl(*part, path);
        m.splits.push_back({name, file, part->size(), sha256_file(path)});
    }
    const std::string mpath = (std::filesystem::path(dir) / "manifest.json").string();
    std::ofstream out(mpath, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + mpath + "'");
    out << nlohmann::json(m).dump(2) << '\n';
    return m;
}

DatasetManifest read_manifest(const std::string& dir) {
    const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in).get<DatasetManifest>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
}

std::vector<Record> load_split(const std::string& dir, const std::string& name) {
    const DatasetManifest m = read_manifest(dir);
    const SplitInfo& s = m.split(name);
    const std::string path = (std::filesystem::path(dir) / s.file).string();
    if (sha256_file(path) != s.sha256) throw IoError("digest mismatch for '" + path + "'");
    auto records = read_jsonl(path);
    if (records.size() != s.count) throw IoError("record count mismatch for '" + path + "'");
    return records;
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 computation failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

} // namespace kls
