#pragma once

// Scenario sampling, trajectory generation, delay embeddings and the
// JSONL/manifest persistence of train/test splits.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "kls/grid_sim.hpp"

namespace kls {

struct FaultSetConfig {
    std::size_t max_order = 3;  // N-1 .. N-max_order trips
    double deficit_lo = 0.05;   // fraction of total load
    double deficit_hi = 0.15;
};

/// All single, double, ... trips of machine groups. Raw sizes (sum of the
/// groups' trip units) are mapped linearly onto [lo, hi] * total load and
/// split across the tripped groups in proportion to their units.
std::vector<FaultEvent> enumerate_faults(const GridConfig& grid, const FaultSetConfig& cfg, double fault_time);

struct ScenarioSpec {
    std::string id;
    std::uint64_t seed = 0;
    std::vector<double> inertia_scale; // per machine
    int fault_index = -1;
    FaultEvent fault;
    std::vector<double> u; // per load bus, pu of bus load

    /// System inertia relative to nominal: sum(H_i S_i s_i) / sum(H_i S_i).
    double system_inertia(const GridConfig& grid) const;
    /// Grid with every machine's H multiplied by its scale.
    GridConfig apply(const GridConfig& grid) const;
};
void to_json(nlohmann::json& j, const ScenarioSpec& s);
void from_json(const nlohmann::json& j, ScenarioSpec& s);

struct ScenarioRanges {
    double band = 0.3;  // inertia multipliers ~ U[1-band, 1+band]
    double u_max = 1.0; // u_i ~ U[0, u_max]
    std::vector<FaultEvent> faults;
    std::string id_prefix = "s";
};

/// Deterministic in (seed, index): scenario i depends only on the seed
/// and i, so lists of different lengths share their prefix.
std::vector<ScenarioSpec> sample_scenarios(std::uint64_t seed, std::size_t n, std::size_t machines,
                                           std::size_t loads, const ScenarioRanges& ranges);

struct DatasetConfig {
    std::size_t n_train = 600;
    std::size_t n_test = 300;
    std::uint64_t seed = 1;
    double band = 0.3;
    double tau = 0.3;
    double dt_embed = 0.01;
    double dt_pred = 1.0;
    int T = 60;
    double fault_time = 1.0;
    double shed_delay = 0.3; // shedding and the first coarse sample, after the fault
    double u_max = 0.25;
    double noise_sigma = 0.0;
    FaultSetConfig faults;

    Sampling sampling() const;
};
void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

struct Record {
    ScenarioSpec scenario;
    Trajectory trajectory;
};

/// Simulates every scenario (in parallel) with one-shot shedding applied
/// `shed_delay` after the fault.
std::vector<Record> generate(const GridConfig& grid, const std::vector<ScenarioSpec>& scenarios,
                             const DatasetConfig& cfg);

/// Train and test scenarios from disjoint seed streams of `cfg.seed`.
std::vector<ScenarioSpec> train_scenarios(const GridConfig& grid, const DatasetConfig& cfg);
std::vector<ScenarioSpec> test_scenarios(const GridConfig& grid, const DatasetConfig& cfg);

/// Delay window [w(t-tau..t), y_1(t-tau..t), ...] at coarse index k
/// (0-based), resampled to dt_embed from the stored fine grid.
std::vector<double> build_embedding(const Trajectory& tr, double tau, double dt_embed, int k);
inline std::size_t embedding_length(double tau, double dt_embed, int channels) {
    return static_cast<std::size_t>((static_cast<long>(tau / dt_embed + 0.5) + 1) * channels);
}

struct SplitInfo {
    std::string name;
    std::string file;
    std::size_t count = 0;
    std::string sha256;
};

struct DatasetManifest {
    int version = 1;
    std::vector<SplitInfo> splits;
    double tau = 0.0;
    double dt_embed = 0.0;
    double dt_pred = 0.0;
    int T = 0;
    nlohmann::json extra; // generator settings, informational

    const SplitInfo& split(const std::string& name) const;
};
void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

/// Writes the first round(N * r_train / (r_train + r_test)) records to
/// dir/train.jsonl and the rest to dir/test.jsonl, plus dir/manifest.json.
DatasetManifest split_and_persist(const std::vector<Record>& records, double ratio_train, double ratio_test,
                                  const std::string& dir, const nlohmann::json& extra = {});

void write_jsonl(const std::vector<Record>& records, const std::string& path);
std::vector<Record> read_jsonl(const std::string& path);
DatasetManifest read_manifest(const std::string& dir);
/// Loads a split named in the manifest and checks its digest and count.
std::vector<Record> load_split(const std::string& dir, const std::string& name);

std::string sha256_file(const std::string& path);
std::string sha256_hex(const std::string& bytes);

} // namespace kls
