#pragma once

// Batch experiment runner. run() returns the process exit code:
// 0 success, 1 domain error, 2 configuration or usage error.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kls/baselines.hpp"
#include "kls/dataset.hpp"
#include "kls/encoder.hpp"
#include "kls/eval.hpp"
#include "kls/grid_sim.hpp"
#include "kls/koopman.hpp"

namespace kls::cli {

struct ExperimentConfig {
    std::optional<std::uint64_t> seed;
    std::string grid_path; // empty: built-in grid
    GridConfig grid = default_grid();
    DatasetConfig data;
    TrainConfig train;
    EncoderSpec encoder; // kind, latent, hidden, activation; sizes come from data
    double ntd_tau = 0.0;
    BaselineConfig baselines;
    std::vector<double> d_levels_mw = {10.0, 25.0, 50.0};
    double freq_min_hz = 49.0;
    double ssv_min_hz = 49.5;
    int horizon = 0; // 0: T - 1
    std::vector<std::string> methods = CompareConfig{}.methods;
    double reference_deficit_mw = 350.0;
    double conventional_target = 0.9;
    int plot_scenarios = 4;
    std::string out_dir = "out";

    std::uint64_t require_seed() const;
    /// Applies the global seed to every seeded stage.
    void propagate_seed();
    SafetyConfig safety() const;
    EvalConfig eval() const;
};

/// Parses a JSON experiment file; relative paths resolve against its
/// directory and must exist.
ExperimentConfig load_experiment(const std::string& path);

int run(const std::vector<std::string>& args);

} // namespace kls::cli
