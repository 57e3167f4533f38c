#pragma once

// Reduced-order multi-machine frequency simulator.
//
// Every machine group is a swing equation coupled to a single load bus
// through a linearised synchronising coefficient, with a first-order
// governor (hard deadband, ramp limit, output limits). Loads are
// frequency dependent: P = PL * (1 - u) * (1 + kpf * w_coi).
//
// Units: frequencies are per-unit deviations from nominal, powers inside
// the integrator are per-unit on the system base, machine quantities
// (H, D, K, Pmax, ramp) are on the machine rating.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace kls {

struct Machine {
    std::string name;
    double rating_mva = 100.0;
    double inertia = 5.0;        // H [s]
    double damping = 1.0;        // D [pu/pu]
    double governor_gain = 5.0;  // K [pu/pu]
    double governor_tc = 5.0;    // Tg [s]
    double deadband = 0.0;       // [pu frequency]
    double p_max = 1.0;          // [pu]
    double ramp_limit = 0.0;     // [pu/s], 0 disables
    double sync_coeff = 10.0;    // [system pu / rad]
    double damper = 0.0;         // damping on (w_i - w_coi) [pu/pu]
    double trip_unit_mw = 0.0;   // size of the unit lost in a trip of this group
};

struct Load {
    std::string name;
    double base_mw = 100.0;
    double kpf = 1.0;
};

struct GridConfig {
    std::vector<Machine> machines;
    std::vector<Load> loads;
    double f0 = 50.0;
    double base_mva = 100.0;

    /// Throws ConfigError on a violated invariant.
    void validate() const;
    double total_load_mw() const;
    double total_rating_mva() const;
    /// Pre-fault dispatch of every machine in pu of its own rating
    /// (load shared in proportion to rating).
    double dispatch_pu() const;
};

GridConfig default_grid();
GridConfig load_grid_config(const std::string& path);
void to_json(nlohmann::json& j, const GridConfig& c);
void from_json(const nlohmann::json& j, GridConfig& c);

/// Generation loss. With `tripped` empty the deficit acts as a pure power
/// imbalance at the load bus; otherwise each listed machine loses
/// `lost_mw[k]` of output and governor reference at `time`.
struct FaultEvent {
    double time = 0.0;
    double deficit_mw = 0.0;
    std::vector<std::size_t> tripped;
    std::vector<double> lost_mw;

    void validate(const GridConfig& grid) const;
};
void to_json(nlohmann::json& j, const FaultEvent& f);
void from_json(const nlohmann::json& j, FaultEvent& f);

/// Dynamic states plus the piecewise-constant operating point (governor
/// references and connected load fraction).
struct SimState {
    std::vector<double> angle;      // rad
    std::vector<double> speed;      // pu deviation
    std::vector<double> mech_power; // pu of machine rating
    std::vector<double> reference;  // governor reference, pu of machine rating
    std::vector<double> load_scale; // 1 - u per load

    static SimState equilibrium(const GridConfig& grid);
};

/// Algebraic quantities evaluated at a state.
struct Algebraics {
    double omega_coi = 0.0;
    double load_power = 0.0; // system pu
    std::vector<double> electrical_power;
};

Algebraics evaluate_algebraics(const SimState& s, const GridConfig& grid, double imbalance_mw);

/// One fixed-step RK4 step. `net_imbalance_mw` is an extra generation deficit.
SimState step(const SimState& state, const GridConfig& grid, double net_imbalance_mw, double dt);

/// Inertia-weighted mean of machine speeds.
double coi_frequency(std::span<const double> speeds, std::span<const double> inertias);

/// When shedding is applied. Timed: at `time` (the coarse sample taken at
/// that instant still sees the unshed load). UnderFrequency: when the COI
/// frequency first falls below `threshold` (pu), after `delay` seconds.
struct ShedSchedule {
    enum class Mode { Timed, UnderFrequency };
    Mode mode = Mode::Timed;
    std::vector<double> u;
    double time = 0.0;
    double threshold = -0.02;
    double delay = 0.0;
};

struct Sampling {
    double dt_embed = 0.01;
    double dt_pred = 1.0;
    double tau = 0.3;
    int coarse_points = 60; // T
    double first_sample = 0.0; // time of coarse point t = 1
};

struct Trajectory {
    std::string id;
    std::vector<double> time;  // coarse grid, length T
    std::vector<double> omega; // coarse grid, length T
    /// Fine-grid window ending at each coarse point, channel major:
    /// [w(t-tau..t), y_1(t-tau..t), ..., y_m(t-tau..t)], oldest first.
    std::vector<std::vector<double>> windows;
    int channels = 0;
    int window_len = 0; // samples per channel, tau/dt_embed + 1
    double dt_embed = 0.01;
    double dt_pred = 1.0;
    double tau = 0.3;
    std::vector<double> applied_u;
    double shed_time = -1.0; // < 0 if nothing was shed
    double fine_nadir = 0.0; // min COI deviation on the integration grid
    bool collapsed = false;
    bool settled = true;

    int T() const { return static_cast<int>(omega.size()); }
    /// Last sample of every channel at coarse index k (0-based).
    std::vector<double> instant(int k) const;
};
void to_json(nlohmann::json& j, const Trajectory& t);
void from_json(const nlohmann::json& j, Trajectory& t);

/// Number of exported channels: frequency, one governor output per
/// machine, total load power.
inline int channel_count(const GridConfig& grid) { return 2 + static_cast<int>(grid.machines.size()); }

Trajectory simulate(const GridConfig& grid, const FaultEvent& fault, const ShedSchedule& shed,
                    const Sampling& sampling);

} // namespace kls
