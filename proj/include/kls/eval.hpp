#pragma once

// Metrics, closed-loop evaluation of shedding policies on the simulator,
// the conventional threshold-triggered reference policy, and report
// emission (CSV + SVG).

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kls/control.hpp"
#include "kls/dataset.hpp"
#include "kls/grid_sim.hpp"
#include "kls/koopman.hpp"

namespace kls {

struct SafetyAnchors {
    double nadir0 = 48.5; // Hz, term = 0
    double nadir1 = 49.0; // Hz, term = 1
    double ssv0 = 49.0;
    double ssv1 = 49.5;
    double alpha = 0.5;
    double beta = 0.5;
};

struct CostAnchors {
    double nadir0 = 49.5; // Hz, term = 0 (frequency held needlessly high)
    double nadir1 = 49.0; // Hz, term = 1 (limit just met)
    double ssv0 = 50.0;
    double ssv1 = 49.5;
};

/// alpha * clamp((nadir - N0)/(N1 - N0)) + beta * clamp((ssv - S0)/(S1 - S0)).
double safety(double nadir_hz, double ssv_hz, const SafetyAnchors& a = {});
/// min of the two clamped terms (N0 - nadir)/(N0 - N1), (S0 - ssv)/(S0 - S1).
double control_cost(double nadir_hz, double ssv_hz, const CostAnchors& a = {});
/// Mean absolute difference over the coarse grid.
double trajectory_mae(const std::vector<double>& predicted, const std::vector<double>& truth);

struct MetricsRow {
    std::string scenario;
    std::string method;
    double d_mw = 0.0;
    double zeta = 0.0;
    double nadir_hz = 0.0;      // minimum over the coarse grid
    double ssv_hz = 0.0;        // last coarse sample
    double fine_nadir_hz = 0.0; // minimum over the integration grid
    double safety = 0.0;
    double control_cost = 0.0;
    double mae = -1.0; // pu, negative when not applicable
    double shed_mw = 0.0;
    bool infeasible = false; // planner fell back to full shedding
};

/// Fills nadir/ssv/safety/cost from a simulated trajectory.
void score_trajectory(MetricsRow& row, const Trajectory& tr, double f0, const SafetyAnchors& sa = {},
                      const CostAnchors& ca = {});

struct EvalConfig {
    DatasetConfig data;    // timing of fault, shedding and sampling
    SafetyConfig safety;   // limits; zeta is overridden per method
    SafetyAnchors safety_anchors;
    CostAnchors cost_anchors;
};

/// Simulates the scenario with the given shedding applied at the shed instant.
Trajectory simulate_with_shed(const GridConfig& grid, const ScenarioSpec& sc, const std::vector<double>& u,
                              const DatasetConfig& cfg);
/// Simulation without shedding (its first window is what the planner sees).
Trajectory simulate_unshed(const GridConfig& grid, const ScenarioSpec& sc, const DatasetConfig& cfg);

struct PolicyOptions {
    std::string label;
    double d_mw = 0.0;
    bool ceil = false;
    bool margin = false;
    double zeta = 0.0; // used when margin is false
};

/// Plans from the first post-fault window, applies the (quantized) plan and
/// scores the result. Infeasible plans fall back to u = 1 and are flagged.
MetricsRow evaluate_policy(const GridConfig& grid, const ScenarioSpec& sc, const KoopmanModel& model,
                           const EvalConfig& cfg, const PolicyOptions& opt, Trajectory* out = nullptr);

/// Rollout MAE of a predictor on a recorded trajectory under its recorded input.
double prediction_mae(const KoopmanModel& model, const Trajectory& tr);

struct ConventionalPolicy {
    double trigger_hz = 49.0;
    double proportion = 0.0; // uniform fraction of every bus
    double delay = 0.0;      // s between crossing and shedding
    bool safe_reference = false; // tuning reached the target on the reference case
};

MetricsRow evaluate_conventional(const GridConfig& grid, const ScenarioSpec& sc, const ConventionalPolicy& pol,
                                 const EvalConfig& cfg, Trajectory* out = nullptr);

/// Smallest proportion on a 0.005 grid that gives Safety >= target on the
/// reference scenario; if none does, proportion 1 with safe_reference = false.
ConventionalPolicy tune_proportion(const GridConfig& grid, const ScenarioSpec& reference, const EvalConfig& cfg,
                                   double target = 0.9, double trigger_hz = 49.0);

/// Nominal-inertia scenario losing `deficit_mw` on the last machine group.
ScenarioSpec reference_scenario(const GridConfig& grid, double deficit_mw, double fault_time);

/// Smallest zeta in [0, hi] (bisection to `tol`) for which nearest-quantized
/// KLS plans reach Safety = 1 on every scenario; hi if none below it does.
double empirical_min_zeta(const GridConfig& grid, const std::vector<ScenarioSpec>& scenarios,
                          const KoopmanModel& model, const EvalConfig& cfg, double d_mw, double hi = 0.01,
                          double tol = 1e-5);

struct CompareConfig {
    /// Any of: kls, kls-ntd, edmd, dmd (prediction MAE plus zeta = 0
    /// continuous control), kls-margin, kls-c (margin + quantization at
    /// every d level), conventional.
    std::vector<std::string> methods = {"kls", "kls-ntd", "edmd", "dmd", "kls-margin", "kls-c", "conventional"};
    std::vector<double> d_levels = {10.0, 25.0, 50.0};
    double reference_deficit_mw = 350.0;
    double conventional_target = 0.9;
    std::string out_dir; // empty: no files written
    int plot_scenarios = 4;
};

/// Per-scenario rows for every requested method. Models are looked up by
/// method name ("kls", "kls-ntd", "edmd", "dmd"); kls-margin and kls-c use
/// "kls". Writes metrics.csv, summary.csv and SVG plots when out_dir is set.
std::vector<MetricsRow> compare(const GridConfig& grid, const std::vector<Record>& test,
                                const std::map<std::string, KoopmanModel>& models, const EvalConfig& cfg,
                                const CompareConfig& cc);

// ---- reports ----

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& r);
std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct MethodSummary {
    std::string method;
    std::size_t count = 0;
    double mae_median = 0.0;
    double mae_p95 = 0.0;
    double safety_mean = 0.0;
    double safe_fraction = 0.0;   // Safety == 1
    double safe90_fraction = 0.0; // Safety >= 0.9
    double cost_mean = 0.0;
    double shed_mean_mw = 0.0;
    double q25 = 0.0, q50 = 0.0, q75 = 0.0; // of MAE when available, else Safety
};

double quantile(std::vector<double> v, double q);
std::vector<MethodSummary> summarize(const std::vector<MetricsRow>& rows);
std::string summary_csv(const std::vector<MethodSummary>& s);

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};
/// Minimal SVG line chart.
std::string svg_lines(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Series>& series);
/// Box summary per group (whiskers at min/max).
std::string svg_boxes(const std::string& title, const std::string& ylabel,
                      const std::vector<std::pair<std::string, std::vector<double>>>& groups);

void write_text(const std::string& path, const std::string& text);

} // namespace kls
