#include "kls/grid_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "kls/errors.hpp"

namespace kls {

namespace {

double deadband(double w, double band) {
    if (w > band) return w - band;
    if (w < -band) return w + band;
    return 0.0;
}

// Number of fine steps in `span`, requiring an integer multiple of dt.
int steps_in(double span, double dt, const char* what) {
    const double r = span / dt;
    const double n = std::round(r);
    if (std::abs(r - n) > 1e-6 || n < 0) {
        std::ostringstream os;
        os << what << " (" << span << " s) is not a non-negative multiple of dt_embed (" << dt << " s)";
        throw ConfigError(os.str());
    }
    return static_cast<int>(n);
}

struct Derivative {
    std::vector<double> angle, speed, mech;
};

Derivative derivative(const SimState& s, const GridConfig& g, double imbalance_mw) {
    const std::size_t n = g.machines.size();
    const Algebraics alg = evaluate_algebraics(s, g, imbalance_mw);
    const double ws = 2.0 * std::numbers::pi * g.f0;
    Derivative d;
    d.angle.resize(n);
    d.speed.resize(n);
    d.mech.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Machine& m = g.machines[i];
        const double share = m.rating_mva / g.base_mva;
        d.angle[i] = ws * s.speed[i];
        const double accel = share * s.mech_power[i] - alg.electrical_power[i] - share * m.damping * s.speed[i]
                             - share * m.damper * (s.speed[i] - alg.omega_coi);
        d.speed[i] = accel / (2.0 * m.inertia * share);

        double dp = (s.reference[i] - m.governor_gain * deadband(s.speed[i], m.deadband) - s.mech_power[i])
                    / m.governor_tc;
        if (m.ramp_limit > 0.0) dp = std::clamp(dp, -m.ramp_limit, m.ramp_limit);
        if ((s.mech_power[i] >= m.p_max && dp > 0.0) || (s.mech_power[i] <= 0.0 && dp < 0.0)) dp = 0.0;
        d.mech[i] = dp;
    }
    return d;
}

SimState advance(const SimState& s, const Derivative& d, double h) {
    SimState r = s;
    for (std::size_t i = 0; i < s.speed.size(); ++i) {
        r.angle[i] += h * d.angle[i];
        r.speed[i] += h * d.speed[i];
        r.mech_power[i] += h * d.mech[i];
    }
    return r;
}

} // namespace

void GridConfig::validate() const {
    if (machines.empty()) throw ConfigError("grid config needs at least one machine");
    if (loads.empty()) throw ConfigError("grid config needs at least one load");
    if (!(f0 > 0.0)) throw ConfigError("nominal frequency f0 must be positive");
    if (!(base_mva > 0.0)) throw ConfigError("system base must be positive");
    for (const Machine& m : machines) {
        const std::string who = "machine '" + m.name + "': ";
        if (!(m.inertia > 0.0)) throw ConfigError(who + "inertia H must be positive");
        if (!(m.governor_tc > 0.0)) throw ConfigError(who + "governor time constant must be positive");
        if (!(m.p_max > 0.0)) throw ConfigError(who + "Pmax must be positive");
        if (!(m.rating_mva > 0.0)) throw ConfigError(who + "rating must be positive");
        if (m.damping < 0.0 || m.governor_gain < 0.0 || m.deadband < 0.0 || m.ramp_limit < 0.0
            || m.sync_coeff <= 0.0 || m.damper < 0.0 || m.trip_unit_mw < 0.0)
            throw ConfigError(who + "negative coefficient");
    }
    for (const Load& l : loads) {
        if (!(l.base_mw >= 0.0)) throw ConfigError("load '" + l.name + "': base level must be >= 0");
    }
    if (dispatch_pu() > 1.0 + 1e-12) throw ConfigError("total load exceeds installed capacity");
    for (const Machine& m : machines) {
        if (dispatch_pu() > m.p_max) throw ConfigError("machine '" + m.name + "': dispatch above Pmax");
    }
}

double GridConfig::total_load_mw() const {
    double s = 0.0;
    for (const Load& l : loads) s += l.base_mw;
    return s;
}

double GridConfig::total_rating_mva() const {
    double s = 0.0;
    for (const Machine& m : machines) s += m.rating_mva;
    return s;
}

double GridConfig::dispatch_pu() const { return total_load_mw() / total_rating_mva(); }

GridConfig default_grid() {
    GridConfig g;
    g.f0 = 50.0;
    g.base_mva = 1000.0;
    // name, rating, H, D, K, Tg, deadband, Pmax, ramp, Ks, damper, trip unit
    g.machines = {
        {"G1", 1000.0, 6.0, 1.0, 5.0, 6.0, 6e-4, 1.0, 0.04, 10.0, 10.0, 60.0},
        {"G2", 900.0, 5.0, 1.0, 5.5, 5.0, 6e-4, 1.0, 0.04, 9.0, 10.0, 75.0},
        {"G3", 800.0, 4.0, 1.0, 4.5, 4.0, 6e-4, 1.0, 0.04, 8.0, 10.0, 90.0},
        {"G4", 700.0, 3.5, 1.0, 5.0, 7.0, 6e-4, 1.0, 0.04, 7.0, 10.0, 105.0},
    };
    g.loads = {
        {"L1", 700.0, 1.0}, {"L2", 600.0, 1.5}, {"L3", 500.0, 0.8}, {"L4", 450.0, 1.2}, {"L5", 350.0, 1.0},
    };
    return g;
}

void to_json(nlohmann::json& j, const GridConfig& c) {
    j = nlohmann::json{{"f0", c.f0}, {"base_mva", c.base_mva}};
    auto& ms = j["machines"] = nlohmann::json::array();
    for (const Machine& m : c.machines) {
        ms.push_back({{"name", m.name},
                      {"rating_mva", m.rating_mva},
                      {"H", m.inertia},
                      {"D", m.damping},
                      {"K", m.governor_gain},
                      {"Tg", m.governor_tc},
                      {"deadband", m.deadband},
                      {"Pmax", m.p_max},
                      {"ramp_limit", m.ramp_limit},
                      {"sync_coeff", m.sync_coeff},
                      {"damper", m.damper},
                      {"trip_unit_mw", m.trip_unit_mw}});
    }
    auto& ls = j["loads"] = nlohmann::json::array();
    for (const Load& l : c.loads) ls.push_back({{"name", l.name}, {"PL", l.base_mw}, {"kpf", l.kpf}});
}

void from_json(const nlohmann::json& j, GridConfig& c) {
    c = GridConfig{};
    c.f0 = j.value("f0", 50.0);
    c.base_mva = j.value("base_mva", 100.0);
    for (const auto& m : j.at("machines")) {
        Machine x;
        x.name = m.value("name", "");
        x.rating_mva = m.value("rating_mva", c.base_mva);
        x.inertia = m.at("H").get<double>();
        x.damping = m.value("D", 0.0);
        x.governor_gain = m.value("K", 0.0);
        x.governor_tc = m.at("Tg").get<double>();
        x.deadband = m.value("deadband", 0.0);
        x.p_max = m.at("Pmax").get<double>();
        x.ramp_limit = m.value("ramp_limit", 0.0);
        x.sync_coeff = m.value("sync_coeff", 10.0);
        x.damper = m.value("damper", 0.0);
        x.trip_unit_mw = m.value("trip_unit_mw", 0.0);
        c.machines.push_back(x);
    }
    for (const auto& l : j.at("loads")) {
        c.loads.push_back({l.value("name", ""), l.at("PL").get<double>(), l.value("kpf", 0.0)});
    }
}

GridConfig load_grid_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open grid config '" + path + "'");
    GridConfig c;
    try {
        c = nlohmann::json::parse(in).get<GridConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("grid config '" + path + "': " + e.what());
    }
    c.validate();
    return c;
}

void FaultEvent::validate(const GridConfig& grid) const {
    if (deficit_mw < 0.0) throw ConfigError("fault deficit must be >= 0");
    if (time < 0.0) throw ConfigError("fault time must be >= 0");
    if (tripped.empty()) return;
    if (tripped.size() != lost_mw.size()) throw ConfigError("fault: tripped/lost_mw size mismatch");
    double total = 0.0;
    for (std::size_t k = 0; k < tripped.size(); ++k) {
        if (tripped[k] >= grid.machines.size()) throw ConfigError("fault: machine index out of range");
        if (lost_mw[k] < 0.0) throw ConfigError("fault: negative lost output");
        if (lost_mw[k] > grid.dispatch_pu() * grid.machines[tripped[k]].rating_mva + 1e-9)
            throw ConfigError("fault: lost output exceeds machine dispatch");
        total += lost_mw[k];
    }
    if (std::abs(total - deficit_mw) > 1e-6 * std::max(1.0, deficit_mw))
        throw ConfigError("fault: lost_mw does not sum to deficit_mw");
}

void to_json(nlohmann::json& j, const FaultEvent& f) {
    j = nlohmann::json{{"time", f.time}, {"deficit_mw", f.deficit_mw}, {"tripped", f.tripped}, {"lost_mw", f.lost_mw}};
}

void from_json(const nlohmann::json& j, FaultEvent& f) {
    f.time = j.at("time").get<double>();
    f.deficit_mw = j.at("deficit_mw").get<double>();
    f.tripped = j.value("tripped", std::vector<std::size_t>{});
    f.lost_mw = j.value("lost_mw", std::vector<double>{});
}

SimState SimState::equilibrium(const GridConfig& grid) {
    const std::size_t n = grid.machines.size();
    const double p0 = grid.dispatch_pu();
    SimState s;
    s.angle.resize(n);
    s.speed.assign(n, 0.0);
    s.mech_power.assign(n, p0);
    s.reference.assign(n, p0);
    s.load_scale.assign(grid.loads.size(), 1.0);
    // Load bus at angle zero, each machine leading by its electrical output.
    for (std::size_t i = 0; i < n; ++i) {
        const Machine& m = grid.machines[i];
        s.angle[i] = p0 * m.rating_mva / grid.base_mva / m.sync_coeff;
    }
    return s;
}

Algebraics evaluate_algebraics(const SimState& s, const GridConfig& g, double imbalance_mw) {
    const std::size_t n = g.machines.size();
    Algebraics a;
    double hsum = 0.0, hw = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double h = g.machines[i].inertia * g.machines[i].rating_mva;
        hsum += h;
        hw += h * s.speed[i];
    }
    a.omega_coi = hw / hsum;
    double pl = 0.0;
    for (std::size_t j = 0; j < g.loads.size(); ++j) {
        const Load& l = g.loads[j];
        pl += l.base_mw * s.load_scale[j] * (1.0 + l.kpf * a.omega_coi);
    }
    a.load_power = pl / g.base_mva;
    const double demand = a.load_power + imbalance_mw / g.base_mva;
    double ks = 0.0, ksd = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ks += g.machines[i].sync_coeff;
        ksd += g.machines[i].sync_coeff * s.angle[i];
    }
    const double bus = (ksd - demand) / ks;
    a.electrical_power.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.electrical_power[i] = g.machines[i].sync_coeff * (s.angle[i] - bus);
    return a;
}

SimState step(const SimState& state, const GridConfig& grid, double net_imbalance_mw, double dt) {
    if (!(dt > 0.0)) throw ArgumentError("step: dt must be positive");
    const Derivative k1 = derivative(state, grid, net_imbalance_mw);
    const Derivative k2 = derivative(advance(state, k1, 0.5 * dt), grid, net_imbalance_mw);
    const Derivative k3 = derivative(advance(state, k2, 0.5 * dt), grid, net_imbalance_mw);
    const Derivative k4 = derivative(advance(state, k3, dt), grid, net_imbalance_mw);
    SimState next = state;
    for (std::size_t i = 0; i < state.speed.size(); ++i) {
        next.angle[i] += dt / 6.0 * (k1.angle[i] + 2.0 * k2.angle[i] + 2.0 * k3.angle[i] + k4.angle[i]);
        next.speed[i] += dt / 6.0 * (k1.speed[i] + 2.0 * k2.speed[i] + 2.0 * k3.speed[i] + k4.speed[i]);
        next.mech_power[i] += dt / 6.0 * (k1.mech[i] + 2.0 * k2.mech[i] + 2.0 * k3.mech[i] + k4.mech[i]);
        next.mech_power[i] = std::clamp(next.mech_power[i], 0.0, grid.machines[i].p_max);
        if (!std::isfinite(next.angle[i]) || !std::isfinite(next.speed[i]) || !std::isfinite(next.mech_power[i])) {
            throw IntegrationDivergence("integration diverged at machine '" + grid.machines[i].name + "' (index "
                                            + std::to_string(i) + ")",
                                        i);
        }
    }
    return next;
}

double coi_frequency(std::span<const double> speeds, std::span<const double> inertias) {
    if (speeds.empty()) throw ArgumentError("coi_frequency: empty input");
    if (speeds.size() != inertias.size()) throw ArgumentError("coi_frequency: length mismatch");
    double hs = 0.0, hw = 0.0;
    for (std::size_t i = 0; i < speeds.size(); ++i) {
        if (!(inertias[i] > 0.0)) throw ArgumentError("coi_frequency: inertias must be positive");
        hs += inertias[i];
        hw += inertias[i] * speeds[i];
    }
    return hw / hs;
}

std::vector<double> Trajectory::instant(int k) const {
    std::vector<double> out(static_cast<std::size_t>(channels));
    const auto& w = windows.at(static_cast<std::size_t>(k));
    for (int c = 0; c < channels; ++c) out[static_cast<std::size_t>(c)] = w[static_cast<std::size_t>(c * window_len + window_len - 1)];
    return out;
}

void to_json(nlohmann::json& j, const Trajectory& t) {
    j = nlohmann::json{{"id", t.id},
                       {"time", t.time},
                       {"omega", t.omega},
                       {"windows", t.windows},
                       {"channels", t.channels},
                       {"window_len", t.window_len},
                       {"dt_embed", t.dt_embed},
                       {"dt_pred", t.dt_pred},
                       {"tau", t.tau},
                       {"applied_u", t.applied_u},
                       {"shed_time", t.shed_time},
                       {"fine_nadir", t.fine_nadir},
                       {"collapsed", t.collapsed},
                       {"settled", t.settled}};
}

void from_json(const nlohmann::json& j, Trajectory& t) {
    t.id = j.at("id").get<std::string>();
    t.time = j.at("time").get<std::vector<double>>();
    t.omega = j.at("omega").get<std::vector<double>>();
    t.windows = j.at("windows").get<std::vector<std::vector<double>>>();
    t.channels = j.at("channels").get<int>();
    t.window_len = j.at("window_len").get<int>();
    t.dt_embed = j.at("dt_embed").get<double>();
    t.dt_pred = j.at("dt_pred").get<double>();
    t.tau = j.at("tau").get<double>();
    t.applied_u = j.at("applied_u").get<std::vector<double>>();
    t.shed_time = j.at("shed_time").get<double>();
    t.fine_nadir = j.at("fine_nadir").get<double>();
    t.collapsed = j.at("collapsed").get<bool>();
    t.settled = j.at("settled").get<bool>();
}

Trajectory simulate(const GridConfig& grid, const FaultEvent& fault, const ShedSchedule& shed,
                    const Sampling& sampling) {
    grid.validate();
    fault.validate(grid);
    const std::size_t nm = grid.machines.size();
    const std::size_t nl = grid.loads.size();
    if (!shed.u.empty() && shed.u.size() != nl) throw ArgumentError("simulate: shed vector size != load count");
    for (double u : shed.u) {
        if (!(u >= 0.0 && u <= 1.0)) throw ArgumentError("simulate: shed fractions must lie in [0,1]");
    }
    if (sampling.coarse_points < 1) throw ConfigError("simulate: need at least one coarse point");
    const double dt = sampling.dt_embed;
    if (!(dt > 0.0)) throw ConfigError("simulate: dt_embed must be positive");

    const int per_coarse = steps_in(sampling.dt_pred, dt, "dt_pred");
    const int window_steps = steps_in(sampling.tau, dt, "tau");
    const int first = steps_in(sampling.first_sample, dt, "first sample time");
    if (first < window_steps) throw WindowError("simulate: first coarse sample leaves less than tau of history");
    if (per_coarse < 1) throw ConfigError("simulate: dt_pred must be at least dt_embed");
    const int last = first + per_coarse * (sampling.coarse_points - 1);
    const int fault_idx = static_cast<int>(std::ceil(fault.time / dt - 1e-9));
    const int shed_idx = shed.mode == ShedSchedule::Mode::Timed ? static_cast<int>(std::ceil(shed.time / dt - 1e-9)) : -1;
    const bool sheds = std::any_of(shed.u.begin(), shed.u.end(), [](double u) { return u > 0.0; });
    if (shed.mode == ShedSchedule::Mode::Timed && sheds && shed.time < fault.time - 1e-12)
        throw ArgumentError("simulate: shed time precedes the fault");

    const int channels = channel_count(grid);
    const double p0 = grid.dispatch_pu();
    const double pl0 = grid.total_load_mw() / grid.base_mva;

    // Fine samples for every channel, channel-major.
    std::vector<std::vector<double>> fine(static_cast<std::size_t>(channels),
                                          std::vector<double>(static_cast<std::size_t>(last + 1)));

    SimState s = SimState::equilibrium(grid);
    double imbalance = 0.0;
    bool fault_applied = false;
    bool shed_applied = false;
    int trigger_apply = -1;

    Trajectory tr;
    tr.channels = channels;
    tr.window_len = window_steps + 1;
    tr.dt_embed = dt;
    tr.dt_pred = sampling.dt_pred;
    tr.tau = sampling.tau;
    tr.applied_u.assign(nl, 0.0);
    tr.fine_nadir = 0.0;

    auto apply_shed = [&](int n) {
        const std::vector<double> u = shed.u.empty() ? std::vector<double>(nl, 0.0) : shed.u;
        for (std::size_t j = 0; j < nl; ++j) s.load_scale[j] = 1.0 - u[j];
        tr.applied_u = u;
        if (sheds) tr.shed_time = n * dt;
        shed_applied = true;
    };

    for (int n = 0; n <= last; ++n) {
        if (!fault_applied && n >= fault_idx) {
            if (fault.tripped.empty()) {
                imbalance = fault.deficit_mw;
            } else {
                for (std::size_t k = 0; k < fault.tripped.size(); ++k) {
                    const std::size_t i = fault.tripped[k];
                    const double lost = fault.lost_mw[k] / grid.machines[i].rating_mva;
                    s.reference[i] -= lost;
                    s.mech_power[i] = std::max(0.0, s.mech_power[i] - lost);
                }
            }
            fault_applied = true;
        }

        const Algebraics a = evaluate_algebraics(s, grid, imbalance);
        fine[0][static_cast<std::size_t>(n)] = a.omega_coi;
        for (std::size_t i = 0; i < nm; ++i) {
            fine[i + 1][static_cast<std::size_t>(n)] = grid.machines[i].rating_mva / grid.base_mva * (s.mech_power[i] - p0);
        }
        fine[nm + 1][static_cast<std::size_t>(n)] = a.load_power - pl0;
        if (fault_applied) tr.fine_nadir = std::min(tr.fine_nadir, a.omega_coi);
        if (a.omega_coi < -0.1) tr.collapsed = true;

        // Shedding takes effect after the sample at its instant.
        if (!shed_applied) {
            if (shed.mode == ShedSchedule::Mode::Timed) {
                if (n >= shed_idx) apply_shed(n);
            } else if (fault_applied) {
                if (trigger_apply < 0 && a.omega_coi < shed.threshold) {
                    trigger_apply = n + static_cast<int>(std::llround(shed.delay / dt));
                }
                if (trigger_apply >= 0 && n >= trigger_apply) apply_shed(n);
            }
        }
        if (n < last) s = step(s, grid, imbalance, dt);
    }

    const int T = sampling.coarse_points;
    tr.time.resize(static_cast<std::size_t>(T));
    tr.omega.resize(static_cast<std::size_t>(T));
    tr.windows.resize(static_cast<std::size_t>(T));
    for (int k = 0; k < T; ++k) {
        const int n = first + k * per_coarse;
        tr.time[static_cast<std::size_t>(k)] = n * dt;
        tr.omega[static_cast<std::size_t>(k)] = fine[0][static_cast<std::size_t>(n)];
        auto& w = tr.windows[static_cast<std::size_t>(k)];
        w.resize(static_cast<std::size_t>(channels * tr.window_len));
        for (int c = 0; c < channels; ++c) {
            for (int l = 0; l < tr.window_len; ++l) {
                w[static_cast<std::size_t>(c * tr.window_len + l)] =
                    fine[static_cast<std::size_t>(c)][static_cast<std::size_t>(n - window_steps + l)];
            }
        }
    }
    if (T > 5) tr.settled = std::abs(tr.omega[static_cast<std::size_t>(T - 1)] - tr.omega[static_cast<std::size_t>(T - 6)]) < 1e-5;
    return tr;
}

} // namespace kls
