#include "kls/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "kls/errors.hpp"
#include "kls/parallel.hpp"

namespace kls {

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

std::string d_label(double d) {
    std::string s = num(d);
    return s;
}

} // namespace

double safety(double nadir_hz, double ssv_hz, const SafetyAnchors& a) {
    if (!(a.nadir0 < a.nadir1) || !(a.ssv0 < a.ssv1)) throw ConfigError("safety: anchors must be increasing");
    if (std::abs(a.alpha + a.beta - 1.0) > 1e-12 || a.alpha < 0.0 || a.beta < 0.0)
        throw ConfigError("safety: weights must be non-negative and sum to 1");
    return a.alpha * clamp01((nadir_hz - a.nadir0) / (a.nadir1 - a.nadir0)) +
           a.beta * clamp01((ssv_hz - a.ssv0) / (a.ssv1 - a.ssv0));
}

double control_cost(double nadir_hz, double ssv_hz, const CostAnchors& a) {
    if (!(a.nadir1 < a.nadir0) || !(a.ssv1 < a.ssv0)) throw ConfigError("control_cost: degenerate anchors");
    return std::min(clamp01((a.nadir0 - nadir_hz) / (a.nadir0 - a.nadir1)),
                    clamp01((a.ssv0 - ssv_hz) / (a.ssv0 - a.ssv1)));
}

double trajectory_mae(const std::vector<double>& predicted, const std::vector<double>& truth) {
    if (predicted.size() != truth.size() || truth.empty())
        throw ArgumentError("trajectory_mae: lengths differ or are zero");
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(predicted[i] - truth[i]);
    return s / static_cast<double>(truth.size());
}

void score_trajectory(MetricsRow& row, const Trajectory& tr, double f0, const SafetyAnchors& sa,
                      const CostAnchors& ca) {
    if (tr.omega.empty()) throw ArgumentError("score_trajectory: empty trajectory");
    row.nadir_hz = f0 * (1.0 + *std::min_element(tr.omega.begin(), tr.omega.end()));
    row.ssv_hz = f0 * (1.0 + tr.omega.back());
    row.fine_nadir_hz = f0 * (1.0 + tr.fine_nadir);
    row.safety = safety(row.nadir_hz, row.ssv_hz, sa);
    row.control_cost = control_cost(row.nadir_hz, row.ssv_hz, ca);
}

Trajectory simulate_with_shed(const GridConfig& grid, const ScenarioSpec& sc, const std::vector<double>& u,
                              const DatasetConfig& cfg) {
    ShedSchedule shed;
    shed.mode = ShedSchedule::Mode::Timed;
    shed.u = u;
    shed.time = cfg.fault_time + cfg.shed_delay;
    FaultEvent fault = sc.fault;
    fault.time = cfg.fault_time;
    Trajectory tr = simulate(sc.apply(grid), fault, shed, cfg.sampling());
    tr.id = sc.id;
    return tr;
}

Trajectory simulate_unshed(const GridConfig& grid, const ScenarioSpec& sc, const DatasetConfig& cfg) {
    return simulate_with_shed(grid, sc, std::vector<double>(grid.loads.size(), 0.0), cfg);
}

namespace {

std::vector<double> bus_loads(const GridConfig& grid) {
    std::vector<double> mw;
    for (const auto& l : grid.loads) mw.push_back(l.base_mw);
    return mw;
}

SafetyConfig planner_config(const EvalConfig& cfg) {
    SafetyConfig s = cfg.safety;
    s.T = cfg.data.T - 1;
    return s;
}

MetricsRow plan_and_score(const GridConfig& grid, const ScenarioSpec& sc, const KoopmanModel& model,
                          const EvalConfig& cfg, const PolicyOptions& opt, const Trajectory& unshed,
                          Trajectory* out) {
    MetricsRow row;
    row.scenario = sc.id;
    row.method = opt.label;
    row.d_mw = opt.d_mw;
    const auto mw = bus_loads(grid);
    SafetyConfig sc_cfg = planner_config(cfg);
    sc_cfg.zeta = opt.zeta;
    PlanOptions po;
    po.d_mw = opt.d_mw;
    po.ceil = opt.ceil;
    po.margin = opt.margin;
    std::vector<double> u;
    try {
        const ShedPlan plan = kls_pipeline(model.window(unshed, 0), unshed.omega[0], model, sc_cfg, mw, po);
        row.zeta = plan.zeta;
        u.assign(plan.u_quant.data(), plan.u_quant.data() + plan.u_quant.size());
    } catch (const InfeasibleError&) {
        row.infeasible = true;
        u.assign(mw.size(), 1.0);
        if (opt.margin) {
            const Eigen::VectorXd d = opt.d_mw > 0.0 ? feeder_step(opt.d_mw, mw) : Eigen::VectorXd::Zero(model.q());
            row.zeta = zeta_margin(model.A, model.B, d, model.meta.max_pred_err, sc_cfg.T).zeta;
        } else {
            row.zeta = opt.zeta;
        }
    }
    for (auto& x : u) x = std::clamp(x, 0.0, 1.0);
    for (std::size_t i = 0; i < u.size(); ++i) row.shed_mw += u[i] * mw[i];
    Trajectory tr = simulate_with_shed(grid, sc, u, cfg.data);
    score_trajectory(row, tr, grid.f0, cfg.safety_anchors, cfg.cost_anchors);
    if (out) *out = std::move(tr);
    return row;
}

} // namespace

MetricsRow evaluate_policy(const GridConfig& grid, const ScenarioSpec& sc, const KoopmanModel& model,
                           const EvalConfig& cfg, const PolicyOptions& opt, Trajectory* out) {
    const Trajectory unshed = simulate_unshed(grid, sc, cfg.data);
    return plan_and_score(grid, sc, model, cfg, opt, unshed, out);
}

double prediction_mae(const KoopmanModel& model, const Trajectory& tr) {
    const Eigen::VectorXd u =
        Eigen::Map<const Eigen::VectorXd>(tr.applied_u.data(), static_cast<Eigen::Index>(tr.applied_u.size()));
    return trajectory_mae(predict_omega(model, tr, u), tr.omega);
}

MetricsRow evaluate_conventional(const GridConfig& grid, const ScenarioSpec& sc, const ConventionalPolicy& pol,
                                 const EvalConfig& cfg, Trajectory* out) {
    if (!(pol.proportion >= 0.0 && pol.proportion <= 1.0)) throw ArgumentError("conventional: proportion outside [0,1]");
    ShedSchedule shed;
    shed.mode = ShedSchedule::Mode::UnderFrequency;
    shed.threshold = pol.trigger_hz / grid.f0 - 1.0;
    shed.delay = pol.delay;
    shed.u.assign(grid.loads.size(), pol.proportion);
    FaultEvent fault = sc.fault;
    fault.time = cfg.data.fault_time;
    Trajectory tr = simulate(sc.apply(grid), fault, shed, cfg.data.sampling());
    tr.id = sc.id;
    MetricsRow row;
    row.scenario = sc.id;
    row.method = "conventional";
    if (tr.shed_time >= 0.0)
        for (const auto& l : grid.loads) row.shed_mw += pol.proportion * l.base_mw;
    score_trajectory(row, tr, grid.f0, cfg.safety_anchors, cfg.cost_anchors);
    if (out) *out = std::move(tr);
    return row;
}

ConventionalPolicy tune_proportion(const GridConfig& grid, const ScenarioSpec& reference, const EvalConfig& cfg,
                                   double target, double trigger_hz) {
    ConventionalPolicy pol;
    pol.trigger_hz = trigger_hz;
    for (int k = 0; k <= 200; ++k) {
        pol.proportion = 0.005 * k;
        if (evaluate_conventional(grid, reference, pol, cfg).safety >= target) {
            pol.safe_reference = true;
            return pol;
        }
    }
    pol.proportion = 1.0;
    pol.safe_reference = false;
    return pol;
}

ScenarioSpec reference_scenario(const GridConfig& grid, double deficit_mw, double fault_time) {
    ScenarioSpec s;
    s.id = "reference";
    s.inertia_scale.assign(grid.machines.size(), 1.0);
    s.fault.time = fault_time;
    s.fault.deficit_mw = deficit_mw;
    s.fault.tripped = {grid.machines.size() - 1};
    s.fault.lost_mw = {deficit_mw};
    s.u.assign(grid.loads.size(), 0.0);
    return s;
}

double empirical_min_zeta(const GridConfig& grid, const std::vector<ScenarioSpec>& scenarios,
                          const KoopmanModel& model, const EvalConfig& cfg, double d_mw, double hi, double tol) {
    if (scenarios.empty()) throw ArgumentError("empirical_min_zeta: no scenarios");
    std::vector<Trajectory> unshed(scenarios.size());
    parallel_for(scenarios.size(), [&](std::size_t i) { unshed[i] = simulate_unshed(grid, scenarios[i], cfg.data); });
    auto all_safe = [&](double zeta) {
        PolicyOptions opt;
        opt.d_mw = d_mw;
        opt.zeta = zeta;
        std::vector<char> ok(scenarios.size(), 0);
        parallel_for(scenarios.size(), [&](std::size_t i) {
            ok[i] = plan_and_score(grid, scenarios[i], model, cfg, opt, unshed[i], nullptr).safety >= 1.0 - 1e-12;
        });
        return std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
    };
    if (all_safe(0.0)) return 0.0;
    if (!all_safe(hi)) return hi;
    double lo = 0.0;
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (all_safe(mid)) hi = mid;
        else lo = mid;
    }
    return hi;
}

std::vector<MetricsRow> compare(const GridConfig& grid, const std::vector<Record>& test,
                                const std::map<std::string, KoopmanModel>& models, const EvalConfig& cfg,
                                const CompareConfig& cc) {
    auto model_of = [&](const std::string& name) -> const KoopmanModel& {
        const auto it = models.find(name);
        if (it == models.end()) throw IoError("compare: no model loaded for method '" + name + "'");
        return it->second;
    };
    const std::size_t n = test.size();
    std::vector<Trajectory> unshed(n);
    parallel_for(n, [&](std::size_t i) { unshed[i] = simulate_unshed(grid, test[i].scenario, cfg.data); });

    std::vector<MetricsRow> rows;
    std::map<std::string, std::vector<Series>> plots; // scenario id -> simulated frequency per policy
    const std::size_t n_plot = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(0, cc.plot_scenarios)));

    auto run = [&](const std::function<MetricsRow(std::size_t, Trajectory*)>& fn, const std::string& label) {
        std::vector<MetricsRow> part(n);
        std::vector<Trajectory> trs(n_plot);
        parallel_for(n, [&](std::size_t i) { part[i] = fn(i, i < n_plot ? &trs[i] : nullptr); });
        for (std::size_t i = 0; i < n_plot; ++i) {
            Series s{label, trs[i].time, {}};
            for (double w : trs[i].omega) s.y.push_back(grid.f0 * (1.0 + w));
            plots[test[i].scenario.id].push_back(std::move(s));
        }
        rows.insert(rows.end(), part.begin(), part.end());
    };

    for (const auto& method : cc.methods) {
        if (method == "kls" || method == "kls-ntd" || method == "edmd" || method == "dmd") {
            const KoopmanModel& m = model_of(method);
            run([&](std::size_t i, Trajectory* out) {
                PolicyOptions opt;
                opt.label = method;
                MetricsRow r = plan_and_score(grid, test[i].scenario, m, cfg, opt, unshed[i], out);
                r.mae = prediction_mae(m, test[i].trajectory);
                return r;
            }, method);
        } else if (method == "kls-margin" || method == "kls-c") {
            const KoopmanModel& m = model_of("kls");
            const bool ceil = method == "kls-c";
            for (double d : cc.d_levels) {
                const std::string label = (ceil ? "kls-c-d" : "kls-d") + d_label(d);
                run([&](std::size_t i, Trajectory* out) {
                    PolicyOptions opt;
                    opt.label = label;
                    opt.d_mw = d;
                    opt.ceil = ceil;
                    opt.margin = true;
                    return plan_and_score(grid, test[i].scenario, m, cfg, opt, unshed[i], out);
                }, label);
            }
        } else if (method == "conventional") {
            const ConventionalPolicy pol = tune_proportion(
                grid, reference_scenario(grid, cc.reference_deficit_mw, cfg.data.fault_time), cfg, cc.conventional_target);
            run([&](std::size_t i, Trajectory* out) {
                return evaluate_conventional(grid, test[i].scenario, pol, cfg, out);
            }, "conventional");
        } else {
            throw ConfigError("compare: unknown method '" + method + "'");
        }
    }

    if (!cc.out_dir.empty()) {
        namespace fs = std::filesystem;
        write_text((fs::path(cc.out_dir) / "metrics.csv").string(), metrics_csv(rows));
        const auto summary = summarize(rows);
        write_text((fs::path(cc.out_dir) / "summary.csv").string(), summary_csv(summary));
        std::vector<std::pair<std::string, std::vector<double>>> mae_groups, safety_groups;
        for (const auto& s : summary) {
            std::vector<double> mae, saf;
            for (const auto& r : rows)
                if (r.method == s.method) {
                    if (r.mae >= 0.0) mae.push_back(r.mae * grid.f0);
                    saf.push_back(r.safety);
                }
            if (!mae.empty()) mae_groups.emplace_back(s.method, mae);
            safety_groups.emplace_back(s.method, saf);
        }
        if (!mae_groups.empty())
            write_text((fs::path(cc.out_dir) / "mae_box.svg").string(),
                       svg_boxes("Trajectory MAE", "MAE [Hz]", mae_groups));
        write_text((fs::path(cc.out_dir) / "safety_box.svg").string(), svg_boxes("Safety", "Safety", safety_groups));
        for (std::size_t i = 0; i < n_plot; ++i) {
            const std::string& id = test[i].scenario.id;
            write_text((fs::path(cc.out_dir) / ("trajectories_" + id + ".svg")).string(),
                       svg_lines("Frequency after fault, " + id, "time [s]", "frequency [Hz]", plots[id]));
        }
    }
    return rows;
}

std::string metrics_csv_header() {
    return "method,scenario,d_mw,zeta,nadir_hz,ssv_hz,fine_nadir_hz,safety,control_cost,mae,shed_mw,infeasible";
}

std::string metrics_csv_row(const MetricsRow& r) {
    std::ostringstream os;
    os << r.method << ',' << r.scenario << ',' << num(r.d_mw) << ',' << num(r.zeta) << ',' << num(r.nadir_hz) << ','
       << num(r.ssv_hz) << ',' << num(r.fine_nadir_hz) << ',' << num(r.safety) << ',' << num(r.control_cost) << ','
       << (r.mae >= 0.0 ? num(r.mae) : std::string()) << ',' << num(r.shed_mw) << ',' << (r.infeasible ? 1 : 0);
    return os.str();
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string s = metrics_csv_header() + "\n";
    for (const auto& r : rows) s += metrics_csv_row(r) + "\n";
    return s;
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw ArgumentError("quantile: empty sample");
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<MethodSummary> summarize(const std::vector<MetricsRow>& rows) {
    std::vector<std::string> order;
    for (const auto& r : rows)
        if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
    std::vector<MethodSummary> out;
    for (const auto& m : order) {
        MethodSummary s;
        s.method = m;
        std::vector<double> mae, saf;
        for (const auto& r : rows) {
            if (r.method != m) continue;
            ++s.count;
            if (r.mae >= 0.0) mae.push_back(r.mae);
            saf.push_back(r.safety);
            s.safety_mean += r.safety;
            s.safe_fraction += r.safety >= 1.0 - 1e-12 ? 1.0 : 0.0;
            s.safe90_fraction += r.safety >= 0.9 - 1e-12 ? 1.0 : 0.0;
            s.cost_mean += r.control_cost;
            s.shed_mean_mw += r.shed_mw;
        }
        const double c = static_cast<double>(s.count);
        s.safety_mean /= c;
        s.safe_fraction /= c;
        s.safe90_fraction /= c;
        s.cost_mean /= c;
        s.shed_mean_mw /= c;
        const auto& basis = mae.empty() ? saf : mae;
        if (!mae.empty()) {
            s.mae_median = quantile(mae, 0.5);
            s.mae_p95 = quantile(mae, 0.95);
        }
        s.q25 = quantile(basis, 0.25);
        s.q50 = quantile(basis, 0.5);
        s.q75 = quantile(basis, 0.75);
        out.push_back(s);
    }
    return out;
}

std::string summary_csv(const std::vector<MethodSummary>& s) {
    std::ostringstream os;
    os << "method,count,mae_median,mae_p95,safety_mean,safe_fraction,safe90_fraction,cost_mean,shed_mean_mw,q25,q50,q75\n";
    for (const auto& m : s)
        os << m.method << ',' << m.count << ',' << num(m.mae_median) << ',' << num(m.mae_p95) << ','
           << num(m.safety_mean) << ',' << num(m.safe_fraction) << ',' << num(m.safe90_fraction) << ','
           << num(m.cost_mean) << ',' << num(m.shed_mean_mw) << ',' << num(m.q25) << ',' << num(m.q50) << ','
           << num(m.q75) << '\n';
    return os.str();
}

namespace {

constexpr double kW = 720, kH = 420, kL = 70, kR = 170, kTop = 40, kBot = 50;
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
                         "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Axis {
    double lo, hi;
    double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

Axis padded(double lo, double hi) {
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    return {lo - pad, hi + pad};
}

std::string frame(const std::string& title, const std::string& xlabel, const std::string& ylabel, const Axis& y) {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n"
       << "<rect x=\"" << kL << "\" y=\"" << kTop << "\" width=\"" << kW - kL - kR << "\" height=\"" << kH - kTop - kBot
       << "\" fill=\"none\" stroke=\"black\"/>\n"
       << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">" << escape(xlabel)
       << "</text>\n"
       << "<text x=\"16\" y=\"" << (kTop + kH - kBot) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << (kTop + kH - kBot) / 2 << ")\">" << escape(ylabel) << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = y.lo + (y.hi - y.lo) * k / 4.0;
        const double py = y.map(v, kH - kBot, kTop);
        os << "<text x=\"" << kL - 6 << "\" y=\"" << py + 4 << "\" text-anchor=\"end\">" << num(std::round(v * 1000) / 1000)
           << "</text>\n";
    }
    return os.str();
}

} // namespace

std::string svg_lines(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Series>& series) {
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (const auto& s : series) {
        for (double x : s.x) xlo = std::min(xlo, x), xhi = std::max(xhi, x);
        for (double y : s.y) ylo = std::min(ylo, y), yhi = std::max(yhi, y);
    }
    if (series.empty()) xlo = ylo = 0.0, xhi = yhi = 1.0;
    const Axis xa{xlo, xhi > xlo ? xhi : xlo + 1.0};
    const Axis ya = padded(ylo, yhi);
    std::ostringstream os;
    os << frame(title, xlabel, ylabel, ya);
    for (int k = 0; k <= 4; ++k) {
        const double v = xa.lo + (xa.hi - xa.lo) * k / 4.0;
        os << "<text x=\"" << xa.map(v, kL, kW - kR) << "\" y=\"" << kH - kBot + 16 << "\" text-anchor=\"middle\">"
           << num(std::round(v * 10) / 10) << "</text>\n";
    }
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const char* color = kColors[i % 10];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k)
            os << num(xa.map(s.x[k], kL, kW - kR)) << ',' << num(ya.map(s.y[k], kH - kBot, kTop)) << ' ';
        os << "\"/>\n";
        const double ly = kTop + 14.0 + 16.0 * static_cast<double>(i);
        os << "<line x1=\"" << kW - kR + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << kW - kR + 30 << "\" y2=\"" << ly - 4
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
           << "<text x=\"" << kW - kR + 34 << "\" y=\"" << ly << "\">" << escape(s.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_boxes(const std::string& title, const std::string& ylabel,
                      const std::vector<std::pair<std::string, std::vector<double>>>& groups) {
    double lo = 1e300, hi = -1e300;
    for (const auto& g : groups)
        for (double v : g.second) lo = std::min(lo, v), hi = std::max(hi, v);
    if (groups.empty()) lo = 0.0, hi = 1.0;
    const Axis ya = padded(lo, hi);
    std::ostringstream os;
    os << frame(title, "", ylabel, ya);
    const double slot = (kW - kL - kR) / std::max<double>(1.0, static_cast<double>(groups.size()));
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto& v = groups[i].second;
        if (v.empty()) continue;
        const double cx = kL + slot * (static_cast<double>(i) + 0.5);
        const double q1 = ya.map(quantile(v, 0.25), kH - kBot, kTop), q2 = ya.map(quantile(v, 0.5), kH - kBot, kTop),
                     q3 = ya.map(quantile(v, 0.75), kH - kBot, kTop);
        const double mn = ya.map(*std::min_element(v.begin(), v.end()), kH - kBot, kTop);
        const double mx = ya.map(*std::max_element(v.begin(), v.end()), kH - kBot, kTop);
        const double w = std::min(40.0, slot * 0.6);
        os << "<line x1=\"" << num(cx) << "\" y1=\"" << num(mn) << "\" x2=\"" << num(cx) << "\" y2=\"" << num(mx)
           << "\" stroke=\"black\"/>\n"
           << "<rect x=\"" << num(cx - w / 2) << "\" y=\"" << num(q3) << "\" width=\"" << num(w) << "\" height=\""
           << num(std::max(0.5, q1 - q3)) << "\" fill=\"" << kColors[i % 10] << "\" fill-opacity=\"0.5\" stroke=\"black\"/>\n"
           << "<line x1=\"" << num(cx - w / 2) << "\" y1=\"" << num(q2) << "\" x2=\"" << num(cx + w / 2) << "\" y2=\""
           << num(q2) << "\" stroke=\"black\" stroke-width=\"2\"/>\n"
           << "<text x=\"" << num(cx) << "\" y=\"" << kH - kBot + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
           << escape(groups[i].first) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void write_text(const std::string& path, const std::string& text) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(parent, ec);
        if (ec) throw IoError("cannot create '" + parent.string() + "': " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

} // namespace kls
