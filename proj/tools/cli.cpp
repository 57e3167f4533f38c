#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "kls/control.hpp"
#include "kls/errors.hpp"
#include "kls/sls.hpp"

namespace kls::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t ExperimentConfig::require_seed() const {
    if (!seed) throw ConfigError("a global seed is required (config \"seed\" or --seed)");
    return *seed;
}

void ExperimentConfig::propagate_seed() {
    if (!seed) return;
    data.seed = *seed;
    train.seed = *seed;
    baselines.seed = *seed;
}

SafetyConfig ExperimentConfig::safety() const {
    SafetyConfig s;
    s.omega_min = freq_min_hz / grid.f0 - 1.0;
    s.omega_inf_min = ssv_min_hz / grid.f0 - 1.0;
    s.T = horizon > 0 ? horizon : data.T - 1;
    return s;
}

EvalConfig ExperimentConfig::eval() const {
    EvalConfig e;
    e.data = data;
    e.safety = safety();
    return e;
}

namespace {

std::string resolve(const fs::path& base, const std::string& p) {
    fs::path q(p);
    if (q.is_relative()) q = base / q;
    if (!fs::exists(q)) throw ConfigError("referenced path does not exist: " + q.string());
    return q.string();
}

EncoderSpec encoder_from(const json& j, EncoderSpec s) {
    const std::string kind = j.value("kind", "mlp");
    if (kind == "mlp") s.kind = EncoderSpec::Kind::Mlp;
    else if (kind == "resconv") s.kind = EncoderSpec::Kind::ResConv;
    else throw ConfigError("encoder kind must be mlp or resconv, got '" + kind + "'");
    const std::string act = j.value("activation", "tanh");
    if (act == "tanh") s.activation = Activation::Tanh;
    else if (act == "relu") s.activation = Activation::Relu;
    else throw ConfigError("unknown activation '" + act + "'");
    s.latent = j.value("latent", s.latent);
    s.hidden = j.value("hidden", s.hidden);
    s.conv_channels = j.value("conv_channels", s.conv_channels);
    s.kernels = j.value("kernels", s.kernels);
    return s;
}

} // namespace

ExperimentConfig load_experiment(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    const fs::path base = fs::path(path).parent_path();
    ExperimentConfig c;
    try {
        if (!j.contains("seed")) throw ConfigError("config '" + path + "' has no \"seed\"");
        c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("grid")) {
            c.grid_path = resolve(base, j.at("grid").get<std::string>());
            c.grid = load_grid_config(c.grid_path);
        }
        if (j.contains("dataset")) c.data = j.at("dataset").get<DatasetConfig>();
        if (j.contains("training")) {
            const json& t = j.at("training");
            c.train = t.get<TrainConfig>();
            if (t.contains("encoder")) c.encoder = encoder_from(t.at("encoder"), c.encoder);
            c.ntd_tau = t.value("ntd_tau", c.ntd_tau);
        }
        if (j.contains("baselines")) {
            const json& b = j.at("baselines");
            c.baselines.rbf_count = b.value("rbf_count", c.baselines.rbf_count);
            c.baselines.use_window = b.value("use_window", c.baselines.use_window);
            c.baselines.dmdc.ridge = b.value("ridge", c.baselines.dmdc.ridge);
        }
        if (j.contains("control")) {
            const json& k = j.at("control");
            c.d_levels_mw = k.value("d_levels_mw", c.d_levels_mw);
            c.freq_min_hz = k.value("freq_min_hz", c.freq_min_hz);
            c.ssv_min_hz = k.value("ssv_min_hz", c.ssv_min_hz);
            c.horizon = k.value("horizon", c.horizon);
        }
        if (j.contains("evaluation")) {
            const json& e = j.at("evaluation");
            c.methods = e.value("methods", c.methods);
            c.reference_deficit_mw = e.value("reference_deficit_mw", c.reference_deficit_mw);
            c.conventional_target = e.value("conventional_target", c.conventional_target);
            c.plot_scenarios = e.value("plot_scenarios", c.plot_scenarios);
        }
        c.out_dir = j.value("out_dir", c.out_dir);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    c.propagate_seed();
    return c;
}

namespace {

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            std::size_t used = 0;
            v.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("not a number: '" + tok + "'");
        }
    }
    return v;
}

std::vector<std::string> split_names(const std::string& s) {
    std::vector<std::string> v;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) v.push_back(tok);
    return v;
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void log(const std::string& msg) { std::cerr << "[kls] " << msg << '\n'; }

std::vector<double> bus_mw(const GridConfig& g) {
    std::vector<double> v;
    for (const auto& l : g.loads) v.push_back(l.base_mw);
    return v;
}

// Flags shared by every subcommand; applied over the config file.
struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string grid;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "experiment JSON")->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "global seed");
    sub->add_option("--out", c.out, "output path");
    sub->add_option("--grid", c.grid, "grid JSON")->check(CLI::ExistingFile);
}

ExperimentConfig resolve_config(const Common& c) {
    ExperimentConfig e = c.config.empty() ? ExperimentConfig{} : load_experiment(c.config);
    if (c.seed) e.seed = c.seed;
    if (!c.grid.empty()) {
        e.grid_path = c.grid;
        e.grid = load_grid_config(c.grid);
    }
    e.propagate_seed();
    return e;
}

std::string pick(const std::string& flag, const std::string& fallback) { return flag.empty() ? fallback : flag; }

const Record& find_record(const std::vector<Record>& recs, const std::string& key) {
    for (const auto& r : recs)
        if (r.scenario.id == key) return r;
    try {
        std::size_t used = 0;
        const unsigned long i = std::stoul(key, &used);
        if (used == key.size() && i < recs.size()) return recs[i];
    } catch (const std::exception&) {
    }
    throw ArgumentError("no scenario '" + key + "' in split");
}

std::map<std::string, KoopmanModel> load_models(const std::vector<std::string>& methods, const std::string& dir) {
    std::map<std::string, KoopmanModel> out;
    for (const auto& m : methods) {
        std::string name = m;
        if (m == "kls-margin" || m == "kls-c") name = "kls";
        else if (m == "conventional") continue;
        if (!out.count(name)) out[name] = load_model((fs::path(dir) / (name + ".json")).string());
    }
    return out;
}

// ---- subcommands ----

int cmd_gen(ExperimentConfig& e, const std::string& out, std::optional<std::size_t> n_train,
            std::optional<std::size_t> n_test, std::optional<double> noise) {
    e.require_seed();
    if (n_train) e.data.n_train = *n_train;
    if (n_test) e.data.n_test = *n_test;
    if (noise) e.data.noise_sigma = *noise;
    const std::string dir = pick(out, (fs::path(e.out_dir) / "data").string());
    log("generating " + std::to_string(e.data.n_train) + " train / " + std::to_string(e.data.n_test) + " test");
    std::vector<Record> all = generate(e.grid, train_scenarios(e.grid, e.data), e.data);
    const std::vector<Record> test = generate(e.grid, test_scenarios(e.grid, e.data), e.data);
    all.insert(all.end(), test.begin(), test.end());
    json extra = {{"dataset", e.data}, {"grid", e.grid}};
    split_and_persist(all, static_cast<double>(e.data.n_train), static_cast<double>(e.data.n_test), dir, extra);
    log("manifest written to " + (fs::path(dir) / "manifest.json").string());
    return 0;
}

KoopmanModel train_method(const ExperimentConfig& e, const std::string& method, const std::vector<Record>& train) {
    EncoderSpec spec = e.encoder;
    spec.channels = channel_count(e.grid);
    if (method == "kls" || method == "kls-ntd") {
        const double tau = method == "kls" ? e.data.tau : e.ntd_tau;
        KoopmanModel m = kls::train(train, spec, tau, e.data.dt_embed, e.train);
        m.method = method;
        return m;
    }
    BaselineConfig b = e.baselines;
    b.tau = e.data.tau;
    b.dt_embed = e.data.dt_embed;
    if (method == "edmd") return fit_edmd_model(train, b);
    if (method == "dmd") return fit_dmdc_model(train, b);
    throw ConfigError("unknown method '" + method + "' (kls, kls-ntd, edmd, dmd)");
}

int cmd_train(ExperimentConfig& e, const std::string& out, const std::string& method, const std::string& data,
              std::optional<int> epochs, std::optional<double> lr, std::optional<int> batch, int log_every) {
    e.require_seed();
    if (epochs) e.train.epochs = *epochs;
    if (lr) e.train.learning_rate = *lr;
    if (batch) e.train.batch_size = *batch;
    e.train.log_every = log_every;
    const std::string data_dir = pick(data, (fs::path(e.out_dir) / "data").string());
    const auto train = load_split(data_dir, "train");
    log("training " + method + " on " + std::to_string(train.size()) + " trajectories");
    const KoopmanModel m = train_method(e, method, train);
    const std::string path = pick(out, (fs::path(e.out_dir) / "models" / (method + ".json")).string());
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    save_model(m, path);
    log("loss " + num(m.meta.initial_loss) + " -> " + num(m.meta.final_loss) + ", max training error " +
        num(m.meta.max_pred_err) + " pu; saved " + path);
    return 0;
}

int cmd_predict(ExperimentConfig& e, const std::string& out, const std::string& model_path, const std::string& data,
                const std::string& split, const std::string& scenario) {
    const KoopmanModel m = load_model(model_path);
    const auto recs = load_split(pick(data, (fs::path(e.out_dir) / "data").string()), split);
    std::vector<const Record*> sel;
    if (!scenario.empty()) sel.push_back(&find_record(recs, scenario));
    else
        for (const auto& r : recs) sel.push_back(&r);
    std::ostringstream os;
    os << "scenario,t,omega_true_hz,omega_pred_hz\n";
    std::vector<double> maes;
    for (const Record* r : sel) {
        const Trajectory& tr = r->trajectory;
        const Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(tr.applied_u.data(),
                                                                    static_cast<Eigen::Index>(tr.applied_u.size()));
        const auto pred = predict_omega(m, tr, u);
        for (int k = 0; k < tr.T(); ++k)
            os << r->scenario.id << ',' << num(tr.time[static_cast<std::size_t>(k)]) << ','
               << num(e.grid.f0 * (1.0 + tr.omega[static_cast<std::size_t>(k)])) << ','
               << num(e.grid.f0 * (1.0 + pred[static_cast<std::size_t>(k)])) << '\n';
        maes.push_back(trajectory_mae(pred, tr.omega));
    }
    write_text(pick(out, (fs::path(e.out_dir) / ("predict_" + m.method + ".csv")).string()), os.str());
    log("MAE median " + num(quantile(maes, 0.5) * e.grid.f0) + " Hz, p95 " + num(quantile(maes, 0.95) * e.grid.f0) +
        " Hz over " + std::to_string(maes.size()) + " trajectories");
    return 0;
}

int cmd_control(ExperimentConfig& e, const std::string& out, const std::string& model_path, const std::string& data,
                const std::string& split, const std::string& scenario, double d_mw, bool ceil, bool no_margin,
                std::optional<double> zeta_hz) {
    const KoopmanModel m = load_model(model_path);
    const auto recs = load_split(pick(data, (fs::path(e.out_dir) / "data").string()), split);
    const Record& rec = find_record(recs, scenario.empty() ? "0" : scenario);
    const EvalConfig ec = e.eval();
    const Trajectory unshed = simulate_unshed(e.grid, rec.scenario, e.data);
    SafetyConfig sc = e.safety();
    if (zeta_hz) sc.zeta = *zeta_hz / e.grid.f0;
    PlanOptions po;
    po.d_mw = d_mw;
    po.ceil = ceil;
    po.margin = !no_margin;
    const ShedPlan plan = kls_pipeline(m.window(unshed, 0), unshed.omega[0], m, sc, bus_mw(e.grid), po);
    const Eigen::VectorXd& uq = plan.u_quant;
    const Trajectory after = simulate_with_shed(e.grid, rec.scenario, std::vector<double>(uq.data(), uq.data() + uq.size()), e.data);
    MetricsRow row;
    row.scenario = rec.scenario.id;
    row.method = m.method;
    row.d_mw = d_mw;
    row.zeta = plan.zeta;
    row.shed_mw = plan.shed_mw();
    score_trajectory(row, after, e.grid.f0, ec.safety_anchors, ec.cost_anchors);
    json j = {{"scenario", rec.scenario.id},
              {"plan", plan},
              {"zeta_hz", plan.zeta * e.grid.f0},
              {"simulated",
               {{"nadir_hz", row.nadir_hz},
                {"ssv_hz", row.ssv_hz},
                {"fine_nadir_hz", row.fine_nadir_hz},
                {"safety", row.safety},
                {"control_cost", row.control_cost}}}};
    write_text(pick(out, (fs::path(e.out_dir) / ("plan_" + rec.scenario.id + ".json")).string()), j.dump(2) + "\n");
    log("shed " + num(row.shed_mw) + " MW, nadir " + num(row.nadir_hz) + " Hz, SSV " + num(row.ssv_hz) +
        " Hz, Safety " + num(row.safety));
    return 0;
}

int cmd_margin(ExperimentConfig& e, const std::string& out, const std::string& model_path,
               const std::vector<double>& d_levels) {
    const KoopmanModel m = load_model(model_path);
    const SafetyConfig sc = e.safety();
    std::ostringstream os;
    os << "d_mw,zeta_pu,zeta_hz,quant_pu,max_pred_err_pu,worst_case_quant_pu,worst_step,spectral_radius,spectral_warning\n";
    for (double d : d_levels) {
        const SafetyMargin s = zeta_margin(m.A, m.B, feeder_step(d, bus_mw(e.grid)), m.meta.max_pred_err, sc.T);
        const double quant = *std::max_element(s.quant_terms.begin(), s.quant_terms.end());
        const double eq = *std::max_element(s.worst_case_terms.begin(), s.worst_case_terms.end());
        os << num(d) << ',' << num(s.zeta) << ',' << num(s.zeta * e.grid.f0) << ',' << num(quant) << ','
           << num(s.max_pred_err) << ',' << num(eq) << ',' << s.worst_step << ',' << num(s.spectral_radius) << ','
           << (s.spectral_warning ? 1 : 0) << '\n';
        if (s.spectral_warning) log("warning: spectral radius " + num(s.spectral_radius) + " of A");
    }
    write_text(pick(out, (fs::path(e.out_dir) / "margin.csv").string()), os.str());
    return 0;
}

int cmd_sls(ExperimentConfig& e, const std::string& out, const std::string& model_path,
            const std::vector<double>& levels, int T, int samples) {
    const KoopmanModel m = load_model(model_path);
    DeviationCheckConfig dc;
    dc.seed = e.require_seed();
    dc.T = T;
    dc.samples = samples;
    const DeviationReport rep = deviation_bound_check(m.A, m.B, levels, dc);
    write_text(pick(out, (fs::path(e.out_dir) / "sls_check.csv").string()), rep.csv());
    for (const auto& l : rep.levels)
        log("eps " + num(l.epsilon) + ": deviation " + num(l.max_deviation) + ", bound " + num(l.max_bound) +
            (l.bound_holds ? "" : " (exceeded)") + (l.neumann_ok ? "" : " (Neumann condition fails)"));
    log(std::string("monotone: ") + (rep.monotone ? "yes" : "no"));
    return 0;
}

int cmd_evaluate(ExperimentConfig& e, const std::string& out, const std::string& data, const std::string& models,
                 const std::vector<std::string>& methods, std::optional<std::size_t> limit, const std::string& subdir) {
    e.require_seed();
    auto test = load_split(pick(data, (fs::path(e.out_dir) / "data").string()), "test");
    if (limit && *limit < test.size()) test.resize(*limit);
    CompareConfig cc;
    cc.methods = methods;
    cc.d_levels = e.d_levels_mw;
    cc.reference_deficit_mw = e.reference_deficit_mw;
    cc.conventional_target = e.conventional_target;
    cc.plot_scenarios = e.plot_scenarios;
    cc.out_dir = pick(out, (fs::path(e.out_dir) / subdir).string());
    const auto ms = load_models(methods, pick(models, (fs::path(e.out_dir) / "models").string()));
    const auto rows = compare(e.grid, test, ms, e.eval(), cc);
    for (const auto& s : summarize(rows))
        log(s.method + ": safety mean " + num(s.safety_mean) + ", Safety=1 " + num(s.safe_fraction) +
            ", Safety>=0.9 " + num(s.safe90_fraction) + ", cost " + num(s.cost_mean) +
            (s.mae_median > 0.0 ? ", MAE median " + num(s.mae_median * e.grid.f0) + " Hz" : std::string()));
    log("report written to " + cc.out_dir);
    return 0;
}

} // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"Koopman-based load shedding experiments"};
    app.require_subcommand(1);
    Common common;

    auto* gen = app.add_subcommand("gen", "generate and persist the dataset");
    std::optional<std::size_t> n_train, n_test;
    std::optional<double> noise;
    gen->add_option("--n-train", n_train);
    gen->add_option("--n-test", n_test);
    gen->add_option("--noise", noise, "measurement noise sigma (pu)");

    auto* train = app.add_subcommand("train", "train KLS / KLS-NTD or fit a baseline");
    std::string method = "kls", data, model, split = "test", scenario, levels_s, d_list, methods_s, models_dir;
    std::optional<int> epochs, batch;
    std::optional<double> lr;
    int log_every = 0;
    train->add_option("--method", method)->check(CLI::IsMember({"kls", "kls-ntd", "edmd", "dmd"}));
    train->add_option("--data", data, "dataset directory");
    train->add_option("--epochs", epochs);
    train->add_option("--lr", lr);
    train->add_option("--batch", batch);
    train->add_option("--log-every", log_every);

    auto* predict = app.add_subcommand("predict", "open-loop frequency prediction under recorded inputs");
    predict->add_option("--model", model)->required();
    predict->add_option("--data", data);
    predict->add_option("--split", split);
    predict->add_option("--scenario", scenario, "scenario id or index");

    auto* control = app.add_subcommand("control", "shedding plan for one scenario");
    double d_mw = 0.0;
    bool ceil = false, no_margin = false;
    std::optional<double> zeta_hz;
    control->add_option("--model", model)->required();
    control->add_option("--data", data);
    control->add_option("--split", split);
    control->add_option("--scenario", scenario, "scenario id or index");
    control->add_option("--d-mw", d_mw, "feeder size (MW), 0 = continuous");
    control->add_flag("--ceil", ceil, "round up instead of to nearest");
    control->add_flag("--no-margin", no_margin);
    control->add_option("--zeta-hz", zeta_hz, "fixed margin when --no-margin");

    auto* margin = app.add_subcommand("margin", "safety margin table over feeder sizes");
    margin->add_option("--model", model)->required();
    margin->add_option("--d-mw", d_list, "comma-separated feeder sizes (MW)");

    auto* sls = app.add_subcommand("sls-check", "model-error deviation report");
    int sls_T = 10, samples = 20;
    sls->add_option("--model", model)->required();
    sls->add_option("--levels", levels_s, "comma-separated epsilons, decreasing");
    sls->add_option("--T", sls_T);
    sls->add_option("--samples", samples);

    auto* evaluate = app.add_subcommand("evaluate", "closed-loop evaluation of all methods");
    std::optional<std::size_t> limit;
    evaluate->add_option("--methods", methods_s, "comma-separated methods");
    evaluate->add_option("--data", data);
    evaluate->add_option("--models", models_dir, "directory holding <method>.json");
    evaluate->add_option("--limit", limit, "evaluate the first N test scenarios");
    evaluate->add_option("--d-mw", d_list);

    auto* ufls = app.add_subcommand("compare-ufls", "KLS with margin against fixed-proportion UFLS");
    ufls->add_option("--data", data);
    ufls->add_option("--models", models_dir);
    ufls->add_option("--limit", limit);
    ufls->add_option("--d-mw", d_list);

    for (auto* s : {gen, train, predict, control, margin, sls, evaluate, ufls}) add_common(s, common);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        ExperimentConfig e = resolve_config(common);
        if (!d_list.empty()) e.d_levels_mw = parse_list(d_list);
        if (*gen) return cmd_gen(e, common.out, n_train, n_test, noise);
        if (*train) return cmd_train(e, common.out, method, data, epochs, lr, batch, log_every);
        if (*predict) return cmd_predict(e, common.out, model, data, split, scenario);
        if (*control) return cmd_control(e, common.out, model, data, split, scenario, d_mw, ceil, no_margin, zeta_hz);
        if (*margin) return cmd_margin(e, common.out, model, e.d_levels_mw);
        if (*sls)
            return cmd_sls(e, common.out, model, levels_s.empty() ? std::vector<double>{1e-1, 1e-2, 1e-3, 0.0}
                                                                  : parse_list(levels_s),
                           sls_T, samples);
        if (*evaluate)
            return cmd_evaluate(e, common.out, data, models_dir, methods_s.empty() ? e.methods : split_names(methods_s),
                                limit, "eval");
        if (*ufls) return cmd_evaluate(e, common.out, data, models_dir, {"kls-margin", "conventional"}, limit, "ufls");
    } catch (const ConfigError& ex) {
        std::cerr << "configuration error: " << ex.what() << '\n';
        return 2;
    } catch (const Error& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return 2;
}

} // namespace kls::cli
