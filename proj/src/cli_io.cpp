#include "calib/cli_io.hpp"

#include "calib/csv.hpp"
#include "calib/error.hpp"
#include "calib/serialize.hpp"

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace calib {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Experiment files

ExperimentRecord load_experiment_csv(const fs::path& path, std::optional<double> od_factor) {
    const std::string text = csv::read_file(path);
    const std::string name = path.filename().string();
    ExperimentRecord rec;
    rec.label = path.stem().string();

    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    bool od_units = false;
    std::vector<std::array<double, 4>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = csv::trim(line);
        if (t.empty()) continue;
        if (!header_seen && t.front() == '#') {
            const auto eq = t.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = csv::trim(std::string_view(t).substr(1, eq - 1));
            const std::string value = csv::trim(std::string_view(t).substr(eq + 1));
            const std::string ctx = name + " metadata " + key;
            if (key == "label") {
                rec.label = value;
            } else if (key == "volume_L") {
                rec.volume_L = csv::parse_double(value, ctx);
            } else if (key == "aeration_vvm") {
                rec.aeration_vvm = csv::parse_double(value, ctx);
            } else if (key == "agitation_rpm") {
                rec.agitation_rpm = csv::parse_double(value, ctx);
            } else if (key == "od_factor") {
                rec.od_factor = csv::parse_double(value, ctx);
            } else {
                throw Error("unknown metadata key '" + key + "' in " + name);
            }
            continue;
        }
        if (!header_seen) {
            if (t == "time_h,od600,S_gL,P_gL") {
                od_units = true;
            } else if (t != "time_h,X_gL,S_gL,P_gL") {
                throw Error("schema mismatch in " + name + ": header must be time_h,od600|X_gL,S_gL,P_gL, got " + t);
            }
            header_seen = true;
            continue;
        }
        const auto fields = csv::split(t);
        if (fields.size() != 4) throw Error(name + " row " + std::to_string(rows.size()) + ": expected 4 fields");
        std::array<double, 4> r{};
        for (std::size_t k = 0; k < 4; ++k) {
            r[k] = csv::parse_double(csv::trim(fields[k]), name + " row " + std::to_string(rows.size()));
        }
        rows.push_back(r);
    }
    if (!header_seen) throw Error("schema mismatch in " + name + ": missing header");
    for (const double* v : {rec.volume_L ? &*rec.volume_L : nullptr, rec.aeration_vvm ? &*rec.aeration_vvm : nullptr,
                            rec.agitation_rpm ? &*rec.agitation_rpm : nullptr}) {
        if (v && !(*v >= 0.0)) throw Error("negative metadata value in " + name);
    }

    if (od_factor) rec.od_factor = od_factor;
    if (od_units && !rec.od_factor) throw Error("conversion factor required: " + name + " reports biomass as od600");
    if (rec.od_factor && !(*rec.od_factor > 0.0)) throw Error("conversion factor must be > 0 in " + name);
    if (!od_units) rec.od_factor.reset();

    const char* columns[] = {"time_h", od_units ? "od600" : "X_gL", "S_gL", "P_gL"};
    ObservationSeries& s = rec.series;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t k = 0; k < 4; ++k) {
            if (!(rows[i][k] >= 0.0)) {
                throw Error("negative value at row " + std::to_string(i) + ", column " + columns[k] + " in " + name);
            }
        }
        if (i > 0 && !(rows[i][0] > rows[i - 1][0])) {
            throw Error("unsorted times at row " + std::to_string(i) + " in " + name);
        }
        s.times.push_back(rows[i][0]);
        s.X.push_back(od_units ? rows[i][1] * *rec.od_factor : rows[i][1]);
        s.S.push_back(rows[i][2]);
        s.P.push_back(rows[i][3]);
    }
    if (s.times.size() < 2) throw Error("too short: " + name + " has fewer than 2 rows");
    s.x0 = s.X.front();
    s.s0 = s.S.front();
    s.validate();
    return rec;
}

// ---------------------------------------------------------------------------
// Configuration

const std::map<std::string, std::string>& known_config_keys() {
    static const std::map<std::string, std::string> keys = [] {
        std::map<std::string, std::string> k = {
            {"out_dir", "calib_run"},
            {"seed", "42"},
            {"solver.step_h", "0.05"},
            {"solver.horizon_h", "140"},
            {"solver.variant", "as-printed"},
            {"solver.aligned_breakpoints", "3"},
            {"encoder.grid_size", "32"},
            {"encoder.scale_X", "20"},
            {"encoder.scale_S", "100"},
            {"encoder.scale_P", "60"},
            {"simulate.params", "0.0082, 0.5273, 100.0, 1.361, 0.1381, 32.57, 61.53, 62.5"},
            {"simulate.x0", "0.129"},
            {"simulate.s0", "50"},
            {"simulate.dt", "0.5"},
            {"dataset.n_total", "10000"},
            {"dataset.n_train", "5000"},
            {"dataset.n_test", "2000"},
            {"dataset.s0_low", "50"},
            {"dataset.s0_high", "60"},
            {"dataset.x0", "0.129"},
            {"dataset.min_points", "8"},
            {"dataset.max_points", "16"},
            {"dataset.noise_rel_sd", "0"},
            {"dataset.dir", ""},
            {"fit.n_starts", "8"},
            {"fit.budget", "125"},
            {"fit.method", "lm"},
            {"fit.fd_step", "1e-6"},
            {"fit.explore_fraction", "1"},
            {"ddl.hidden", "128, 128, 128"},
            {"ddl.activation", "gelu"},
            {"ddl.epochs", "300"},
            {"ddl.batch_size", "64"},
            {"ddl.learning_rate", "1e-3"},
            {"ddl.final_lr_fraction", "0.05"},
            {"cfm.hidden", "128, 128, 128"},
            {"cfm.activation", "gelu"},
            {"cfm.epochs", "300"},
            {"cfm.batch_size", "64"},
            {"cfm.learning_rate", "1e-3"},
            {"cfm.final_lr_fraction", "0.05"},
            {"cfm.draws_per_sample", "4"},
            {"cfm.n_samples", "256"},
            {"cfm.n_steps", "100"},
            {"eval.source", "test"},
            {"eval.n_samples", "500"},
            {"eval.methods", "regression, ddl, cfm"},
            {"experiments", ""},
            {"experiments.od_factor", ""},
        };
        for (const auto& n : param_names()) k["bounds." + n] = "";
        return k;
    }();
    return keys;
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        const std::string t = csv::trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (t.empty()) continue;
        const auto eq = t.find('=');
        const std::string where = origin + ":" + std::to_string(line_no);
        if (eq == std::string::npos) throw Error("schema mismatch at " + where + ": expected key = value");
        const std::string key = csv::trim(std::string_view(t).substr(0, eq));
        const std::string value = csv::trim(std::string_view(t).substr(eq + 1));
        if (!known_config_keys().count(key)) throw Error("schema mismatch at " + where + ": unknown key '" + key + "'");
        if (c.values_.count(key)) throw Error("schema mismatch at " + where + ": duplicate key '" + key + "'");
        c.values_[key] = value;
    }
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    RunConfig c = parse(csv::read_file(path), path.filename().string());
    c.base_dir = path.parent_path();
    return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!known_config_keys().count(key)) throw Error("schema mismatch: unknown key '" + key + "'");
    values_[key] = value;
}

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return csv::parse_double(it->second, key);
}

std::int64_t RunConfig::get_int(const std::string& key, std::int64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::int64_t v = 0;
    const auto& s = it->second;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw Error("schema mismatch at " + key + ": expected an integer, got '" + s + "'");
    }
    return v;
}

std::vector<std::string> RunConfig::get_strings(const std::string& key,
                                                const std::vector<std::string>& fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::string> out;
    if (csv::trim(it->second).empty()) return out;
    for (const auto& f : csv::split(it->second)) out.push_back(csv::trim(f));
    return out;
}

std::vector<double> RunConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& s : get_strings(key, {})) out.push_back(csv::parse_double(s, key));
    return out;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

std::string RunConfig::hash() const {
    std::uint64_t h = 14695981039346656037ull;
    for (const unsigned char c : to_text()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

Command command_from_string(const std::string& s) {
    static const std::map<std::string, Command> names = {
        {"simulate", Command::kSimulate}, {"generate", Command::kGenerate},   {"fit", Command::kFit},
        {"train-ddl", Command::kTrainDdl}, {"train-cfm", Command::kTrainCfm}, {"predict", Command::kPredict},
        {"evaluate", Command::kEvaluate}, {"report", Command::kReport}};
    const auto it = names.find(s);
    if (it == names.end()) throw Error("unknown command '" + s + "'");
    return it->second;
}

std::string to_string(Command c) {
    switch (c) {
        case Command::kSimulate: return "simulate";
        case Command::kGenerate: return "generate";
        case Command::kFit: return "fit";
        case Command::kTrainDdl: return "train-ddl";
        case Command::kTrainCfm: return "train-cfm";
        case Command::kPredict: return "predict";
        case Command::kEvaluate: return "evaluate";
        case Command::kReport: return "report";
    }
    return "?";
}

namespace {

std::string dflt(const std::string& key) { return known_config_keys().at(key); }

double get_d(const RunConfig& c, const std::string& key) {
    return c.get_double(key, csv::parse_double(dflt(key), key));
}

std::int64_t get_i(const RunConfig& c, const std::string& key) {
    RunConfig d;
    d.set(key, dflt(key));
    return c.get_int(key, d.get_int(key, 0));
}

std::size_t get_count(const RunConfig& c, const std::string& key) {
    const std::int64_t v = get_i(c, key);
    if (v < 0) throw Error("schema mismatch at " + key + ": must be >= 0");
    return static_cast<std::size_t>(v);
}

std::vector<std::string> get_list(const RunConfig& c, const std::string& key) {
    RunConfig d;
    d.set(key, dflt(key));
    return c.get_strings(key, d.get_strings(key, {}));
}

nn::MlpSpec network_spec(const RunConfig& c, const std::string& prefix, int input, int output) {
    nn::MlpSpec spec;
    spec.layer_sizes.push_back(input);
    for (const auto& s : get_list(c, prefix + ".hidden")) {
        RunConfig tmp;
        tmp.set(prefix + ".epochs", s);
        spec.layer_sizes.push_back(static_cast<int>(tmp.get_int(prefix + ".epochs", 0)));
    }
    spec.layer_sizes.push_back(output);
    try {
        spec.activation = nn::activation_from_string(c.get_string(prefix + ".activation", dflt(prefix + ".activation")));
        spec.validate();
    } catch (const Error& e) {
        throw Error("schema mismatch at " + prefix + ": " + e.what());
    }
    return spec;
}

TrainHyper train_hyper(const RunConfig& c, const std::string& prefix) {
    TrainHyper h;
    h.epochs = static_cast<int>(get_i(c, prefix + ".epochs"));
    h.batch_size = static_cast<int>(get_i(c, prefix + ".batch_size"));
    h.learning_rate = get_d(c, prefix + ".learning_rate");
    h.final_lr_fraction = get_d(c, prefix + ".final_lr_fraction");
    try {
        h.validate();
    } catch (const Error& e) {
        throw Error("schema mismatch at " + prefix + ": " + e.what());
    }
    return h;
}

fs::path resolve(const RunConfig& c, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || c.base_dir.empty() ? path : c.base_dir / path;
}

} // namespace

PipelineSettings settings_from_config(const RunConfig& c) {
    PipelineSettings s;
    s.out_dir = resolve(c, c.get_string("out_dir", dflt("out_dir")));
    {
        const std::int64_t seed = get_i(c, "seed");
        if (seed < 0) throw Error("schema mismatch at seed: must be >= 0");
        s.seed = static_cast<std::uint64_t>(seed);
    }

    s.solver.step_h = get_d(c, "solver.step_h");
    s.solver.horizon_h = get_d(c, "solver.horizon_h");
    s.solver.variant = model_variant_from_string(c.get_string("solver.variant", dflt("solver.variant")));
    s.solver.aligned_breakpoints = static_cast<int>(get_i(c, "solver.aligned_breakpoints"));
    s.solver.validate();

    s.bounds = ParamBounds::defaults();
    auto lo = s.bounds.lower.to_array(), hi = s.bounds.upper.to_array();
    for (std::size_t k = 0; k < lo.size(); ++k) {
        const std::string key = "bounds." + param_names()[k];
        if (!c.has(key)) continue;
        const auto v = c.get_doubles(key, {});
        if (v.size() != 2) throw Error("schema mismatch at " + key + ": expected 'lower, upper'");
        lo[k] = v[0];
        hi[k] = v[1];
    }
    s.bounds = {KineticParams::from_array(lo), KineticParams::from_array(hi)};
    s.bounds.validate();

    s.encoder.grid_size = static_cast<int>(get_i(c, "encoder.grid_size"));
    s.encoder.scale_X = get_d(c, "encoder.scale_X");
    s.encoder.scale_S = get_d(c, "encoder.scale_S");
    s.encoder.scale_P = get_d(c, "encoder.scale_P");
    s.encoder.validate();

    {
        RunConfig d;
        d.set("simulate.params", dflt("simulate.params"));
        const auto p = c.get_doubles("simulate.params", d.get_doubles("simulate.params", {}));
        if (p.size() != KineticParams::kSize) throw Error("schema mismatch at simulate.params: expected 8 values");
        s.simulate_params = KineticParams::from_array(p);
    }
    s.simulate_x0 = get_d(c, "simulate.x0");
    s.simulate_s0 = get_d(c, "simulate.s0");
    s.simulate_dt = get_d(c, "simulate.dt");

    DatasetConfig& ds = s.dataset;
    ds.n_total = get_count(c, "dataset.n_total");
    ds.n_train = get_count(c, "dataset.n_train");
    ds.n_test = get_count(c, "dataset.n_test");
    ds.bounds = s.bounds;
    ds.s0_low = get_d(c, "dataset.s0_low");
    ds.s0_high = get_d(c, "dataset.s0_high");
    ds.x0 = get_d(c, "dataset.x0");
    ds.time_policy.min_points = static_cast<int>(get_i(c, "dataset.min_points"));
    ds.time_policy.max_points = static_cast<int>(get_i(c, "dataset.max_points"));
    ds.time_policy.horizon_h = s.solver.horizon_h;
    ds.solver = s.solver;
    ds.noise_rel_sd = get_d(c, "dataset.noise_rel_sd");
    ds.seed = s.seed;
    ds.validate();
    const std::string dir = c.get_string("dataset.dir", "");
    s.dataset_dir = dir.empty() ? s.out_dir / "dataset" : resolve(c, dir);

    s.fit.budget = get_count(c, "fit.budget");
    s.fit.fd_step = get_d(c, "fit.fd_step");
    s.fit.explore_fraction = get_d(c, "fit.explore_fraction");
    s.fit.solver = s.solver;
    const std::string method = c.get_string("fit.method", dflt("fit.method"));
    if (method == "lm") {
        s.fit.method = LocalMethod::kLevenbergMarquardt;
    } else if (method == "bfgs") {
        s.fit.method = LocalMethod::kBfgs;
    } else {
        throw Error("schema mismatch at fit.method: expected lm or bfgs, got '" + method + "'");
    }
    s.fit_starts = get_count(c, "fit.n_starts");
    if (s.fit_starts == 0 || s.fit.budget == 0) throw Error("schema mismatch at fit: n_starts and budget must be >= 1");

    const int d = static_cast<int>(KineticParams::kSize);
    s.ddl_spec = network_spec(c, "ddl", s.encoder.feature_count(), d);
    s.ddl_hyper = train_hyper(c, "ddl");
    s.cfm_spec = network_spec(c, "cfm", d + 1 + s.encoder.feature_count(), d);
    s.cfm_hyper.train = train_hyper(c, "cfm");
    s.cfm_hyper.draws_per_sample = static_cast<int>(get_i(c, "cfm.draws_per_sample"));
    s.cfm_hyper.validate();
    s.sampler.n_samples = static_cast<int>(get_i(c, "cfm.n_samples"));
    s.sampler.n_steps = static_cast<int>(get_i(c, "cfm.n_steps"));
    if (s.sampler.n_samples < 1 || s.sampler.n_steps < 1) {
        throw Error("schema mismatch at cfm: n_samples and n_steps must be >= 1");
    }

    s.eval_source = c.get_string("eval.source", dflt("eval.source"));
    if (s.eval_source != "test" && s.eval_source != "experiments") {
        throw Error("schema mismatch at eval.source: expected test or experiments");
    }
    s.eval_samples = get_count(c, "eval.n_samples");
    s.eval_methods = get_list(c, "eval.methods");
    for (const auto& m : s.eval_methods) {
        if (m != "regression" && m != "ddl" && m != "cfm") {
            throw Error("schema mismatch at eval.methods: unknown method '" + m + "'");
        }
    }
    for (const auto& p : get_list(c, "experiments")) s.experiments.push_back(resolve(c, p));
    if (!c.get_string("experiments.od_factor", "").empty()) s.od_factor = c.get_double("experiments.od_factor", 0);
    if (s.eval_source == "experiments" && s.experiments.empty()) {
        throw Error("schema mismatch at experiments: eval.source = experiments needs at least one file");
    }
    s.config_hash = c.hash();
    return s;
}

// ---------------------------------------------------------------------------
// Prediction tables

namespace {

std::string prediction_header() {
    std::string h = "id";
    for (const auto& n : param_names()) h += "," + n;
    return h;
}

} // namespace

std::string prediction_csv(const PredictionTable& table) {
    std::string out = prediction_header() + "\n";
    for (std::size_t i = 0; i < table.ids.size(); ++i) {
        out += table.ids[i];
        for (double v : table.params[i].to_array()) out += "," + csv::format_double(v);
        out += '\n';
    }
    return out;
}

PredictionTable read_prediction_csv(const fs::path& path) {
    std::istringstream in(csv::read_file(path));
    const std::string name = path.filename().string();
    std::string line;
    if (!std::getline(in, line) || csv::trim(line) != prediction_header()) {
        throw Error("schema mismatch in " + path.string() + ": header must be " + prediction_header());
    }
    PredictionTable t;
    while (std::getline(in, line)) {
        if (csv::trim(line).empty()) continue;
        const auto f = csv::split(csv::trim(line));
        if (f.size() != 1 + KineticParams::kSize) throw Error(name + " row " + std::to_string(t.ids.size()) + ": expected 9 fields");
        std::array<double, KineticParams::kSize> v{};
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = csv::parse_double(f[k + 1], name);
        t.ids.push_back(f[0]);
        t.params.push_back(KineticParams::from_array(v));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

struct Artifacts {
    const PipelineSettings& s;
    std::vector<std::string> written;

    void write(const fs::path& rel, const std::string& contents) {
        csv::write_file_atomic(s.out_dir / rel, contents);
        written.push_back(rel.generic_string());
    }

    void manifest(Command c) {
        std::sort(written.begin(), written.end());
        const nlohmann::json m = {{"format", "calib-manifest"},
                                  {"version", 1},
                                  {"tool_version", kToolVersion},
                                  {"command", to_string(c)},
                                  {"config_hash", s.config_hash},
                                  {"seed", s.seed},
                                  {"outputs", written}};
        csv::write_file_atomic(s.out_dir / "manifests" / (to_string(c) + ".json"), m.dump(2) + "\n");
    }
};

std::vector<EvalSample> evaluation_set(const PipelineSettings& s) {
    std::vector<EvalSample> out;
    if (s.eval_source == "experiments") {
        for (const auto& p : s.experiments) {
            ExperimentRecord r = load_experiment_csv(p, s.od_factor);
            for (const auto& e : out) {
                if (e.id == r.label) throw Error("duplicate experiment label '" + r.label + "'");
            }
            out.push_back({r.label, std::move(r.series), std::nullopt});
        }
        return out;
    }
    const Dataset ds = load_dataset(s.dataset_dir);
    const std::size_t n = s.eval_samples == 0 ? ds.test.size() : std::min(s.eval_samples, ds.test.size());
    if (n == 0) throw Error("evaluation set is empty: dataset has no test samples");
    char id[32];
    for (std::size_t i = 0; i < n; ++i) {
        std::snprintf(id, sizeof id, "test_%05zu", i);
        out.push_back({id, ds.test[i].observation, ds.test[i].params});
    }
    return out;
}

std::vector<SyntheticSample> training_set(const PipelineSettings& s) {
    Dataset ds = load_dataset(s.dataset_dir);
    if (ds.train.empty()) throw Error("dataset in " + s.dataset_dir.string() + " has no training samples");
    if (!(ds.config.bounds == s.bounds)) throw Error("dataset bounds differ from the configured bounds");
    return std::move(ds.train);
}

void check_ids(const PredictionTable& t, const std::vector<EvalSample>& samples, const std::string& what) {
    if (t.ids.size() != samples.size()) throw Error(what + " does not cover the evaluation set");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (t.ids[i] != samples[i].id) throw Error(what + " does not match the evaluation set at row " + std::to_string(i));
    }
}

void cmd_simulate(Artifacts& a) {
    const auto& s = a.s;
    const auto times = uniform_times(s.solver.horizon_h, s.simulate_dt);
    const Trajectory t = simulate(s.simulate_params, {s.simulate_x0, s.simulate_s0, 0.0}, times, s.solver);
    std::ostringstream out;
    write_trajectory_csv(out, t);
    a.write("simulation/trajectory.csv", out.str());
}

void cmd_generate(Artifacts& a) {
    const Dataset ds = generate_dataset(a.s.dataset);
    save_dataset(ds, a.s.dataset_dir);
    a.written.push_back((a.s.dataset_dir / "manifest.json").lexically_relative(a.s.out_dir).generic_string());
}

void cmd_fit(Artifacts& a) {
    const auto& s = a.s;
    const auto samples = evaluation_set(s);
    PredictionTable table;
    for (const auto& e : samples) {
        const FitResult f =
            fit_multistart(e.series, s.bounds, SseWeights::normalizing(e.series), s.fit_starts, s.seed, s.fit);
        a.write("regression/fits/" + e.id + ".json", fit_to_json(f).dump(1) + "\n");
        table.ids.push_back(e.id);
        table.params.push_back(f.params);
    }
    a.write("regression/predictions.csv", prediction_csv(table));
}

void cmd_train_ddl(Artifacts& a) {
    const auto& s = a.s;
    const DdlModel m = train_ddl(training_set(s), s.ddl_spec, s.ddl_hyper, s.seed, s.encoder, s.bounds);
    a.write("models/ddl.json", ddl_model_to_json(m).dump(1) + "\n");
}

void cmd_train_cfm(Artifacts& a) {
    const auto& s = a.s;
    const VelocityModel m = train_cfm(training_set(s), s.cfm_spec, s.cfm_hyper, s.seed, s.encoder, s.bounds);
    a.write("models/cfm.json", cfm_model_to_json(m).dump(1) + "\n");
}

bool wants(const PipelineSettings& s, const std::string& method) {
    return std::find(s.eval_methods.begin(), s.eval_methods.end(), method) != s.eval_methods.end();
}

void cmd_predict(Artifacts& a) {
    const auto& s = a.s;
    const auto samples = evaluation_set(s);
    if (wants(s, "ddl")) {
        const DdlModel m = load_ddl_model(s.out_dir / "models/ddl.json");
        PredictionTable t;
        std::string flags = "id,clipped\n";
        for (const auto& e : samples) {
            const auto p = predict_params(m, e.series);
            t.ids.push_back(e.id);
            t.params.push_back(p.params);
            flags += e.id + "," + (p.any_clipped() ? "1" : "0") + "\n";
        }
        a.write("ddl/predictions.csv", prediction_csv(t));
        a.write("ddl/clipping.csv", flags);
    }
    if (wants(s, "cfm")) {
        const VelocityModel m = load_cfm_model(s.out_dir / "models/cfm.json");
        PredictionTable t;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            SamplerOptions o = s.sampler;
            o.seed = s.seed + i;
            const PosteriorSamples post = sample_posterior(m, samples[i].series, o, samples[i].id);
            a.write("cfm/posteriors/" + samples[i].id + ".csv", posterior_csv(post));
            a.write("cfm/posteriors/" + samples[i].id + ".json", posterior_summary_json(post, m.bounds).dump(1) + "\n");
            t.ids.push_back(samples[i].id);
            t.params.push_back(point_estimate(post, m.bounds));
        }
        a.write("cfm/predictions.csv", prediction_csv(t));
    }
}

std::vector<MethodPredictions> load_method_predictions(const PipelineSettings& s,
                                                       const std::vector<EvalSample>& samples) {
    std::vector<MethodPredictions> methods;
    for (const auto& m : s.eval_methods) {
        const PredictionTable t = read_prediction_csv(s.out_dir / m / "predictions.csv");
        check_ids(t, samples, m + "/predictions.csv");
        methods.push_back({m, t.ids, t.params});
    }
    return methods;
}

void cmd_evaluate(Artifacts& a) {
    const auto& s = a.s;
    const auto samples = evaluation_set(s);
    const auto methods = load_method_predictions(s, samples);
    const ComparisonReport r = comparison_report(methods, samples, s.eval_source, s.solver);
    a.write("report/comparison.csv", r.to_csv());
    a.write("report/comparison.txt", r.to_text());
    std::string per = "id,method,X,S,P\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (const auto& m : r.methods) {
            const auto& t = m.per_sample[i];
            per += samples[i].id + "," + m.method + "," + csv::format_double(t.X) + "," + csv::format_double(t.S) +
                   "," + csv::format_double(t.P) + "\n";
        }
    }
    a.write("report/per_sample.csv", per);
}

void cmd_report(Artifacts& a) {
    const auto& s = a.s;
    const auto samples = evaluation_set(s);
    const auto methods = load_method_predictions(s, samples);

    std::string csv_out = "id,method";
    for (const auto& n : param_names()) csv_out += "," + n;
    csv_out += "\n";
    std::ostringstream txt;
    txt << "Parameter estimates\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-16s %-11s", "id", "method");
    txt << buf;
    for (const auto& n : param_names()) {
        std::snprintf(buf, sizeof buf, " %10s", n.c_str());
        txt << buf;
    }
    txt << "\n";
    const std::size_t shown = std::min<std::size_t>(samples.size(), 20);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (const auto& m : methods) {
            const auto v = m.params[i].to_array();
            csv_out += samples[i].id + "," + m.label;
            for (double x : v) csv_out += "," + csv::format_double(x);
            csv_out += "\n";
            if (i >= shown) continue;
            std::snprintf(buf, sizeof buf, "%-16s %-11s", samples[i].id.c_str(), m.label.c_str());
            txt << buf;
            for (double x : v) {
                std::snprintf(buf, sizeof buf, " %10.4g", x);
                txt << buf;
            }
            txt << "\n";
        }
    }
    if (shown < samples.size()) txt << "(" << samples.size() - shown << " more in parameters.csv)\n";

    if (wants(s, "cfm")) {
        txt << "\nCFM posterior spread (5% / 95% quantiles)\n";
        for (std::size_t i = 0; i < shown; ++i) {
            const fs::path p = s.out_dir / "cfm/posteriors" / (samples[i].id + ".json");
            const auto j = nlohmann::json::parse(csv::read_file(p));
            txt << samples[i].id << ":";
            for (const auto& par : j.at("parameters")) {
                if (!par.contains("q05")) continue;
                std::snprintf(buf, sizeof buf, " %s [%.4g, %.4g]", par.at("name").get<std::string>().c_str(),
                              par.at("q05").get<double>(), par.at("q95").get<double>());
                txt << buf;
            }
            txt << "\n";
        }
    }

    txt << "\n";
    txt << comparison_report(methods, samples, s.eval_source, s.solver).to_text();
    a.write("report/parameters.csv", csv_out);
    a.write("report/report.txt", txt.str());
}

} // namespace

void run_pipeline(const PipelineSettings& settings, Command command) {
    Artifacts a{settings, {}};
    switch (command) {
        case Command::kSimulate: cmd_simulate(a); break;
        case Command::kGenerate: cmd_generate(a); break;
        case Command::kFit: cmd_fit(a); break;
        case Command::kTrainDdl: cmd_train_ddl(a); break;
        case Command::kTrainCfm: cmd_train_cfm(a); break;
        case Command::kPredict: cmd_predict(a); break;
        case Command::kEvaluate: cmd_evaluate(a); break;
        case Command::kReport: cmd_report(a); break;
    }
    a.manifest(command);
}

} // namespace calib
