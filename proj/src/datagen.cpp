#include "calib/datagen.hpp"

#include "calib/csv.hpp"
#include "calib/error.hpp"
#include "calib/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

namespace calib {

ParamBounds ParamBounds::defaults() {
    return {{1e-3, 0.1, 10.0, 0.1, 5e-3, 10.0, 50.0, 30.0},
            {1e-2, 1.0, 100.0, 10.0, 0.3, 50.0, 70.0, 100.0}};
}

void ParamBounds::validate() const {
    const auto lo = lower.to_array();
    const auto hi = upper.to_array();
    for (std::size_t i = 0; i < lo.size(); ++i) {
        if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || !(lo[i] < hi[i]) || !(lo[i] > 0.0)) {
            throw Error("invalid bounds for " + param_names()[i]);
        }
    }
}

bool ParamBounds::contains(const KineticParams& p) const {
    const auto v = p.to_array();
    const auto lo = lower.to_array();
    const auto hi = upper.to_array();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(v[i] >= lo[i] && v[i] <= hi[i])) return false;
    }
    return true;
}

KineticParams ParamBounds::midpoint() const {
    const auto lo = lower.to_array();
    const auto hi = upper.to_array();
    std::array<double, KineticParams::kSize> m{};
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::lerp(lo[i], hi[i], 0.5);
    return KineticParams::from_array(m);
}

KineticParams ParamBounds::clip(const KineticParams& p) const {
    auto v = p.to_array();
    const auto lo = lower.to_array();
    const auto hi = upper.to_array();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp(v[i], lo[i], hi[i]);
    return KineticParams::from_array(v);
}

// ---------------------------------------------------------------------------

ModelState ObservationSeries::initial_state() const {
    return {x0, s0, P.empty() ? 0.0 : P.front()};
}

void ObservationSeries::validate() const {
    const std::size_t n = times.size();
    if (X.size() != n || S.size() != n || P.size() != n) throw Error("observation arrays differ in length");
    if (n < 2) throw Error("too short");
    if (times.front() != 0.0) throw Error("observation times must start at 0");
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && !(times[i] > times[i - 1])) throw Error("unsorted times at row " + std::to_string(i));
        for (double v : {times[i], X[i], S[i], P[i]}) {
            if (!std::isfinite(v) || v < 0.0) throw Error("invalid value at row " + std::to_string(i));
        }
    }
    if (!std::isfinite(s0) || s0 < 0.0 || !std::isfinite(x0) || x0 < 0.0) throw Error("invalid initial state");
}

ObservationSeries ObservationSeries::from_trajectory(const Trajectory& traj) {
    ObservationSeries s;
    s.times = traj.times;
    s.X.reserve(traj.states.size());
    s.S.reserve(traj.states.size());
    s.P.reserve(traj.states.size());
    for (const auto& st : traj.states) {
        s.X.push_back(st.X);
        s.S.push_back(st.S);
        s.P.push_back(st.P);
    }
    s.x0 = traj.initial_state.X;
    s.s0 = traj.initial_state.S;
    return s;
}

void DatasetConfig::validate() const {
    if (n_train + n_test > n_total) throw Error("n_train + n_test exceeds n_total");
    if (n_total == 0) throw Error("empty design");
    bounds.validate();
    if (!(s0_low <= s0_high) || !(s0_low >= 0.0)) throw Error("invalid initial substrate range");
    if (!(x0 >= 0.0)) throw Error("invalid initial biomass");
    if (time_policy.min_points < 1 || time_policy.max_points < time_policy.min_points) {
        throw Error("invalid time policy point counts");
    }
    if (!(time_policy.horizon_h > 0.0) || time_policy.horizon_h > solver.horizon_h) {
        throw Error("time policy horizon must lie within the solver horizon");
    }
    if (!(noise_rel_sd >= 0.0)) throw Error("noise_rel_sd must be >= 0");
    solver.validate();
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd latin_hypercube(std::size_t n, std::size_t d, std::uint64_t seed) {
    if (n == 0 || d == 0) throw Error("empty design");
    Rng rng = make_rng(seed, streams::kLhs);
    std::uniform_real_distribution<double> jitter(0.0, 1.0);
    Eigen::MatrixXd design(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    std::vector<std::size_t> perm(n);
    const double dn = static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t i = 0; i < n; ++i) {
            const double k = static_cast<double>(perm[i]);
            double v = (k + jitter(rng)) / dn;
            // Rounding must not push a point across its stratum edge.
            while (v * dn >= k + 1.0) v = std::nextafter(v, 0.0);
            while (v * dn < k) v = std::nextafter(v, 1.0);
            design(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    }
    return design;
}

KineticParams denormalize_params(std::span<const double> u, const ParamBounds& bounds) {
    if (u.size() != KineticParams::kSize) throw Error("expected 8 normalized parameters");
    const auto lo = bounds.lower.to_array();
    const auto hi = bounds.upper.to_array();
    std::array<double, KineticParams::kSize> v{};
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(u[i] >= 0.0 && u[i] <= 1.0)) throw Error("out of unit cube");
        v[i] = std::lerp(lo[i], hi[i], u[i]);
    }
    return KineticParams::from_array(v);
}

std::array<double, KineticParams::kSize> normalize_params(const KineticParams& p, const ParamBounds& bounds) {
    const auto v = p.to_array();
    const auto lo = bounds.lower.to_array();
    const auto hi = bounds.upper.to_array();
    std::array<double, KineticParams::kSize> u{};
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = (v[i] - lo[i]) / (hi[i] - lo[i]);
    return u;
}

std::vector<double> draw_observation_times(const TimePolicy& policy, Rng& rng) {
    std::uniform_int_distribution<int> count_dist(policy.min_points, policy.max_points);
    std::uniform_real_distribution<double> time_dist(0.0, policy.horizon_h);
    const int count = count_dist(rng);
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(count) + 1);
    times.push_back(0.0);
    while (times.size() < static_cast<std::size_t>(count) + 1) {
        const double t = time_dist(rng);
        if (t <= 0.0 || std::find(times.begin(), times.end(), t) != times.end()) continue;
        times.push_back(t);
    }
    std::sort(times.begin(), times.end());
    return times;
}

namespace {

SyntheticSample make_sample(const DatasetConfig& config, const Eigen::MatrixXd& design, std::size_t index) {
    const auto row = static_cast<Eigen::Index>(index);
    std::array<double, KineticParams::kSize> u{};
    for (std::size_t k = 0; k < u.size(); ++k) u[k] = design(row, static_cast<Eigen::Index>(k));
    SyntheticSample sample;
    sample.params = denormalize_params(u, config.bounds);
    const double s0 = std::lerp(config.s0_low, config.s0_high, design(row, 8));
    const ModelState initial{config.x0, s0, 0.0};

    Rng rng = make_rng(config.seed, streams::kTimeGrid, index);
    Trajectory traj;
    bool ok = false;
    for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
        const auto times = draw_observation_times(config.time_policy, rng);
        try {
            traj = simulate(sample.params, initial, times, config.solver);
            ok = true;
        } catch (const DivergenceError&) {
        }
    }
    if (!ok) throw Error("degenerate sample " + std::to_string(index));
    sample.observation = ObservationSeries::from_trajectory(traj);

    if (config.noise_rel_sd > 0.0) {
        Rng noise_rng = make_rng(config.seed, streams::kNoise, index);
        std::normal_distribution<double> z(0.0, config.noise_rel_sd);
        auto& obs = sample.observation;
        for (std::size_t i = 1; i < obs.size(); ++i) {
            obs.X[i] = std::max(0.0, obs.X[i] * (1.0 + z(noise_rng)));
            obs.S[i] = std::max(0.0, obs.S[i] * (1.0 + z(noise_rng)));
            obs.P[i] = std::max(0.0, obs.P[i] * (1.0 + z(noise_rng)));
        }
    }
    return sample;
}

} // namespace

Dataset generate_dataset(const DatasetConfig& config) {
    config.validate();
    // One joint 9-D design: eight parameters plus the initial substrate.
    const Eigen::MatrixXd design = latin_hypercube(config.n_total, KineticParams::kSize + 1, config.seed);
    Dataset ds;
    ds.config = config;
    ds.train.reserve(config.n_train);
    ds.test.reserve(config.n_test);
    for (std::size_t i = 0; i < config.n_train; ++i) ds.train.push_back(make_sample(config, design, i));
    for (std::size_t i = 0; i < config.n_test; ++i) ds.test.push_back(make_sample(config, design, config.n_train + i));
    return ds;
}

// ---------------------------------------------------------------------------

void write_series_csv(std::ostream& out, const ObservationSeries& s) {
    out << "time_h,X_gL,S_gL,P_gL\n";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out << csv::format_double(s.times[i]) << ',' << csv::format_double(s.X[i]) << ','
            << csv::format_double(s.S[i]) << ',' << csv::format_double(s.P[i]) << '\n';
    }
}

namespace {

ObservationSeries parse_series(const std::string& text, const std::string& name) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || csv::trim(line) != "time_h,X_gL,S_gL,P_gL") {
        throw Error("schema mismatch: " + name + " must start with header time_h,X_gL,S_gL,P_gL");
    }
    ObservationSeries s;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (csv::trim(line).empty()) continue;
        const auto f = csv::split(line);
        if (f.size() != 4) throw Error(name + ": expected 4 columns at row " + std::to_string(row));
        const std::string ctx = name + " row " + std::to_string(row);
        s.times.push_back(csv::parse_double(f[0], ctx));
        s.X.push_back(csv::parse_double(f[1], ctx));
        s.S.push_back(csv::parse_double(f[2], ctx));
        s.P.push_back(csv::parse_double(f[3], ctx));
    }
    if (!s.times.empty()) {
        s.x0 = s.X.front();
        s.s0 = s.S.front();
    }
    return s;
}

std::string sample_file_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%05zu.csv", index);
    return buf;
}

const char* kParamsHeader = "index,k_d,mu_m,K_S,Y_inv,k_p,tau_S,K_PS,K_X,S0";

} // namespace

ObservationSeries read_series_csv(const std::filesystem::path& path) {
    auto s = parse_series(csv::read_file(path), path.filename().string());
    s.validate();
    return s;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = {{"format", "calib-dataset"}, {"version", 1}, {"config", ds.config}};
    csv::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");

    std::ostringstream params;
    params << kParamsHeader << '\n';
    std::size_t index = 0;
    for (const auto* part : {&ds.train, &ds.test}) {
        for (const auto& sample : *part) {
            params << index;
            for (double v : sample.params.to_array()) params << ',' << csv::format_double(v);
            params << ',' << csv::format_double(sample.observation.s0) << '\n';
            std::ostringstream series;
            write_series_csv(series, sample.observation);
            csv::write_file_atomic(dir / sample_file_name(index), series.str());
            ++index;
        }
    }
    csv::write_file_atomic(dir / "params.csv", params.str());
}

Dataset load_dataset(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(csv::read_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw Error("schema mismatch in " + (dir / "manifest.json").string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "calib-dataset") throw Error("schema mismatch: manifest.format");
    Dataset ds;
    ds.config = require_field<DatasetConfig>(manifest, "config", "manifest");

    std::istringstream params(csv::read_file(dir / "params.csv"));
    std::string line;
    if (!std::getline(params, line) || csv::trim(line) != kParamsHeader) {
        throw Error("schema mismatch: params.csv header must be " + std::string(kParamsHeader));
    }
    const std::size_t expected = ds.config.n_train + ds.config.n_test;
    std::size_t index = 0;
    while (std::getline(params, line)) {
        if (csv::trim(line).empty()) continue;
        const auto f = csv::split(line);
        const std::string ctx = "params.csv row " + std::to_string(index + 1);
        if (f.size() != 10) throw Error(ctx + ": expected 10 columns");
        if (csv::parse_double(f[0], ctx) != static_cast<double>(index)) throw Error(ctx + ": index out of order");
        std::array<double, KineticParams::kSize> v{};
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = csv::parse_double(f[k + 1], ctx);
        SyntheticSample sample;
        sample.params = KineticParams::from_array(v);
        const auto name = sample_file_name(index);
        sample.observation = parse_series(csv::read_file(dir / name), name);
        sample.observation.s0 = csv::parse_double(f[9], ctx);
        sample.observation.x0 = ds.config.x0;
        sample.observation.validate();
        (index < ds.config.n_train ? ds.train : ds.test).push_back(std::move(sample));
        ++index;
    }
    if (index != expected) {
        throw Error("dataset " + dir.string() + " lists " + std::to_string(index) + " samples, manifest expects " +
                    std::to_string(expected));
    }
    return ds;
}

} // namespace calib
