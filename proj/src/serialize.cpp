#include "calib/serialize.hpp"

#include "calib/error.hpp"

namespace calib {

void to_json(nlohmann::json& j, const KineticParams& p) {
    j = nlohmann::json::object();
    const auto v = p.to_array();
    for (std::size_t i = 0; i < v.size(); ++i) j[param_names()[i]] = v[i];
}

void from_json(const nlohmann::json& j, KineticParams& p) {
    std::array<double, KineticParams::kSize> v{};
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = require_field<double>(j, param_names()[i], "params");
    p = KineticParams::from_array(v);
}

void to_json(nlohmann::json& j, const ParamBounds& b) {
    j = {{"lower", b.lower}, {"upper", b.upper}};
}

void from_json(const nlohmann::json& j, ParamBounds& b) {
    b.lower = require_field<KineticParams>(j, "lower", "bounds");
    b.upper = require_field<KineticParams>(j, "upper", "bounds");
    b.validate();
}

std::string to_string(ModelVariant v) {
    return v == ModelVariant::kGrowthTimesX ? "growth-times-x" : "as-printed";
}

ModelVariant model_variant_from_string(const std::string& s) {
    if (s == "as-printed") return ModelVariant::kAsPrinted;
    if (s == "growth-times-x") return ModelVariant::kGrowthTimesX;
    throw Error("unknown model variant '" + s + "'");
}

void to_json(nlohmann::json& j, const SolverConfig& c) {
    j = {{"step_h", c.step_h},
         {"horizon_h", c.horizon_h},
         {"variant", to_string(c.variant)},
         {"aligned_breakpoints", c.aligned_breakpoints}};
}

void from_json(const nlohmann::json& j, SolverConfig& c) {
    c.step_h = require_field<double>(j, "step_h", "solver");
    c.horizon_h = require_field<double>(j, "horizon_h", "solver");
    c.variant = model_variant_from_string(require_field<std::string>(j, "variant", "solver"));
    c.aligned_breakpoints = require_field<int>(j, "aligned_breakpoints", "solver");
    c.validate();
}

void to_json(nlohmann::json& j, const TimePolicy& t) {
    j = {{"min_points", t.min_points}, {"max_points", t.max_points}, {"horizon_h", t.horizon_h}};
}

void from_json(const nlohmann::json& j, TimePolicy& t) {
    t.min_points = require_field<int>(j, "min_points", "time_policy");
    t.max_points = require_field<int>(j, "max_points", "time_policy");
    t.horizon_h = require_field<double>(j, "horizon_h", "time_policy");
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
    j = {{"counts", {{"total", c.n_total}, {"train", c.n_train}, {"test", c.n_test}}},
         {"bounds", c.bounds},
         {"s0_range", {c.s0_low, c.s0_high}},
         {"x0", c.x0},
         {"time_policy", c.time_policy},
         {"solver", c.solver},
         {"noise_rel_sd", c.noise_rel_sd},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
    const auto counts = require_field<nlohmann::json>(j, "counts", "manifest");
    c.n_total = require_field<std::size_t>(counts, "total", "manifest.counts");
    c.n_train = require_field<std::size_t>(counts, "train", "manifest.counts");
    c.n_test = require_field<std::size_t>(counts, "test", "manifest.counts");
    c.bounds = require_field<ParamBounds>(j, "bounds", "manifest");
    const auto range = require_field<std::vector<double>>(j, "s0_range", "manifest");
    if (range.size() != 2) throw Error("schema mismatch at manifest.s0_range: expected 2 values");
    c.s0_low = range[0];
    c.s0_high = range[1];
    c.x0 = require_field<double>(j, "x0", "manifest");
    c.time_policy = require_field<TimePolicy>(j, "time_policy", "manifest");
    c.solver = require_field<SolverConfig>(j, "solver", "manifest");
    c.noise_rel_sd = require_field<double>(j, "noise_rel_sd", "manifest");
    c.seed = require_field<std::uint64_t>(j, "seed", "manifest");
}

} // namespace calib
