#pragma once

// JSON mappings for the configuration-like types. Numbers go through
// nlohmann::json, which prints doubles in shortest round-trip form.

#include "calib/datagen.hpp"
#include "calib/dde_core.hpp"
#include "calib/error.hpp"

#include <json.hpp>

namespace calib {

void to_json(nlohmann::json& j, const KineticParams& p);
void from_json(const nlohmann::json& j, KineticParams& p);

void to_json(nlohmann::json& j, const ParamBounds& b);
void from_json(const nlohmann::json& j, ParamBounds& b);

void to_json(nlohmann::json& j, const SolverConfig& c);
void from_json(const nlohmann::json& j, SolverConfig& c);

void to_json(nlohmann::json& j, const TimePolicy& t);
void from_json(const nlohmann::json& j, TimePolicy& t);

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

std::string to_string(ModelVariant v);
ModelVariant model_variant_from_string(const std::string& s);

/// Reads `key` from `j`, rethrowing type/missing errors with the field path.
template <typename T>
T require_field(const nlohmann::json& j, const std::string& key, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) throw Error("schema mismatch: missing field " + path + "." + key);
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("schema mismatch at " + path + "." + key + ": " + e.what());
    }
}

} // namespace calib
