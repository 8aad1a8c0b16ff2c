#pragma once

// Experiment ingestion, run configuration and the command pipeline behind the
// `calib` executable.

#include "calib/cfm.hpp"
#include "calib/datagen.hpp"
#include "calib/ddl.hpp"
#include "calib/metrics.hpp"
#include "calib/regression.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace calib {

inline constexpr const char* kToolVersion = "0.1.0";

/// One measured (or stand-in) batch run. Optional metadata comes from
/// `# key = value` lines above the header.
struct ExperimentRecord {
    std::string label;
    ObservationSeries series;
    std::optional<double> volume_L;
    std::optional<double> aeration_vvm;
    std::optional<double> agitation_rpm;
    std::optional<double> od_factor;  ///< g/L per OD600 unit, when the file is in OD units
};

/// Reads `time_h,od600,S_gL,P_gL` or `time_h,X_gL,S_gL,P_gL`. An explicit
/// od_factor overrides one given in the file metadata.
ExperimentRecord load_experiment_csv(const std::filesystem::path& path,
                                     std::optional<double> od_factor = std::nullopt);

/// Flat `key = value` configuration; `#` starts a comment.
class RunConfig {
public:
    static RunConfig parse(const std::string& text, const std::string& origin = "config");
    static RunConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value);
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
    std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback) const;

    /// Sorted `key = value` lines; parse(to_text()) reproduces the config.
    std::string to_text() const;
    /// FNV-1a 64 of to_text(), as 16 hex digits.
    std::string hash() const;

    /// Directory that relative paths in the config are resolved against.
    std::filesystem::path base_dir;

    friend bool operator==(const RunConfig& a, const RunConfig& b) { return a.values_ == b.values_; }

private:
    std::map<std::string, std::string> values_;
};

/// Every key the pipeline understands, with its default.
const std::map<std::string, std::string>& known_config_keys();

enum class Command { kSimulate, kGenerate, kFit, kTrainDdl, kTrainCfm, kPredict, kEvaluate, kReport };

Command command_from_string(const std::string& s);
std::string to_string(Command c);

/// Typed view of a RunConfig.
struct PipelineSettings {
    std::filesystem::path out_dir;
    std::uint64_t seed = 42;
    SolverConfig solver;
    ParamBounds bounds;
    EncoderConfig encoder;

    KineticParams simulate_params;
    double simulate_x0 = 0.129;
    double simulate_s0 = 50.0;
    double simulate_dt = 0.5;

    DatasetConfig dataset;
    std::filesystem::path dataset_dir;

    FitOptions fit;
    std::size_t fit_starts = 8;

    nn::MlpSpec ddl_spec;
    TrainHyper ddl_hyper;
    nn::MlpSpec cfm_spec;
    CfmHyper cfm_hyper;
    SamplerOptions sampler;

    std::string eval_source = "test";  ///< "test" or "experiments"
    std::size_t eval_samples = 500;    ///< leading test samples; 0 = all
    std::vector<std::string> eval_methods;
    std::vector<std::filesystem::path> experiments;
    std::optional<double> od_factor;

    std::string config_hash;
};

/// Throws "schema mismatch at <key>: ..." on malformed values.
PipelineSettings settings_from_config(const RunConfig& config);

/// Runs one command; artifacts go under settings.out_dir. Throws on failure.
void run_pipeline(const PipelineSettings& settings, Command command);

/// Prediction tables: `id,k_d,mu_m,K_S,Y_inv,k_p,tau_S,K_PS,K_X`.
struct PredictionTable {
    std::vector<std::string> ids;
    std::vector<KineticParams> params;

    friend bool operator==(const PredictionTable&, const PredictionTable&) = default;
};
std::string prediction_csv(const PredictionTable& table);
PredictionTable read_prediction_csv(const std::filesystem::path& path);

} // namespace calib
