#pragma once

// Normalized RMSE, sqrt(mean((y - y_hat)^2)) / (max y - min y), in parameter
// and trajectory space, and per-method comparison tables.

#include "calib/datagen.hpp"
#include "calib/dde_core.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace calib {

/// Throws "zero range" for constant y and on length mismatch or fewer than 2 points.
double nrmse(std::span<const double> y, std::span<const double> y_hat);

/// Per-component nrmse across a sample set; the range is taken over the truths.
std::array<double, KineticParams::kSize> parameter_nrmse(std::span<const KineticParams> predictions,
                                                         std::span<const KineticParams> truths);

struct SpeciesTriple {
    double X = 0.0;
    double S = 0.0;
    double P = 0.0;

    friend bool operator==(const SpeciesTriple&, const SpeciesTriple&) = default;
};

/// Re-simulates `predicted` at sample.times from the sample's initial state.
SpeciesTriple trajectory_nrmse(const KineticParams& predicted, const ObservationSeries& sample,
                               const SolverConfig& solver = {});

/// Per-species median over a set of triples.
SpeciesTriple median_triple(std::span<const SpeciesTriple> triples);

struct EvalSample {
    std::string id;
    ObservationSeries series;
    std::optional<KineticParams> truth;
};

struct MethodPredictions {
    std::string label;
    std::vector<std::string> ids;
    std::vector<KineticParams> params;
};

struct MetricReport {
    std::string method;
    std::string dataset;
    std::size_t n_samples = 0;
    /// Only when every sample carries a known truth.
    std::optional<std::array<double, KineticParams::kSize>> parameter_nrmse;
    /// Median over samples; the single value when there is one sample.
    SpeciesTriple trajectory;
    std::vector<SpeciesTriple> per_sample;
};

struct ComparisonReport {
    std::vector<MetricReport> methods;

    /// Species (then parameters, when known) as rows, methods as columns.
    std::string to_csv() const;
    std::string to_text() const;
};

ComparisonReport comparison_report(std::span<const MethodPredictions> methods, std::span<const EvalSample> samples,
                                   const std::string& dataset_id, const SolverConfig& solver = {});

} // namespace calib
