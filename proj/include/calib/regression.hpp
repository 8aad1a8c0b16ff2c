#pragma once

// Benchmark estimator: bounded multistart minimization of the weighted sum of
// squared errors between simulated and observed concentrations.

#include "calib/datagen.hpp"
#include "calib/dde_core.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace calib {

struct SseWeights {
    double w_X = 1.0;
    double w_S = 1.0;
    double w_P = 1.0;

    /// w_q = 1 / range(q)^2 per species, range floored at 1e-6.
    static SseWeights normalizing(const ObservationSeries& data);
    void validate() const;
};

/// Value returned in place of the SSE when the simulation diverges.
inline constexpr double kDivergencePenalty = 1e12;

/// Weighted SSE at data.times; kDivergencePenalty when the solver diverges.
double sse_objective(const KineticParams& params, const ObservationSeries& data, const SseWeights& weights,
                     const SolverConfig& solver = {});

enum class LocalMethod {
    kLevenbergMarquardt,  ///< projected, Gauss-Newton model from the residual Jacobian
    kBfgs,                ///< projected BFGS with backtracking line search
};

struct FitOptions {
    /// Forward simulations allowed per local solve.
    std::size_t budget = 125;
    /// Central-difference step in normalized coordinates.
    double fd_step = 1e-6;
    LocalMethod method = LocalMethod::kLevenbergMarquardt;
    /// Share of each start's budget spent before the best start is continued
    /// with the leftover multistart budget. 1 runs every start to its full budget.
    double explore_fraction = 1.0;
    SolverConfig solver;
};

struct StartRecord {
    KineticParams start;
    double start_sse = 0.0;
    KineticParams params;
    double sse = 0.0;
    std::size_t simulations = 0;
    bool converged = false;
};

struct FitResult {
    KineticParams params;
    double sse = 0.0;
    std::size_t n_starts = 0;
    std::size_t n_simulations = 0;
    bool converged = false;
    /// At least one evaluation diverged and was replaced by the penalty.
    bool penalized = false;
    std::vector<StartRecord> per_start_records;
};

FitResult fit_single_start(const KineticParams& start, const ObservationSeries& data, const ParamBounds& bounds,
                           const SseWeights& weights, const FitOptions& options = {});

/// Latin hypercube starts over the bounds; returns the lowest-SSE fit (ties go
/// to the lowest start index). Throws "no feasible fit" if every start diverges.
FitResult fit_multistart(const ObservationSeries& data, const ParamBounds& bounds, const SseWeights& weights,
                         std::size_t n_starts = 8, std::uint64_t seed = 1, const FitOptions& options = {});

nlohmann::json fit_to_json(const FitResult& fit);
FitResult fit_from_json(const nlohmann::json& j);

} // namespace calib
