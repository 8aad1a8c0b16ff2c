#pragma once

// Synthetic training data: Latin hypercube designs over the parameter box and
// the initial substrate, simulated at random observation times.

#include "calib/dde_core.hpp"
#include "calib/random.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace calib {

struct ParamBounds {
    KineticParams lower;
    KineticParams upper;

    /// Admissible box used for regression, data generation and normalization.
    static ParamBounds defaults();

    void validate() const;
    bool contains(const KineticParams& p) const;
    KineticParams midpoint() const;
    KineticParams clip(const KineticParams& p) const;

    friend bool operator==(const ParamBounds&, const ParamBounds&) = default;
};

/// Measured (or simulated) concentration profile eta = (t, X, S, P).
struct ObservationSeries {
    std::vector<double> times;
    std::vector<double> X;
    std::vector<double> S;
    std::vector<double> P;
    double s0 = 0.0;  ///< initial substrate [g/L]
    double x0 = 0.0;  ///< initial biomass [g/L]

    std::size_t size() const { return times.size(); }
    double duration() const { return times.empty() ? 0.0 : times.back(); }
    ModelState initial_state() const;

    /// Throws unless arrays agree, have >= 2 points, start at t = 0, are
    /// strictly increasing in time, and hold finite non-negative values.
    void validate() const;

    static ObservationSeries from_trajectory(const Trajectory& traj);

    friend bool operator==(const ObservationSeries&, const ObservationSeries&) = default;
};

struct SyntheticSample {
    KineticParams params;
    ObservationSeries observation;

    friend bool operator==(const SyntheticSample&, const SyntheticSample&) = default;
};

struct TimePolicy {
    int min_points = 8;    ///< random observation times per sample, excluding t = 0
    int max_points = 16;
    double horizon_h = 140.0;

    friend bool operator==(const TimePolicy&, const TimePolicy&) = default;
};

struct DatasetConfig {
    std::size_t n_total = 10000;
    std::size_t n_train = 5000;
    std::size_t n_test = 2000;
    ParamBounds bounds = ParamBounds::defaults();
    double s0_low = 50.0;
    double s0_high = 60.0;
    double x0 = 0.129;  ///< 0.5 OD600 x 0.2578 g/L per OD unit
    TimePolicy time_policy;
    SolverConfig solver;
    /// Standard deviation of multiplicative Gaussian noise; 0 disables it.
    double noise_rel_sd = 0.0;
    std::uint64_t seed = 42;

    void validate() const;

    friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct Dataset {
    std::vector<SyntheticSample> train;
    std::vector<SyntheticSample> test;
    DatasetConfig config;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// n x d design with exactly one point per stratum [k/n, (k+1)/n) in every column.
Eigen::MatrixXd latin_hypercube(std::size_t n, std::size_t d, std::uint64_t seed);

/// Linear map from the unit cube onto the bounds; exact at both ends.
KineticParams denormalize_params(std::span<const double> u, const ParamBounds& bounds);
std::array<double, KineticParams::kSize> normalize_params(const KineticParams& p, const ParamBounds& bounds);

/// Random observation grid: t = 0 followed by a sorted draw in (0, horizon].
std::vector<double> draw_observation_times(const TimePolicy& policy, Rng& rng);

Dataset generate_dataset(const DatasetConfig& config);

// Files: <dir>/manifest.json, <dir>/params.csv, <dir>/sample_NNNNN.csv.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

void write_series_csv(std::ostream& out, const ObservationSeries& series);
/// Reads a `time_h,X_gL,S_gL,P_gL` file; s0/x0 are taken from the first row.
ObservationSeries read_series_csv(const std::filesystem::path& path);

} // namespace calib
