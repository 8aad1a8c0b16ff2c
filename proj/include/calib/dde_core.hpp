#pragma once

// Three-state delay differential model of batch itaconic-acid fermentation:
//
//   dX/dt = -k_d X + mu_m S/(S+K_S)                        (growth, as printed)
//   dS/dt = -Y_XS_inv mu_m S/(S+K_S) X
//   dP/dt =  k_p S(t-tau_S)/(S(t-tau_S)+K_PS) X/(X+K_X)
//
// with constant initial history equal to the initial state. Integration is
// classical RK4 by the method of steps; the delayed substrate is read back
// from a cubic Hermite dense output of already-computed steps.

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace calib {

/// Kinetic parameter vector in the fixed order
/// (k_d, mu_m, K_S, Y_XS_inv, k_p, tau_S, K_PS, K_X).
struct KineticParams {
    double k_d = 0.0;       ///< death rate [1/h]
    double mu_m = 0.0;      ///< maximum specific growth rate [1/h]
    double K_S = 0.0;       ///< growth half-saturation [g/L]
    double Y_XS_inv = 0.0;  ///< inverse biomass yield on substrate [L/g]
    double k_p = 0.0;       ///< product formation coefficient [g/(L h)]
    double tau_S = 0.0;     ///< metabolic delay [h]
    double K_PS = 0.0;      ///< product half-saturation on delayed substrate [g/L]
    double K_X = 0.0;       ///< product half-saturation on biomass [g/L]

    static constexpr std::size_t kSize = 8;

    std::array<double, kSize> to_array() const;
    static KineticParams from_array(std::span<const double> v);

    /// Throws unless every field is finite and positive.
    void validate() const;

    friend bool operator==(const KineticParams&, const KineticParams&) = default;
};

/// Column names in the canonical order, matching the dataset/param files.
const std::array<std::string, KineticParams::kSize>& param_names();
/// Units in the canonical order.
const std::array<std::string, KineticParams::kSize>& param_units();

struct ModelState {
    double X = 0.0;  ///< biomass [g/L]
    double S = 0.0;  ///< glucose [g/L]
    double P = 0.0;  ///< itaconic acid [g/L]

    friend bool operator==(const ModelState&, const ModelState&) = default;
};

struct Rates {
    double dX = 0.0;
    double dS = 0.0;
    double dP = 0.0;
};

enum class ModelVariant {
    kAsPrinted,     ///< growth term without a biomass factor
    kGrowthTimesX,  ///< growth term multiplied by X (sensitivity studies)
};

struct SolverConfig {
    double step_h = 0.05;
    double horizon_h = 140.0;
    /// Return the internal step grid (states and derivatives) with the trajectory.
    bool dense_output = false;
    ModelVariant variant = ModelVariant::kAsPrinted;
    /// Number of delay multiples k*tau_S the step grid is aligned to.
    int aligned_breakpoints = 3;

    void validate() const;

    friend bool operator==(const SolverConfig&, const SolverConfig&) = default;
};

/// One accepted integration step of the dense output.
struct DenseStep {
    double t = 0.0;
    ModelState state;
    Rates deriv;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<ModelState> states;
    ModelState initial_state;
    /// Internal steps, only filled when SolverConfig::dense_output is set.
    std::vector<DenseStep> dense;
};

/// Right-hand side of the model. S and X are clamped at zero inside the
/// saturation ratios; the returned rates are otherwise the raw formulas.
Rates rates(const ModelState& state, double delayed_S, const KineticParams& params,
            ModelVariant variant = ModelVariant::kAsPrinted);

/// Growing record of accepted steps; answers delayed substrate lookups.
class DelayHistory {
public:
    explicit DelayHistory(const ModelState& initial);

    void append(const DenseStep& step);

    /// S(t): initial S for t <= 0, cubic Hermite between stored steps otherwise.
    /// Throws "future lookup" past the integration front.
    double substrate_at(double t) const;

    /// Full Hermite-interpolated state at t in [0, front()].
    ModelState state_at(double t) const;

    double front() const { return steps_.back().t; }
    const ModelState& initial() const { return initial_; }
    const std::vector<DenseStep>& steps() const { return steps_; }

private:
    std::size_t bracket(double t) const;

    ModelState initial_;
    std::vector<DenseStep> steps_;
};

/// Integrates the model and samples it at output_times (sorted, first element
/// 0, all within [0, horizon_h]). Returned concentrations are finite and >= 0.
/// Throws DivergenceError if the state becomes non-finite.
Trajectory simulate(const KineticParams& params, const ModelState& initial,
                    std::span<const double> output_times, const SolverConfig& config = {});

/// Convenience grid 0, dt, 2dt, ..., horizon.
std::vector<double> uniform_times(double horizon_h, double dt);

void write_trajectory_csv(std::ostream& out, const Trajectory& traj);

} // namespace calib
