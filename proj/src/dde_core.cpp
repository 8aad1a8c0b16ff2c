#include "calib/dde_core.hpp"

#include "calib/csv.hpp"
#include "calib/error.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace calib {

std::array<double, KineticParams::kSize> KineticParams::to_array() const {
    return {k_d, mu_m, K_S, Y_XS_inv, k_p, tau_S, K_PS, K_X};
}

KineticParams KineticParams::from_array(std::span<const double> v) {
    if (v.size() != kSize) {
        throw Error("expected " + std::to_string(kSize) + " parameters, got " + std::to_string(v.size()));
    }
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
}

void KineticParams::validate() const {
    const auto v = to_array();
    for (std::size_t i = 0; i < kSize; ++i) {
        if (!std::isfinite(v[i]) || v[i] <= 0.0) {
            throw Error("invalid parameter " + param_names()[i] + " = " + csv::format_double(v[i]));
        }
    }
}

const std::array<std::string, KineticParams::kSize>& param_names() {
    static const std::array<std::string, KineticParams::kSize> names = {
        "k_d", "mu_m", "K_S", "Y_inv", "k_p", "tau_S", "K_PS", "K_X"};
    return names;
}

const std::array<std::string, KineticParams::kSize>& param_units() {
    static const std::array<std::string, KineticParams::kSize> units = {
        "1/h", "1/h", "g/L", "L/g", "g/(L h)", "h", "g/L", "g/L"};
    return units;
}

void SolverConfig::validate() const {
    if (!(step_h > 0.0) || !std::isfinite(step_h)) throw Error("solver step_h must be positive");
    if (!(horizon_h >= step_h) || !std::isfinite(horizon_h)) throw Error("solver horizon_h must be >= step_h");
    if (aligned_breakpoints < 0) throw Error("aligned_breakpoints must be >= 0");
}

Rates rates(const ModelState& y, double delayed_S, const KineticParams& p, ModelVariant variant) {
    if (!std::isfinite(y.X) || !std::isfinite(y.S) || !std::isfinite(y.P) || !std::isfinite(delayed_S)) {
        throw Error("non-finite state");
    }
    const double X = std::max(y.X, 0.0);
    const double S = std::max(y.S, 0.0);
    const double Sd = std::max(delayed_S, 0.0);

    const double monod_S = S > 0.0 ? S / (S + p.K_S) : 0.0;
    const double growth = p.mu_m * monod_S;
    const double monod_Sd = Sd > 0.0 ? Sd / (Sd + p.K_PS) : 0.0;
    const double monod_X = X > 0.0 ? X / (X + p.K_X) : 0.0;

    Rates r;
    r.dX = -p.k_d * y.X + (variant == ModelVariant::kGrowthTimesX ? growth * X : growth);
    r.dS = -p.Y_XS_inv * growth * X;
    r.dP = p.k_p * monod_Sd * monod_X;
    return r;
}

// ---------------------------------------------------------------------------

namespace {

double hermite(double theta, double h, double ya, double fa, double yb, double fb) {
    const double t2 = theta * theta;
    const double t3 = t2 * theta;
    const double h10 = t3 - 2.0 * t2 + theta;
    const double h01 = -2.0 * t3 + 3.0 * t2;
    const double h11 = t3 - t2;
    // Written as ya + increments so that a flat segment reproduces ya exactly.
    return ya + h01 * (yb - ya) + h * (h10 * fa + h11 * fb);
}

} // namespace

DelayHistory::DelayHistory(const ModelState& initial) : initial_(initial) {}

void DelayHistory::append(const DenseStep& step) {
    if (!steps_.empty() && !(step.t > steps_.back().t)) throw Error("history steps must increase in time");
    steps_.push_back(step);
}

std::size_t DelayHistory::bracket(double t) const {
    // Index a with steps_[a].t <= t < steps_[a+1].t, or the last interval at the front.
    auto it = std::upper_bound(steps_.begin(), steps_.end(), t,
                               [](double v, const DenseStep& s) { return v < s.t; });
    std::size_t idx = static_cast<std::size_t>(it - steps_.begin());
    if (idx == 0) return 0;
    idx -= 1;
    if (idx + 1 >= steps_.size()) idx = steps_.size() - 2;
    return idx;
}

double DelayHistory::substrate_at(double t) const {
    if (t <= 0.0) return initial_.S;
    if (steps_.empty() || t > front()) throw Error("future lookup");
    if (steps_.size() == 1) return steps_[0].state.S;
    const std::size_t a = bracket(t);
    const DenseStep& lo = steps_[a];
    const DenseStep& hi = steps_[a + 1];
    if (t == lo.t) return lo.state.S;
    if (t == hi.t) return hi.state.S;
    const double h = hi.t - lo.t;
    return hermite((t - lo.t) / h, h, lo.state.S, lo.deriv.dS, hi.state.S, hi.deriv.dS);
}

ModelState DelayHistory::state_at(double t) const {
    if (steps_.empty() || t < 0.0 || t > front()) throw Error("future lookup");
    if (steps_.size() == 1) return steps_[0].state;
    const std::size_t a = bracket(t);
    const DenseStep& lo = steps_[a];
    const DenseStep& hi = steps_[a + 1];
    if (t == lo.t) return lo.state;
    if (t == hi.t) return hi.state;
    const double h = hi.t - lo.t;
    const double th = (t - lo.t) / h;
    return {hermite(th, h, lo.state.X, lo.deriv.dX, hi.state.X, hi.deriv.dX),
            hermite(th, h, lo.state.S, lo.deriv.dS, hi.state.S, hi.deriv.dS),
            hermite(th, h, lo.state.P, lo.deriv.dP, hi.state.P, hi.deriv.dP)};
}

// ---------------------------------------------------------------------------

namespace {

ModelState axpy(const ModelState& y, double a, const Rates& k) {
    return {y.X + a * k.dX, y.S + a * k.dS, y.P + a * k.dP};
}

bool finite(const ModelState& y) {
    return std::isfinite(y.X) && std::isfinite(y.S) && std::isfinite(y.P);
}

} // namespace

Trajectory simulate(const KineticParams& params, const ModelState& initial,
                    std::span<const double> output_times, const SolverConfig& config) {
    config.validate();
    {
        const auto v = params.to_array();
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!std::isfinite(v[i]) || v[i] < 0.0) {
                throw Error("invalid parameter " + param_names()[i] + " = " + csv::format_double(v[i]));
            }
        }
    }
    if (!(params.tau_S > 0.0)) throw Error("tau_S must be positive");
    if (config.step_h > params.tau_S) throw Error("solver step_h must not exceed tau_S");
    if (!finite(initial) || initial.X < 0.0 || initial.S < 0.0 || initial.P < 0.0) {
        throw Error("initial state must be finite and non-negative");
    }
    if (output_times.empty() || output_times.front() != 0.0) throw Error("output times must start at 0");
    for (std::size_t i = 1; i < output_times.size(); ++i) {
        if (!(output_times[i] > output_times[i - 1])) throw Error("output times must be strictly increasing");
    }
    const double t_end = output_times.back();
    if (t_end > config.horizon_h) throw Error("output times exceed the solver horizon");

    std::vector<double> breakpoints;
    for (int k = 1; k <= config.aligned_breakpoints; ++k) {
        const double bp = k * params.tau_S;
        if (bp < config.horizon_h) breakpoints.push_back(bp);
    }

    DelayHistory history(initial);
    double t = 0.0;
    ModelState y = initial;
    Rates f = rates(y, history.substrate_at(-params.tau_S), params, config.variant);
    history.append({t, y, f});

    const double tiny = 1e-9 * config.step_h;
    std::size_t next_bp = 0;
    while (t < t_end) {
        while (next_bp < breakpoints.size() && breakpoints[next_bp] <= t + tiny) ++next_bp;
        double t_next = t + config.step_h;
        if (next_bp < breakpoints.size() && t_next >= breakpoints[next_bp] - tiny) t_next = breakpoints[next_bp];
        if (t_next >= config.horizon_h - tiny) t_next = config.horizon_h;
        const double h = t_next - t;

        try {
            const double s_mid = history.substrate_at(t + 0.5 * h - params.tau_S);
            const double s_end = history.substrate_at(t_next - params.tau_S);
            const Rates k1 = f;
            const Rates k2 = rates(axpy(y, 0.5 * h, k1), s_mid, params, config.variant);
            const Rates k3 = rates(axpy(y, 0.5 * h, k2), s_mid, params, config.variant);
            const Rates k4 = rates(axpy(y, h, k3), s_end, params, config.variant);
            const ModelState y_next{
                y.X + h / 6.0 * (k1.dX + 2.0 * k2.dX + 2.0 * k3.dX + k4.dX),
                y.S + h / 6.0 * (k1.dS + 2.0 * k2.dS + 2.0 * k3.dS + k4.dS),
                y.P + h / 6.0 * (k1.dP + 2.0 * k2.dP + 2.0 * k3.dP + k4.dP)};
            if (!finite(y_next)) throw Error("non-finite state");
            f = rates(y_next, s_end, params, config.variant);
            y = y_next;
        } catch (const DivergenceError&) {
            throw;
        } catch (const Error&) {
            throw DivergenceError("diverged after t = " + csv::format_double(t) + " h", t);
        }
        t = t_next;
        history.append({t, y, f});
    }

    Trajectory traj;
    traj.initial_state = initial;
    traj.times.assign(output_times.begin(), output_times.end());
    traj.states.reserve(output_times.size());
    traj.states.push_back(initial);
    for (std::size_t i = 1; i < output_times.size(); ++i) {
        ModelState s = history.state_at(output_times[i]);
        s.X = std::max(s.X, 0.0);
        s.S = std::max(s.S, 0.0);
        s.P = std::max(s.P, 0.0);
        traj.states.push_back(s);
    }
    if (config.dense_output) traj.dense = history.steps();
    return traj;
}

std::vector<double> uniform_times(double horizon_h, double dt) {
    if (!(dt > 0.0) || !(horizon_h >= 0.0)) throw Error("uniform_times needs dt > 0 and horizon >= 0");
    const auto n = static_cast<std::size_t>(std::llround(std::floor(horizon_h / dt + 1e-9)));
    std::vector<double> out(n + 1);
    for (std::size_t i = 0; i <= n; ++i) out[i] = static_cast<double>(i) * dt;
    if (horizon_h - out.back() > 1e-9 * dt) out.push_back(horizon_h);
    return out;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
    out << "time_h,X_gL,S_gL,P_gL\n";
    for (std::size_t i = 0; i < traj.times.size(); ++i) {
        const ModelState& s = traj.states[i];
        out << csv::format_double(traj.times[i]) << ',' << csv::format_double(s.X) << ','
            << csv::format_double(s.S) << ',' << csv::format_double(s.P) << '\n';
    }
}

} // namespace calib
