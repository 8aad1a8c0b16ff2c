#include "calib/regression.hpp"

#include "calib/error.hpp"
#include "calib/serialize.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace calib {

SseWeights SseWeights::normalizing(const ObservationSeries& data) {
    auto weight = [](const std::vector<double>& v) {
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        const double range = std::max(*hi - *lo, 1e-6);
        return 1.0 / (range * range);
    };
    return {weight(data.X), weight(data.S), weight(data.P)};
}

void SseWeights::validate() const {
    for (double w : {w_X, w_S, w_P}) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw Error("SSE weights must be finite and >= 0");
    }
    if (w_X == 0.0 && w_S == 0.0 && w_P == 0.0) throw Error("SSE weights must not all be zero");
}

namespace {

constexpr std::size_t kDim = KineticParams::kSize;
using Vec8 = Eigen::Matrix<double, kDim, 1>;
using Mat8 = Eigen::Matrix<double, kDim, kDim>;

// Maps normalized coordinates to parameters without the unit-cube check so
// finite-difference stencils may step an h beyond a bound.
KineticParams from_unit(const Vec8& u, const ParamBounds& bounds) {
    const auto lo = bounds.lower.to_array();
    const auto hi = bounds.upper.to_array();
    std::array<double, kDim> v{};
    for (std::size_t i = 0; i < kDim; ++i) v[i] = std::lerp(lo[i], hi[i], u(static_cast<Eigen::Index>(i)));
    return KineticParams::from_array(v);
}

Vec8 to_unit(const KineticParams& p, const ParamBounds& bounds) {
    const auto u = normalize_params(p, bounds);
    Vec8 out;
    for (std::size_t i = 0; i < kDim; ++i) out(static_cast<Eigen::Index>(i)) = u[i];
    return out;
}

Vec8 project(Vec8 u) {
    return u.cwiseMax(0.0).cwiseMin(1.0);
}

struct Evaluation {
    Eigen::VectorXd residuals;
    double sse = 0.0;
    bool diverged = false;
};

/// Residual vector sqrt(w_q) (q_pred - q_data) stacked over species.
Evaluation evaluate(const KineticParams& params, const ObservationSeries& data, const SseWeights& w,
                    const SolverConfig& solver) {
    const std::size_t n = data.size();
    Evaluation e;
    e.residuals = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3 * n));
    try {
        const Trajectory traj = simulate(params, data.initial_state(), data.times, solver);
        const double sx = std::sqrt(w.w_X), ss = std::sqrt(w.w_S), sp = std::sqrt(w.w_P);
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            e.residuals(k) = sx * (traj.states[i].X - data.X[i]);
            e.residuals(k + static_cast<Eigen::Index>(n)) = ss * (traj.states[i].S - data.S[i]);
            e.residuals(k + static_cast<Eigen::Index>(2 * n)) = sp * (traj.states[i].P - data.P[i]);
        }
        e.sse = e.residuals.squaredNorm();
        if (!std::isfinite(e.sse)) throw DivergenceError("non-finite SSE", 0.0);
    } catch (const DivergenceError&) {
        e.residuals.setZero();
        e.sse = kDivergencePenalty;
        e.diverged = true;
    }
    return e;
}

class LocalSolver {
public:
    LocalSolver(const ObservationSeries& data, const ParamBounds& bounds, const SseWeights& weights,
                const FitOptions& options, std::size_t budget)
        : data_(data), bounds_(bounds), weights_(weights), options_(options), budget_(budget) {}

    StartRecord run(const KineticParams& start) {
        StartRecord rec;
        rec.start = start;
        u_ = project(to_unit(start, bounds_));
        if (remaining() == 0) throw Error("simulation budget must be >= 1");
        current_ = eval(u_);
        rec.start_sse = current_.sse;
        converged_ = options_.method == LocalMethod::kLevenbergMarquardt ? levenberg_marquardt() : bfgs();
        rec.params = from_unit(u_, bounds_);
        rec.sse = current_.sse;
        rec.simulations = used_;
        rec.converged = converged_;
        return rec;
    }

    bool penalized() const { return penalized_; }

private:
    std::size_t remaining() const { return budget_ - used_; }

    Evaluation eval(const Vec8& u) {
        ++used_;
        Evaluation e = evaluate(from_unit(u, bounds_), data_, weights_, options_.solver);
        penalized_ |= e.diverged;
        return e;
    }

    // Central-difference stencil centre, kept h inside the box.
    double stencil_centre(double u) const {
        const double h = options_.fd_step;
        return std::clamp(u, h, 1.0 - h);
    }

    Eigen::MatrixXd jacobian() {
        const double h = options_.fd_step;
        Eigen::MatrixXd J(current_.residuals.size(), kDim);
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(kDim); ++i) {
            Vec8 up = u_, down = u_;
            const double c = stencil_centre(u_(i));
            up(i) = c + h;
            down(i) = c - h;
            const Evaluation eu = eval(up);
            const Evaluation ed = eval(down);
            J.col(i) = (eu.diverged || ed.diverged) ? Eigen::VectorXd::Zero(J.rows())
                                                    : Eigen::VectorXd((eu.residuals - ed.residuals) / (2.0 * h));
        }
        return J;
    }

    Vec8 gradient() {
        const double h = options_.fd_step;
        Vec8 g;
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(kDim); ++i) {
            Vec8 up = u_, down = u_;
            const double c = stencil_centre(u_(i));
            up(i) = c + h;
            down(i) = c - h;
            const Evaluation eu = eval(up);
            const Evaluation ed = eval(down);
            g(i) = (eu.diverged || ed.diverged) ? 0.0 : (eu.sse - ed.sse) / (2.0 * h);
        }
        return g;
    }

    // Coordinates pinned at a bound with the gradient pointing outward are inactive.
    std::array<bool, kDim> free_set(const Vec8& g) const {
        std::array<bool, kDim> f{};
        for (std::size_t i = 0; i < kDim; ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            f[i] = !((u_(k) <= 0.0 && g(k) > 0.0) || (u_(k) >= 1.0 && g(k) < 0.0));
        }
        return f;
    }

    bool levenberg_marquardt() {
        double lambda = 1e-3;
        while (remaining() >= 2 * kDim + 1) {
            if (current_.sse == 0.0) return true;
            const Eigen::MatrixXd J = jacobian();
            const Vec8 g = J.transpose() * current_.residuals;
            const Mat8 A = J.transpose() * J;
            const auto free = free_set(g);

            double pg = 0.0;
            for (std::size_t i = 0; i < kDim; ++i) {
                if (free[i]) pg = std::max(pg, std::abs(g(static_cast<Eigen::Index>(i))));
            }
            if (pg <= 1e-14 * std::max(current_.sse, 1e-300) || pg == 0.0) return true;

            const double dmax = A.diagonal().maxCoeff();
            bool accepted = false;
            while (!accepted && remaining() >= 1) {
                Mat8 M = A;
                Vec8 rhs = -g;
                for (std::size_t i = 0; i < kDim; ++i) {
                    const auto k = static_cast<Eigen::Index>(i);
                    if (!free[i]) {
                        M.row(k).setZero();
                        M.col(k).setZero();
                        M(k, k) = 1.0;
                        rhs(k) = 0.0;
                    } else {
                        M(k, k) += lambda * std::max(A(k, k), 1e-12 * dmax);
                    }
                }
                const Vec8 step = M.ldlt().solve(rhs);
                const Vec8 trial = project(u_ + step);
                if (!step.allFinite() || (trial - u_).cwiseAbs().maxCoeff() < 1e-15) {
                    lambda *= 4.0;
                    if (lambda > 1e12) return true;
                    continue;
                }
                Evaluation e = eval(trial);
                if (e.sse < current_.sse) {
                    const double rel = (current_.sse - e.sse) / current_.sse;
                    u_ = trial;
                    current_ = std::move(e);
                    lambda = std::max(lambda / 3.0, 1e-12);
                    accepted = true;
                    if (rel < 1e-10) return true;
                } else {
                    lambda *= 4.0;
                    if (lambda > 1e12) return true;
                }
            }
        }
        return false;
    }

    bool bfgs() {
        Mat8 H = Mat8::Identity();
        if (remaining() < 2 * kDim) return false;
        Vec8 g = gradient();
        bool scaled = false;
        while (true) {
            const auto free = free_set(g);
            Vec8 gf = g;
            Mat8 Hf = H;
            for (std::size_t i = 0; i < kDim; ++i) {
                if (free[i]) continue;
                const auto k = static_cast<Eigen::Index>(i);
                gf(k) = 0.0;
                Hf.row(k).setZero();
                Hf.col(k).setZero();
            }
            if (gf.cwiseAbs().maxCoeff() <= 1e-14 * std::max(current_.sse, 1e-300)) return true;
            Vec8 d = -Hf * gf;
            if (gf.dot(d) >= 0.0) {
                H = Mat8::Identity();
                d = -gf;
                scaled = false;
            }
            if (!scaled) {
                // Unscaled steepest descent: cap the first move at a quarter of the box.
                const double m = d.cwiseAbs().maxCoeff();
                if (m > 0.25) d *= 0.25 / m;
            }

            double alpha = 1.0;
            bool accepted = false;
            Vec8 trial;
            Evaluation e;
            for (int ls = 0; ls < 30 && remaining() >= 1; ++ls) {
                trial = project(u_ + alpha * d);
                e = eval(trial);
                if (e.sse <= current_.sse + 1e-4 * g.dot(trial - u_) && e.sse < current_.sse) {
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!accepted) return remaining() >= 1;
            const double rel = (current_.sse - e.sse) / current_.sse;
            const Vec8 s = trial - u_;
            u_ = trial;
            current_ = std::move(e);
            if (rel < 1e-10) return true;
            if (remaining() < 2 * kDim) return false;
            const Vec8 g_new = gradient();
            const Vec8 y = g_new - g;
            const double sy = s.dot(y);
            if (sy > 1e-12 * s.norm() * y.norm()) {
                if (!scaled) {
                    H = Mat8::Identity() * (sy / y.dot(y));
                    scaled = true;
                }
                const double rho = 1.0 / sy;
                const Mat8 I = Mat8::Identity();
                H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
            }
            g = g_new;
        }
    }

    const ObservationSeries& data_;
    const ParamBounds& bounds_;
    const SseWeights& weights_;
    const FitOptions& options_;
    std::size_t budget_;
    std::size_t used_ = 0;
    Vec8 u_;
    Evaluation current_;
    bool converged_ = false;
    bool penalized_ = false;
};

void check_inputs(const ObservationSeries& data, const ParamBounds& bounds, const SseWeights& weights) {
    data.validate();
    bounds.validate();
    weights.validate();
}

} // namespace

double sse_objective(const KineticParams& params, const ObservationSeries& data, const SseWeights& weights,
                     const SolverConfig& solver) {
    weights.validate();
    data.validate();
    return evaluate(params, data, weights, solver).sse;
}

FitResult fit_single_start(const KineticParams& start, const ObservationSeries& data, const ParamBounds& bounds,
                           const SseWeights& weights, const FitOptions& options) {
    check_inputs(data, bounds, weights);
    if (!bounds.contains(start)) throw Error("start point outside bounds");
    LocalSolver solver(data, bounds, weights, options, options.budget);
    StartRecord rec = solver.run(start);
    FitResult fit;
    fit.params = rec.params;
    fit.sse = rec.sse;
    fit.n_starts = 1;
    fit.n_simulations = rec.simulations;
    fit.converged = rec.converged;
    fit.penalized = solver.penalized();
    fit.per_start_records.push_back(rec);
    return fit;
}

FitResult fit_multistart(const ObservationSeries& data, const ParamBounds& bounds, const SseWeights& weights,
                         std::size_t n_starts, std::uint64_t seed, const FitOptions& options) {
    check_inputs(data, bounds, weights);
    if (n_starts == 0) throw Error("n_starts must be >= 1");
    const Eigen::MatrixXd design = latin_hypercube(n_starts, kDim, seed ^ 0x5eedu);

    const std::size_t total = n_starts * options.budget;
    const std::size_t explore =
        n_starts == 1 ? options.budget
                      : std::max<std::size_t>(2 * kDim + 2, static_cast<std::size_t>(std::floor(
                                                                 options.budget * options.explore_fraction)));

    FitResult fit;
    fit.n_starts = n_starts;
    for (std::size_t s = 0; s < n_starts; ++s) {
        std::array<double, kDim> u{};
        for (std::size_t k = 0; k < kDim; ++k) {
            u[k] = design(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k));
        }
        LocalSolver solver(data, bounds, weights, options, std::min(explore, options.budget));
        fit.per_start_records.push_back(solver.run(denormalize_params(u, bounds)));
        fit.penalized |= solver.penalized();
        fit.n_simulations += fit.per_start_records.back().simulations;
    }

    auto best_index = [&] {
        std::size_t best = 0;
        for (std::size_t s = 1; s < fit.per_start_records.size(); ++s) {
            if (fit.per_start_records[s].sse < fit.per_start_records[best].sse) best = s;
        }
        return best;
    };
    std::size_t best = best_index();

    // Refinement: the leading start continues with whatever budget is left.
    if (total > fit.n_simulations + 2 * kDim + 1 && !fit.per_start_records[best].converged) {
        LocalSolver solver(data, bounds, weights, options, total - fit.n_simulations);
        StartRecord& rec = fit.per_start_records[best];
        const StartRecord more = solver.run(rec.params);
        fit.penalized |= solver.penalized();
        fit.n_simulations += more.simulations;
        rec.simulations += more.simulations;
        if (more.sse <= rec.sse) {
            rec.params = more.params;
            rec.sse = more.sse;
        }
        rec.converged = more.converged;
        best = best_index();
    }

    bool all_diverged = true;
    for (const auto& r : fit.per_start_records) all_diverged &= (r.sse >= kDivergencePenalty);
    if (all_diverged) {
        std::string msg = "no feasible fit:";
        for (std::size_t s = 0; s < fit.per_start_records.size(); ++s) {
            msg += " start " + std::to_string(s) + " sse=" + std::to_string(fit.per_start_records[s].sse) + ";";
        }
        throw Error(msg);
    }

    const StartRecord& b = fit.per_start_records[best];
    fit.params = b.params;
    fit.sse = b.sse;
    fit.converged = b.converged;
    return fit;
}

// ---------------------------------------------------------------------------

nlohmann::json fit_to_json(const FitResult& fit) {
    nlohmann::json params = nlohmann::json::array();
    const auto v = fit.params.to_array();
    for (std::size_t i = 0; i < v.size(); ++i) {
        params.push_back({{"name", param_names()[i]}, {"value", v[i]}, {"unit", param_units()[i]}});
    }
    nlohmann::json starts = nlohmann::json::array();
    for (const auto& r : fit.per_start_records) {
        starts.push_back({{"start", r.start},
                          {"start_sse", r.start_sse},
                          {"params", r.params},
                          {"sse", r.sse},
                          {"simulations", r.simulations},
                          {"converged", r.converged}});
    }
    return {{"format", "calib-fit"},
            {"version", 1},
            {"parameters", params},
            {"sse", fit.sse},
            {"n_starts", fit.n_starts},
            {"n_simulations", fit.n_simulations},
            {"converged", fit.converged},
            {"penalized", fit.penalized},
            {"per_start", starts}};
}

FitResult fit_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != "calib-fit") throw Error("schema mismatch: fit.format");
    FitResult fit;
    const auto params = require_field<nlohmann::json>(j, "parameters", "fit");
    if (!params.is_array() || params.size() != kDim) throw Error("schema mismatch: fit.parameters");
    std::array<double, kDim> v{};
    for (std::size_t i = 0; i < kDim; ++i) {
        if (require_field<std::string>(params[i], "name", "fit.parameters") != param_names()[i]) {
            throw Error("schema mismatch: fit.parameters[" + std::to_string(i) + "].name");
        }
        v[i] = require_field<double>(params[i], "value", "fit.parameters");
    }
    fit.params = KineticParams::from_array(v);
    fit.sse = require_field<double>(j, "sse", "fit");
    fit.n_starts = require_field<std::size_t>(j, "n_starts", "fit");
    fit.n_simulations = require_field<std::size_t>(j, "n_simulations", "fit");
    fit.converged = require_field<bool>(j, "converged", "fit");
    fit.penalized = require_field<bool>(j, "penalized", "fit");
    for (const auto& s : require_field<nlohmann::json>(j, "per_start", "fit")) {
        StartRecord r;
        r.start = require_field<KineticParams>(s, "start", "fit.per_start");
        r.start_sse = require_field<double>(s, "start_sse", "fit.per_start");
        r.params = require_field<KineticParams>(s, "params", "fit.per_start");
        r.sse = require_field<double>(s, "sse", "fit.per_start");
        r.simulations = require_field<std::size_t>(s, "simulations", "fit.per_start");
        r.converged = require_field<bool>(s, "converged", "fit.per_start");
        fit.per_start_records.push_back(r);
    }
    return fit;
}

} // namespace calib
