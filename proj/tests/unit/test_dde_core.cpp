#include <doctest.h>

#include "calib/dde_core.hpp"
#include "calib/error.hpp"
#include "oracles.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace calib;

namespace {

// Regression estimate for the 100 rpm / 2.5 vvm / 0.5 L experiment.
KineticParams reference_params() {
    return {0.0082, 0.5273, 100.0, 1.361, 0.1381, 32.57, 61.53, 62.5};
}

const ModelState kInitial{0.129, 50.0, 0.0};

KineticParams random_params(std::mt19937_64& rng) {
    const double lo[8] = {1e-3, 0.1, 10, 0.1, 5e-3, 10, 50, 30};
    const double hi[8] = {1e-2, 1.0, 100, 10, 0.3, 50, 70, 100};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double v[8];
    for (int i = 0; i < 8; ++i) v[i] = lo[i] + u(rng) * (hi[i] - lo[i]);
    return KineticParams::from_array(v);
}

double max_abs(const Trajectory& a, const Trajectory& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.states.size(); ++i) {
        m = std::max({m, std::abs(a.states[i].X - b.states[i].X), std::abs(a.states[i].S - b.states[i].S),
                      std::abs(a.states[i].P - b.states[i].P)});
    }
    return m;
}

} // namespace

TEST_CASE("rates: zero substrate zeroes both Monod terms") {
    const auto p = reference_params();
    const Rates r = rates({1.0, 0.0, 0.0}, 0.0, p);
    CHECK(r.dX == -p.k_d);
    CHECK(r.dS == 0.0);
    CHECK(r.dP == 0.0);
}

TEST_CASE("rates: k_p = 0 gives no product") {
    auto p = reference_params();
    p.k_p = 0.0;
    CHECK(rates({3.0, 20.0, 5.0}, 40.0, p).dP == 0.0);
}

TEST_CASE("rates: reference parameters match hand evaluation") {
    // Exact rational evaluation of the three formulas, rounded once.
    const Rates r = rates({0.129, 50.0, 0.0}, 50.0, reference_params());
    CHECK(r.dX == doctest::Approx(0.17470886666666666).epsilon(1e-14));
    CHECK(r.dS == doctest::Approx(-0.0308591779).epsilon(1e-14));
    CHECK(r.dP == doctest::Approx(0.0001275223224837324).epsilon(1e-14));
}

TEST_CASE("rates: negative excursions are clamped inside the ratios only") {
    const auto p = reference_params();
    const Rates r = rates({-1e-12, -1e-12, 0.0}, -1e-12, p);
    CHECK(r.dS == 0.0);
    CHECK(r.dP == 0.0);
    CHECK(r.dX == doctest::Approx(p.k_d * 1e-12));
}

TEST_CASE("rates: growth-times-x variant multiplies the growth term by X") {
    const auto p = reference_params();
    const Rates a = rates({2.0, 30.0, 0.0}, 30.0, p);
    const Rates b = rates({2.0, 30.0, 0.0}, 30.0, p, ModelVariant::kGrowthTimesX);
    CHECK(b.dX + p.k_d * 2.0 == doctest::Approx(2.0 * (a.dX + p.k_d * 2.0)));
    CHECK(a.dS == b.dS);
}

TEST_CASE("rates: non-finite input is rejected") {
    CHECK_THROWS_WITH(rates({NAN, 1.0, 0.0}, 1.0, reference_params()), "non-finite state");
    CHECK_THROWS_WITH(rates({1.0, 1.0, 0.0}, INFINITY, reference_params()), "non-finite state");
}

TEST_CASE("delayed lookup: constant history and node identity") {
    SolverConfig cfg;
    cfg.dense_output = true;
    const auto traj = simulate(reference_params(), kInitial, uniform_times(60.0, 1.0), cfg);

    DelayHistory hist(kInitial);
    for (const auto& s : traj.dense) hist.append(s);

    CHECK(hist.substrate_at(-5.0) == 50.0);
    CHECK(hist.substrate_at(0.0) == 50.0);
    const auto& node = traj.dense[137];
    CHECK(hist.substrate_at(node.t) == node.state.S);
    CHECK_THROWS_WITH(hist.substrate_at(hist.front() + 1.0), "future lookup");

    // The history representation does not matter for t <= 0.
    DelayHistory other(kInitial);
    other.append({0.0, kInitial, {}});
    other.append({1.0, {0.2, 1.0, 0.0}, {}});
    CHECK(other.substrate_at(-3.0) == hist.substrate_at(-3.0));
}

TEST_CASE("delayed lookup: coarse-step midpoints agree with a fine-step run") {
    SolverConfig coarse;
    coarse.step_h = 1.0;
    coarse.dense_output = true;
    SolverConfig fine = coarse;
    fine.step_h = 0.01;

    const auto p = reference_params();
    const auto a = simulate(p, kInitial, uniform_times(140.0, 1.0), coarse);
    const auto b = simulate(p, kInitial, uniform_times(140.0, 1.0), fine);
    DelayHistory ha(kInitial), hb(kInitial);
    for (const auto& s : a.dense) ha.append(s);
    for (const auto& s : b.dense) hb.append(s);

    double worst = 0.0;
    for (std::size_t i = 0; i + 1 < a.dense.size(); ++i) {
        const double mid = 0.5 * (a.dense[i].t + a.dense[i + 1].t);
        worst = std::max(worst, std::abs(ha.substrate_at(mid) - hb.substrate_at(mid)));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("simulate: zero right-hand side keeps the state constant") {
    KineticParams p = reference_params();
    p.k_d = p.mu_m = p.k_p = 0.0;
    const auto traj = simulate(p, kInitial, uniform_times(140.0, 7.0));
    for (const auto& s : traj.states) CHECK(s == kInitial);
}

TEST_CASE("simulate: matches a fine forward-Euler oracle") {
    // Plain Euler at 1e-3 h is itself ~2.5e-4 g/L off in S for this run, so
    // the glucose check uses the Richardson combination 2 E(h/2) - E(h).
    const auto p = reference_params();
    const oracle::EulerParams ep{p.k_d, p.mu_m, p.K_S, p.Y_XS_inv, p.k_p, p.tau_S, p.K_PS, p.K_X};
    const auto coarse = oracle::euler_dde(ep, kInitial.X, kInitial.S, kInitial.P, 140.0, 1e-3);
    const auto fine = oracle::euler_dde(ep, kInitial.X, kInitial.S, kInitial.P, 140.0, 5e-4);
    const auto traj = simulate(p, kInitial, uniform_times(140.0, 0.5));
    double plain[3] = {0, 0, 0}, extrapolated[3] = {0, 0, 0};
    for (std::size_t i = 0; i < traj.times.size(); ++i) {
        const auto k = static_cast<std::size_t>(std::llround(traj.times[i] / 1e-3));
        const auto& s = traj.states[i];
        plain[0] = std::max(plain[0], std::abs(s.X - coarse.X[k]));
        plain[1] = std::max(plain[1], std::abs(s.S - coarse.S[k]));
        plain[2] = std::max(plain[2], std::abs(s.P - coarse.P[k]));
        extrapolated[0] = std::max(extrapolated[0], std::abs(s.X - (2 * fine.X[2 * k] - coarse.X[k])));
        extrapolated[1] = std::max(extrapolated[1], std::abs(s.S - (2 * fine.S[2 * k] - coarse.S[k])));
        extrapolated[2] = std::max(extrapolated[2], std::abs(s.P - (2 * fine.P[2 * k] - coarse.P[k])));
    }
    CHECK(plain[0] < 1e-4);
    CHECK(plain[2] < 1e-4);
    CHECK(plain[1] < 3e-4);
    for (double e : extrapolated) CHECK(e < 1e-5);
}

TEST_CASE("simulate: product before tau_S is a quadrature of the biomass path") {
    const auto p = reference_params();
    const double h = 0.01;
    const auto times = uniform_times(p.tau_S - std::fmod(p.tau_S, 0.02), h);  // even interval count
    const auto traj = simulate(p, kInitial, times);

    std::vector<double> integrand;
    const double factor = p.k_p * kInitial.S / (kInitial.S + p.K_PS);
    double worst = 0.0;
    for (std::size_t i = 0; i < traj.times.size(); ++i) {
        integrand.push_back(traj.states[i].X / (traj.states[i].X + p.K_X));
        if (i >= 2 && i % 2 == 0) {
            const double expect = kInitial.P + factor * oracle::simpson(integrand, h);
            worst = std::max(worst, std::abs(traj.states[i].P - expect));
        }
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("simulate: derivative on [0, tau_S] uses the initial substrate exactly") {
    const auto p = reference_params();
    SolverConfig cfg;
    cfg.dense_output = true;
    const auto traj = simulate(p, kInitial, uniform_times(140.0, 1.0), cfg);
    std::size_t checked = 0;
    for (const auto& s : traj.dense) {
        if (s.t > p.tau_S) break;
        const double expect = p.k_p * kInitial.S / (kInitial.S + p.K_PS) * s.state.X / (s.state.X + p.K_X);
        CHECK(std::abs(s.deriv.dP - expect) <= 1e-12 * std::abs(expect));
        ++checked;
    }
    CHECK(checked > 600);
    // The grid lands exactly on the first breakpoint.
    bool on_bp = false;
    for (const auto& s : traj.dense) on_bp |= (s.t == p.tau_S);
    CHECK(on_bp);
}

TEST_CASE("simulate: RK4 order under step halving") {
    const auto p = reference_params();
    const auto times = uniform_times(140.0, 2.0);
    SolverConfig ref_cfg;
    ref_cfg.step_h = 1e-3;
    const auto ref = simulate(p, kInitial, times, ref_cfg);
    double prev = 0.0;
    for (double h : {1.6, 0.8, 0.4}) {
        SolverConfig cfg;
        cfg.step_h = h;
        const double err = max_abs(simulate(p, kInitial, times, cfg), ref);
        if (prev > 0.0) CHECK(prev / err >= 8.0);
        prev = err;
    }
}

TEST_CASE("simulate: invariants over random admissible parameters") {
    std::mt19937_64 rng(20240611);
    std::uniform_real_distribution<double> s0(50.0, 60.0);
    const auto times = uniform_times(140.0, 0.5);
    for (int trial = 0; trial < 40; ++trial) {
        const auto p = random_params(rng);
        const ModelState init{0.129, s0(rng), 0.0};
        const auto traj = simulate(p, init, times);
        for (std::size_t i = 0; i < traj.states.size(); ++i) {
            const auto& s = traj.states[i];
            REQUIRE((s.X >= 0.0 && s.S >= 0.0 && s.P >= 0.0));
            if (i > 0) {
                CHECK(s.S <= traj.states[i - 1].S + 1e-12);
                CHECK(s.P >= traj.states[i - 1].P - 1e-12);
            }
        }

        // X and S do not depend on k_p; P - P0 is linear in k_p.
        KineticParams doubled = p;
        doubled.k_p *= 2.0;
        const auto traj2 = simulate(doubled, init, times);
        for (std::size_t i = 0; i < traj.states.size(); ++i) {
            CHECK(traj2.states[i].X == traj.states[i].X);
            CHECK(traj2.states[i].P == doctest::Approx(2.0 * traj.states[i].P).epsilon(1e-12));
        }
    }
}

TEST_CASE("simulate: precondition errors") {
    const auto p = reference_params();
    const std::vector<double> bad_start{1.0, 2.0};
    CHECK_THROWS_AS(simulate(p, kInitial, bad_start), Error);
    const std::vector<double> unsorted{0.0, 2.0, 1.0};
    CHECK_THROWS_AS(simulate(p, kInitial, unsorted), Error);
    const std::vector<double> too_long{0.0, 200.0};
    CHECK_THROWS_AS(simulate(p, kInitial, too_long), Error);
    SolverConfig cfg;
    cfg.step_h = 40.0;
    CHECK_THROWS_AS(simulate(p, kInitial, uniform_times(140.0, 1.0), cfg), Error);
}

TEST_CASE("simulate: runaway growth reports divergence with the last valid time") {
    KineticParams p = reference_params();
    p.k_d = 1e306;  // -k_d X overflows in the first stage
    const std::vector<double> times{0.0, 10.0};
    try {
        simulate(p, {1e10, 50.0, 0.0}, times);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.last_valid_time() == 0.0);
    }
}

TEST_CASE("trajectory CSV header") {
    const auto traj = simulate(reference_params(), kInitial, uniform_times(1.0, 0.5));
    std::ostringstream os;
    write_trajectory_csv(os, traj);
    CHECK(os.str().rfind("time_h,X_gL,S_gL,P_gL\n0,0.129,50,0\n", 0) == 0);
}
