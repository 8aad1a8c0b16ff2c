#include <doctest.h>

#include "calib/error.hpp"
#include "calib/nnkit.hpp"
#include "gradcheck.hpp"

#include <cmath>

using namespace calib;
using namespace calib::nn;

TEST_CASE("mlp_forward: zero network and identity layer") {
    const MlpSpec spec{{4, 6, 3}, Activation::kTanh};
    const auto zero = NetworkWeights::zeros(spec);
    Vector x(4);
    x << 1.0, -2.0, 3.0, 0.5;
    CHECK(mlp_forward(zero, x).isZero(0.0));

    NetworkWeights id = NetworkWeights::zeros({{3, 3}, Activation::kGelu});
    id.weights[0] = Matrix::Identity(3, 3);
    Vector y(3);
    y << 0.25, -7.0, 2.0;
    CHECK(mlp_forward(id, y) == y);
}

TEST_CASE("mlp_forward: 2-3-1 tanh network against hand arithmetic") {
    NetworkWeights w = NetworkWeights::zeros({{2, 3, 1}, Activation::kTanh});
    w.weights[0] << 0.1, -0.2, 0.3, 0.4, -0.5, 0.6;
    w.biases[0] << 0.01, -0.02, 0.03;
    w.weights[1] << 0.7, -0.8, 0.9;
    w.biases[1] << -0.05;
    Vector x(2);
    x << 0.5, -1.5;
    CHECK(mlp_forward(w, x)(0) == doctest::Approx(-0.18460274915967406).epsilon(1e-15));
}

TEST_CASE("mlp_forward: dimension mismatch names both sizes") {
    const auto w = NetworkWeights::zeros({{4, 2}, Activation::kTanh});
    CHECK_THROWS_WITH(mlp_forward(w, Vector::Zero(3)), "input size mismatch: expected 4, got 3");
}

TEST_CASE("activations and derivatives") {
    CHECK(activate(Activation::kRelu, -1.0) == 0.0);
    CHECK(activate(Activation::kGelu, 0.0) == 0.0);
    CHECK(activate(Activation::kGelu, 1.0) == doctest::Approx(0.8413447460685429));
    for (Activation a : {Activation::kTanh, Activation::kGelu}) {
        for (double x : {-2.0, -0.3, 0.0, 0.7, 3.0}) {
            const double fd = (activate(a, x + 1e-6) - activate(a, x - 1e-6)) / 2e-6;
            CHECK(activate_derivative(a, x) == doctest::Approx(fd).epsilon(1e-8));
        }
    }
}

TEST_CASE("tape: gradient of sum and of half squared norm") {
    Matrix w(2, 3);
    w << 1, -2, 3, 0.5, 0.25, -4;
    {
        Tape t;
        Var v = t.leaf(w, true);
        Var loss = t.sum(v);
        t.backward(loss);
        CHECK(t.grad(v) == Matrix::Ones(2, 3));
    }
    {
        Tape t;
        Var v = t.leaf(w, true);
        Var loss = t.scale(t.sum_squares(v), 0.5);
        t.backward(loss);
        CHECK(t.grad(v) == w);
    }
}

TEST_CASE("tape: non-finite loss is rejected") {
    Tape t;
    Matrix m(1, 1);
    m(0, 0) = NAN;
    Var v = t.leaf(m, true);
    CHECK_THROWS_WITH(t.backward(t.sum(v)), "non-finite loss");
}

TEST_CASE("tape: shared subexpressions accumulate gradients") {
    Tape t;
    Matrix m(1, 2);
    m << 2.0, -3.0;
    Var a = t.leaf(m, true);
    Var loss = t.sum(t.add(a, t.scale(a, 3.0)));
    t.backward(loss);
    CHECK(t.grad(a) == Matrix::Constant(1, 2, 4.0));
}

TEST_CASE("backward: 8-16-8 network matches central finite differences") {
    for (Activation act : {Activation::kTanh, Activation::kGelu}) {
        const auto r = gradcheck::check_random_network({8, 16, 8}, act, 99, 5);
        CHECK(r.checked > 200);
        CHECK(r.max_rel_error < 1e-5);
    }
}

TEST_CASE("backward: random shapes up to depth 4 and width 32") {
    Rng rng(7);
    std::uniform_int_distribution<int> width(1, 32), depth(2, 5);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<int> sizes(static_cast<std::size_t>(depth(rng)));
        for (int& s : sizes) s = width(rng);
        const auto r = gradcheck::check_random_network(sizes, trial % 2 ? Activation::kTanh : Activation::kGelu,
                                                       1000 + trial, 4);
        CHECK(r.max_rel_error < 1e-5);
    }
}

TEST_CASE("batch_squared_error agrees with its value-only twin") {
    const auto w = NetworkWeights::initialize({{5, 7, 3}, Activation::kGelu}, 3);
    const Matrix x = Matrix::Random(6, 5);
    const Matrix y = Matrix::Random(6, 3);
    CHECK(batch_squared_error(w, x, y).loss == doctest::Approx(batch_squared_error_value(w, x, y)).epsilon(1e-14));
}

TEST_CASE("initialization: bounded and activations stay finite for inputs in [-10, 10]") {
    const MlpSpec spec{{98, 128, 128, 128, 8}, Activation::kGelu};
    const auto w = NetworkWeights::initialize(spec, 5);
    for (std::size_t k = 0; k < w.weights.size(); ++k) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.layer_sizes[k]));
        CHECK(w.weights[k].cwiseAbs().maxCoeff() <= bound);
    }
    const Matrix x = 10.0 * Matrix::Random(64, 98);
    const Matrix out = mlp_forward_batch(w, x);
    CHECK(out.allFinite());
    CHECK(out.cwiseAbs().maxCoeff() < 1e3);
    CHECK(NetworkWeights::initialize(spec, 5) == w);
    CHECK(!(NetworkWeights::initialize(spec, 6) == w));
}

TEST_CASE("adam: zero gradient leaves weights unchanged") {
    auto w = NetworkWeights::initialize({{3, 4, 2}, Activation::kTanh}, 1);
    const auto before = w;
    auto state = AdamState::for_weights(w);
    adam_step(w, NetworkWeights::zeros(w.spec), state);
    CHECK(w == before);
    CHECK(state.step == 1);
}

TEST_CASE("adam: first step and two-step scalar reference") {
    NetworkWeights w = NetworkWeights::zeros({{1, 1}, Activation::kTanh});
    w.weights[0](0, 0) = 0.5;
    w.biases[0](0) = -0.25;
    Gradients g = NetworkWeights::zeros(w.spec);
    g.weights[0](0, 0) = 0.2;
    g.biases[0](0) = -3.0;
    AdamHyper hyper;
    hyper.learning_rate = 0.01;
    auto state = AdamState::for_weights(w, hyper);

    adam_step(w, g, state);
    // From zero moments the bias-corrected update is -lr * g / (|g| + eps).
    CHECK(w.weights[0](0, 0) == doctest::Approx(0.5 - 0.01 * 0.2 / (0.2 + 1e-8)).epsilon(1e-15));
    CHECK(w.biases[0](0) == doctest::Approx(-0.25 + 0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-15));

    adam_step(w, g, state);
    // Independent scalar recurrence.
    double p = 0.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        m = 0.9 * m + 0.1 * 0.2;
        v = 0.999 * v + 0.001 * 0.04;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        p -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(w.weights[0](0, 0) == doctest::Approx(p).epsilon(1e-14));
    CHECK(state.step == 2);
}

TEST_CASE("adam: shape mismatch") {
    auto w = NetworkWeights::zeros({{2, 2}, Activation::kTanh});
    auto state = AdamState::for_weights(w);
    CHECK_THROWS_AS(adam_step(w, NetworkWeights::zeros({{3, 2}, Activation::kTanh}), state), Error);
}

TEST_CASE("weight files: round trip and shape validation") {
    const auto w = NetworkWeights::initialize({{4, 5, 2}, Activation::kGelu}, 17);
    const auto j = weights_to_json(w);
    CHECK(weights_from_json(nlohmann::json::parse(j.dump())) == w);

    auto bad = j;
    bad["layers"][0]["rows"] = 6;
    CHECK_THROWS_WITH(weights_from_json(bad), doctest::Contains("weights.layers[0]"));
    auto missing = j;
    missing["spec"].erase("activation");
    CHECK_THROWS_WITH(weights_from_json(missing), doctest::Contains("weights.spec.activation"));
}
