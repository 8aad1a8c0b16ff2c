#include "calib/nnkit.hpp"

#include "calib/error.hpp"
#include "calib/random.hpp"
#include "calib/serialize.hpp"

#include <cmath>

namespace calib::nn {

std::string to_string(Activation a) {
    switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kGelu: return "gelu";
    }
    return "gelu";
}

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::kTanh;
    if (s == "relu") return Activation::kRelu;
    if (s == "gelu") return Activation::kGelu;
    throw Error("unknown activation '" + s + "'");
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
} // namespace

double activate(Activation a, double x) {
    switch (a) {
    case Activation::kTanh: return std::tanh(x);
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kGelu: return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    return x;
}

double activate_derivative(Activation a, double x) {
    switch (a) {
    case Activation::kTanh: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
    }
    case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::kGelu:
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    }
    return 1.0;
}

void MlpSpec::validate() const {
    if (layer_sizes.size() < 2) throw Error("an MLP needs at least 2 layer sizes");
    for (int s : layer_sizes) {
        if (s < 1) throw Error("MLP layer sizes must be >= 1");
    }
}

NetworkWeights NetworkWeights::zeros(const MlpSpec& spec) {
    spec.validate();
    NetworkWeights w;
    w.spec = spec;
    for (std::size_t k = 0; k < spec.num_layers(); ++k) {
        w.weights.push_back(Matrix::Zero(spec.layer_sizes[k + 1], spec.layer_sizes[k]));
        w.biases.push_back(Vector::Zero(spec.layer_sizes[k + 1]));
    }
    return w;
}

NetworkWeights NetworkWeights::initialize(const MlpSpec& spec, std::uint64_t seed) {
    NetworkWeights w = zeros(spec);
    Rng rng = make_rng(seed, streams::kInit);
    for (std::size_t k = 0; k < w.weights.size(); ++k) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.layer_sizes[k]));
        std::uniform_real_distribution<double> u(-bound, bound);
        Matrix& W = w.weights[k];
        for (Eigen::Index r = 0; r < W.rows(); ++r) {
            for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = u(rng);
        }
        for (Eigen::Index r = 0; r < w.biases[k].size(); ++r) w.biases[k](r) = u(rng);
    }
    return w;
}

std::size_t NetworkWeights::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        n += static_cast<std::size_t>(weights[k].size() + biases[k].size());
    }
    return n;
}

void NetworkWeights::validate() const {
    spec.validate();
    if (weights.size() != spec.num_layers() || biases.size() != spec.num_layers()) {
        throw Error("weight layer count does not match spec");
    }
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (weights[k].rows() != spec.layer_sizes[k + 1] || weights[k].cols() != spec.layer_sizes[k] ||
            biases[k].size() != spec.layer_sizes[k + 1]) {
            throw Error("layer " + std::to_string(k) + " shape does not match spec");
        }
        if (!weights[k].allFinite() || !biases[k].allFinite()) {
            throw Error("layer " + std::to_string(k) + " has non-finite entries");
        }
    }
}

bool NetworkWeights::same_shape(const NetworkWeights& o) const {
    if (weights.size() != o.weights.size() || biases.size() != o.biases.size()) return false;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (weights[k].rows() != o.weights[k].rows() || weights[k].cols() != o.weights[k].cols() ||
            biases[k].size() != o.biases[k].size()) {
            return false;
        }
    }
    return true;
}

bool operator==(const NetworkWeights& a, const NetworkWeights& b) {
    if (!(a.spec == b.spec) || !a.same_shape(b)) return false;
    for (std::size_t k = 0; k < a.weights.size(); ++k) {
        if (a.weights[k] != b.weights[k] || a.biases[k] != b.biases[k]) return false;
    }
    return true;
}

Matrix mlp_forward_batch(const NetworkWeights& w, const Matrix& inputs) {
    if (inputs.cols() != w.spec.input_size()) {
        throw Error("input size mismatch: expected " + std::to_string(w.spec.input_size()) + ", got " +
                    std::to_string(inputs.cols()));
    }
    Matrix h = inputs;
    const std::size_t L = w.weights.size();
    for (std::size_t k = 0; k < L; ++k) {
        Matrix z = h * w.weights[k].transpose();
        z.rowwise() += w.biases[k].transpose();
        if (k + 1 < L) {
            const Activation a = w.spec.activation;
            h = z.unaryExpr([a](double x) { return activate(a, x); });
        } else {
            h = std::move(z);
        }
    }
    return h;
}

Vector mlp_forward(const NetworkWeights& w, const Vector& input) {
    if (input.size() != w.spec.input_size()) {
        throw Error("input size mismatch: expected " + std::to_string(w.spec.input_size()) + ", got " +
                    std::to_string(input.size()));
    }
    return mlp_forward_batch(w, input.transpose()).row(0).transpose();
}

// ---------------------------------------------------------------------------

Var Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&, const Node&)> propagate) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.propagate = std::move(propagate);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
    Node& n = node(v);
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

Var Tape::leaf(Matrix value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
}

Var Tape::matmul_transposed(Var x, Var w) {
    const Matrix& xv = value(x);
    const Matrix& wv = value(w);
    if (xv.cols() != wv.cols()) throw Error("matmul shape mismatch");
    const bool rg = node(x).requires_grad || node(w).requires_grad;
    return push(xv * wv.transpose(), rg, [x, w](Tape& t, const Node& out) {
        if (t.node(x).requires_grad) t.accumulate(x, out.grad * t.value(w));
        if (t.node(w).requires_grad) t.accumulate(w, out.grad.transpose() * t.value(x));
    });
}

Var Tape::add_row_broadcast(Var x, Var b) {
    const Matrix& xv = value(x);
    const Matrix& bv = value(b);
    if (bv.cols() != 1 || bv.rows() != xv.cols()) throw Error("bias shape mismatch");
    Matrix out = xv;
    out.rowwise() += bv.col(0).transpose();
    const bool rg = node(x).requires_grad || node(b).requires_grad;
    return push(std::move(out), rg, [x, b](Tape& t, const Node& o) {
        t.accumulate(x, o.grad);
        if (t.node(b).requires_grad) t.accumulate(b, o.grad.colwise().sum().transpose());
    });
}

Var Tape::activation(Var x, Activation a) {
    Matrix out = value(x).unaryExpr([a](double v) { return activate(a, v); });
    return push(std::move(out), node(x).requires_grad, [x, a](Tape& t, const Node& o) {
        const Matrix d = t.value(x).unaryExpr([a](double v) { return activate_derivative(a, v); });
        t.accumulate(x, o.grad.cwiseProduct(d));
    });
}

Var Tape::add(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) throw Error("add shape mismatch");
    const bool rg = node(a).requires_grad || node(b).requires_grad;
    return push(value(a) + value(b), rg, [a, b](Tape& t, const Node& o) {
        t.accumulate(a, o.grad);
        t.accumulate(b, o.grad);
    });
}

Var Tape::sub(Var a, Var b) {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) throw Error("sub shape mismatch");
    const bool rg = node(a).requires_grad || node(b).requires_grad;
    return push(value(a) - value(b), rg, [a, b](Tape& t, const Node& o) {
        t.accumulate(a, o.grad);
        t.accumulate(b, -o.grad);
    });
}

Var Tape::scale(Var a, double s) {
    return push(value(a) * s, node(a).requires_grad, [a, s](Tape& t, const Node& o) { t.accumulate(a, o.grad * s); });
}

Var Tape::sum(Var a) {
    Matrix out(1, 1);
    out(0, 0) = value(a).sum();
    return push(std::move(out), node(a).requires_grad, [a](Tape& t, const Node& o) {
        const Matrix& av = t.value(a);
        t.accumulate(a, Matrix::Constant(av.rows(), av.cols(), o.grad(0, 0)));
    });
}

Var Tape::sum_squares(Var a) {
    Matrix out(1, 1);
    out(0, 0) = value(a).squaredNorm();
    return push(std::move(out), node(a).requires_grad,
                [a](Tape& t, const Node& o) { t.accumulate(a, 2.0 * o.grad(0, 0) * t.value(a)); });
}

void Tape::backward(Var loss) {
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw Error("loss must be a scalar node");
    if (!std::isfinite(lv(0, 0))) throw Error("non-finite loss");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    node(loss).grad = Matrix::Ones(1, 1);
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.propagate || n.grad.size() == 0) continue;
        n.propagate(*this, n);
    }
}

RecordedNetwork record_mlp(Tape& tape, const NetworkWeights& w, Var input) {
    RecordedNetwork net;
    Var h = input;
    const std::size_t L = w.weights.size();
    for (std::size_t k = 0; k < L; ++k) {
        Var W = tape.leaf(w.weights[k], true);
        Var b = tape.leaf(w.biases[k], true);
        net.weights.push_back(W);
        net.biases.push_back(b);
        h = tape.add_row_broadcast(tape.matmul_transposed(h, W), b);
        if (k + 1 < L) h = tape.activation(h, w.spec.activation);
    }
    net.output = h;
    return net;
}

Gradients collect_gradients(const Tape& tape, const RecordedNetwork& net, const NetworkWeights& shape) {
    Gradients g = NetworkWeights::zeros(shape.spec);
    for (std::size_t k = 0; k < g.weights.size(); ++k) {
        const Matrix& gw = tape.grad(net.weights[k]);
        const Matrix& gb = tape.grad(net.biases[k]);
        if (gw.size() != 0) g.weights[k] = gw;
        if (gb.size() != 0) g.biases[k] = gb.col(0);
    }
    return g;
}

LossAndGrad batch_squared_error(const NetworkWeights& w, const Matrix& inputs, const Matrix& targets) {
    if (inputs.rows() != targets.rows() || inputs.rows() == 0) throw Error("batch size mismatch");
    if (targets.cols() != w.spec.output_size()) throw Error("target size mismatch");
    if (inputs.cols() != w.spec.input_size()) {
        throw Error("input size mismatch: expected " + std::to_string(w.spec.input_size()) + ", got " +
                    std::to_string(inputs.cols()));
    }
    Tape tape;
    Var x = tape.leaf(inputs);
    Var y = tape.leaf(targets);
    RecordedNetwork net = record_mlp(tape, w, x);
    Var loss = tape.scale(tape.sum_squares(tape.sub(net.output, y)), 1.0 / static_cast<double>(inputs.rows()));
    tape.backward(loss);
    return {tape.value(loss)(0, 0), collect_gradients(tape, net, w)};
}

double batch_squared_error_value(const NetworkWeights& w, const Matrix& inputs, const Matrix& targets) {
    if (inputs.rows() != targets.rows() || inputs.rows() == 0) throw Error("batch size mismatch");
    const Matrix out = mlp_forward_batch(w, inputs);
    if (targets.cols() != out.cols()) throw Error("target size mismatch");
    return (out - targets).squaredNorm() / static_cast<double>(inputs.rows());
}

// ---------------------------------------------------------------------------

AdamState AdamState::for_weights(const NetworkWeights& w, const AdamHyper& hyper) {
    AdamState s;
    s.hyper = hyper;
    s.first = NetworkWeights::zeros(w.spec);
    s.second = NetworkWeights::zeros(w.spec);
    return s;
}

namespace {

template <typename T>
void adam_update(T& param, const T& g, T& m, T& v, const AdamHyper& h, double c1, double c2) {
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g.cwiseProduct(g);
    param.array() -= h.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + h.epsilon);
}

} // namespace

void adam_step(NetworkWeights& weights, const Gradients& grads, AdamState& state) {
    if (!weights.same_shape(grads) || !weights.same_shape(state.first) || !weights.same_shape(state.second)) {
        throw Error("adam shape mismatch");
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.hyper.beta1, t);
    const double c2 = 1.0 - std::pow(state.hyper.beta2, t);
    for (std::size_t k = 0; k < weights.weights.size(); ++k) {
        adam_update(weights.weights[k], grads.weights[k], state.first.weights[k], state.second.weights[k],
                    state.hyper, c1, c2);
        adam_update(weights.biases[k], grads.biases[k], state.first.biases[k], state.second.biases[k],
                    state.hyper, c1, c2);
    }
}

// ---------------------------------------------------------------------------

nlohmann::json weights_to_json(const NetworkWeights& w) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t k = 0; k < w.weights.size(); ++k) {
        const Matrix& W = w.weights[k];
        std::vector<double> flat;
        flat.reserve(static_cast<std::size_t>(W.size()));
        for (Eigen::Index r = 0; r < W.rows(); ++r) {
            for (Eigen::Index c = 0; c < W.cols(); ++c) flat.push_back(W(r, c));
        }
        std::vector<double> bias(w.biases[k].data(), w.biases[k].data() + w.biases[k].size());
        layers.push_back({{"rows", W.rows()}, {"cols", W.cols()}, {"weight", flat}, {"bias", bias}});
    }
    return {{"format", "calib-mlp"},
            {"version", 1},
            {"spec", {{"layer_sizes", w.spec.layer_sizes}, {"activation", to_string(w.spec.activation)}}},
            {"layers", layers}};
}

NetworkWeights weights_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != "calib-mlp") throw Error("schema mismatch: weights.format");
    if (j.value("version", 0) != 1) throw Error("schema mismatch: weights.version");
    const auto spec_json = require_field<nlohmann::json>(j, "spec", "weights");
    MlpSpec spec;
    spec.layer_sizes = require_field<std::vector<int>>(spec_json, "layer_sizes", "weights.spec");
    spec.activation = activation_from_string(require_field<std::string>(spec_json, "activation", "weights.spec"));
    NetworkWeights w = NetworkWeights::zeros(spec);

    const auto layers = require_field<nlohmann::json>(j, "layers", "weights");
    if (!layers.is_array() || layers.size() != spec.num_layers()) {
        throw Error("schema mismatch: weights.layers count does not match spec");
    }
    for (std::size_t k = 0; k < spec.num_layers(); ++k) {
        const std::string path = "weights.layers[" + std::to_string(k) + "]";
        const auto rows = require_field<long>(layers[k], "rows", path);
        const auto cols = require_field<long>(layers[k], "cols", path);
        const auto flat = require_field<std::vector<double>>(layers[k], "weight", path);
        const auto bias = require_field<std::vector<double>>(layers[k], "bias", path);
        if (rows != spec.layer_sizes[k + 1] || cols != spec.layer_sizes[k] ||
            flat.size() != static_cast<std::size_t>(rows * cols) || bias.size() != static_cast<std::size_t>(rows)) {
            throw Error("schema mismatch: " + path + " shape does not match spec");
        }
        for (long r = 0; r < rows; ++r) {
            for (long c = 0; c < cols; ++c) w.weights[k](r, c) = flat[static_cast<std::size_t>(r * cols + c)];
            w.biases[k](r) = bias[static_cast<std::size_t>(r)];
        }
    }
    w.validate();
    return w;
}

} // namespace calib::nn
