#pragma once

// Minimal neural-network kit: dense matrices, a reverse-mode autodiff tape,
// multilayer perceptrons and the Adam optimizer. Everything is float64.
//
// Batches are row-major in the sense of "one example per row": an input batch
// is B x in, a dense layer with weight W (out x in) maps it to B x out.

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace calib::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class Activation { kTanh, kRelu, kGelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

double activate(Activation a, double x);
double activate_derivative(Activation a, double x);

struct MlpSpec {
    std::vector<int> layer_sizes;  ///< input, hidden..., output
    Activation activation = Activation::kGelu;

    void validate() const;
    int input_size() const { return layer_sizes.front(); }
    int output_size() const { return layer_sizes.back(); }
    std::size_t num_layers() const { return layer_sizes.size() - 1; }

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct NetworkWeights {
    MlpSpec spec;
    std::vector<Matrix> weights;  ///< layer k: layer_sizes[k+1] x layer_sizes[k]
    std::vector<Vector> biases;   ///< layer k: layer_sizes[k+1]

    /// Zero-filled weights with shapes matching spec.
    static NetworkWeights zeros(const MlpSpec& spec);
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    static NetworkWeights initialize(const MlpSpec& spec, std::uint64_t seed);

    std::size_t parameter_count() const;
    /// Throws when shapes disagree with the spec or entries are non-finite.
    void validate() const;
    bool same_shape(const NetworkWeights& other) const;

    friend bool operator==(const NetworkWeights& a, const NetworkWeights& b);
};

using Gradients = NetworkWeights;

Vector mlp_forward(const NetworkWeights& w, const Vector& input);
/// Forward pass over a batch (one example per row).
Matrix mlp_forward_batch(const NetworkWeights& w, const Matrix& inputs);

// ---------------------------------------------------------------------------
// Reverse-mode tape

struct Var {
    int id = -1;
};

class Tape {
public:
    Var leaf(Matrix value, bool requires_grad = false);

    Var matmul_transposed(Var x, Var w);  ///< x * w^T
    Var add_row_broadcast(Var x, Var b);  ///< x + 1 * b^T, b is a column vector
    Var activation(Var x, Activation a);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var scale(Var a, double s);
    Var sum(Var a);               ///< 1x1
    Var sum_squares(Var a);       ///< 1x1

    /// Seeds d(loss)/d(loss) = 1 and propagates. Loss must be a finite 1x1 node.
    void backward(Var loss);

    const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
    const Matrix& grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).grad; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        std::function<void(Tape&, const Node&)> propagate;
    };

    Var push(Matrix value, bool requires_grad, std::function<void(Tape&, const Node&)> propagate);
    Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
    void accumulate(Var v, const Matrix& g);

    std::vector<Node> nodes_;
};

/// Records the network on a tape. Returns the output node; fills the leaf ids
/// of every weight and bias so their gradients can be collected.
struct RecordedNetwork {
    Var output;
    std::vector<Var> weights;
    std::vector<Var> biases;
};
RecordedNetwork record_mlp(Tape& tape, const NetworkWeights& w, Var input);

Gradients collect_gradients(const Tape& tape, const RecordedNetwork& net, const NetworkWeights& shape);

/// Loss (1/B) sum_i ||NN(x_i) - y_i||^2 over the batch and its gradient.
struct LossAndGrad {
    double loss = 0.0;
    Gradients grad;
};
LossAndGrad batch_squared_error(const NetworkWeights& w, const Matrix& inputs, const Matrix& targets);

/// Same loss without gradients.
double batch_squared_error_value(const NetworkWeights& w, const Matrix& inputs, const Matrix& targets);

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamHyper hyper;
    Gradients first;   ///< first-moment accumulators
    Gradients second;  ///< second-moment accumulators
    std::uint64_t step = 0;

    static AdamState for_weights(const NetworkWeights& w, const AdamHyper& hyper = {});
};

/// Bias-corrected Adam update in place; increments the step counter.
void adam_step(NetworkWeights& weights, const Gradients& grads, AdamState& state);

// ---------------------------------------------------------------------------
// Weight files

nlohmann::json weights_to_json(const NetworkWeights& w);
/// Validates layer shapes against the embedded spec.
NetworkWeights weights_from_json(const nlohmann::json& j);

} // namespace calib::nn
