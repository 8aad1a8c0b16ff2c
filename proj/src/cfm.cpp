#include "calib/cfm.hpp"

#include "calib/csv.hpp"
#include "calib/error.hpp"
#include "calib/random.hpp"
#include "calib/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace calib {

FlowTuple flow_tuple(const nn::Vector& xi0, const nn::Vector& xi1, double tau) {
    if (xi0.size() != xi1.size()) throw Error("flow endpoints differ in dimension");
    if (!(tau >= 0.0 && tau <= 1.0)) throw Error("flow time must lie in [0, 1]");
    // xi0 + tau (xi1 - xi0) keeps xi_tau - xi0 = tau v up to one rounding.
    const nn::Vector v = xi1 - xi0;
    return {tau == 1.0 ? xi1 : nn::Vector(xi0 + tau * v), tau, v};
}

FlowTuple flow_training_tuple(const nn::Vector& target, Rng& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    nn::Vector xi0(target.size());
    for (Eigen::Index i = 0; i < xi0.size(); ++i) xi0(i) = z(rng);
    const double tau = u(rng);
    return flow_tuple(xi0, target, tau);
}

void CfmHyper::validate() const {
    train.validate();
    if (draws_per_sample < 1) throw Error("draws_per_sample must be >= 1");
    if (fixed_draw && !(fixed_draw->second >= 0.0 && fixed_draw->second <= 1.0)) {
        throw Error("flow time must lie in [0, 1]");
    }
}

namespace {

// Rows [xi_tau, tau, condition] with matching velocity targets, one block of
// `draws` rows per sample.
void build_flow_batch(const nn::Matrix& conditions, const nn::Matrix& targets, int draws,
                      const std::optional<std::pair<nn::Vector, double>>& fixed, Rng& rng, nn::Matrix& inputs,
                      nn::Matrix& velocities) {
    const Eigen::Index n = conditions.rows(), d = targets.cols(), c = conditions.cols();
    inputs.resize(n * draws, d + 1 + c);
    velocities.resize(n * draws, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const nn::Vector xi1 = targets.row(i).transpose();
        for (int r = 0; r < draws; ++r) {
            const FlowTuple t = fixed ? flow_tuple(fixed->first, xi1, fixed->second) : flow_training_tuple(xi1, rng);
            const Eigen::Index row = i * draws + r;
            inputs.block(row, 0, 1, d) = t.xi_tau.transpose();
            inputs(row, d) = t.tau;
            inputs.block(row, d + 1, 1, c) = conditions.row(i);
            velocities.row(row) = t.velocity.transpose();
        }
    }
}

constexpr std::uint64_t kEvalDrawIndex = std::numeric_limits<std::uint64_t>::max();

} // namespace

TrainedFlow train_velocity_field(const nn::Matrix& conditions, const nn::Matrix& targets, const nn::MlpSpec& spec,
                                 const CfmHyper& hyper, std::uint64_t seed) {
    spec.validate();
    hyper.validate();
    const Eigen::Index n = conditions.rows(), d = targets.cols();
    if (n == 0) throw Error("training set is empty");
    if (targets.rows() != n) throw Error("conditions and targets differ in row count");
    if (spec.input_size() != d + 1 + conditions.cols() || spec.output_size() != d) {
        throw Error("training data do not match the velocity network shape");
    }
    if (hyper.fixed_draw && hyper.fixed_draw->first.size() != d) throw Error("fixed draw has the wrong dimension");

    TrainedFlow out{nn::NetworkWeights::initialize(spec, seed), {}, static_cast<int>(d)};
    nn::Matrix eval_in, eval_v;
    {
        Rng rng = make_rng(seed, streams::kFlowDraw, kEvalDrawIndex);
        build_flow_batch(conditions, targets, 1, hyper.fixed_draw, rng, eval_in, eval_v);
    }
    out.log.initial_loss = nn::batch_squared_error_value(out.weights, eval_in, eval_v);
    nn::AdamState adam = nn::AdamState::for_weights(out.weights);

    const TrainHyper& th = hyper.train;
    nn::Matrix inputs, velocities;
    std::vector<Eigen::Index> order;
    for (int epoch = 0; epoch < th.epochs; ++epoch) {
        Rng draw_rng = make_rng(seed, streams::kFlowDraw, static_cast<std::uint64_t>(epoch));
        build_flow_batch(conditions, targets, hyper.draws_per_sample, hyper.fixed_draw, draw_rng, inputs, velocities);
        order.resize(static_cast<std::size_t>(inputs.rows()));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        Rng shuffle_rng = make_rng(seed, streams::kShuffle, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        adam.hyper.learning_rate = th.learning_rate_at(epoch);

        double sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(th.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(th.batch_size));
            const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(end));
            nn::LossAndGrad lg;
            try {
                lg = nn::batch_squared_error(out.weights, inputs(rows, Eigen::all), velocities(rows, Eigen::all));
            } catch (const Error&) {
                throw Error("training diverged at step " + std::to_string(adam.step));
            }
            nn::adam_step(out.weights, lg.grad, adam);
            sum += lg.loss;
            ++batches;
        }
        out.log.epoch_loss.push_back(sum / static_cast<double>(batches));
    }
    out.log.final_loss = nn::batch_squared_error_value(out.weights, eval_in, eval_v);
    if (!std::isfinite(out.log.final_loss)) throw Error("training diverged at step " + std::to_string(adam.step));
    return out;
}

FlowSamples integrate_flow(const nn::NetworkWeights& weights, const nn::Vector& condition, nn::Matrix xi, int n_steps) {
    const Eigen::Index d = xi.cols();
    const Eigen::Index c = condition.size();
    if (weights.spec.input_size() != d + 1 + c || weights.spec.output_size() != d) {
        throw Error("velocity network does not match the sampler dimensions");
    }
    if (n_steps < 1) throw Error("n_steps must be >= 1");

    // The conditioning block of the first layer is the same at every step.
    const nn::Matrix& W1 = weights.weights[0];
    const nn::Vector base = W1.rightCols(c) * condition + weights.biases[0];
    const nn::Matrix W1_xi_t = W1.leftCols(d).transpose();
    const nn::Vector w_tau = W1.col(d);
    const nn::Activation act = weights.spec.activation;
    const std::size_t L = weights.weights.size();

    const double dt = 1.0 / n_steps;
    for (int step = 0; step < n_steps; ++step) {
        const double tau = step * dt;
        nn::Matrix z = xi * W1_xi_t;
        z.rowwise() += (base + tau * w_tau).transpose();
        nn::Matrix h = L > 1 ? nn::Matrix(z.unaryExpr([act](double x) { return nn::activate(act, x); })) : z;
        for (std::size_t k = 1; k < L; ++k) {
            z = h * weights.weights[k].transpose();
            z.rowwise() += weights.biases[k].transpose();
            if (k + 1 < L) {
                h = z.unaryExpr([act](double x) { return nn::activate(act, x); });
            } else {
                h = std::move(z);
            }
        }
        xi += dt * h;
    }
    FlowSamples out{std::move(xi), {}};
    out.valid.resize(static_cast<std::size_t>(out.xi.rows()));
    for (Eigen::Index k = 0; k < out.xi.rows(); ++k) out.valid[static_cast<std::size_t>(k)] = out.xi.row(k).allFinite();
    return out;
}

FlowSamples sample_flow(const nn::NetworkWeights& weights, int dim, const nn::Vector& condition, int n_samples,
                        int n_steps, std::uint64_t seed) {
    if (n_samples < 1) throw Error("sample count must be >= 1");
    nn::Matrix xi0(n_samples, dim);
    std::normal_distribution<double> z(0.0, 1.0);
    for (int k = 0; k < n_samples; ++k) {
        Rng rng = make_rng(seed, streams::kPosterior, static_cast<std::uint64_t>(k));
        for (int j = 0; j < dim; ++j) xi0(k, j) = z(rng);
    }
    return integrate_flow(weights, condition, std::move(xi0), n_steps);
}

nn::MlpSpec default_cfm_spec(const EncoderConfig& encoder) {
    const int d = static_cast<int>(KineticParams::kSize);
    return {{d + 1 + encoder.feature_count(), 128, 128, 128, d}, nn::Activation::kGelu};
}

VelocityModel train_cfm(std::span<const SyntheticSample> train, const nn::MlpSpec& spec, const CfmHyper& hyper,
                        std::uint64_t seed, const EncoderConfig& encoder, const ParamBounds& bounds) {
    if (train.empty()) throw Error("training set is empty");
    bounds.validate();
    TrainedFlow t =
        train_velocity_field(encode_batch(train, encoder), target_batch(train, bounds), spec, hyper, seed);
    if (t.dim != static_cast<int>(KineticParams::kSize)) throw Error("velocity network must output 8 values");
    return {std::move(t.weights), encoder, bounds, std::move(t.log)};
}

PosteriorSamples sample_posterior(const VelocityModel& model, const ObservationSeries& series,
                                  const SamplerOptions& options, const std::string& observation_id) {
    const nn::Vector condition = encode_observation(series, model.encoder);
    const int d = static_cast<int>(KineticParams::kSize);
    const FlowSamples flow =
        sample_flow(model.weights, d, condition, options.n_samples, options.n_steps, options.seed);

    PosteriorSamples out;
    out.requested = static_cast<std::size_t>(options.n_samples);
    out.observation_id = observation_id;
    out.n_steps = options.n_steps;
    out.seed = options.seed;
    for (Eigen::Index k = 0; k < flow.xi.rows(); ++k) {
        if (!flow.valid[static_cast<std::size_t>(k)]) {
            ++out.invalid;
            continue;
        }
        const nn::Vector u = flow.xi.row(k).transpose();
        const ClippedParams p = denormalize_clipped(std::span<const double>(u.data(), KineticParams::kSize),
                                                    model.bounds);
        for (std::size_t j = 0; j < KineticParams::kSize; ++j) out.clip_counts[j] += p.clipped[j];
        out.clipped_samples += p.any_clipped();
        out.samples.push_back(p.params);
    }
    return out;
}

KineticParams point_estimate(const PosteriorSamples& posterior, const ParamBounds& bounds) {
    if (posterior.samples.empty()) throw Error("empty posterior");
    std::array<double, KineticParams::kSize> mean{};
    for (const auto& s : posterior.samples) {
        const auto v = s.to_array();
        for (std::size_t k = 0; k < v.size(); ++k) mean[k] += v[k];
    }
    for (double& m : mean) m /= static_cast<double>(posterior.samples.size());
    return bounds.clip(KineticParams::from_array(mean));
}

double empirical_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw Error("quantile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return frac == 0.0 ? values[lo] : values[lo] + frac * (values[hi] - values[lo]);
}

std::array<ComponentSummary, KineticParams::kSize> uncertainty_summary(const PosteriorSamples& posterior) {
    const std::size_t n = posterior.samples.size();
    if (n < 2) throw Error("insufficient samples: need at least 2 valid samples, have " + std::to_string(n));
    std::array<ComponentSummary, KineticParams::kSize> out{};
    for (std::size_t k = 0; k < KineticParams::kSize; ++k) {
        std::vector<double> v;
        v.reserve(n);
        for (const auto& s : posterior.samples) v.push_back(s.to_array()[k]);
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        out[k].mean = mean;
        out[k].std = std::sqrt(ss / static_cast<double>(n - 1));
        out[k].q05 = empirical_quantile(v, 0.05);
        out[k].q95 = empirical_quantile(std::move(v), 0.95);
    }
    return out;
}

// ---------------------------------------------------------------------------

nlohmann::json cfm_model_to_json(const VelocityModel& model) {
    return {{"format", "calib-cfm-model"},
            {"version", 1},
            {"encoder", encoder_to_json(model.encoder)},
            {"bounds", model.bounds},
            {"prior", {{"type", "standard_normal"}, {"dim", KineticParams::kSize}}},
            {"training", {{"initial_loss", model.log.initial_loss},
                          {"final_loss", model.log.final_loss},
                          {"epoch_loss", model.log.epoch_loss}}},
            {"weights", nn::weights_to_json(model.weights)}};
}

VelocityModel cfm_model_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != "calib-cfm-model") {
        throw Error("schema mismatch: expected a calib-cfm-model file");
    }
    if (require_field<int>(j, "version", "model") != 1) throw Error("schema mismatch: unsupported model version");
    const auto prior = require_field<nlohmann::json>(j, "prior", "model");
    if (require_field<std::string>(prior, "type", "model.prior") != "standard_normal" ||
        require_field<std::size_t>(prior, "dim", "model.prior") != KineticParams::kSize) {
        throw Error("schema mismatch: unsupported prior");
    }
    VelocityModel m;
    m.encoder = encoder_from_json(require_field<nlohmann::json>(j, "encoder", "model"));
    m.bounds = require_field<ParamBounds>(j, "bounds", "model");
    const auto training = require_field<nlohmann::json>(j, "training", "model");
    m.log.initial_loss = require_field<double>(training, "initial_loss", "model.training");
    m.log.final_loss = require_field<double>(training, "final_loss", "model.training");
    m.log.epoch_loss = require_field<std::vector<double>>(training, "epoch_loss", "model.training");
    m.weights = nn::weights_from_json(require_field<nlohmann::json>(j, "weights", "model"));
    const int d = static_cast<int>(KineticParams::kSize);
    if (m.weights.spec.input_size() != d + 1 + m.encoder.feature_count() || m.weights.spec.output_size() != d) {
        throw Error("schema mismatch: network shape does not match the encoder");
    }
    return m;
}

void save_cfm_model(const VelocityModel& model, const std::filesystem::path& path) {
    csv::write_file_atomic(path, cfm_model_to_json(model).dump(1) + "\n");
}

VelocityModel load_cfm_model(const std::filesystem::path& path) {
    try {
        return cfm_model_from_json(nlohmann::json::parse(csv::read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed model file " + path.string() + ": " + e.what());
    }
}

std::string posterior_csv(const PosteriorSamples& posterior) {
    std::string out = "sample";
    for (const auto& n : param_names()) out += "," + n;
    out += '\n';
    for (std::size_t i = 0; i < posterior.samples.size(); ++i) {
        out += std::to_string(i);
        for (double v : posterior.samples[i].to_array()) out += "," + csv::format_double(v);
        out += '\n';
    }
    return out;
}

nlohmann::json posterior_summary_json(const PosteriorSamples& posterior, const ParamBounds& bounds) {
    nlohmann::json params = nlohmann::json::array();
    const auto est = point_estimate(posterior, bounds).to_array();
    const bool summarize = posterior.samples.size() >= 2;
    const auto summary = summarize ? uncertainty_summary(posterior) : std::array<ComponentSummary, 8>{};
    for (std::size_t k = 0; k < KineticParams::kSize; ++k) {
        nlohmann::json p = {{"name", param_names()[k]},
                            {"unit", param_units()[k]},
                            {"point_estimate", est[k]},
                            {"clipped", posterior.clip_counts[k]}};
        if (summarize) {
            p["mean"] = summary[k].mean;
            p["std"] = summary[k].std;
            p["q05"] = summary[k].q05;
            p["q95"] = summary[k].q95;
        }
        params.push_back(p);
    }
    return {{"format", "calib-posterior"},
            {"version", 1},
            {"observation", posterior.observation_id},
            {"requested", posterior.requested},
            {"valid", posterior.samples.size()},
            {"invalid", posterior.invalid},
            {"clipped_samples", posterior.clipped_samples},
            {"n_steps", posterior.n_steps},
            {"seed", posterior.seed},
            {"parameters", params}};
}

} // namespace calib
