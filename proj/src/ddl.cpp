#include "calib/ddl.hpp"

#include "calib/csv.hpp"
#include "calib/error.hpp"
#include "calib/random.hpp"
#include "calib/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace calib {

void EncoderConfig::validate() const {
    if (grid_size < 2) throw Error("encoder grid_size must be >= 2");
    for (double s : {scale_X, scale_S, scale_P, duration_scale, s0_scale}) {
        if (!(s > 0.0) || !std::isfinite(s)) throw Error("encoder scales must be finite and > 0");
    }
}

namespace {

// Piecewise-linear interpolation of (t, y) at sorted query points.
void resample(const std::vector<double>& t, const std::vector<double>& y, double duration, int m, double scale,
              nn::Vector& out, Eigen::Index offset) {
    std::size_t seg = 0;
    for (int j = 0; j < m; ++j) {
        const double q = j == m - 1 ? duration : duration * j / (m - 1);
        while (seg + 2 < t.size() && t[seg + 1] <= q) ++seg;
        const double w = (q - t[seg]) / (t[seg + 1] - t[seg]);
        const double v = w >= 1.0 ? y[seg + 1] : y[seg] + w * (y[seg + 1] - y[seg]);
        out(offset + j) = v / scale;
    }
}

} // namespace

nn::Vector encode_observation(const ObservationSeries& series, const EncoderConfig& config) {
    if (series.size() < 2) throw Error("too short: observation series needs at least 2 points");
    series.validate();
    config.validate();
    const int m = config.grid_size;
    const double duration = series.duration();
    nn::Vector f(config.feature_count());
    resample(series.times, series.X, duration, m, config.scale_X, f, 0);
    resample(series.times, series.S, duration, m, config.scale_S, f, m);
    resample(series.times, series.P, duration, m, config.scale_P, f, 2 * m);
    f(3 * m) = duration / config.duration_scale;
    f(3 * m + 1) = series.s0 / config.s0_scale;
    return f;
}

nn::Matrix encode_batch(std::span<const SyntheticSample> samples, const EncoderConfig& config) {
    nn::Matrix x(static_cast<Eigen::Index>(samples.size()), config.feature_count());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = encode_observation(samples[i].observation, config).transpose();
    }
    return x;
}

nn::Matrix target_batch(std::span<const SyntheticSample> samples, const ParamBounds& bounds) {
    nn::Matrix y(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(KineticParams::kSize));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto u = normalize_params(samples[i].params, bounds);
        for (std::size_t k = 0; k < u.size(); ++k) y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = u[k];
    }
    return y;
}

void TrainHyper::validate() const {
    if (epochs < 1) throw Error("epochs must be >= 1");
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw Error("learning_rate must be > 0");
    if (!(final_lr_fraction > 0.0) || final_lr_fraction > 1.0) throw Error("final_lr_fraction must be in (0, 1]");
}

double TrainHyper::learning_rate_at(int epoch) const {
    if (epochs == 1) return learning_rate;
    const double progress = static_cast<double>(epoch) / (epochs - 1);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return learning_rate * (final_lr_fraction + (1.0 - final_lr_fraction) * cosine);
}

TrainedNetwork train_regressor(const nn::Matrix& inputs, const nn::Matrix& targets, const nn::MlpSpec& spec,
                               const TrainHyper& hyper, std::uint64_t seed) {
    spec.validate();
    hyper.validate();
    const Eigen::Index n = inputs.rows();
    if (n == 0) throw Error("training set is empty");
    if (targets.rows() != n) throw Error("inputs and targets differ in row count");
    if (inputs.cols() != spec.input_size() || targets.cols() != spec.output_size()) {
        throw Error("training data do not match the network shape");
    }

    TrainedNetwork out{nn::NetworkWeights::initialize(spec, seed), {}};
    out.log.initial_loss = nn::batch_squared_error_value(out.weights, inputs, targets);
    nn::AdamState adam = nn::AdamState::for_weights(out.weights);

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        Rng rng = make_rng(seed, streams::kShuffle, static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        adam.hyper.learning_rate = hyper.learning_rate_at(epoch);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
            const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(end));
            nn::LossAndGrad lg;
            try {
                lg = nn::batch_squared_error(out.weights, inputs(rows, Eigen::all), targets(rows, Eigen::all));
            } catch (const Error&) {
                throw Error("training diverged at epoch " + std::to_string(epoch));
            }
            nn::adam_step(out.weights, lg.grad, adam);
        }
        const double loss = nn::batch_squared_error_value(out.weights, inputs, targets);
        if (!std::isfinite(loss)) throw Error("training diverged at epoch " + std::to_string(epoch));
        out.log.epoch_loss.push_back(loss);
    }
    out.log.final_loss = out.log.epoch_loss.back();
    return out;
}

nn::MlpSpec default_ddl_spec(const EncoderConfig& encoder) {
    return {{encoder.feature_count(), 128, 128, 128, static_cast<int>(KineticParams::kSize)}, nn::Activation::kGelu};
}

DdlModel train_ddl(std::span<const SyntheticSample> train, const nn::MlpSpec& spec, const TrainHyper& hyper,
                   std::uint64_t seed, const EncoderConfig& encoder, const ParamBounds& bounds) {
    if (train.empty()) throw Error("training set is empty");
    bounds.validate();
    if (spec.output_size() != static_cast<int>(KineticParams::kSize)) throw Error("DDL network must output 8 values");
    TrainedNetwork t = train_regressor(encode_batch(train, encoder), target_batch(train, bounds), spec, hyper, seed);
    return {std::move(t.weights), encoder, bounds, std::move(t.log)};
}

bool ClippedParams::any_clipped() const {
    return std::any_of(clipped.begin(), clipped.end(), [](bool b) { return b; });
}

ClippedParams denormalize_clipped(std::span<const double> u, const ParamBounds& bounds) {
    if (u.size() != KineticParams::kSize) throw Error("expected 8 normalized parameters");
    ClippedParams out;
    std::array<double, KineticParams::kSize> c{};
    for (std::size_t k = 0; k < c.size(); ++k) {
        c[k] = std::clamp(u[k], 0.0, 1.0);
        out.clipped[k] = c[k] != u[k];
    }
    out.params = denormalize_params(c, bounds);
    return out;
}

ClippedParams predict_params(const DdlModel& model, const ObservationSeries& series) {
    const nn::Vector raw = nn::mlp_forward(model.weights, encode_observation(series, model.encoder));
    if (!raw.allFinite()) throw Error("non-finite network output");
    return denormalize_clipped(std::span<const double>(raw.data(), static_cast<std::size_t>(raw.size())),
                               model.bounds);
}

// ---------------------------------------------------------------------------

nlohmann::json encoder_to_json(const EncoderConfig& e) {
    return {{"grid_size", e.grid_size},
            {"scales", {{"X", e.scale_X}, {"S", e.scale_S}, {"P", e.scale_P}}},
            {"duration_scale", e.duration_scale},
            {"s0_scale", e.s0_scale}};
}

EncoderConfig encoder_from_json(const nlohmann::json& j) {
    EncoderConfig e;
    e.grid_size = require_field<int>(j, "grid_size", "encoder");
    const auto scales = require_field<nlohmann::json>(j, "scales", "encoder");
    e.scale_X = require_field<double>(scales, "X", "encoder.scales");
    e.scale_S = require_field<double>(scales, "S", "encoder.scales");
    e.scale_P = require_field<double>(scales, "P", "encoder.scales");
    e.duration_scale = require_field<double>(j, "duration_scale", "encoder");
    e.s0_scale = require_field<double>(j, "s0_scale", "encoder");
    e.validate();
    return e;
}

nlohmann::json hyper_to_json(const TrainHyper& h) {
    return {{"epochs", h.epochs},
            {"batch_size", h.batch_size},
            {"learning_rate", h.learning_rate},
            {"final_lr_fraction", h.final_lr_fraction}};
}

TrainHyper hyper_from_json(const nlohmann::json& j) {
    TrainHyper h;
    h.epochs = require_field<int>(j, "epochs", "hyper");
    h.batch_size = require_field<int>(j, "batch_size", "hyper");
    h.learning_rate = require_field<double>(j, "learning_rate", "hyper");
    h.final_lr_fraction = require_field<double>(j, "final_lr_fraction", "hyper");
    h.validate();
    return h;
}

nlohmann::json ddl_model_to_json(const DdlModel& model) {
    return {{"format", "calib-ddl-model"},
            {"version", 1},
            {"encoder", encoder_to_json(model.encoder)},
            {"bounds", model.bounds},
            {"training", {{"initial_loss", model.log.initial_loss},
                          {"final_loss", model.log.final_loss},
                          {"epoch_loss", model.log.epoch_loss}}},
            {"weights", nn::weights_to_json(model.weights)}};
}

DdlModel ddl_model_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != "calib-ddl-model") {
        throw Error("schema mismatch: expected a calib-ddl-model file");
    }
    if (require_field<int>(j, "version", "model") != 1) throw Error("schema mismatch: unsupported model version");
    DdlModel m;
    m.encoder = encoder_from_json(require_field<nlohmann::json>(j, "encoder", "model"));
    m.bounds = require_field<ParamBounds>(j, "bounds", "model");
    const auto training = require_field<nlohmann::json>(j, "training", "model");
    m.log.initial_loss = require_field<double>(training, "initial_loss", "model.training");
    m.log.final_loss = require_field<double>(training, "final_loss", "model.training");
    m.log.epoch_loss = require_field<std::vector<double>>(training, "epoch_loss", "model.training");
    m.weights = nn::weights_from_json(require_field<nlohmann::json>(j, "weights", "model"));
    if (m.weights.spec.input_size() != m.encoder.feature_count() ||
        m.weights.spec.output_size() != static_cast<int>(KineticParams::kSize)) {
        throw Error("schema mismatch: network shape does not match the encoder");
    }
    return m;
}

void save_ddl_model(const DdlModel& model, const std::filesystem::path& path) {
    csv::write_file_atomic(path, ddl_model_to_json(model).dump(1) + "\n");
}

DdlModel load_ddl_model(const std::filesystem::path& path) {
    try {
        return ddl_model_from_json(nlohmann::json::parse(csv::read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed model file " + path.string() + ": " + e.what());
    }
}

} // namespace calib
