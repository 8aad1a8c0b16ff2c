#pragma once

// Direct deep learning: an MLP maps a fixed-length encoding of a concentration
// series to kinetic parameters normalized onto [0,1]^8.

#include "calib/datagen.hpp"
#include "calib/nnkit.hpp"

#include <filesystem>
#include <span>

namespace calib {

/// Fixed-grid resampling of an observation series. Features are the M grid
/// values of X, S and P divided by their scales, then duration and S0 scaled.
struct EncoderConfig {
    int grid_size = 32;
    double scale_X = 20.0;
    double scale_S = 100.0;
    double scale_P = 60.0;
    double duration_scale = 140.0;
    double s0_scale = 100.0;

    int feature_count() const { return 3 * grid_size + 2; }
    void validate() const;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Throws "too short" for fewer than 2 points.
nn::Vector encode_observation(const ObservationSeries& series, const EncoderConfig& config = {});

/// One encoded series per row.
nn::Matrix encode_batch(std::span<const SyntheticSample> samples, const EncoderConfig& config);
/// Normalized parameter targets, one per row.
nn::Matrix target_batch(std::span<const SyntheticSample> samples, const ParamBounds& bounds);

struct TrainHyper {
    int epochs = 300;
    int batch_size = 64;
    double learning_rate = 1e-3;
    /// Cosine decay from learning_rate to learning_rate * final_lr_fraction.
    double final_lr_fraction = 0.05;

    void validate() const;
    double learning_rate_at(int epoch) const;

    friend bool operator==(const TrainHyper&, const TrainHyper&) = default;
};

struct TrainLog {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> epoch_loss;
};

struct TrainedNetwork {
    nn::NetworkWeights weights;
    TrainLog log;
};

/// Minimizes (1/N) sum ||NN(x_i) - y_i||^2 with minibatch Adam; rows are
/// shuffled every epoch from the seed. The logged losses are full-set losses.
/// Throws "training diverged at epoch E" on a non-finite loss.
TrainedNetwork train_regressor(const nn::Matrix& inputs, const nn::Matrix& targets, const nn::MlpSpec& spec,
                               const TrainHyper& hyper, std::uint64_t seed);

struct DdlModel {
    nn::NetworkWeights weights;
    EncoderConfig encoder;
    ParamBounds bounds;
    TrainLog log;
};

/// Default architecture: encoder features -> 128 x 3 (gelu) -> 8.
nn::MlpSpec default_ddl_spec(const EncoderConfig& encoder = {});

DdlModel train_ddl(std::span<const SyntheticSample> train, const nn::MlpSpec& spec, const TrainHyper& hyper,
                   std::uint64_t seed, const EncoderConfig& encoder = {},
                   const ParamBounds& bounds = ParamBounds::defaults());

struct ClippedParams {
    KineticParams params;
    std::array<bool, KineticParams::kSize> clipped{};
    bool any_clipped() const;
};

/// Maps a normalized vector onto the bounds, clipping each component into [0,1] first.
ClippedParams denormalize_clipped(std::span<const double> u, const ParamBounds& bounds);

ClippedParams predict_params(const DdlModel& model, const ObservationSeries& series);

nlohmann::json encoder_to_json(const EncoderConfig& e);
EncoderConfig encoder_from_json(const nlohmann::json& j);
nlohmann::json hyper_to_json(const TrainHyper& h);
TrainHyper hyper_from_json(const nlohmann::json& j);

nlohmann::json ddl_model_to_json(const DdlModel& model);
DdlModel ddl_model_from_json(const nlohmann::json& j);
void save_ddl_model(const DdlModel& model, const std::filesystem::path& path);
DdlModel load_ddl_model(const std::filesystem::path& path);

} // namespace calib
