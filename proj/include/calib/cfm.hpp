#pragma once

// Conditional flow matching. A velocity network v(xi, tau, eta) is trained on
// straight paths xi_tau = (1 - tau) xi_0 + tau xi_1 from standard-normal draws
// xi_0 to normalized parameters xi_1, whose velocity is xi_1 - xi_0. Sampling
// integrates d xi / d tau = v from tau = 0 to 1 with forward Euler.

#include "calib/ddl.hpp"

#include <optional>

namespace calib {

struct FlowTuple {
    nn::Vector xi_tau;
    double tau = 0.0;
    nn::Vector velocity;
};

/// Path point and target velocity for given endpoints and flow time.
FlowTuple flow_tuple(const nn::Vector& xi0, const nn::Vector& xi1, double tau);
/// Draws xi_0 ~ N(0, I) and tau ~ U[0, 1], then builds the tuple.
FlowTuple flow_training_tuple(const nn::Vector& target, Rng& rng);

struct CfmHyper {
    TrainHyper train;
    /// Fresh (xi_0, tau) draws per training sample per epoch.
    int draws_per_sample = 4;
    /// Replaces the random draw for every example (memorization checks).
    std::optional<std::pair<nn::Vector, double>> fixed_draw;

    void validate() const;
};

/// Velocity network input layout: [xi (d), tau, condition (c)].
struct TrainedFlow {
    nn::NetworkWeights weights;
    TrainLog log;
    int dim = 0;
};

/// Trains on rows of (condition, target). The logged initial and final losses
/// are evaluated on one fixed draw per sample; epoch_loss holds the mean
/// minibatch loss. Throws "training diverged at step S" on a non-finite loss.
TrainedFlow train_velocity_field(const nn::Matrix& conditions, const nn::Matrix& targets, const nn::MlpSpec& spec,
                                 const CfmHyper& hyper, std::uint64_t seed);

struct FlowSamples {
    nn::Matrix xi;               ///< K x d endpoints
    std::vector<bool> valid;     ///< false where the state became non-finite
};

/// Integrates K draws; draw k uses its own stream (seed, k).
FlowSamples sample_flow(const nn::NetworkWeights& weights, int dim, const nn::Vector& condition, int n_samples,
                        int n_steps, std::uint64_t seed);
/// Integrates from given starting points (rows of xi0).
FlowSamples integrate_flow(const nn::NetworkWeights& weights, const nn::Vector& condition, nn::Matrix xi0,
                           int n_steps);

struct VelocityModel {
    nn::NetworkWeights weights;
    EncoderConfig encoder;
    ParamBounds bounds;
    TrainLog log;
};

/// Default architecture: 8 + 1 + encoder features -> 128 x 3 (gelu) -> 8.
nn::MlpSpec default_cfm_spec(const EncoderConfig& encoder = {});

VelocityModel train_cfm(std::span<const SyntheticSample> train, const nn::MlpSpec& spec, const CfmHyper& hyper,
                        std::uint64_t seed, const EncoderConfig& encoder = {},
                        const ParamBounds& bounds = ParamBounds::defaults());

struct PosteriorSamples {
    std::vector<KineticParams> samples;  ///< valid samples, clipped into bounds
    std::size_t requested = 0;
    std::size_t invalid = 0;
    std::size_t clipped_samples = 0;     ///< samples with at least one clipped component
    std::array<std::size_t, KineticParams::kSize> clip_counts{};
    std::string observation_id;
    int n_steps = 0;
    std::uint64_t seed = 0;
};

struct SamplerOptions {
    int n_samples = 256;
    int n_steps = 100;
    std::uint64_t seed = 0;
};

PosteriorSamples sample_posterior(const VelocityModel& model, const ObservationSeries& series,
                                  const SamplerOptions& options = {}, const std::string& observation_id = "");

/// Componentwise mean of the valid samples, clipped into `bounds`. Throws "empty posterior".
KineticParams point_estimate(const PosteriorSamples& posterior, const ParamBounds& bounds);

struct ComponentSummary {
    double mean = 0.0;
    double std = 0.0;
    double q05 = 0.0;
    double q95 = 0.0;
};

/// Per-parameter mean, unbiased std and empirical 5%/95% quantiles (linear
/// interpolation between order statistics). Throws "insufficient samples".
std::array<ComponentSummary, KineticParams::kSize> uncertainty_summary(const PosteriorSamples& posterior);

/// Empirical quantile with linear interpolation between order statistics.
double empirical_quantile(std::vector<double> values, double q);

nlohmann::json cfm_model_to_json(const VelocityModel& model);
VelocityModel cfm_model_from_json(const nlohmann::json& j);
void save_cfm_model(const VelocityModel& model, const std::filesystem::path& path);
VelocityModel load_cfm_model(const std::filesystem::path& path);

/// One row per sample with the 8 parameter columns.
std::string posterior_csv(const PosteriorSamples& posterior);
nlohmann::json posterior_summary_json(const PosteriorSamples& posterior, const ParamBounds& bounds);

} // namespace calib
