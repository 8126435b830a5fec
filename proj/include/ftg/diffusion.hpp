#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ftg/pianoroll.hpp"
#include "ftg/rng.hpp"
#include "ftg/theory.hpp"

namespace ftg {

// Which closed form backs the DDPM backward noise scale.
//   Standard:     sqrt((1-abar_{t-1})/(1-abar_t)) * sqrt(1 - abar_t/abar_{t-1})
//   BetaRatio: sqrt(beta_{t-1}/beta_t) * sqrt(1 - abar_t/abar_{t-1}), beta_0 := beta_1
enum class SigmaVariant { Standard, BetaRatio };

class NoiseSchedule {
public:
    NoiseSchedule() = default;

    static NoiseSchedule linear(std::size_t steps, double beta_first, double beta_last, double eta = 1.0,
                                SigmaVariant variant = SigmaVariant::Standard);
    // Betas indexed t = 1..T. Zero betas are accepted for degenerate tests.
    static NoiseSchedule from_betas(std::vector<double> betas, double eta = 1.0,
                                    SigmaVariant variant = SigmaVariant::Standard);

    std::size_t steps() const noexcept { return betas_.size(); }
    double beta(std::size_t t) const;
    // abar_0 = 1.
    double alpha_bar(std::size_t t) const;
    // DDPM backward scale for t -> t-1, already multiplied by eta.
    double sigma(std::size_t t) const;
    // Backward scale for a jump t -> s (s < t), eta-interpolated.
    double sigma_between(std::size_t t, std::size_t s, double eta) const;

    double eta() const noexcept { return eta_; }
    SigmaVariant variant() const noexcept { return variant_; }
    double beta_first() const { return betas_.front(); }
    double beta_last() const { return betas_.back(); }

    nlohmann::json describe() const;

private:
    void check_step(std::size_t t) const;

    std::vector<double> betas_;
    std::vector<double> alpha_bar_;  // index t, alpha_bar_[0] = 1
    std::vector<double> sigma_;      // index t, sigma_[0] unused
    double eta_ = 1.0;
    SigmaVariant variant_ = SigmaVariant::Standard;
};

// Defaults: T = 1000, beta in [8.5e-4, 1.2e-2].
NoiseSchedule default_schedule(double eta = 1.0);

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
LatentRoll forward_noise(const LatentRoll& x0, std::size_t t, const LatentRoll& eps, const NoiseSchedule& sched);

// Noise predictor eps_theta(input, t). Implementations must be safe for
// concurrent const calls.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual LatentRoll predict(const ModelInput& input, std::size_t t) const = 0;
    virtual bool supports_conditions() const = 0;
    virtual bool supports_melody() const = 0;
    virtual std::string name() const = 0;
};

// Denoisers with parameters that training_step can update.
class TrainableDenoiser : public Denoiser {
public:
    virtual std::span<double> parameters() = 0;
    virtual std::span<const double> parameters() const = 0;
    // Returns the per-cell mean squared error against `target` and adds its
    // gradient w.r.t. parameters() into `grad`.
    virtual double loss_and_gradient(const ModelInput& input, std::size_t t, const LatentRoll& target,
                                     std::span<double> grad) const = 0;
};

// Exact eps for per-cell Gaussian data N(mu, v).
LatentRoll oracle_epsilon(const LatentRoll& x_t, std::size_t t, const NoiseSchedule& sched, const LatentRoll& mean,
                          const LatentRoll& variance);

class GaussianOracleDenoiser : public Denoiser {
public:
    GaussianOracleDenoiser(LatentRoll mean, LatentRoll variance, NoiseSchedule sched);

    LatentRoll predict(const ModelInput& input, std::size_t t) const override;
    bool supports_conditions() const override { return false; }
    bool supports_melody() const override { return false; }
    std::string name() const override { return "gaussian-oracle"; }

    const LatentRoll& mean() const noexcept { return mean_; }
    const LatentRoll& variance() const noexcept { return variance_; }

private:
    LatentRoll mean_;
    LatentRoll variance_;
    NoiseSchedule sched_;
};

struct ToyDenoiserConfig {
    std::size_t width = 12;
    std::size_t embed_dim = 16;
    std::size_t kernel = 3;  // odd; time x pitch window of the two hidden convs
    std::uint64_t seed = 0;

    bool operator==(const ToyDenoiserConfig&) const = default;
};

// Two hidden 2D convolutions (SiLU) with additive timestep-embedding biases, a
// 1x1 output convolution, and a timestep-gated skip from the latent channels.
class ToyDenoiser : public TrainableDenoiser {
public:
    explicit ToyDenoiser(ToyDenoiserConfig config = {});

    LatentRoll predict(const ModelInput& input, std::size_t t) const override;
    bool supports_conditions() const override { return true; }
    bool supports_melody() const override { return true; }
    std::string name() const override { return "toy-conv"; }

    std::span<double> parameters() override { return params_; }
    std::span<const double> parameters() const override { return params_; }
    double loss_and_gradient(const ModelInput& input, std::size_t t, const LatentRoll& target,
                             std::span<double> grad) const override;

    std::size_t parameter_count() const noexcept { return params_.size(); }
    const ToyDenoiserConfig& config() const noexcept { return config_; }
    void set_parameters(std::span<const double> values);

    static constexpr std::size_t kInputChannels = 6;
    static constexpr std::size_t kOutputChannels = 2;

private:
    struct Layout {
        std::size_t w1, b1, a1, w2, b2, a2, w3, b3, g0, g1, total;
    };
    struct Activations;

    void forward(const ModelInput& input, std::size_t t, Activations& act) const;
    std::vector<double> embedding(std::size_t t) const;

    ToyDenoiserConfig config_;
    Layout layout_{};
    std::vector<double> params_;
};

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    double learning_rate = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double weight_decay = 1e-2;
    // Probability of training on the chord-only condition form.
    double p_drop = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Decoupled weight decay Adam.
class AdamW {
public:
    AdamW(std::size_t parameter_count, const TrainConfig& config);
    void step(std::span<double> params, std::span<const double> grad);
    std::size_t steps_taken() const noexcept { return t_; }

private:
    TrainConfig config_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::size_t t_ = 0;
};

struct TrainingExample {
    PianoRoll x0;  // accompaniment
    ChordProgression chords;
    RhythmPattern rhythm;
    std::optional<PianoRoll> melody;
};

// Derives chords and rhythm from the accompaniment itself.
TrainingExample make_training_example(PianoRoll x0, std::optional<PianoRoll> melody = std::nullopt,
                                      std::size_t chord_granularity = kStepsPerBeat);

struct ConditionCounters {
    std::size_t chord_only = 0;
    std::size_t chord_rhythm = 0;
};

// One optimizer update on a batch; returns the batch mean loss.
double training_step(std::span<const TrainingExample> batch, TrainableDenoiser& model, AdamW& optimizer,
                     const TrainConfig& config, const NoiseSchedule& sched, Rng& rng,
                     ConditionCounters* counters = nullptr);

struct EpochLog {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    std::vector<double> step_losses;
};

// Shuffled mini-batch epochs over `data`.
std::vector<EpochLog> train(std::span<const TrainingExample> data, TrainableDenoiser& model, const TrainConfig& config,
                            const NoiseSchedule& sched);

// "FTGC" checkpoint: schedule + toy model parameters, float32 little-endian.
struct Checkpoint {
    NoiseSchedule schedule;
    ToyDenoiser model;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const NoiseSchedule& sched, const ToyDenoiser& model);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const NoiseSchedule& sched, const ToyDenoiser& model);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ftg
