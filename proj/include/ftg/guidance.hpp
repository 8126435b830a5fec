#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"

#include "ftg/diffusion.hpp"
#include "ftg/pianoroll.hpp"
#include "ftg/theory.hpp"

namespace ftg {

struct GuidanceConfig {
    // Classifier-free guidance weight; unset means 1 with a rhythm condition
    // and 0 without one.
    std::optional<double> w;
    bool harmonic = true;
    bool rhythm = true;
    double kappa = 1e-6;
    // Forces sigma = 0 on the jump that lands on t = 0.
    bool final_step_deterministic = true;

    void validate() const;
    double effective_w(bool has_rhythm) const;
};

enum class SamplerMode { Ddpm, Ddim };

struct SamplerPlan {
    SamplerMode mode = SamplerMode::Ddim;
    // Ascending timesteps tau_1 < ... < tau_m (DDIM only).
    std::vector<std::size_t> steps;
    double eta = 0.0;

    static SamplerPlan ddpm();
    // `count` timesteps spread evenly over [1, T].
    static SamplerPlan ddim(std::size_t count, std::size_t total_steps, double eta = 0.0);
    static SamplerPlan ddim(std::vector<std::size_t> steps, double eta = 0.0);

    void validate(std::size_t total_steps) const;
};

struct Conditions {
    ChordProgression chords;
    std::optional<RhythmPattern> rhythm;
    std::optional<PianoRoll> melody;
    ConstraintMask mask;
    std::size_t length = 64;
    std::size_t pitches = kPitches;

    bool has_rhythm() const { return rhythm && !rhythm->empty(); }
};

// eps_c + w (eps_cr - eps_c).
LatentRoll cfg_combine(const LatentRoll& eps_c, const LatentRoll& eps_cr, double w);

// (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
LatentRoll predict_x0(const LatentRoll& x_t, const LatentRoll& eps, std::size_t t, const NoiseSchedule& sched);

// Smallest change to eps_hat that puts the predicted x0 at or below 1/2 - kappa
// on every out-of-key cell of both channels.
LatentRoll correct_harmonic(const LatentRoll& eps_hat, const LatentRoll& x_t, std::size_t t,
                            const ConstraintMask& mask, double kappa, const NoiseSchedule& sched);

// Per-column onset-count projection (exactly / at least / none) on the onset
// channel. Candidates follow mask.rhythm_candidates().
LatentRoll correct_rhythm(const LatentRoll& eps_hat, const LatentRoll& x_t, std::size_t t,
                          const ConstraintMask& mask, double kappa, const NoiseSchedule& sched);

// Harmonic clamp followed by the rhythm projection restricted to in-key
// pitches.
LatentRoll correct_joint(const LatentRoll& eps_hat, const LatentRoll& x_t, std::size_t t,
                         const ConstraintMask& mask, double kappa, const NoiseSchedule& sched);

// Columns whose rhythm requirement cannot be met. `in_key_only` restricts
// candidates to in-key pitches.
std::vector<std::size_t> infeasible_columns(const ConstraintMask& mask, bool in_key_only);

// sqrt(abar_s) x0_hat + sqrt(1 - abar_s - sigma^2) eps + sigma noise.
LatentRoll denoise_step(const LatentRoll& x_t, const LatentRoll& eps, std::size_t t, std::size_t s, double sigma,
                        const NoiseSchedule& sched, const LatentRoll& noise);

// One DDPM step t -> t-1 using the schedule's sigma_t (0 at t = 1 when
// `deterministic_final`).
LatentRoll ddpm_step(const LatentRoll& x_t, const LatentRoll& eps_tilde, std::size_t t, const NoiseSchedule& sched,
                     const LatentRoll& noise, bool deterministic_final = true);

struct SampleResult {
    LatentRoll x0;
    PianoRoll roll;
};

// Optional per-step record of the trajectory (x at each visited timestep,
// starting with x_T).
struct SampleTrace {
    std::vector<std::size_t> timesteps;
    std::vector<LatentRoll> states;
};

SampleResult sample(const Denoiser& denoiser, const NoiseSchedule& sched, const Conditions& conditions,
                    const GuidanceConfig& guidance, const SamplerPlan& plan, std::uint64_t seed,
                    SampleTrace* trace = nullptr);

nlohmann::json to_json(const GuidanceConfig& g);
GuidanceConfig guidance_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SamplerPlan& p);
SamplerPlan sampler_plan_from_json(const nlohmann::json& j, std::size_t total_steps);

}  // namespace ftg
