#include <algorithm>
#include <cmath>

#include "ftg/guidance.hpp"

namespace ftg {

void GuidanceConfig::validate() const {
    if (w && !std::isfinite(*w)) throw InvalidInput("guidance weight must be finite");
    if (!(kappa > 0.0) || !(kappa < 0.5)) throw InvalidInput("kappa must lie in (0, 0.5)");
}

double GuidanceConfig::effective_w(bool has_rhythm) const {
    if (w) return *w;
    return has_rhythm ? 1.0 : 0.0;
}

SamplerPlan SamplerPlan::ddpm() { return SamplerPlan{SamplerMode::Ddpm, {}, 1.0}; }

SamplerPlan SamplerPlan::ddim(std::size_t count, std::size_t total_steps, double eta) {
    if (count == 0 || count > total_steps) throw InvalidInput("DDIM step count must lie in [1, T]");
    std::vector<std::size_t> steps;
    steps.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double frac = count == 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(count - 1);
        steps.push_back(1 + static_cast<std::size_t>(std::llround(frac * static_cast<double>(total_steps - 1))));
    }
    return SamplerPlan{SamplerMode::Ddim, std::move(steps), eta};
}

SamplerPlan SamplerPlan::ddim(std::vector<std::size_t> steps, double eta) {
    return SamplerPlan{SamplerMode::Ddim, std::move(steps), eta};
}

void SamplerPlan::validate(std::size_t total_steps) const {
    if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidInput("sampler eta must lie in [0, 1]");
    if (mode == SamplerMode::Ddpm) return;
    if (steps.empty()) throw InvalidInput("DDIM plan needs at least one timestep");
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (steps[i] < 1 || steps[i] > total_steps) throw InvalidInput("DDIM timestep outside [1, T]");
        if (i > 0 && steps[i] <= steps[i - 1]) throw InvalidInput("DDIM timesteps must be strictly increasing");
    }
}

LatentRoll denoise_step(const LatentRoll& x_t, const LatentRoll& eps, std::size_t t, std::size_t s, double sigma,
                        const NoiseSchedule& sched, const LatentRoll& noise) {
    if (s >= t) throw ScheduleError("denoise_step needs s < t");
    if (noise.shape() != x_t.shape()) throw ShapeMismatch("denoise_step: noise shape differs");
    const LatentRoll x0 = predict_x0(x_t, eps, t, sched);
    const double as = sched.alpha_bar(s);
    double dir = 1.0 - as - sigma * sigma;
    if (dir < 0.0) {
        if (dir < -1e-12) {
            throw ScheduleError("1 - abar_s - sigma^2 < 0 at t=" + std::to_string(t) + " (sigma too large)");
        }
        dir = 0.0;
    }
    const double ca = std::sqrt(as);
    const double cd = std::sqrt(dir);
    LatentRoll out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.values()[i] = ca * x0.values()[i] + cd * eps.values()[i] + sigma * noise.values()[i];
    }
    return out;
}

LatentRoll ddpm_step(const LatentRoll& x_t, const LatentRoll& eps_tilde, std::size_t t, const NoiseSchedule& sched,
                     const LatentRoll& noise, bool deterministic_final) {
    if (t < 1 || t > sched.steps()) throw ScheduleError("ddpm_step: t outside [1,T]");
    const double sigma = (t == 1 && deterministic_final) ? 0.0 : sched.sigma(t);
    return denoise_step(x_t, eps_tilde, t, t - 1, sigma, sched, noise);
}

namespace {

LatentRoll standard_normal(std::size_t length, std::size_t pitches, Rng& rng) {
    LatentRoll out(length, pitches);
    for (double& v : out.values()) v = rng.normal();
    return out;
}

}  // namespace

SampleResult sample(const Denoiser& denoiser, const NoiseSchedule& sched, const Conditions& cond,
                    const GuidanceConfig& guidance, const SamplerPlan& plan, std::uint64_t seed, SampleTrace* trace) {
    guidance.validate();
    plan.validate(sched.steps());
    const std::size_t L = cond.length;
    const std::size_t H = cond.pitches;
    if (cond.mask.length() != L || cond.mask.pitches() != H) throw ShapeMismatch("constraint mask does not match");
    if (cond.melody && (cond.melody->length() != L || cond.melody->pitches() != H)) {
        throw ShapeMismatch("melody does not match the roll shape");
    }
    const bool use_rhythm = guidance.rhythm && cond.mask.any_rhythm();
    if (use_rhythm) {
        const auto bad = infeasible_columns(cond.mask, guidance.harmonic || cond.mask.rhythm_in_key_only());
        if (!bad.empty()) throw InfeasibleConstraint("rhythm constraint cannot be satisfied", bad);
    }

    const double w = guidance.effective_w(cond.has_rhythm());
    const ConditionRoll chord_only = build_condition_c(cond.chords, L, H);
    const RhythmPattern rhythm = cond.rhythm ? *cond.rhythm : RhythmPattern(L, {});
    const ConditionRoll chord_rhythm = build_condition_cr(cond.chords, rhythm, L, H);
    const PianoRoll* melody = cond.melody ? &*cond.melody : nullptr;

    // Timesteps visited, descending, ending at 0.
    std::vector<std::size_t> path;
    if (plan.mode == SamplerMode::Ddpm) {
        for (std::size_t t = sched.steps(); t >= 1; --t) path.push_back(t);
    } else {
        path.assign(plan.steps.rbegin(), plan.steps.rend());
    }
    path.push_back(0);

    Rng rng(seed);
    LatentRoll x = standard_normal(L, H, rng);
    if (trace) {
        trace->timesteps = {path.front()};
        trace->states = {x};
    }
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        const std::size_t t = path[i];
        const std::size_t s = path[i + 1];
        LatentRoll eps = denoiser.predict(concat_model_input(x, chord_only, melody), t);
        if (w != 0.0) {
            const LatentRoll eps_cr = denoiser.predict(concat_model_input(x, chord_rhythm, melody), t);
            eps = cfg_combine(eps, eps_cr, w);
        }
        if (guidance.harmonic && use_rhythm) {
            eps = correct_joint(eps, x, t, cond.mask, guidance.kappa, sched);
        } else if (guidance.harmonic) {
            eps = correct_harmonic(eps, x, t, cond.mask, guidance.kappa, sched);
        } else if (use_rhythm) {
            eps = correct_rhythm(eps, x, t, cond.mask, guidance.kappa, sched);
        }
        const LatentRoll noise = standard_normal(L, H, rng);
        double sigma = 0.0;
        if (plan.mode == SamplerMode::Ddpm && s + 1 == t) {
            sigma = sched.sigma(t);
        } else {
            sigma = sched.sigma_between(t, s, plan.eta);
        }
        if (s == 0 && guidance.final_step_deterministic) sigma = 0.0;
        x = denoise_step(x, eps, t, s, sigma, sched, noise);
        if (trace) {
            trace->timesteps.push_back(s);
            trace->states.push_back(x);
        }
    }
    PianoRoll roll = binarize(x, guidance.harmonic ? &cond.mask : nullptr);
    return SampleResult{std::move(x), std::move(roll)};
}

nlohmann::json to_json(const GuidanceConfig& g) {
    nlohmann::json j{{"harmonic", g.harmonic},
                     {"rhythm", g.rhythm},
                     {"kappa", g.kappa},
                     {"final_step_deterministic", g.final_step_deterministic}};
    j["w"] = g.w ? nlohmann::json(*g.w) : nlohmann::json(nullptr);
    return j;
}

GuidanceConfig guidance_from_json(const nlohmann::json& j) {
    GuidanceConfig g;
    if (j.contains("w") && !j.at("w").is_null()) g.w = j.at("w").get<double>();
    g.harmonic = j.value("harmonic", g.harmonic);
    g.rhythm = j.value("rhythm", g.rhythm);
    g.kappa = j.value("kappa", g.kappa);
    g.final_step_deterministic = j.value("final_step_deterministic", g.final_step_deterministic);
    g.validate();
    return g;
}

nlohmann::json to_json(const SamplerPlan& p) {
    return {{"mode", p.mode == SamplerMode::Ddpm ? "ddpm" : "ddim"}, {"steps", p.steps}, {"eta", p.eta}};
}

SamplerPlan sampler_plan_from_json(const nlohmann::json& j, std::size_t total_steps) {
    const std::string mode = j.value("mode", std::string("ddim"));
    SamplerPlan plan;
    if (mode == "ddpm") {
        plan = SamplerPlan::ddpm();
        plan.eta = j.value("eta", 1.0);
    } else if (mode == "ddim") {
        const double eta = j.value("eta", 0.0);
        const auto& steps = j.contains("steps") ? j.at("steps") : nlohmann::json(10);
        if (steps.is_array()) {
            plan = SamplerPlan::ddim(steps.get<std::vector<std::size_t>>(), eta);
        } else {
            plan = SamplerPlan::ddim(steps.get<std::size_t>(), total_steps, eta);
        }
    } else {
        throw InvalidInput("sampler mode must be \"ddpm\" or \"ddim\"");
    }
    plan.validate(total_steps);
    return plan;
}

}  // namespace ftg
