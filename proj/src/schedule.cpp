#include <cmath>

#include "ftg/diffusion.hpp"

namespace ftg {

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_first, double beta_last, double eta,
                                    SigmaVariant variant) {
    if (steps == 0) throw ScheduleError("schedule needs at least one step");
    if (!(beta_first > 0.0) || !(beta_first <= beta_last) || !(beta_last < 1.0)) {
        throw ScheduleError("linear schedule requires 0 < beta_first <= beta_last < 1");
    }
    std::vector<double> betas(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        betas[i] = beta_first + (beta_last - beta_first) * frac;
    }
    return from_betas(std::move(betas), eta, variant);
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas, double eta, SigmaVariant variant) {
    if (betas.empty()) throw ScheduleError("schedule needs at least one step");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ScheduleError("eta must lie in [0, 1]");
    for (double b : betas) {
        if (!(b >= 0.0 && b < 1.0)) throw ScheduleError("betas must lie in [0, 1)");
    }
    NoiseSchedule s;
    s.betas_ = std::move(betas);
    s.eta_ = eta;
    s.variant_ = variant;
    const std::size_t n = s.betas_.size();
    s.alpha_bar_.assign(n + 1, 1.0);
    for (std::size_t t = 1; t <= n; ++t) s.alpha_bar_[t] = s.alpha_bar_[t - 1] * (1.0 - s.betas_[t - 1]);
    s.sigma_.assign(n + 1, 0.0);
    for (std::size_t t = 1; t <= n; ++t) {
        if (variant == SigmaVariant::Standard) {
            s.sigma_[t] = s.sigma_between(t, t - 1, eta);
        } else {
            const double prev_beta = t >= 2 ? s.betas_[t - 2] : s.betas_[0];
            const double ratio = s.betas_[t - 1] > 0.0 ? prev_beta / s.betas_[t - 1] : 0.0;
            s.sigma_[t] = eta * std::sqrt(ratio) * std::sqrt(1.0 - s.alpha_bar_[t] / s.alpha_bar_[t - 1]);
        }
    }
    return s;
}

void NoiseSchedule::check_step(std::size_t t) const {
    if (t > betas_.size()) {
        throw ScheduleError("timestep " + std::to_string(t) + " outside [0," + std::to_string(betas_.size()) + "]");
    }
}

double NoiseSchedule::beta(std::size_t t) const {
    if (t == 0) throw ScheduleError("beta is defined for t >= 1");
    check_step(t);
    return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
    check_step(t);
    return alpha_bar_[t];
}

double NoiseSchedule::sigma(std::size_t t) const {
    if (t == 0) throw ScheduleError("sigma is defined for t >= 1");
    check_step(t);
    return sigma_[t];
}

double NoiseSchedule::sigma_between(std::size_t t, std::size_t s, double eta) const {
    check_step(t);
    if (s >= t) throw ScheduleError("sigma_between needs s < t");
    const double at = alpha_bar_[t];
    const double as = alpha_bar_[s];
    if (1.0 - at <= 0.0) return 0.0;
    return eta * std::sqrt((1.0 - as) / (1.0 - at)) * std::sqrt(1.0 - at / as);
}

nlohmann::json NoiseSchedule::describe() const {
    return {{"steps", steps()},
            {"beta_first", betas_.front()},
            {"beta_last", betas_.back()},
            {"alpha_bar_T", alpha_bar_.back()},
            {"eta", eta_},
            {"sigma", variant_ == SigmaVariant::Standard ? "standard" : "beta-ratio"}};
}

NoiseSchedule default_schedule(double eta) { return NoiseSchedule::linear(1000, 8.5e-4, 1.2e-2, eta); }

LatentRoll forward_noise(const LatentRoll& x0, std::size_t t, const LatentRoll& eps, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.steps()) throw ScheduleError("forward_noise: t outside [1,T]");
    if (x0.shape() != eps.shape()) throw ShapeMismatch("forward_noise: x0 and eps shapes differ");
    const double a = std::sqrt(sched.alpha_bar(t));
    const double b = std::sqrt(1.0 - sched.alpha_bar(t));
    LatentRoll out(x0.shape());
    auto dst = out.values();
    const auto xs = x0.values();
    const auto es = eps.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * xs[i] + b * es[i];
    return out;
}

LatentRoll oracle_epsilon(const LatentRoll& x_t, std::size_t t, const NoiseSchedule& sched, const LatentRoll& mean,
                          const LatentRoll& variance) {
    if (x_t.shape() != mean.shape() || x_t.shape() != variance.shape()) {
        throw ShapeMismatch("oracle_epsilon: shape mismatch");
    }
    const double ab = sched.alpha_bar(t);
    const double sa = std::sqrt(ab);
    const double sb = std::sqrt(1.0 - ab);
    LatentRoll out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = variance.values()[i];
        out.values()[i] = (x_t.values()[i] - sa * mean.values()[i]) * sb / (ab * v + 1.0 - ab);
    }
    return out;
}

GaussianOracleDenoiser::GaussianOracleDenoiser(LatentRoll mean, LatentRoll variance, NoiseSchedule sched)
    : mean_(std::move(mean)), variance_(std::move(variance)), sched_(std::move(sched)) {
    if (mean_.shape() != variance_.shape()) throw ShapeMismatch("oracle mean/variance shapes differ");
    for (double v : variance_.values()) {
        if (!(v > 0.0)) throw InvalidInput("oracle variance must be positive");
    }
}

LatentRoll GaussianOracleDenoiser::predict(const ModelInput& input, std::size_t t) const {
    return oracle_epsilon(input.latent(), t, sched_, mean_, variance_);
}

}  // namespace ftg
