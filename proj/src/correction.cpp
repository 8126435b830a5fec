#include <algorithm>
#include <cmath>
#include <numeric>

#include "ftg/guidance.hpp"

namespace ftg {

namespace {

void check_shapes(const LatentRoll& eps_hat, const LatentRoll& x_t, const ConstraintMask& mask) {
    if (eps_hat.shape() != x_t.shape()) throw ShapeMismatch("eps and x_t shapes differ");
    if (mask.length() != x_t.length() || mask.pitches() != x_t.pitches()) {
        throw ShapeMismatch("constraint mask does not match the roll");
    }
}

// Noise values that place the predicted x0 exactly on `level`. Larger eps means
// smaller predicted x0.
struct Bounds {
    double sa;
    double sb;
    double off_level;
    double on_level;

    double eps_for(double x, double level) const { return (x - sa * level) / sb; }
};

Bounds bounds_for(std::size_t t, double kappa, const NoiseSchedule& sched) {
    if (!(kappa > 0.0)) throw InvalidInput("kappa must be positive");
    const double ab = sched.alpha_bar(t);
    if (!(ab < 1.0)) throw ScheduleError("noise correction needs abar_t < 1");
    return Bounds{std::sqrt(ab), std::sqrt(1.0 - ab), 0.5 - kappa, 0.5 + kappa};
}

void clamp_off(LatentRoll& eps, const LatentRoll& x_t, std::size_t c, std::size_t l, std::size_t h, const Bounds& b) {
    double& e = eps(c, l, h);
    e = std::max(e, b.eps_for(x_t(c, l, h), b.off_level));
}

void force_on(LatentRoll& eps, const LatentRoll& x_t, std::size_t c, std::size_t l, std::size_t h, const Bounds& b) {
    double& e = eps(c, l, h);
    e = std::min(e, b.eps_for(x_t(c, l, h), b.on_level));
}

void apply_harmonic(LatentRoll& eps, const LatentRoll& x_t, const ConstraintMask& mask, const Bounds& b) {
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t l = 0; l < x_t.length(); ++l) {
            for (std::size_t h = 0; h < x_t.pitches(); ++h) {
                if (mask.out_of_key(l, h)) clamp_off(eps, x_t, c, l, h, b);
            }
        }
    }
}

std::vector<std::size_t> candidates_for(const ConstraintMask& mask, std::size_t l, bool in_key_only) {
    std::vector<std::size_t> out;
    for (std::size_t h = 0; h < mask.pitches(); ++h) {
        if (!in_key_only || !mask.out_of_key(l, h)) out.push_back(h);
    }
    return out;
}

void apply_rhythm(LatentRoll& eps, const LatentRoll& x_t, const ConstraintMask& mask, const Bounds& b,
                  bool in_key_only) {
    const auto bad = infeasible_columns(mask, in_key_only);
    if (!bad.empty()) {
        throw InfeasibleConstraint("rhythm constraint needs more onsets than candidate pitches", bad);
    }
    using Kind = RhythmConstraint::Kind;
    for (std::size_t l = 0; l < x_t.length(); ++l) {
        const auto spec = mask.rhythm(l);
        if (spec.kind == Kind::Unconstrained) continue;
        if (spec.kind == Kind::NoneAllowed) {
            for (std::size_t h = 0; h < x_t.pitches(); ++h) clamp_off(eps, x_t, kOnset, l, h, b);
            continue;
        }
        const auto cand = candidates_for(mask, l, in_key_only);
        // Gap to the "on" bound in eps units; <= 0 means already on.
        std::vector<double> on_gap(cand.size());
        for (std::size_t i = 0; i < cand.size(); ++i) {
            const std::size_t h = cand[i];
            on_gap[i] = eps(kOnset, l, h) - b.eps_for(x_t(kOnset, l, h), b.on_level);
        }
        if (spec.kind == Kind::AtLeast) {
            const auto already = static_cast<std::size_t>(
                std::count_if(on_gap.begin(), on_gap.end(), [](double g) { return g <= 0.0; }));
            if (already >= spec.n) continue;
            std::vector<std::size_t> off;
            for (std::size_t i = 0; i < cand.size(); ++i) {
                if (on_gap[i] > 0.0) off.push_back(i);
            }
            std::stable_sort(off.begin(), off.end(), [&](std::size_t a, std::size_t c) { return on_gap[a] < on_gap[c]; });
            for (std::size_t k = 0; k < spec.n - already; ++k) force_on(eps, x_t, kOnset, l, cand[off[k]], b);
            continue;
        }
        // Exactly N: pick the N candidates with the smallest on-cost minus
        // off-cost; everything else in the column goes off.
        std::vector<double> delta(cand.size());
        for (std::size_t i = 0; i < cand.size(); ++i) {
            const std::size_t h = cand[i];
            const double on_cost = std::max(0.0, on_gap[i]);
            const double off_cost = std::max(0.0, b.eps_for(x_t(kOnset, l, h), b.off_level) - eps(kOnset, l, h));
            delta[i] = on_cost * on_cost - off_cost * off_cost;
        }
        std::vector<std::size_t> order(cand.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return delta[a] < delta[c]; });
        std::vector<bool> selected(x_t.pitches(), false);
        for (std::size_t k = 0; k < spec.n; ++k) selected[cand[order[k]]] = true;
        for (std::size_t h = 0; h < x_t.pitches(); ++h) {
            if (selected[h]) {
                force_on(eps, x_t, kOnset, l, h, b);
            } else {
                clamp_off(eps, x_t, kOnset, l, h, b);
            }
        }
    }
}

}  // namespace

LatentRoll cfg_combine(const LatentRoll& eps_c, const LatentRoll& eps_cr, double w) {
    if (eps_c.shape() != eps_cr.shape()) throw ShapeMismatch("cfg_combine: shapes differ");
    LatentRoll out(eps_c.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.values()[i] = eps_c.values()[i] + w * (eps_cr.values()[i] - eps_c.values()[i]);
    }
    return out;
}

LatentRoll predict_x0(const LatentRoll& x_t, const LatentRoll& eps, std::size_t t, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.steps()) throw ScheduleError("predict_x0: t outside [1,T]");
    if (x_t.shape() != eps.shape()) throw ShapeMismatch("predict_x0: shapes differ");
    const double ab = sched.alpha_bar(t);
    if (!(ab > 0.0)) throw ScheduleError("predict_x0: abar_t is zero");
    const double sa = std::sqrt(ab);
    const double sb = std::sqrt(1.0 - ab);
    LatentRoll out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = (x_t.values()[i] - sb * eps.values()[i]) / sa;
    return out;
}

LatentRoll correct_harmonic(const LatentRoll& eps_hat, const LatentRoll& x_t, std::size_t t,
                            const ConstraintMask& mask, double kappa, const NoiseSchedule& sched) {
    check_shapes(eps_hat, x_t, mask);
    const auto b = bounds_for(t, kappa, sched);
    LatentRoll out = eps_hat;
    apply_harmonic(out, x_t, mask, b);
    return out;
}

LatentRoll correct_rhythm(const LatentRoll& eps_hat, const LatentRoll& x_t, std::size_t t,
                          const ConstraintMask& mask, double kappa, const NoiseSchedule& sched) {
    check_shapes(eps_hat, x_t, mask);
    const auto b = bounds_for(t, kappa, sched);
    LatentRoll out = eps_hat;
    apply_rhythm(out, x_t, mask, b, mask.rhythm_in_key_only());
    return out;
}

LatentRoll correct_joint(const LatentRoll& eps_hat, const LatentRoll& x_t, std::size_t t,
                         const ConstraintMask& mask, double kappa, const NoiseSchedule& sched) {
    check_shapes(eps_hat, x_t, mask);
    const auto b = bounds_for(t, kappa, sched);
    LatentRoll out = eps_hat;
    apply_harmonic(out, x_t, mask, b);
    apply_rhythm(out, x_t, mask, b, true);
    return out;
}

std::vector<std::size_t> infeasible_columns(const ConstraintMask& mask, bool in_key_only) {
    std::vector<std::size_t> bad;
    for (std::size_t l = 0; l < mask.length(); ++l) {
        const auto spec = mask.rhythm(l);
        if (spec.kind != RhythmConstraint::Kind::Exactly && spec.kind != RhythmConstraint::Kind::AtLeast) continue;
        std::size_t available = 0;
        for (std::size_t h = 0; h < mask.pitches(); ++h) {
            if (!in_key_only || !mask.out_of_key(l, h)) ++available;
        }
        if (available < spec.n) bad.push_back(l);
    }
    return bad;
}

}  // namespace ftg
