#pragma once

// Reference solvers used only by the tests. They restate each problem from
// first principles and solve it by generic means, so they share no code path
// with the library's closed forms.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "ftg/diffusion.hpp"
#include "ftg/guidance.hpp"
#include "ftg/rng.hpp"

namespace oracle {

// a . e <= b with sparse a.
struct LinearConstraint {
    std::vector<std::pair<std::size_t, double>> a;
    double b = 0.0;
};

// argmin 0.5 |e - target|^2 subject to every constraint, by Hildreth's dual
// coordinate ascent.
inline std::vector<double> hildreth(const std::vector<double>& target, const std::vector<LinearConstraint>& cons,
                                    int max_sweeps = 10000, double tol = 1e-15) {
    std::vector<double> e = target;
    std::vector<double> lambda(cons.size(), 0.0);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double change = 0.0;
        for (std::size_t i = 0; i < cons.size(); ++i) {
            double ae = 0.0;
            double aa = 0.0;
            for (auto [k, v] : cons[i].a) {
                ae += v * e[k];
                aa += v * v;
            }
            const double next = std::max(0.0, lambda[i] + (ae - cons[i].b) / aa);
            const double d = next - lambda[i];
            if (d != 0.0) {
                for (auto [k, v] : cons[i].a) e[k] -= d * v;
                lambda[i] = next;
                change = std::max(change, std::abs(d));
            }
        }
        if (change <= tol) break;
    }
    return e;
}

// Predicted x0 of a cell: (x - sqrt(1 - abar) e) / sqrt(abar).
struct CellMap {
    double abar;
    double p(double x, double e) const { return (x - std::sqrt(1.0 - abar) * e) / std::sqrt(abar); }
    double e(double x, double p) const { return (x - std::sqrt(abar) * p) / std::sqrt(1.0 - abar); }
};

// Harmonic problem: predicted x0 <= 1/2 - kappa on every masked
// cell of both channels, solved as a generic QP.
inline ftg::LatentRoll harmonic_qp(const ftg::LatentRoll& eps_hat, const ftg::LatentRoll& x_t, std::size_t t,
                                   const ftg::ConstraintMask& mask, double kappa, const ftg::NoiseSchedule& sched) {
    const double abar = sched.alpha_bar(t);
    const double sa = std::sqrt(abar);
    const double sb = std::sqrt(1.0 - abar);
    std::vector<LinearConstraint> cons;
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t l = 0; l < x_t.length(); ++l) {
            for (std::size_t h = 0; h < x_t.pitches(); ++h) {
                if (!mask.out_of_key(l, h)) continue;
                const std::size_t k = x_t.shape().index(c, l, h);
                // (x - sb e)/sa <= off  <=>  -(sb/sa) e <= off - x/sa
                cons.push_back({{{k, -sb / sa}}, 0.5 - kappa - x_t.values()[k] / sa});
            }
        }
    }
    std::vector<double> target(eps_hat.values().begin(), eps_hat.values().end());
    const auto sol = hildreth(target, cons);
    ftg::LatentRoll out(eps_hat.shape());
    std::copy(sol.begin(), sol.end(), out.values().begin());
    return out;
}

// Outcome of the exhaustive rhythm search on one onset column.
struct ColumnSolution {
    std::vector<bool> on;  // chosen "on" set over all pitches
    std::vector<double> eps;
    double cost = std::numeric_limits<double>::infinity();
};

// Exhaustive search over the "on" subsets of the candidate pitches of one
// onset column. `forced_off` cells must end below 1/2 - kappa regardless of
// the rhythm rule. Costs are squared movements in eps.
inline ColumnSolution rhythm_column(const std::vector<double>& eps_hat, const std::vector<double>& x,
                                    const std::vector<bool>& candidate, const std::vector<bool>& forced_off,
                                    ftg::RhythmConstraint spec, double kappa, const CellMap& map) {
    using Kind = ftg::RhythmConstraint::Kind;
    const std::size_t H = eps_hat.size();
    std::vector<std::size_t> cand;
    for (std::size_t h = 0; h < H; ++h) {
        if (candidate[h]) cand.push_back(h);
    }
    const double on_level = 0.5 + kappa;
    const double off_level = 0.5 - kappa;
    auto move_on = [&](std::size_t h) {
        const double p = map.p(x[h], eps_hat[h]);
        return p >= on_level ? eps_hat[h] : map.e(x[h], on_level);
    };
    auto move_off = [&](std::size_t h) {
        const double p = map.p(x[h], eps_hat[h]);
        return p <= off_level ? eps_hat[h] : map.e(x[h], off_level);
    };
    ColumnSolution best;
    const std::size_t k = cand.size();
    for (std::size_t bits = 0; bits < (std::size_t{1} << k); ++bits) {
        const std::size_t count = static_cast<std::size_t>(__builtin_popcountll(bits));
        if (spec.kind == Kind::Exactly && count != spec.n) continue;
        if (spec.kind == Kind::AtLeast && count < spec.n) continue;
        if (spec.kind == Kind::NoneAllowed && count != 0) continue;
        std::vector<bool> on(H, false);
        for (std::size_t i = 0; i < k; ++i) {
            if (bits >> i & 1) on[cand[i]] = true;
        }
        std::vector<double> e(H);
        double cost = 0.0;
        for (std::size_t h = 0; h < H; ++h) {
            const bool must_off = forced_off[h] || (!on[h] && spec.kind != Kind::AtLeast);
            if (on[h]) {
                e[h] = move_on(h);
            } else if (must_off) {
                e[h] = move_off(h);
            } else {
                e[h] = eps_hat[h];
            }
            cost += (e[h] - eps_hat[h]) * (e[h] - eps_hat[h]);
        }
        if (cost < best.cost) best = ColumnSolution{on, e, cost};
    }
    return best;
}

// Constraint predicates on predicted x0 with margin kappa.
inline bool harmonic_feasible(const ftg::LatentRoll& eps, const ftg::LatentRoll& x_t, std::size_t t,
                              const ftg::ConstraintMask& mask, double kappa, const ftg::NoiseSchedule& sched,
                              double slack = 1e-12) {
    const CellMap map{sched.alpha_bar(t)};
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t l = 0; l < x_t.length(); ++l) {
            for (std::size_t h = 0; h < x_t.pitches(); ++h) {
                if (mask.out_of_key(l, h) && map.p(x_t(c, l, h), eps(c, l, h)) > 0.5 - kappa + slack) return false;
            }
        }
    }
    return true;
}

inline bool rhythm_feasible(const ftg::LatentRoll& eps, const ftg::LatentRoll& x_t, std::size_t t,
                            const ftg::ConstraintMask& mask, double kappa, const ftg::NoiseSchedule& sched,
                            bool in_key_only, double slack = 1e-12) {
    using Kind = ftg::RhythmConstraint::Kind;
    const CellMap map{sched.alpha_bar(t)};
    for (std::size_t l = 0; l < x_t.length(); ++l) {
        const auto spec = mask.rhythm(l);
        if (spec.kind == Kind::Unconstrained) continue;
        std::size_t on = 0;
        std::size_t undecided = 0;
        for (std::size_t h = 0; h < x_t.pitches(); ++h) {
            const double p = map.p(x_t(ftg::kOnset, l, h), eps(ftg::kOnset, l, h));
            const bool eligible = !in_key_only || !mask.out_of_key(l, h);
            if (p >= 0.5 + kappa - slack && eligible) {
                ++on;
            } else if (p > 0.5 - kappa + slack) {
                ++undecided;
            }
        }
        if (spec.kind == Kind::NoneAllowed && (on > 0 || undecided > 0)) return false;
        if (spec.kind == Kind::Exactly && (on != spec.n || undecided > 0)) return false;
        if (spec.kind == Kind::AtLeast && on < spec.n) return false;
    }
    return true;
}

// Random instance helpers.
inline ftg::LatentRoll random_roll(std::size_t L, std::size_t H, ftg::Rng& rng, double scale = 1.0) {
    ftg::LatentRoll r(L, H);
    for (double& v : r.values()) v = scale * rng.normal();
    return r;
}

inline ftg::ConstraintMask random_mask(std::size_t L, std::size_t H, ftg::Rng& rng, double density) {
    ftg::ConstraintMask m(L, H);
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t h = 0; h < H; ++h) m.set_out_of_key(l, h, rng.bernoulli(density));
    }
    return m;
}

inline double max_abs_diff(const ftg::LatentRoll& a, const ftg::LatentRoll& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

inline double distance(const ftg::LatentRoll& a, const ftg::LatentRoll& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a.values()[i] - b.values()[i]) * (a.values()[i] - b.values()[i]);
    return std::sqrt(s);
}

}  // namespace oracle
