#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cmath>

#include "ftg/guidance.hpp"
#include "oracles.hpp"

using namespace ftg;

namespace {

const NoiseSchedule& sched() {
    static const NoiseSchedule s = default_schedule();
    return s;
}

// Onset-channel values of column l as vectors.
std::vector<double> column(const LatentRoll& r, std::size_t l) {
    std::vector<double> out(r.pitches());
    for (std::size_t h = 0; h < r.pitches(); ++h) out[h] = r(kOnset, l, h);
    return out;
}

// Eps whose predicted x0 on the onset channel of column 0 equals `p`.
LatentRoll eps_for_p(const LatentRoll& x, std::size_t t, const std::vector<double>& p) {
    const oracle::CellMap map{sched().alpha_bar(t)};
    LatentRoll e(x.shape());
    for (std::size_t h = 0; h < p.size(); ++h) {
        e(kOnset, 0, h) = map.e(x(kOnset, 0, h), p[h]);
        e(kSustain, 0, h) = map.e(x(kSustain, 0, h), 0.0);
    }
    return e;
}

std::vector<bool> on_set(const LatentRoll& eps, const LatentRoll& x, std::size_t t, double kappa) {
    const oracle::CellMap map{sched().alpha_bar(t)};
    std::vector<bool> on(x.pitches());
    for (std::size_t h = 0; h < x.pitches(); ++h) on[h] = map.p(x(kOnset, 0, h), eps(kOnset, 0, h)) >= 0.5 + kappa - 1e-12;
    return on;
}

RhythmConstraint random_spec(Rng& rng, std::size_t max_n) {
    switch (rng.below(4)) {
        case 0: return RhythmConstraint::exactly(1 + rng.below(max_n));
        case 1: return RhythmConstraint::at_least(1 + rng.below(max_n));
        case 2: return RhythmConstraint::none_allowed();
        default: return RhythmConstraint::unconstrained();
    }
}

// Compares a library correction against the per-column exhaustive oracle.
void check_rhythm_against_oracle(const LatentRoll& got, const LatentRoll& eps, const LatentRoll& x, std::size_t t,
                                 const ConstraintMask& mask, double kappa, bool joint) {
    const oracle::CellMap map{sched().alpha_bar(t)};
    const std::size_t H = x.pitches();
    for (std::size_t l = 0; l < x.length(); ++l) {
        const auto spec = mask.rhythm(l);
        std::vector<bool> forced(H, false);
        std::vector<bool> cand(H, true);
        if (joint) {
            for (std::size_t h = 0; h < H; ++h) {
                forced[h] = mask.out_of_key(l, h);
                cand[h] = !forced[h];
            }
        }
        if (spec.kind == RhythmConstraint::Kind::Unconstrained) {
            for (std::size_t h = 0; h < H; ++h) {
                const double expected = forced[h] ? std::max(eps(kOnset, l, h), map.e(x(kOnset, l, h), 0.5 - kappa))
                                                  : eps(kOnset, l, h);
                CHECK(got(kOnset, l, h) == doctest::Approx(expected).epsilon(1e-12));
            }
            continue;
        }
        const auto best = oracle::rhythm_column(column(eps, l), column(x, l), cand, forced, spec, kappa, map);
        for (std::size_t h = 0; h < H; ++h) {
            CHECK(got(kOnset, l, h) == doctest::Approx(best.eps[h]).epsilon(1e-12).scale(1e-12));
        }
    }
}

}  // namespace

TEST_CASE("classifier-free guidance combination") {
    Rng rng(1);
    const auto a = oracle::random_roll(4, 6, rng);
    const auto b = oracle::random_roll(4, 6, rng);
    CHECK(cfg_combine(a, b, 0.0) == a);
    CHECK(oracle::max_abs_diff(cfg_combine(a, b, 1.0), b) < 1e-15);
    const auto two = cfg_combine(a, b, 2.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(two.values()[i] == doctest::Approx(2.0 * b.values()[i] - a.values()[i]).epsilon(1e-14));
    }
    CHECK_THROWS_AS(cfg_combine(a, LatentRoll(3, 6), 1.0), ShapeMismatch);
}

TEST_CASE("guidance weight defaults") {
    GuidanceConfig g;
    CHECK(g.effective_w(true) == 1.0);
    CHECK(g.effective_w(false) == 0.0);
    g.w = 3.0;
    CHECK(g.effective_w(false) == 3.0);
    g.kappa = 0.5;
    CHECK_THROWS_AS(g.validate(), InvalidInput);
    g.kappa = 0.1;
    g.w = std::nan("");
    CHECK_THROWS_AS(g.validate(), InvalidInput);
}

TEST_CASE("predict_x0 inverts forward_noise") {
    Rng rng(2);
    const auto x0 = oracle::random_roll(3, 5, rng);
    const auto eps = oracle::random_roll(3, 5, rng);
    for (std::size_t t : {1u, 300u, 1000u}) {
        const auto back = predict_x0(forward_noise(x0, t, eps, sched()), eps, t, sched());
        CHECK(oracle::max_abs_diff(back, x0) < 1e-9);
    }
}

TEST_CASE("harmonic correction equals the quadratic program") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t t = 1 + rng.below(1000);
        const auto x = oracle::random_roll(6, 12, rng);
        const auto eps = oracle::random_roll(6, 12, rng, 2.0);
        const auto mask = oracle::random_mask(6, 12, rng, 0.4);
        const double kappa = trial % 2 ? 1e-6 : 0.05;
        const auto got = correct_harmonic(eps, x, t, mask, kappa, sched());
        const auto want = oracle::harmonic_qp(eps, x, t, mask, kappa, sched());
        CHECK(oracle::max_abs_diff(got, want) < 1e-9);
        CHECK(oracle::harmonic_feasible(got, x, t, mask, kappa, sched()));
    }
}

TEST_CASE("harmonic correction on a keyed mask") {
    const auto mask = build_constraint_mask(KeySequence(8, parse_key("D")), {});
    Rng rng(4);
    const auto x = oracle::random_roll(8, kPitches, rng);
    const auto eps = oracle::random_roll(8, kPitches, rng, 3.0);
    const auto got = correct_harmonic(eps, x, 500, mask, 1e-6, sched());
    const auto x0 = predict_x0(x, got, 500, sched());
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t l = 0; l < 8; ++l) {
            for (std::size_t h = 0; h < kPitches; ++h) {
                if (mask.out_of_key(l, h)) {
                    CHECK(x0(c, l, h) <= 0.5 - 1e-6 + 1e-12);
                } else {
                    CHECK(got(c, l, h) == eps(c, l, h));
                }
            }
        }
    }
}

TEST_CASE("rhythm correction fixtures") {
    const std::size_t t = 200;
    const double kappa = 1e-6;
    const std::vector<double> p{0.9, 0.6, 0.4, 0.3, 0.1, 0.0};
    Rng rng(5);
    const auto x = oracle::random_roll(1, 6, rng);
    const auto eps = eps_for_p(x, t, p);
    const oracle::CellMap map{sched().alpha_bar(t)};
    const std::vector<bool> all(6, true);
    const std::vector<bool> none(6, false);

    SUBCASE("exactly two keeps the two highest") {
        ConstraintMask mask(1, 6);
        mask.set_rhythm(0, RhythmConstraint::exactly(2));
        const auto got = correct_rhythm(eps, x, t, mask, kappa, sched());
        CHECK(on_set(got, x, t, kappa) == std::vector<bool>{true, true, false, false, false, false});
        const auto best = oracle::rhythm_column(column(eps, 0), column(x, 0), all, none, mask.rhythm(0), kappa, map);
        CHECK(best.on == on_set(got, x, t, kappa));
    }
    SUBCASE("exactly three raises the cheapest extra cell") {
        ConstraintMask mask(1, 6);
        mask.set_rhythm(0, RhythmConstraint::exactly(3));
        const auto got = correct_rhythm(eps, x, t, mask, kappa, sched());
        CHECK(on_set(got, x, t, kappa) == std::vector<bool>{true, true, true, false, false, false});
        CHECK(map.p(x(kOnset, 0, 2), got(kOnset, 0, 2)) == doctest::Approx(0.5 + kappa).epsilon(1e-12));
        CHECK(map.p(x(kOnset, 0, 3), got(kOnset, 0, 3)) == doctest::Approx(0.3));
    }
    SUBCASE("at least four raises the two smallest gaps") {
        ConstraintMask mask(1, 6);
        mask.set_rhythm(0, RhythmConstraint::at_least(4));
        const auto got = correct_rhythm(eps, x, t, mask, kappa, sched());
        CHECK(on_set(got, x, t, kappa) == std::vector<bool>{true, true, true, true, false, false});
        CHECK(got(kOnset, 0, 0) == eps(kOnset, 0, 0));
        CHECK(got(kOnset, 0, 4) == eps(kOnset, 0, 4));
    }
    SUBCASE("at least one is already met") {
        ConstraintMask mask(1, 6);
        mask.set_rhythm(0, RhythmConstraint::at_least(1));
        CHECK(correct_rhythm(eps, x, t, mask, kappa, sched()) == eps);
    }
    SUBCASE("none allowed clamps every onset off") {
        ConstraintMask mask(1, 6);
        mask.set_rhythm(0, RhythmConstraint::none_allowed());
        const auto got = correct_rhythm(eps, x, t, mask, kappa, sched());
        for (std::size_t h = 0; h < 6; ++h) {
            CHECK(map.p(x(kOnset, 0, h), got(kOnset, 0, h)) <= 0.5 - kappa + 1e-12);
            CHECK(got(kSustain, 0, h) == eps(kSustain, 0, h));
        }
        CHECK(got(kOnset, 0, 5) == eps(kOnset, 0, 5));
    }
    SUBCASE("infeasible count") {
        ConstraintMask mask(1, 6);
        mask.set_rhythm(0, RhythmConstraint::exactly(7));
        CHECK_THROWS_AS(correct_rhythm(eps, x, t, mask, kappa, sched()), InfeasibleConstraint);
        CHECK(infeasible_columns(mask, false) == std::vector<std::size_t>{0});
    }
}

TEST_CASE("rhythm and joint corrections equal exhaustive search") {
    Rng rng(6);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t L = 4;
        const std::size_t H = 8;
        const std::size_t t = 1 + rng.below(1000);
        const double kappa = trial % 3 == 0 ? 0.1 : 1e-6;
        const auto x = oracle::random_roll(L, H, rng);
        const auto eps = oracle::random_roll(L, H, rng, 2.0);
        auto mask = oracle::random_mask(L, H, rng, 0.3);
        const bool joint = trial % 2 == 1;
        for (std::size_t l = 0; l < L; ++l) {
            std::size_t in_key = 0;
            for (std::size_t h = 0; h < H; ++h) in_key += !mask.out_of_key(l, h);
            const std::size_t cap = joint ? in_key : H;
            mask.set_rhythm(l, cap == 0 ? RhythmConstraint::unconstrained() : random_spec(rng, std::min<std::size_t>(cap, 4)));
        }
        const auto got = joint ? correct_joint(eps, x, t, mask, kappa, sched())
                               : correct_rhythm(eps, x, t, mask, kappa, sched());
        check_rhythm_against_oracle(got, eps, x, t, mask, kappa, joint);
        CHECK(oracle::rhythm_feasible(got, x, t, mask, kappa, sched(), joint));
        if (joint) {
            CHECK(oracle::harmonic_feasible(got, x, t, mask, kappa, sched()));
            // Sustain is only touched by the harmonic clamp.
            const auto harm = correct_harmonic(eps, x, t, mask, kappa, sched());
            for (std::size_t l = 0; l < L; ++l) {
                for (std::size_t h = 0; h < H; ++h) CHECK(got(kSustain, l, h) == harm(kSustain, l, h));
            }
        }
    }
}

TEST_CASE("corrections are idempotent and leave feasible inputs alone") {
    Rng rng(7);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t t = 1 + rng.below(1000);
        const auto x = oracle::random_roll(6, 10, rng);
        const auto eps = oracle::random_roll(6, 10, rng, 2.0);
        auto mask = oracle::random_mask(6, 10, rng, 0.3);
        for (std::size_t l = 0; l < 6; ++l) mask.set_rhythm(l, random_spec(rng, 2));
        // Columns with too few in-key pitches are made free so that every
        // instance is feasible.
        for (auto l : infeasible_columns(mask, true)) mask.set_rhythm(l, RhythmConstraint::unconstrained());
        const double kappa = 1e-3;
        for (int which = 0; which < 3; ++which) {
            auto apply = [&](const LatentRoll& e) {
                if (which == 0) return correct_harmonic(e, x, t, mask, kappa, sched());
                if (which == 1) return correct_rhythm(e, x, t, mask, kappa, sched());
                return correct_joint(e, x, t, mask, kappa, sched());
            };
            const auto once = apply(eps);
            CHECK(apply(once) == once);
        }
    }
}

TEST_CASE("convex corrections are nonexpansive") {
    Rng rng(8);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t t = 1 + rng.below(1000);
        const auto x = oracle::random_roll(5, 9, rng);
        const auto a = oracle::random_roll(5, 9, rng, 2.0);
        const auto b = oracle::random_roll(5, 9, rng, 2.0);
        const auto mask = oracle::random_mask(5, 9, rng, 0.4);
        const double d = oracle::distance(a, b);
        CHECK(oracle::distance(correct_harmonic(a, x, t, mask, 1e-6, sched()),
                               correct_harmonic(b, x, t, mask, 1e-6, sched())) <= d + 1e-12);
        ConstraintMask silent(5, 9);
        for (std::size_t l = 0; l < 5; ++l) silent.set_rhythm(l, RhythmConstraint::none_allowed());
        CHECK(oracle::distance(correct_rhythm(a, x, t, silent, 1e-6, sched()),
                               correct_rhythm(b, x, t, silent, 1e-6, sched())) <= d + 1e-12);
    }
}

TEST_CASE("denoise_step and ddpm_step") {
    Rng rng(9);
    const auto x0 = oracle::random_roll(3, 4, rng);
    const auto eps = oracle::random_roll(3, 4, rng);
    const auto noise = oracle::random_roll(3, 4, rng);
    SUBCASE("true noise recovers x0 deterministically") {
        const auto xt = forward_noise(x0, 600, eps, sched());
        CHECK(oracle::max_abs_diff(denoise_step(xt, eps, 600, 0, 0.0, sched(), noise), x0) < 1e-9);
        const auto x1 = forward_noise(x0, 1, eps, sched());
        CHECK(oracle::max_abs_diff(ddpm_step(x1, eps, 1, sched(), noise), x0) < 1e-12);
    }
    SUBCASE("matches the closed form") {
        const auto xt = forward_noise(x0, 400, eps, sched());
        const double sigma = sched().sigma(400);
        const auto got = ddpm_step(xt, eps, 400, sched(), noise);
        const double as = sched().alpha_bar(399);
        const double at = sched().alpha_bar(400);
        for (std::size_t i = 0; i < got.size(); ++i) {
            const double x0hat = (xt.values()[i] - std::sqrt(1 - at) * eps.values()[i]) / std::sqrt(at);
            const double want = std::sqrt(as) * x0hat + std::sqrt(1 - as - sigma * sigma) * eps.values()[i] +
                                sigma * noise.values()[i];
            CHECK(got.values()[i] == doctest::Approx(want).epsilon(1e-12));
        }
    }
    SUBCASE("final step with the beta-ratio scale") {
        const auto x1 = forward_noise(x0, 1, eps, sched());
        const auto s = NoiseSchedule::linear(1000, 8.5e-4, 1.2e-2, 1.0, SigmaVariant::BetaRatio);
        // sigma_1 = sqrt(beta_1) exceeds the room left at abar_0 = 1.
        CHECK(s.sigma(1) > 0.0);
        CHECK_THROWS_AS(ddpm_step(x1, eps, 1, s, noise, false), ScheduleError);
        CHECK(oracle::max_abs_diff(ddpm_step(x1, eps, 1, s, noise, true), x0) < 1e-12);
    }
    SUBCASE("oversized sigma is rejected") {
        const auto xt = forward_noise(x0, 10, eps, sched());
        CHECK_THROWS_AS(denoise_step(xt, eps, 10, 9, 1.0, sched(), noise), ScheduleError);
    }
}

TEST_CASE("sampler plans") {
    const auto p = SamplerPlan::ddim(10, 1000);
    REQUIRE(p.steps.size() == 10);
    CHECK(p.steps.front() == 1);
    CHECK(p.steps.back() == 1000);
    for (std::size_t i = 1; i < p.steps.size(); ++i) CHECK(p.steps[i] > p.steps[i - 1]);
    CHECK_NOTHROW(p.validate(1000));
    CHECK_THROWS_AS(SamplerPlan::ddim({5, 3}).validate(1000), InvalidInput);
    CHECK_THROWS_AS(SamplerPlan::ddim({0, 3}).validate(1000), InvalidInput);
    CHECK_THROWS_AS(SamplerPlan::ddim({1, 1001}).validate(1000), InvalidInput);
    CHECK_THROWS_AS(SamplerPlan::ddim({1, 2}, 1.5).validate(1000), InvalidInput);

    const auto back = sampler_plan_from_json(to_json(p), 1000);
    CHECK(back.steps == p.steps);
    CHECK(sampler_plan_from_json(nlohmann::json::parse(R"({"mode":"ddpm"})"), 1000).mode == SamplerMode::Ddpm);
    CHECK(sampler_plan_from_json(nlohmann::json::parse(R"({"steps":[1,500,1000]})"), 1000).steps.size() == 3);

    GuidanceConfig g;
    g.w = 2.5;
    g.kappa = 0.01;
    const auto gb = guidance_from_json(to_json(g));
    CHECK(gb.w == 2.5);
    CHECK(gb.kappa == 0.01);
    CHECK(to_json(GuidanceConfig{}).at("w").is_null());
}

namespace {

// Counts forward passes and returns a fixed eps.
class CountingDenoiser : public Denoiser {
public:
    LatentRoll predict(const ModelInput& input, std::size_t) const override {
        ++calls;
        return LatentRoll(input.latent().shape(), 0.3);
    }
    bool supports_conditions() const override { return true; }
    bool supports_melody() const override { return true; }
    std::string name() const override { return "counting"; }
    mutable std::atomic<int> calls{0};
};

Conditions keyed_conditions(std::size_t L, const char* key, const std::string& rhythm = "") {
    Conditions c;
    c.length = L;
    c.chords = ChordProgression(L, parse_chord(key));
    std::vector<RhythmConstraint> specs;
    if (!rhythm.empty()) {
        c.rhythm = rhythm_from_string(rhythm);
        specs = parse_rhythm_string(rhythm);
    }
    c.mask = build_constraint_mask(KeySequence(L, parse_key(key)), specs, kPitches, true);
    return c;
}

}  // namespace

TEST_CASE("sampler behaviour") {
    const ToyDenoiser model(ToyDenoiserConfig{6, 8, 3, 1});
    const auto plan = SamplerPlan::ddim(10, 1000);

    SUBCASE("deterministic per seed") {
        const auto cond = keyed_conditions(16, "D");
        const auto a = sample(model, sched(), cond, GuidanceConfig{}, plan, 5);
        const auto b = sample(model, sched(), cond, GuidanceConfig{}, plan, 5);
        const auto c = sample(model, sched(), cond, GuidanceConfig{}, plan, 6);
        CHECK(a.x0 == b.x0);
        CHECK_FALSE(a.x0 == c.x0);
    }
    SUBCASE("harmonic guidance leaves no out-of-key cells") {
        const auto cond = keyed_conditions(16, "D");
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto r = sample(model, sched(), cond, GuidanceConfig{}, plan, seed).roll;
            for (std::size_t c = 0; c < 2; ++c) {
                for (std::size_t l = 0; l < 16; ++l) {
                    for (std::size_t h = 0; h < kPitches; ++h) {
                        if (cond.mask.out_of_key(l, h)) CHECK(r(c, l, h) == 0);
                    }
                }
            }
        }
    }
    SUBCASE("rhythm guidance fixes onset columns") {
        const auto cond = keyed_conditions(16, "C", "x..ox..ox..ox..o");
        const auto r = sample(model, sched(), cond, GuidanceConfig{}, plan, 3).roll;
        for (std::size_t l = 0; l < 16; ++l) {
            std::size_t onsets = 0;
            for (std::size_t h = 0; h < kPitches; ++h) onsets += r(kOnset, l, h);
            if (l % 4 == 0) CHECK(onsets >= 1);
            if (l % 4 == 3) CHECK(onsets == 0);
        }
    }
    SUBCASE("second forward pass only with nonzero weight") {
        CountingDenoiser counting;
        const auto cond = keyed_conditions(8, "C");
        sample(counting, sched(), cond, GuidanceConfig{}, plan, 0);
        CHECK(counting.calls == 10);
        counting.calls = 0;
        GuidanceConfig g;
        g.w = 1.5;
        sample(counting, sched(), cond, g, plan, 0);
        CHECK(counting.calls == 20);
    }
    SUBCASE("trace visits the plan in reverse and ends at zero") {
        SampleTrace trace;
        const auto cond = keyed_conditions(8, "C");
        const auto r = sample(model, sched(), cond, GuidanceConfig{}, SamplerPlan::ddim({1, 10, 100}), 0, &trace);
        CHECK(trace.timesteps == std::vector<std::size_t>{100, 10, 1, 0});
        CHECK(trace.states.size() == 4);
        CHECK(trace.states.back() == r.x0);
    }
    SUBCASE("infeasible rhythm is reported before sampling") {
        auto cond = keyed_conditions(4, "C");
        cond.mask.set_rhythm(1, RhythmConstraint::exactly(100));
        CountingDenoiser counting;
        try {
            sample(counting, sched(), cond, GuidanceConfig{}, plan, 0);
            FAIL("expected InfeasibleConstraint");
        } catch (const InfeasibleConstraint& e) {
            CHECK(e.columns() == std::vector<std::size_t>{1});
        }
        CHECK(counting.calls == 0);
    }
    SUBCASE("shape mismatches") {
        auto cond = keyed_conditions(8, "C");
        cond.melody = PianoRoll(4);
        CHECK_THROWS_AS(sample(model, sched(), cond, GuidanceConfig{}, plan, 0), ShapeMismatch);
    }
}
