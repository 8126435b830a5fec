#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "ftg/pianoroll.hpp"
#include "ftg/rng.hpp"
#include "ftg/theory.hpp"

using namespace ftg;

namespace {

// Reference: every cell independently against the threshold.
PianoRoll threshold_reference(const LatentRoll& x) {
    PianoRoll out(x.length(), x.pitches());
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t l = 0; l < x.length(); ++l) {
            for (std::size_t h = 0; h < x.pitches(); ++h) out(c, l, h) = x(c, l, h) >= 0.5 ? 1 : 0;
        }
    }
    return out;
}

bool in_chord(const Chord& chord, std::size_t h) {
    return chord_pitch_classes(chord).test(static_cast<std::size_t>(h % 12));
}

}  // namespace

TEST_CASE("binarize thresholds at one half") {
    SUBCASE("all below threshold") {
        LatentRoll x(8, kPitches, -3.0);
        CHECK(binarize(x).empty());
        CHECK(binarize(x).onset_count() == 0);
    }
    SUBCASE("exactly one half without a mask is on") {
        LatentRoll x(1, 4, 0.0);
        x(0, 0, 2) = 0.5;
        CHECK(binarize(x)(0, 0, 2) == 1);
    }
    SUBCASE("checkerboard of 0.49 and 0.51") {
        LatentRoll x(4, 4);
        PianoRoll expected(4, 4);
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t l = 0; l < 4; ++l) {
                for (std::size_t h = 0; h < 4; ++h) {
                    const bool on = (c + l + h) % 2 == 0;
                    x(c, l, h) = on ? 0.51 : 0.49;
                    expected(c, l, h) = on ? 1 : 0;
                }
            }
        }
        CHECK(binarize(x) == expected);
    }
    SUBCASE("non-finite input is rejected") {
        LatentRoll x(2, 4);
        x(1, 1, 1) = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(binarize(x), InvalidInput);
        x(1, 1, 1) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(binarize(x), InvalidInput);
    }
    SUBCASE("mask forces exactly one half to zero only at masked cells") {
        LatentRoll x(2, 4, 0.5);
        ConstraintMask mask(2, 4);
        mask.set_out_of_key(0, 1, true);
        const auto r = binarize(x, &mask);
        CHECK(r(0, 0, 1) == 0);
        CHECK(r(1, 0, 1) == 0);
        CHECK(r(0, 0, 0) == 1);
        CHECK(r(0, 1, 1) == 1);
        x(0, 0, 1) = 0.5 + 1e-9;
        CHECK(binarize(x, &mask)(0, 0, 1) == 1);
    }
}

TEST_CASE("binarize matches a per-cell reference on random latents") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t L = 1 + rng.below(16);
        const std::size_t H = 1 + rng.below(24);
        LatentRoll x(L, H);
        for (double& v : x.values()) v = rng.uniform(-2.0, 3.0);
        // Exercise the boundary explicitly.
        x.values()[rng.below(x.size())] = 0.5;
        CHECK(binarize(x) == threshold_reference(x));
    }
}

TEST_CASE("build_condition_cr") {
    SUBCASE("C major everywhere with an onset at step 0") {
        const std::size_t L = 16;
        ChordProgression chords(L, parse_chord("C"));
        const auto m = build_condition_cr(chords, RhythmPattern(L, {0}), L);
        CHECK(m.form() == ConditionForm::ChordRhythm);
        for (std::size_t h = 0; h < kPitches; ++h) {
            const bool tone = h % 12 == 0 || h % 12 == 4 || h % 12 == 7;
            CHECK(m(0, 0, h) == (tone ? 1.0 : 0.0));
            CHECK(m(1, 0, h) == 0.0);
            for (std::size_t l = 1; l < L; ++l) {
                CHECK(m(0, l, h) == 0.0);
                CHECK(m(1, l, h) == (tone ? 1.0 : 0.0));
            }
        }
    }
    SUBCASE("empty rhythm leaves the onset channel empty") {
        const auto m = build_condition_cr(ChordProgression(8, parse_chord("Am")), RhythmPattern(8, {}), 8);
        for (double v : m.channel(0)) CHECK(v == 0.0);
    }
    SUBCASE("L=4, chords C C G G, onsets {0,2}") {
        std::vector<Chord> cs = {parse_chord("C"), parse_chord("C"), parse_chord("G"), parse_chord("G")};
        const auto m = build_condition_cr(ChordProgression(cs), RhythmPattern(4, {0, 2}), 4);
        const int c_tones[] = {0, 4, 7};
        const int g_tones[] = {7, 11, 2};
        for (std::size_t l = 0; l < 4; ++l) {
            const int* tones = l < 2 ? c_tones : g_tones;
            const bool onset = l == 0 || l == 2;
            for (std::size_t h = 0; h < kPitches; ++h) {
                const int pc = static_cast<int>(h % 12);
                const bool tone = pc == tones[0] || pc == tones[1] || pc == tones[2];
                CHECK(m(0, l, h) == (tone && onset ? 1.0 : 0.0));
                CHECK(m(1, l, h) == (tone && !onset ? 1.0 : 0.0));
            }
        }
    }
    SUBCASE("short progression is a length mismatch") {
        CHECK_THROWS_AS(build_condition_cr(ChordProgression(3, Chord{}), RhythmPattern(4, {}), 4), ShapeMismatch);
    }
}

TEST_CASE("build_condition_cr support equals rhythm x chord sets") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t L = 4 + rng.below(28);
        std::vector<Chord> cs;
        for (std::size_t l = 0; l < L; ++l) {
            cs.push_back(Chord{static_cast<int>(rng.below(12)), static_cast<ChordQuality>(rng.below(7))});
        }
        std::vector<std::size_t> onsets;
        for (std::size_t l = 0; l < L; ++l) {
            if (rng.bernoulli(0.3)) onsets.push_back(l);
        }
        const RhythmPattern r(L, onsets);
        const auto m = build_condition_cr(ChordProgression(cs), r, L);
        for (std::size_t l = 0; l < L; ++l) {
            for (std::size_t h = 0; h < kPitches; ++h) {
                const bool tone = in_chord(cs[l], h);
                REQUIRE(m(0, l, h) == (tone && r.contains(l) ? 1.0 : 0.0));
                REQUIRE(m(1, l, h) == (tone && !r.contains(l) ? 1.0 : 0.0));
            }
        }
        CHECK(m.values_match_form());
    }
}

TEST_CASE("build_condition_c") {
    SUBCASE("C major everywhere") {
        const auto m = build_condition_c(ChordProgression(4, parse_chord("C")), 4);
        CHECK(m.form() == ConditionForm::ChordOnly);
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t l = 0; l < 4; ++l) {
                for (std::size_t h = 0; h < kPitches; ++h) {
                    const bool tone = h % 12 == 0 || h % 12 == 4 || h % 12 == 7;
                    CHECK(m(c, l, h) == (tone ? -2.0 : -1.0));
                }
            }
        }
    }
    SUBCASE("Am then F over two steps") {
        const auto m = build_condition_c(ChordProgression({parse_chord("Am"), parse_chord("F")}), 2);
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t h = 0; h < kPitches; ++h) {
                const int pc = static_cast<int>(h % 12);
                CHECK(m(c, 0, h) == (pc == 9 || pc == 0 || pc == 4 ? -2.0 : -1.0));
                CHECK(m(c, 1, h) == (pc == 5 || pc == 9 || pc == 0 ? -2.0 : -1.0));
            }
        }
    }
    SUBCASE("values stay in {-2,-1} and -2 marks chord membership") {
        Rng rng(8);
        std::vector<Chord> cs;
        for (int i = 0; i < 32; ++i) {
            cs.push_back(Chord{static_cast<int>(rng.below(12)), static_cast<ChordQuality>(rng.below(7))});
        }
        const auto m = build_condition_c(ChordProgression(cs), 32);
        CHECK(m.values_match_form());
        for (std::size_t l = 0; l < 32; ++l) {
            for (std::size_t h = 0; h < kPitches; ++h) CHECK((m(1, l, h) == -2.0) == in_chord(cs[l], h));
        }
    }
}

TEST_CASE("concat_model_input") {
    SUBCASE("zeros in, zeros out") {
        ConditionRoll cond(RollShape{2, 8, kPitches}, ConditionForm::ChordRhythm);
        const auto in = concat_model_input(LatentRoll(8), cond);
        CHECK(in.channels() == 6);
        for (double v : in.values()) CHECK(v == 0.0);
    }
    SUBCASE("channel slices recover the inputs bit-exactly") {
        Rng rng(3);
        LatentRoll x(16);
        for (double& v : x.values()) v = rng.normal();
        const auto cond = build_condition_c(ChordProgression(16, parse_chord("G7")), 16);
        PianoRoll mel(16);
        mel.add_note(0, 72, 4);
        mel.add_note(8, 74, 2);
        const auto in = concat_model_input(x, cond, &mel);
        CHECK(in.latent() == x);
        CHECK(in.condition(ConditionForm::ChordOnly) == cond);
        CHECK(in.melody() == mel);
    }
    SUBCASE("single melody onset lands in channel 4 only") {
        PianoRoll mel(8);
        mel(kOnset, 0, 60) = 1;
        const auto in = concat_model_input(LatentRoll(8), build_condition_cr(ChordProgression(8, Chord{}), RhythmPattern(8, {}), 8), &mel);
        double ch4 = 0.0;
        double ch5 = 0.0;
        for (std::size_t l = 0; l < 8; ++l) {
            for (std::size_t h = 0; h < kPitches; ++h) {
                ch4 += in(4, l, h);
                ch5 += in(5, l, h);
            }
        }
        CHECK(ch4 == 1.0);
        CHECK(ch5 == 0.0);
        CHECK(in(4, 0, 60) == 1.0);
    }
    SUBCASE("shape mismatch") {
        ConditionRoll cond(RollShape{2, 4, kPitches}, ConditionForm::ChordRhythm);
        CHECK_THROWS_AS(concat_model_input(LatentRoll(8), cond), ShapeMismatch);
    }
}

TEST_CASE("piano roll well-formedness") {
    PianoRoll r(8, 16);
    r.add_note(1, 3, 3);
    CHECK(r.well_formed());
    r(kSustain, 0, 5) = 1;  // bare sustain at the segment start is allowed
    CHECK(r.well_formed());
    r(kSustain, 6, 9) = 1;
    CHECK_FALSE(r.well_formed());
    CHECK(r.first_orphan_sustain() == 6);
}

TEST_CASE("JSON round trips") {
    Rng rng(21);
    PianoRoll r(16);
    for (int i = 0; i < 20; ++i) r.add_note(rng.below(16), rng.below(128), 1 + rng.below(4));
    const auto j = to_json(r);
    CHECK(j.at("channels") == 2);
    CHECK(j.at("length") == 16);
    CHECK(j.at("pitches") == 128);
    CHECK(j.at("data").size() == r.size());
    CHECK(piano_roll_from_json(j) == r);

    LatentRoll x(4, 8);
    for (double& v : x.values()) v = rng.normal();
    CHECK(latent_roll_from_json(to_json(x)) == x);

    const auto cond = build_condition_c(ChordProgression(4, parse_chord("Dm")), 4);
    const auto back = condition_roll_from_json(to_json(cond));
    CHECK(back == cond);
    CHECK(back.form() == ConditionForm::ChordOnly);

    auto bad = j;
    bad["data"][0] = 2;
    CHECK_THROWS(piano_roll_from_json(bad));
}

TEST_CASE("binary fixtures round trip") {
    Rng rng(4);
    PianoRoll r(32);
    for (int i = 0; i < 40; ++i) r.add_note(rng.below(32), rng.below(128), 1 + rng.below(6));
    const auto bytes = encode_fixture(r);
    CHECK(bytes.size() == 16 + (r.size() + 7) / 8);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "FTGR");
    CHECK(decode_piano_fixture(bytes) == r);

    LatentRoll x(4, 8);
    for (double& v : x.values()) v = static_cast<float>(rng.normal());
    CHECK(decode_latent_fixture(encode_fixture(x)) == x);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(decode_piano_fixture(truncated), ParseError);
}
