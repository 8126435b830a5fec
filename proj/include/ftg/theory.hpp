#pragma once

#include <bitset>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ftg/pianoroll.hpp"

namespace ftg {

using PitchClassSet = std::bitset<12>;

inline int pitch_class(std::size_t pitch) { return static_cast<int>(pitch % 12); }
PitchClassSet transpose(const PitchClassSet& set, int semitones);
std::vector<int> members(const PitchClassSet& set);
PitchClassSet make_set(std::initializer_list<int> pcs);

enum class Mode { Major, Minor };

struct KeySignature {
    int tonic = 0;
    Mode mode = Mode::Major;
    // Pitch classes additionally treated as in-key (e.g. the b7 of a
    // secondary dominant).
    PitchClassSet allow{};

    bool operator==(const KeySignature&) const = default;
};

enum class ChordQuality { Maj, Min, Dom7, Min7, Maj7, Dim, Aug };

struct Chord {
    int root = 0;
    ChordQuality quality = ChordQuality::Maj;

    bool operator==(const Chord&) const = default;
};

// Per-step chord assignment.
class ChordProgression {
public:
    ChordProgression() = default;
    explicit ChordProgression(std::vector<Chord> per_step) : steps_(std::move(per_step)) {}
    ChordProgression(std::size_t length, Chord chord) : steps_(length, chord) {}

    // Expands one chord per block of `steps_per_symbol` steps.
    static ChordProgression from_blocks(const std::vector<Chord>& chords, std::size_t steps_per_symbol);

    std::size_t length() const noexcept { return steps_.size(); }
    const Chord& operator[](std::size_t l) const { return steps_.at(l); }
    Chord& operator[](std::size_t l) { return steps_.at(l); }
    const std::vector<Chord>& steps() const noexcept { return steps_; }

    bool operator==(const ChordProgression&) const = default;

private:
    std::vector<Chord> steps_;
};

class RhythmPattern {
public:
    RhythmPattern() = default;
    RhythmPattern(std::size_t length, std::vector<std::size_t> onsets);

    std::size_t length() const noexcept { return onset_.size(); }
    bool contains(std::size_t l) const { return l < onset_.size() && onset_[l]; }
    std::vector<std::size_t> onsets() const;
    bool empty() const;

    // Columns with at least one onset in the roll's onset channel.
    static RhythmPattern from_roll(const PianoRoll& roll);

    bool operator==(const RhythmPattern&) const = default;

private:
    std::vector<bool> onset_;
};

class KeySequence {
public:
    KeySequence() = default;
    explicit KeySequence(std::vector<KeySignature> keys) : keys_(std::move(keys)) {}
    KeySequence(std::size_t length, KeySignature key) : keys_(length, key) {}

    std::size_t length() const noexcept { return keys_.size(); }
    const KeySignature& operator[](std::size_t l) const { return keys_.at(l); }
    const std::vector<KeySignature>& keys() const noexcept { return keys_; }

    bool operator==(const KeySequence&) const = default;

private:
    std::vector<KeySignature> keys_;
};

// Per-column rhythm requirement on the onset channel.
struct RhythmConstraint {
    enum class Kind { Unconstrained, Exactly, AtLeast, NoneAllowed };
    Kind kind = Kind::Unconstrained;
    std::size_t n = 0;

    static RhythmConstraint unconstrained() { return {}; }
    static RhythmConstraint exactly(std::size_t n) { return {Kind::Exactly, n}; }
    static RhythmConstraint at_least(std::size_t n) { return {Kind::AtLeast, n}; }
    static RhythmConstraint none_allowed() { return {Kind::NoneAllowed, 0}; }

    bool operator==(const RhythmConstraint&) const = default;
};

// Out-of-key cells plus per-column rhythm constraints.
class ConstraintMask {
public:
    ConstraintMask() = default;
    ConstraintMask(std::size_t length, std::size_t pitches);

    std::size_t length() const noexcept { return length_; }
    std::size_t pitches() const noexcept { return pitches_; }

    bool out_of_key(std::size_t l, std::size_t h) const { return cells_[l * pitches_ + h]; }
    void set_out_of_key(std::size_t l, std::size_t h, bool v) { cells_[l * pitches_ + h] = v; }
    bool any_out_of_key() const;

    const RhythmConstraint& rhythm(std::size_t l) const { return rhythm_.at(l); }
    void set_rhythm(std::size_t l, RhythmConstraint spec);
    bool any_rhythm() const;

    // Rhythm-forced onsets may only use in-key pitches.
    bool rhythm_in_key_only() const noexcept { return rhythm_in_key_only_; }
    void set_rhythm_in_key_only(bool v) { rhythm_in_key_only_ = v; }

    // Pitches eligible to satisfy the rhythm constraint in column l.
    std::vector<std::size_t> rhythm_candidates(std::size_t l) const;

private:
    std::size_t length_ = 0;
    std::size_t pitches_ = 0;
    std::vector<bool> cells_;
    std::vector<RhythmConstraint> rhythm_;
    bool rhythm_in_key_only_ = false;
};

PitchClassSet scale_pitch_classes(const KeySignature& key);
PitchClassSet out_of_key_pitch_classes(const KeySignature& key);
PitchClassSet chord_pitch_classes(const Chord& chord);

// Keys whose scale best covers the chord tones in a window centered on each
// step.
KeySequence derive_keys_from_chords(const ChordProgression& chords, std::size_t window = kStepsPerBar);

// Template matching per `granularity`-step window.
ChordProgression recognize_chords(const PianoRoll& roll, std::size_t granularity = kStepsPerBeat);

ConstraintMask build_constraint_mask(const KeySequence& keys,
                                     const std::vector<RhythmConstraint>& rhythm,
                                     std::size_t pitches = kPitches,
                                     bool rhythm_in_key_only = true);

// B2(n) at onset columns, B3 elsewhere.
std::vector<RhythmConstraint> rhythm_constraints_from_pattern(const RhythmPattern& rhythm,
                                                              std::size_t n = 1);

// "x" = onset required, "." = free, "o" = no onset.
std::vector<RhythmConstraint> parse_rhythm_string(std::string_view pattern);
RhythmPattern rhythm_from_string(std::string_view pattern);

// Steps where the chord has pitch classes outside the key.
std::vector<std::size_t> chord_key_conflicts(const ChordProgression& chords, const KeySequence& keys);

std::string chord_symbol(const Chord& chord);
Chord parse_chord(std::string_view symbol);
std::string key_symbol(const KeySignature& key);
KeySignature parse_key(std::string_view symbol);
std::string pitch_class_name(int pc);

nlohmann::json progression_to_json(const ChordProgression& chords);
ChordProgression progression_from_json(const nlohmann::json& j, std::size_t length);

}  // namespace ftg
