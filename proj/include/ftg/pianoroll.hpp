#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ftg/errors.hpp"

namespace ftg {

inline constexpr std::size_t kPitches = 128;
inline constexpr std::size_t kOnset = 0;
inline constexpr std::size_t kSustain = 1;
inline constexpr std::size_t kStepsPerBeat = 4;
inline constexpr std::size_t kStepsPerBar = 16;

class ConstraintMask;
class ChordProgression;
class RhythmPattern;

struct RollShape {
    std::size_t channels = 2;
    std::size_t length = 0;
    std::size_t pitches = kPitches;

    std::size_t size() const noexcept { return channels * length * pitches; }
    std::size_t index(std::size_t c, std::size_t l, std::size_t h) const noexcept {
        return (c * length + l) * pitches + h;
    }
    bool operator==(const RollShape&) const = default;
};

std::string to_string(const RollShape& shape);

// Dense row-major (channel, step, pitch) storage shared by every roll type.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    explicit Grid(RollShape shape, T fill = T{}) : shape_(shape), data_(shape.size(), fill) {}

    const RollShape& shape() const noexcept { return shape_; }
    std::size_t channels() const noexcept { return shape_.channels; }
    std::size_t length() const noexcept { return shape_.length; }
    std::size_t pitches() const noexcept { return shape_.pitches; }
    std::size_t size() const noexcept { return data_.size(); }

    T& operator()(std::size_t c, std::size_t l, std::size_t h) { return data_[shape_.index(c, l, h)]; }
    const T& operator()(std::size_t c, std::size_t l, std::size_t h) const {
        return data_[shape_.index(c, l, h)];
    }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    std::span<T> channel(std::size_t c) {
        return std::span<T>(data_).subspan(c * shape_.length * shape_.pitches,
                                           shape_.length * shape_.pitches);
    }
    std::span<const T> channel(std::size_t c) const {
        return std::span<const T>(data_).subspan(c * shape_.length * shape_.pitches,
                                                 shape_.length * shape_.pitches);
    }

    bool operator==(const Grid&) const = default;

protected:
    RollShape shape_{};
    std::vector<T> data_;
};

// Binary onset/sustain grid, 2 x L x H.
class PianoRoll : public Grid<std::uint8_t> {
public:
    PianoRoll() = default;
    explicit PianoRoll(std::size_t length, std::size_t pitches = kPitches)
        : Grid(RollShape{2, length, pitches}, 0) {}

    // Adds a note of `duration` steps; truncated at the roll end.
    void add_note(std::size_t step, std::size_t pitch, std::size_t duration);

    // True when every sustain has an onset/sustain predecessor (bare sustain
    // allowed at step 0).
    bool well_formed() const;
    // Steps of the first sustain cell lacking a predecessor, if any.
    std::optional<std::size_t> first_orphan_sustain() const;

    std::size_t onset_count() const;
    bool empty() const;
};

class LatentRoll : public Grid<double> {
public:
    LatentRoll() = default;
    explicit LatentRoll(std::size_t length, std::size_t pitches = kPitches, double fill = 0.0)
        : Grid(RollShape{2, length, pitches}, fill) {}
    explicit LatentRoll(RollShape shape, double fill = 0.0);

    bool all_finite() const;
    static LatentRoll from_piano_roll(const PianoRoll& roll);
};

enum class ConditionForm { ChordRhythm, ChordOnly };

// M^cond: {0,1} values in the chord+rhythm form, {-2,-1} in the chord-only
// form.
class ConditionRoll : public Grid<double> {
public:
    ConditionRoll() = default;
    ConditionRoll(RollShape shape, ConditionForm form);

    ConditionForm form() const noexcept { return form_; }
    bool values_match_form() const;

private:
    ConditionForm form_ = ConditionForm::ChordRhythm;
};

// 6 x L x H network input: [0,1] latent, [2,3] condition, [4,5] melody.
class ModelInput : public Grid<double> {
public:
    ModelInput() = default;
    explicit ModelInput(std::size_t length, std::size_t pitches = kPitches)
        : Grid(RollShape{6, length, pitches}, 0.0) {}

    LatentRoll latent() const;
    ConditionRoll condition(ConditionForm form) const;
    PianoRoll melody() const;
};

// Thresholds at 1/2. With a mask, out-of-key cells are forced to 0 unless the
// value is strictly above 1/2.
PianoRoll binarize(const LatentRoll& latent, const ConstraintMask* mask = nullptr);

ConditionRoll build_condition_cr(const ChordProgression& chords, const RhythmPattern& rhythm,
                                 std::size_t length, std::size_t pitches = kPitches);
ConditionRoll build_condition_c(const ChordProgression& chords, std::size_t length,
                                std::size_t pitches = kPitches);

ModelInput concat_model_input(const LatentRoll& x_t, const ConditionRoll& cond,
                              const PianoRoll* melody = nullptr);

// Canonical JSON: {"channels","length","pitches","data"} row-major.
nlohmann::json to_json(const PianoRoll& roll);
nlohmann::json to_json(const LatentRoll& roll);
nlohmann::json to_json(const ConditionRoll& roll);
PianoRoll piano_roll_from_json(const nlohmann::json& j);
LatentRoll latent_roll_from_json(const nlohmann::json& j);
ConditionRoll condition_roll_from_json(const nlohmann::json& j);

// "FTGR" fixtures. Payload kind is implied by its size: bit-packed for piano
// rolls, float32 for real-valued rolls.
std::vector<std::uint8_t> encode_fixture(const PianoRoll& roll);
std::vector<std::uint8_t> encode_fixture(const LatentRoll& roll);
PianoRoll decode_piano_fixture(std::span<const std::uint8_t> bytes);
LatentRoll decode_latent_fixture(std::span<const std::uint8_t> bytes);

}  // namespace ftg
