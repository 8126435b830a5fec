#include "ftg/pianoroll.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "ftg/theory.hpp"

namespace ftg {

std::string to_string(const RollShape& shape) {
    return std::to_string(shape.channels) + "x" + std::to_string(shape.length) + "x" +
           std::to_string(shape.pitches);
}

void PianoRoll::add_note(std::size_t step, std::size_t pitch, std::size_t duration) {
    if (pitch >= pitches() || step >= length() || duration == 0) return;
    (*this)(kOnset, step, pitch) = 1;
    (*this)(kSustain, step, pitch) = 0;
    const std::size_t end = std::min(length(), step + duration);
    for (std::size_t l = step + 1; l < end; ++l) {
        if ((*this)(kOnset, l, pitch)) break;
        (*this)(kSustain, l, pitch) = 1;
    }
}

std::optional<std::size_t> PianoRoll::first_orphan_sustain() const {
    for (std::size_t l = 1; l < length(); ++l) {
        for (std::size_t h = 0; h < pitches(); ++h) {
            if ((*this)(kSustain, l, h) && !(*this)(kOnset, l - 1, h) && !(*this)(kSustain, l - 1, h)) {
                return l;
            }
        }
    }
    return std::nullopt;
}

bool PianoRoll::well_formed() const {
    return std::all_of(data_.begin(), data_.end(), [](std::uint8_t v) { return v <= 1; }) &&
           !first_orphan_sustain();
}

std::size_t PianoRoll::onset_count() const {
    const auto onsets = channel(kOnset);
    return static_cast<std::size_t>(std::count(onsets.begin(), onsets.end(), std::uint8_t{1}));
}

bool PianoRoll::empty() const {
    return std::all_of(data_.begin(), data_.end(), [](std::uint8_t v) { return v == 0; });
}

LatentRoll::LatentRoll(RollShape shape, double fill) : Grid(shape, fill) {
    if (shape.channels != 2) throw ShapeMismatch("latent roll must have 2 channels");
}

bool LatentRoll::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

LatentRoll LatentRoll::from_piano_roll(const PianoRoll& roll) {
    LatentRoll out(roll.length(), roll.pitches());
    std::transform(roll.values().begin(), roll.values().end(), out.values().begin(),
                   [](std::uint8_t v) { return static_cast<double>(v); });
    return out;
}

ConditionRoll::ConditionRoll(RollShape shape, ConditionForm form)
    : Grid(shape, form == ConditionForm::ChordOnly ? -1.0 : 0.0), form_(form) {}

bool ConditionRoll::values_match_form() const {
    const double lo = form_ == ConditionForm::ChordOnly ? -2.0 : 0.0;
    const double hi = lo + 1.0;
    return std::all_of(data_.begin(), data_.end(), [&](double v) { return v == lo || v == hi; });
}

LatentRoll ModelInput::latent() const {
    LatentRoll out(length(), pitches());
    std::copy_n(data_.begin(), out.size(), out.values().begin());
    return out;
}

ConditionRoll ModelInput::condition(ConditionForm form) const {
    ConditionRoll out(RollShape{2, length(), pitches()}, form);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(out.size()), out.size(), out.values().begin());
    return out;
}

PianoRoll ModelInput::melody() const {
    PianoRoll out(length(), pitches());
    const auto offset = static_cast<std::ptrdiff_t>(2 * out.size());
    std::transform(data_.begin() + offset, data_.begin() + offset + static_cast<std::ptrdiff_t>(out.size()),
                   out.values().begin(), [](double v) { return static_cast<std::uint8_t>(v >= 0.5); });
    return out;
}

PianoRoll binarize(const LatentRoll& latent, const ConstraintMask* mask) {
    if (!latent.all_finite()) throw InvalidInput("binarize: latent roll has non-finite values");
    if (mask && (mask->length() != latent.length() || mask->pitches() != latent.pitches())) {
        throw ShapeMismatch("binarize: mask shape does not match roll");
    }
    PianoRoll out(latent.length(), latent.pitches());
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t l = 0; l < latent.length(); ++l) {
            for (std::size_t h = 0; h < latent.pitches(); ++h) {
                const double v = latent(c, l, h);
                bool on = v >= 0.5;
                if (on && mask && mask->out_of_key(l, h) && v <= 0.5) on = false;
                out(c, l, h) = on ? 1 : 0;
            }
        }
    }
    return out;
}

namespace {

void check_chords(const ChordProgression& chords, std::size_t length) {
    if (chords.length() < length) {
        throw ShapeMismatch("chord progression covers " + std::to_string(chords.length()) +
                            " steps, roll needs " + std::to_string(length));
    }
}

}  // namespace

ConditionRoll build_condition_cr(const ChordProgression& chords, const RhythmPattern& rhythm,
                                 std::size_t length, std::size_t pitches) {
    check_chords(chords, length);
    if (rhythm.length() > length) {
        for (auto l : rhythm.onsets()) {
            if (l >= length) throw InvalidInput("rhythm onset outside the roll");
        }
    }
    ConditionRoll out(RollShape{2, length, pitches}, ConditionForm::ChordRhythm);
    for (std::size_t l = 0; l < length; ++l) {
        const auto tones = chord_pitch_classes(chords[l]);
        const std::size_t ch = rhythm.contains(l) ? kOnset : kSustain;
        for (std::size_t h = 0; h < pitches; ++h) {
            if (tones.test(static_cast<std::size_t>(pitch_class(h)))) out(ch, l, h) = 1.0;
        }
    }
    return out;
}

ConditionRoll build_condition_c(const ChordProgression& chords, std::size_t length, std::size_t pitches) {
    check_chords(chords, length);
    ConditionRoll out(RollShape{2, length, pitches}, ConditionForm::ChordOnly);
    for (std::size_t l = 0; l < length; ++l) {
        const auto tones = chord_pitch_classes(chords[l]);
        for (std::size_t h = 0; h < pitches; ++h) {
            if (tones.test(static_cast<std::size_t>(pitch_class(h)))) {
                out(kOnset, l, h) = -2.0;
                out(kSustain, l, h) = -2.0;
            }
        }
    }
    return out;
}

ModelInput concat_model_input(const LatentRoll& x_t, const ConditionRoll& cond, const PianoRoll* melody) {
    if (cond.shape() != x_t.shape()) {
        throw ShapeMismatch("condition " + to_string(cond.shape()) + " vs latent " + to_string(x_t.shape()));
    }
    if (melody && melody->shape() != x_t.shape()) {
        throw ShapeMismatch("melody " + to_string(melody->shape()) + " vs latent " + to_string(x_t.shape()));
    }
    ModelInput out(x_t.length(), x_t.pitches());
    auto dst = out.values();
    const std::size_t block = x_t.size();
    std::copy(x_t.values().begin(), x_t.values().end(), dst.begin());
    std::copy(cond.values().begin(), cond.values().end(), dst.begin() + static_cast<std::ptrdiff_t>(block));
    if (melody) {
        std::transform(melody->values().begin(), melody->values().end(),
                       dst.begin() + static_cast<std::ptrdiff_t>(2 * block),
                       [](std::uint8_t v) { return static_cast<double>(v); });
    }
    return out;
}

// --- serialization ---------------------------------------------------------

namespace {

template <typename G>
nlohmann::json grid_json(const G& g) {
    nlohmann::json j;
    j["channels"] = g.channels();
    j["length"] = g.length();
    j["pitches"] = g.pitches();
    j["data"] = std::vector<typename G::value_type>(g.values().begin(), g.values().end());
    return j;
}

RollShape shape_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidInput("roll JSON must be an object");
    for (const char* key : {"channels", "length", "pitches", "data"}) {
        if (!j.contains(key)) throw InvalidInput(std::string("roll JSON missing \"") + key + "\"");
    }
    RollShape s{j.at("channels").get<std::size_t>(), j.at("length").get<std::size_t>(),
                j.at("pitches").get<std::size_t>()};
    if (!j.at("data").is_array() || j.at("data").size() != s.size()) {
        throw ShapeMismatch("roll JSON data has " + std::to_string(j.at("data").size()) +
                            " entries, shape " + to_string(s) + " needs " + std::to_string(s.size()));
    }
    return s;
}

}  // namespace

nlohmann::json to_json(const PianoRoll& roll) { return grid_json(roll); }
nlohmann::json to_json(const LatentRoll& roll) { return grid_json(roll); }

nlohmann::json to_json(const ConditionRoll& roll) {
    auto j = grid_json(roll);
    j["form"] = roll.form() == ConditionForm::ChordOnly ? "c" : "cr";
    return j;
}

PianoRoll piano_roll_from_json(const nlohmann::json& j) {
    const auto s = shape_from_json(j);
    if (s.channels != 2) throw ShapeMismatch("piano roll must have 2 channels");
    PianoRoll out(s.length, s.pitches);
    const auto& data = j.at("data");
    for (std::size_t i = 0; i < s.size(); ++i) {
        const int v = data[i].get<int>();
        if (v != 0 && v != 1) throw InvalidInput("piano roll cells must be 0 or 1");
        out.values()[i] = static_cast<std::uint8_t>(v);
    }
    return out;
}

LatentRoll latent_roll_from_json(const nlohmann::json& j) {
    const auto s = shape_from_json(j);
    LatentRoll out(s);
    const auto& data = j.at("data");
    for (std::size_t i = 0; i < s.size(); ++i) out.values()[i] = data[i].get<double>();
    if (!out.all_finite()) throw InvalidInput("latent roll has non-finite values");
    return out;
}

ConditionRoll condition_roll_from_json(const nlohmann::json& j) {
    const auto s = shape_from_json(j);
    const auto form = j.value("form", std::string("cr")) == "c" ? ConditionForm::ChordOnly
                                                                 : ConditionForm::ChordRhythm;
    ConditionRoll out(s, form);
    const auto& data = j.at("data");
    for (std::size_t i = 0; i < s.size(); ++i) out.values()[i] = data[i].get<double>();
    if (!out.values_match_form()) throw InvalidInput("condition roll values do not match its form");
    return out;
}

namespace {

constexpr char kFixtureMagic[4] = {'F', 'T', 'G', 'R'};
constexpr std::size_t kFixtureHeader = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
}

std::vector<std::uint8_t> fixture_header(const RollShape& s) {
    std::vector<std::uint8_t> out(kFixtureMagic, kFixtureMagic + 4);
    put_u32(out, static_cast<std::uint32_t>(s.channels));
    put_u32(out, static_cast<std::uint32_t>(s.length));
    put_u32(out, static_cast<std::uint32_t>(s.pitches));
    return out;
}

RollShape read_fixture_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kFixtureHeader) throw ParseError("fixture shorter than header", bytes.size());
    if (!std::equal(kFixtureMagic, kFixtureMagic + 4, bytes.begin())) throw ParseError("bad fixture magic", 0);
    return RollShape{get_u32(bytes, 4), get_u32(bytes, 8), get_u32(bytes, 12)};
}

}  // namespace

std::vector<std::uint8_t> encode_fixture(const PianoRoll& roll) {
    auto out = fixture_header(roll.shape());
    const auto cells = roll.values();
    std::vector<std::uint8_t> packed((cells.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    out.insert(out.end(), packed.begin(), packed.end());
    return out;
}

std::vector<std::uint8_t> encode_fixture(const LatentRoll& roll) {
    auto out = fixture_header(roll.shape());
    for (double v : roll.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return out;
}

PianoRoll decode_piano_fixture(std::span<const std::uint8_t> bytes) {
    const auto s = read_fixture_header(bytes);
    if (s.channels != 2) throw ParseError("piano fixture must have 2 channels", 4);
    if (bytes.size() - kFixtureHeader != (s.size() + 7) / 8) {
        throw ParseError("piano fixture payload size mismatch", kFixtureHeader);
    }
    PianoRoll out(s.length, s.pitches);
    for (std::size_t i = 0; i < s.size(); ++i) {
        out.values()[i] = (bytes[kFixtureHeader + i / 8] >> (i % 8)) & 1u;
    }
    return out;
}

LatentRoll decode_latent_fixture(std::span<const std::uint8_t> bytes) {
    const auto s = read_fixture_header(bytes);
    if (bytes.size() - kFixtureHeader != 4 * s.size()) {
        throw ParseError("latent fixture payload size mismatch", kFixtureHeader);
    }
    LatentRoll out(s);
    for (std::size_t i = 0; i < s.size(); ++i) {
        out.values()[i] = std::bit_cast<float>(get_u32(bytes, kFixtureHeader + 4 * i));
    }
    return out;
}

}  // namespace ftg
