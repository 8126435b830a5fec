#include "ftg/theory.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace ftg {

namespace {

constexpr std::array<int, 7> kMajorScale{0, 2, 4, 5, 7, 9, 11};
// Natural minor plus the raised leading tone.
constexpr std::array<int, 8> kMinorScale{0, 2, 3, 5, 7, 8, 10, 11};

struct ChordTemplate {
    ChordQuality quality;
    const char* suffix;
    std::initializer_list<int> intervals;
};

// Order doubles as recognition tie-break priority.
const std::array<ChordTemplate, 7> kTemplates{{
    {ChordQuality::Maj, "", {0, 4, 7}},
    {ChordQuality::Min, "m", {0, 3, 7}},
    {ChordQuality::Dom7, "7", {0, 4, 7, 10}},
    {ChordQuality::Min7, "m7", {0, 3, 7, 10}},
    {ChordQuality::Maj7, "maj7", {0, 4, 7, 11}},
    {ChordQuality::Dim, "dim", {0, 3, 6}},
    {ChordQuality::Aug, "aug", {0, 4, 8}},
}};

const ChordTemplate& template_for(ChordQuality q) {
    for (const auto& t : kTemplates) {
        if (t.quality == q) return t;
    }
    throw InvalidInput("unknown chord quality");
}

constexpr std::array<const char*, 12> kPitchNames{"C", "C#", "D", "Eb", "E", "F", "F#", "G", "Ab", "A", "Bb", "B"};

int mod12(int v) { return ((v % 12) + 12) % 12; }

// Position on the circle of fifths, measured through the relative major.
int fifths_position(const KeySignature& key) {
    const int major_tonic = key.mode == Mode::Major ? key.tonic : mod12(key.tonic + 3);
    return mod12(major_tonic * 7);
}

int fifths_distance(const KeySignature& a, const KeySignature& b) {
    const int d = std::abs(fifths_position(a) - fifths_position(b));
    return std::min(d, 12 - d);
}

std::pair<int, std::size_t> parse_root(std::string_view s) {
    if (s.empty()) throw InvalidInput("empty pitch name");
    static constexpr std::array<int, 7> kLetter{9, 11, 0, 2, 4, 5, 7};  // A..G
    const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    if (letter < 'A' || letter > 'G') throw InvalidInput("bad pitch name '" + std::string(s) + "'");
    int pc = kLetter[static_cast<std::size_t>(letter - 'A')];
    std::size_t used = 1;
    while (used < s.size() && (s[used] == '#' || s[used] == 'b')) {
        pc += s[used] == '#' ? 1 : -1;
        ++used;
    }
    return {mod12(pc), used};
}

}  // namespace

PitchClassSet transpose(const PitchClassSet& set, int semitones) {
    PitchClassSet out;
    for (int pc = 0; pc < 12; ++pc) {
        if (set.test(static_cast<std::size_t>(pc))) out.set(static_cast<std::size_t>(mod12(pc + semitones)));
    }
    return out;
}

std::vector<int> members(const PitchClassSet& set) {
    std::vector<int> out;
    for (int pc = 0; pc < 12; ++pc) {
        if (set.test(static_cast<std::size_t>(pc))) out.push_back(pc);
    }
    return out;
}

PitchClassSet make_set(std::initializer_list<int> pcs) {
    PitchClassSet out;
    for (int pc : pcs) out.set(static_cast<std::size_t>(mod12(pc)));
    return out;
}

ChordProgression ChordProgression::from_blocks(const std::vector<Chord>& chords, std::size_t steps_per_symbol) {
    std::vector<Chord> steps;
    steps.reserve(chords.size() * steps_per_symbol);
    for (const auto& c : chords) steps.insert(steps.end(), steps_per_symbol, c);
    return ChordProgression(std::move(steps));
}

RhythmPattern::RhythmPattern(std::size_t length, std::vector<std::size_t> onsets) : onset_(length, false) {
    for (auto l : onsets) {
        if (l >= length) throw InvalidInput("rhythm onset " + std::to_string(l) + " outside [0," +
                                            std::to_string(length) + ")");
        onset_[l] = true;
    }
}

std::vector<std::size_t> RhythmPattern::onsets() const {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < onset_.size(); ++l) {
        if (onset_[l]) out.push_back(l);
    }
    return out;
}

bool RhythmPattern::empty() const { return std::none_of(onset_.begin(), onset_.end(), [](bool b) { return b; }); }

RhythmPattern RhythmPattern::from_roll(const PianoRoll& roll) {
    std::vector<std::size_t> onsets;
    for (std::size_t l = 0; l < roll.length(); ++l) {
        for (std::size_t h = 0; h < roll.pitches(); ++h) {
            if (roll(kOnset, l, h)) {
                onsets.push_back(l);
                break;
            }
        }
    }
    return RhythmPattern(roll.length(), std::move(onsets));
}

ConstraintMask::ConstraintMask(std::size_t length, std::size_t pitches)
    : length_(length), pitches_(pitches), cells_(length * pitches, false), rhythm_(length) {}

bool ConstraintMask::any_out_of_key() const {
    return std::any_of(cells_.begin(), cells_.end(), [](bool b) { return b; });
}

void ConstraintMask::set_rhythm(std::size_t l, RhythmConstraint spec) {
    if ((spec.kind == RhythmConstraint::Kind::Exactly || spec.kind == RhythmConstraint::Kind::AtLeast) &&
        spec.n < 1) {
        throw InvalidInput("rhythm constraint count must be >= 1");
    }
    rhythm_.at(l) = spec;
}

bool ConstraintMask::any_rhythm() const {
    return std::any_of(rhythm_.begin(), rhythm_.end(),
                       [](const RhythmConstraint& r) { return r.kind != RhythmConstraint::Kind::Unconstrained; });
}

std::vector<std::size_t> ConstraintMask::rhythm_candidates(std::size_t l) const {
    std::vector<std::size_t> out;
    out.reserve(pitches_);
    for (std::size_t h = 0; h < pitches_; ++h) {
        if (!rhythm_in_key_only_ || !out_of_key(l, h)) out.push_back(h);
    }
    return out;
}

PitchClassSet scale_pitch_classes(const KeySignature& key) {
    PitchClassSet out;
    if (key.mode == Mode::Major) {
        for (int i : kMajorScale) out.set(static_cast<std::size_t>(mod12(key.tonic + i)));
    } else {
        for (int i : kMinorScale) out.set(static_cast<std::size_t>(mod12(key.tonic + i)));
    }
    return out | key.allow;
}

PitchClassSet out_of_key_pitch_classes(const KeySignature& key) { return ~scale_pitch_classes(key); }

PitchClassSet chord_pitch_classes(const Chord& chord) {
    PitchClassSet out;
    for (int i : template_for(chord.quality).intervals) out.set(static_cast<std::size_t>(mod12(chord.root + i)));
    return out;
}

KeySequence derive_keys_from_chords(const ChordProgression& chords, std::size_t window) {
    const std::size_t n = chords.length();
    if (window == 0) window = 1;
    std::array<KeySignature, 24> candidates;
    std::array<PitchClassSet, 24> scales;
    for (int i = 0; i < 24; ++i) {
        candidates[static_cast<std::size_t>(i)] = KeySignature{i % 12, i < 12 ? Mode::Major : Mode::Minor, {}};
        scales[static_cast<std::size_t>(i)] = scale_pitch_classes(candidates[static_cast<std::size_t>(i)]);
    }
    std::vector<PitchClassSet> tones(n);
    for (std::size_t l = 0; l < n; ++l) tones[l] = chord_pitch_classes(chords[l]);

    std::vector<KeySignature> keys;
    keys.reserve(n);
    const std::size_t half = window / 2;
    for (std::size_t l = 0; l < n; ++l) {
        const std::size_t lo = l >= half ? l - half : 0;
        const std::size_t hi = std::min(n, l + (window - half));
        std::size_t best = 0;
        std::size_t best_score = 0;
        int best_dist = 0;
        for (std::size_t k = 0; k < 24; ++k) {
            std::size_t score = 0;
            for (std::size_t s = lo; s < hi; ++s) score += (tones[s] & scales[k]).count();
            const int dist = keys.empty() ? 0 : fifths_distance(candidates[k], keys.back());
            const bool better = k == 0 || score > best_score ||
                                (score == best_score && dist < best_dist) ||
                                (score == best_score && dist == best_dist &&
                                 candidates[k].tonic < candidates[best].tonic);
            if (better) {
                best = k;
                best_score = score;
                best_dist = dist;
            }
        }
        keys.push_back(candidates[best]);
    }
    return KeySequence(std::move(keys));
}

ChordProgression recognize_chords(const PianoRoll& roll, std::size_t granularity) {
    if (granularity == 0 || roll.length() % granularity != 0) {
        throw InvalidInput("chord granularity " + std::to_string(granularity) + " does not divide length " +
                           std::to_string(roll.length()));
    }
    std::vector<Chord> steps;
    steps.reserve(roll.length());
    Chord previous{0, ChordQuality::Maj};
    for (std::size_t start = 0; start < roll.length(); start += granularity) {
        std::array<double, 12> mass{};
        double total = 0.0;
        for (std::size_t l = start; l < start + granularity; ++l) {
            for (std::size_t h = 0; h < roll.pitches(); ++h) {
                if (roll(kOnset, l, h) || roll(kSustain, l, h)) {
                    mass[static_cast<std::size_t>(pitch_class(h))] += 1.0;
                    total += 1.0;
                }
            }
        }
        Chord chosen = previous;
        if (total > 0.0) {
            double best = 0.0;
            std::size_t best_size = 0;
            bool have = false;
            for (const auto& t : kTemplates) {
                for (int root = 0; root < 12; ++root) {
                    const auto pcs = chord_pitch_classes(Chord{root, t.quality});
                    double matched = 0.0;
                    for (std::size_t pc = 0; pc < 12; ++pc) {
                        if (pcs.test(pc)) matched += mass[pc];
                    }
                    const double score = matched - (total - matched);
                    // Equal scores go to the smaller template, so a triad is
                    // not absorbed by a seventh chord containing it.
                    const std::size_t size = pcs.count();
                    if (!have || score > best || (score == best && size < best_size)) {
                        have = true;
                        best = score;
                        best_size = size;
                        chosen = Chord{root, t.quality};
                    }
                }
            }
        }
        steps.insert(steps.end(), granularity, chosen);
        previous = chosen;
    }
    return ChordProgression(std::move(steps));
}

ConstraintMask build_constraint_mask(const KeySequence& keys, const std::vector<RhythmConstraint>& rhythm,
                                     std::size_t pitches, bool rhythm_in_key_only) {
    const std::size_t n = keys.length();
    if (!rhythm.empty() && rhythm.size() != n) {
        throw ShapeMismatch("rhythm spec covers " + std::to_string(rhythm.size()) + " steps, keys cover " +
                            std::to_string(n));
    }
    ConstraintMask mask(n, pitches);
    for (std::size_t l = 0; l < n; ++l) {
        const auto out = out_of_key_pitch_classes(keys[l]);
        for (std::size_t h = 0; h < pitches; ++h) {
            if (out.test(static_cast<std::size_t>(pitch_class(h)))) mask.set_out_of_key(l, h, true);
        }
        if (!rhythm.empty()) mask.set_rhythm(l, rhythm[l]);
    }
    mask.set_rhythm_in_key_only(rhythm_in_key_only);
    return mask;
}

std::vector<RhythmConstraint> rhythm_constraints_from_pattern(const RhythmPattern& rhythm, std::size_t n) {
    std::vector<RhythmConstraint> out(rhythm.length());
    for (std::size_t l = 0; l < rhythm.length(); ++l) {
        out[l] = rhythm.contains(l) ? RhythmConstraint::at_least(n) : RhythmConstraint::none_allowed();
    }
    return out;
}

std::vector<RhythmConstraint> parse_rhythm_string(std::string_view pattern) {
    std::vector<RhythmConstraint> out;
    for (std::size_t i = 0; i < pattern.size(); ++i) {
        switch (pattern[i]) {
        case 'x':
        case 'X':
            out.push_back(RhythmConstraint::at_least(1));
            break;
        case '.':
            out.push_back(RhythmConstraint::unconstrained());
            break;
        case 'o':
        case 'O':
            out.push_back(RhythmConstraint::none_allowed());
            break;
        case ' ':
        case '|':
            break;
        default:
            throw InvalidInput("bad rhythm character '" + std::string(1, pattern[i]) + "' at " + std::to_string(i));
        }
    }
    return out;
}

RhythmPattern rhythm_from_string(std::string_view pattern) {
    const auto specs = parse_rhythm_string(pattern);
    std::vector<std::size_t> onsets;
    for (std::size_t l = 0; l < specs.size(); ++l) {
        if (specs[l].kind == RhythmConstraint::Kind::AtLeast) onsets.push_back(l);
    }
    return RhythmPattern(specs.size(), std::move(onsets));
}

std::vector<std::size_t> chord_key_conflicts(const ChordProgression& chords, const KeySequence& keys) {
    std::vector<std::size_t> out;
    const std::size_t n = std::min(chords.length(), keys.length());
    for (std::size_t l = 0; l < n; ++l) {
        if ((chord_pitch_classes(chords[l]) & out_of_key_pitch_classes(keys[l])).any()) out.push_back(l);
    }
    return out;
}

std::string pitch_class_name(int pc) { return kPitchNames[static_cast<std::size_t>(mod12(pc))]; }

std::string chord_symbol(const Chord& chord) {
    return pitch_class_name(chord.root) + template_for(chord.quality).suffix;
}

Chord parse_chord(std::string_view symbol) {
    const auto [root, used] = parse_root(symbol);
    const std::string_view suffix = symbol.substr(used);
    // "maj" and "min" spellings are accepted as aliases.
    if (suffix == "maj" || suffix == "M") return Chord{root, ChordQuality::Maj};
    if (suffix == "min") return Chord{root, ChordQuality::Min};
    for (const auto& t : kTemplates) {
        if (suffix == t.suffix) return Chord{root, t.quality};
    }
    throw InvalidInput("unknown chord symbol '" + std::string(symbol) + "'");
}

std::string key_symbol(const KeySignature& key) {
    return pitch_class_name(key.tonic) + (key.mode == Mode::Minor ? "m" : "");
}

KeySignature parse_key(std::string_view symbol) {
    const auto [tonic, used] = parse_root(symbol);
    const std::string_view suffix = symbol.substr(used);
    if (suffix.empty() || suffix == "maj" || suffix == "major") return KeySignature{tonic, Mode::Major, {}};
    if (suffix == "m" || suffix == "min" || suffix == "minor") return KeySignature{tonic, Mode::Minor, {}};
    throw InvalidInput("unknown key symbol '" + std::string(symbol) + "'");
}

nlohmann::json progression_to_json(const ChordProgression& chords) {
    auto out = nlohmann::json::array();
    for (std::size_t l = 0; l < chords.length(); ++l) {
        if (l == 0 || !(chords[l] == chords[l - 1])) {
            out.push_back({{"step", l}, {"chord", chord_symbol(chords[l])}});
        }
    }
    return out;
}

ChordProgression progression_from_json(const nlohmann::json& j, std::size_t length) {
    if (!j.is_array() || j.empty()) throw InvalidInput("progression must be a non-empty array");
    std::vector<std::pair<std::size_t, Chord>> changes;
    for (const auto& e : j) {
        changes.emplace_back(e.at("step").get<std::size_t>(), parse_chord(e.at("chord").get<std::string>()));
    }
    std::stable_sort(changes.begin(), changes.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    if (changes.front().first != 0) throw InvalidInput("progression must start at step 0");
    std::vector<Chord> steps(length);
    std::size_t next = 0;
    for (std::size_t l = 0; l < length; ++l) {
        while (next < changes.size() && changes[next].first <= l) ++next;
        steps[l] = changes[next - 1].second;
    }
    return ChordProgression(std::move(steps));
}

}  // namespace ftg
