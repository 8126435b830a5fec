#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>

#include "ftg/midi.hpp"
#include "ftg/rng.hpp"

namespace ftg {

void CorpusSpec::validate() const {
    if (pieces == 0) throw InvalidInput("corpus needs at least one piece");
    if (measures == 0) throw InvalidInput("pieces need at least one measure");
    if (progressions.empty()) throw InvalidInput("corpus needs at least one progression template");
    if (rhythms.empty()) throw InvalidInput("corpus needs at least one rhythm template");
    for (const auto& p : progressions) {
        if (p.empty()) throw InvalidInput("empty progression template");
    }
    for (const auto& r : rhythms) {
        if (r.size() != kStepsPerBar || r.find_first_not_of("x.") != std::string::npos || r[0] != 'x') {
            throw InvalidInput("rhythm template \"" + r + "\" must be 16 of 'x'/'.' starting with 'x'");
        }
    }
}

CorpusSpec default_corpus_spec(std::size_t pieces, std::uint64_t seed) {
    CorpusSpec spec;
    spec.pieces = pieces;
    spec.seed = seed;
    spec.progressions = {{"I", "IV", "V", "I"},  {"I", "vi", "IV", "V"}, {"vi", "IV", "I", "V"},
                         {"I", "V", "vi", "IV"}, {"ii", "V7", "I", "I"}, {"I", "iii", "IV", "V"}};
    spec.rhythms = {"x...x...x...x...", "x.x.x.x.x.x.x.x.", "x..x..x.x..x..x.",
                    "x...x.x.x...x.x.", "x.......x.......", "x..x..x...x.x..."};
    return spec;
}

Chord chord_for_degree(const KeySignature& key, const std::string& numeral) {
    static const char* kNumerals[] = {"VII", "III", "VI", "IV", "II", "V", "I"};
    static const int kDegree[] = {6, 2, 5, 3, 1, 4, 0};
    std::string upper;
    std::size_t i = 0;
    while (i < numeral.size() && (numeral[i] == 'I' || numeral[i] == 'V' || numeral[i] == 'i' || numeral[i] == 'v')) {
        upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(numeral[i]))));
        ++i;
    }
    int degree = -1;
    for (int k = 0; k < 7; ++k) {
        if (upper == kNumerals[k]) degree = kDegree[k];
    }
    if (degree < 0) throw InvalidInput("unknown scale degree \"" + numeral + "\"");
    const bool minor_case = std::islower(static_cast<unsigned char>(numeral[0])) != 0;
    const std::string suffix = numeral.substr(i);
    static const int kMajorSteps[] = {0, 2, 4, 5, 7, 9, 11};
    static const int kMinorSteps[] = {0, 2, 3, 5, 7, 8, 10};
    const int offset = key.mode == Mode::Major ? kMajorSteps[degree] : kMinorSteps[degree];
    Chord c{(key.tonic + offset) % 12, minor_case ? ChordQuality::Min : ChordQuality::Maj};
    if (suffix == "7") {
        c.quality = minor_case ? ChordQuality::Min7 : ChordQuality::Dom7;
    } else if (suffix == "maj7") {
        c.quality = ChordQuality::Maj7;
    } else if (suffix == "dim" || suffix == "o") {
        c.quality = ChordQuality::Dim;
    } else if (suffix == "+" || suffix == "aug") {
        c.quality = ChordQuality::Aug;
    } else if (!suffix.empty()) {
        throw InvalidInput("unknown chord suffix in \"" + numeral + "\"");
    }
    return c;
}

namespace {

std::vector<KeySignature> major_keys() {
    std::vector<KeySignature> keys;
    for (int t = 0; t < 12; ++t) keys.push_back(KeySignature{t, Mode::Major, {}});
    return keys;
}

// Smallest pitch >= floor with pitch class pc.
std::size_t lift(int pc, std::size_t floor) {
    std::size_t p = floor;
    while (pitch_class(p) != pc) ++p;
    return p;
}

void render_accompaniment(CorpusPiece& piece, const std::vector<Chord>& per_measure, const std::string& rhythm,
                          Rng& rng) {
    for (std::size_t m = 0; m < per_measure.size(); ++m) {
        const Chord& chord = per_measure[m];
        const std::size_t bar = m * kStepsPerBar;
        const std::size_t base = rng.bernoulli(0.5) ? 52 : 55;
        std::vector<std::size_t> voicing;
        for (int pc : members(chord_pitch_classes(chord))) voicing.push_back(lift(pc, base));
        piece.accompaniment.add_note(bar, lift(chord.root, 36), kStepsPerBar);
        std::vector<std::size_t> strikes;
        for (std::size_t s = 0; s < kStepsPerBar; ++s) {
            if (rhythm[s] == 'x') strikes.push_back(s);
        }
        for (std::size_t k = 0; k < strikes.size(); ++k) {
            const std::size_t next = k + 1 < strikes.size() ? strikes[k + 1] : kStepsPerBar;
            for (std::size_t p : voicing) piece.accompaniment.add_note(bar + strikes[k], p, next - strikes[k]);
        }
    }
}

void render_melody(CorpusPiece& piece, const std::vector<Chord>& per_measure, Rng& rng) {
    const PitchClassSet scale = scale_pitch_classes(piece.key);
    std::vector<std::size_t> ladder;  // in-key pitches within the melody range
    for (std::size_t p = 67; p <= 88; ++p) {
        if (scale.test(static_cast<std::size_t>(pitch_class(p)))) ladder.push_back(p);
    }
    std::size_t pos = ladder.size() / 2;
    for (std::size_t m = 0; m < per_measure.size(); ++m) {
        // Start each measure on the nearest chord tone.
        const PitchClassSet tones = chord_pitch_classes(per_measure[m]);
        std::size_t best = pos;
        for (std::size_t d = 0; d < ladder.size(); ++d) {
            if (pos >= d && tones.test(static_cast<std::size_t>(pitch_class(ladder[pos - d])))) {
                best = pos - d;
                break;
            }
            if (pos + d < ladder.size() && tones.test(static_cast<std::size_t>(pitch_class(ladder[pos + d])))) {
                best = pos + d;
                break;
            }
        }
        pos = best;
        std::size_t s = 0;
        while (s < kStepsPerBar) {
            const std::size_t dur = rng.bernoulli(0.2) ? 4 : 2;
            piece.melody.add_note(m * kStepsPerBar + s, ladder[pos], std::min(dur, kStepsPerBar - s));
            s += dur;
            const int step = static_cast<int>(rng.below(5)) - 2;
            const int next = static_cast<int>(pos) + step;
            pos = static_cast<std::size_t>(std::clamp(next, 0, static_cast<int>(ladder.size()) - 1));
        }
    }
}

}  // namespace

std::vector<CorpusPiece> synth_corpus(const CorpusSpec& spec) {
    spec.validate();
    const auto pool = spec.key_pool.empty() ? major_keys() : spec.key_pool;
    const std::size_t length = spec.measures * kStepsPerBar;
    Rng rng(spec.seed);
    std::vector<CorpusPiece> out;
    for (std::size_t i = 0; i < spec.pieces; ++i) {
        CorpusPiece piece;
        char id[32];
        std::snprintf(id, sizeof id, "piece_%04zu", i);
        piece.id = id;
        piece.key = pool[rng.below(pool.size())];
        piece.progression_index = rng.below(spec.progressions.size());
        piece.rhythm_index = rng.below(spec.rhythms.size());
        const auto& numerals = spec.progressions[piece.progression_index];
        std::vector<Chord> per_measure;
        for (std::size_t m = 0; m < spec.measures; ++m) {
            per_measure.push_back(chord_for_degree(piece.key, numerals[m % numerals.size()]));
        }
        piece.melody = PianoRoll(length);
        piece.accompaniment = PianoRoll(length);
        render_accompaniment(piece, per_measure, spec.rhythms[piece.rhythm_index], rng);
        render_melody(piece, per_measure, rng);
        piece.chords = ChordProgression::from_blocks(per_measure, kStepsPerBar);
        piece.rhythm = RhythmPattern::from_roll(piece.accompaniment);
        piece.keys = KeySequence(length, piece.key);
        out.push_back(std::move(piece));
    }
    return out;
}

nlohmann::json corpus_manifest(const CorpusSpec& spec, const std::vector<CorpusPiece>& pieces) {
    nlohmann::json keys = nlohmann::json::array();
    for (const auto& k : spec.key_pool) keys.push_back(key_symbol(k));
    nlohmann::json j{{"seed", spec.seed},
                     {"pieces", spec.pieces},
                     {"measures", spec.measures},
                     {"key_pool", keys},
                     {"progressions", spec.progressions},
                     {"rhythms", spec.rhythms}};
    j["items"] = nlohmann::json::array();
    for (const auto& p : pieces) {
        j["items"].push_back({{"id", p.id},
                              {"file", p.id + ".mid"},
                              {"key", key_symbol(p.key)},
                              {"progression", spec.progressions[p.progression_index]},
                              {"rhythm", spec.rhythms[p.rhythm_index]},
                              {"chords", progression_to_json(p.chords)}});
    }
    return j;
}

void write_corpus(const std::filesystem::path& dir, const CorpusSpec& spec, const std::vector<CorpusPiece>& pieces) {
    std::filesystem::create_directories(dir);
    for (const auto& p : pieces) write_midi_file(dir / (p.id + ".mid"), emit_midi(p.melody, p.accompaniment));
    std::ofstream out(dir / "manifest.json");
    if (!out) throw Error("cannot write manifest in " + dir.string());
    out << corpus_manifest(spec, pieces).dump(2) << '\n';
}

std::vector<LoadedSegment> load_midi_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw InvalidInput(dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".mid" || ext == ".midi")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<LoadedSegment> out;
    for (const auto& f : files) {
        const auto tracks = select_tracks(quantize(read_midi_file(f)));
        const auto mel = segment_4bars(tracks.melody);
        const auto acc = segment_4bars(tracks.accompaniment);
        for (std::size_t i = 0; i < acc.size(); ++i) {
            out.push_back(LoadedSegment{f.filename().string() + "#" + std::to_string(i), mel[i], acc[i]});
        }
    }
    return out;
}

}  // namespace ftg
