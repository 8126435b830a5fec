#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ftg/pianoroll.hpp"
#include "ftg/theory.hpp"

namespace ftg {

struct MidiNote {
    std::uint64_t tick = 0;
    std::uint64_t duration = 0;
    int pitch = 0;
    int velocity = 0;
    int channel = 0;
    bool operator==(const MidiNote&) const = default;
};

struct MidiTrack {
    std::string name;
    std::vector<MidiNote> notes;  // sorted by (tick, pitch)
    std::uint64_t end_tick = 0;   // tick of the end-of-track event
};

struct TempoEvent {
    std::uint64_t tick = 0;
    std::uint32_t micros_per_quarter = 500000;
};

struct TimeSignatureEvent {
    std::uint64_t tick = 0;
    int numerator = 4;
    int denominator = 4;
};

struct MidiDocument {
    int format = 1;
    int ticks_per_quarter = 480;
    std::vector<TempoEvent> tempos;
    std::vector<TimeSignatureEvent> time_signatures;
    std::vector<MidiTrack> tracks;
};

// Standard MIDI File, format 0 or 1. Throws ParseError with the byte offset
// of the problem.
MidiDocument parse_midi(std::span<const std::uint8_t> bytes);
MidiDocument read_midi_file(const std::filesystem::path& path);

struct QuantizedTrack {
    std::string name;
    PianoRoll roll;
};

// One roll per track on the 16th grid, all of the same length. Rejects
// anything but 4/4 with RejectedPiece.
std::vector<QuantizedTrack> quantize(const MidiDocument& doc);

struct MelodyAccompaniment {
    PianoRoll melody;
    PianoRoll accompaniment;
};

// Tracks named "MELODY" and "PIANO" when present, else the first two tracks in
// order; a single track is taken as accompaniment.
MelodyAccompaniment select_tracks(const std::vector<QuantizedTrack>& tracks);

// Non-overlapping 64-step windows; the trailing partial window is dropped.
std::vector<PianoRoll> segment_4bars(const PianoRoll& roll);

inline constexpr int kEmitTicksPerQuarter = 480;
inline constexpr int kEmitVelocity = 80;

// Type-1 SMF with tracks "MELODY" and "PIANO".
std::vector<std::uint8_t> emit_midi(const PianoRoll& melody, const PianoRoll& accompaniment, double bpm = 120.0);
void write_midi_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Notes of a roll as (step, pitch, duration) in step units.
struct GridNote {
    std::size_t step = 0;
    std::size_t pitch = 0;
    std::size_t duration = 0;
};
std::vector<GridNote> roll_notes(const PianoRoll& roll);

nlohmann::json describe(const MidiDocument& doc);

// --- synthetic corpus --------------------------------------------------------

struct CorpusSpec {
    std::size_t pieces = 64;
    std::size_t measures = 4;
    std::vector<KeySignature> key_pool;  // empty = the 12 major keys
    // Scale-degree progressions, one numeral per measure (cycled), e.g.
    // {"I","IV","V","I"}.
    std::vector<std::vector<std::string>> progressions;
    // 16-character accompaniment patterns, "x" = strike the chord.
    std::vector<std::string> rhythms;
    std::uint64_t seed = 0;

    void validate() const;
};

CorpusSpec default_corpus_spec(std::size_t pieces, std::uint64_t seed);

struct CorpusPiece {
    std::string id;
    KeySignature key;
    std::size_t progression_index = 0;
    std::size_t rhythm_index = 0;
    PianoRoll melody;
    PianoRoll accompaniment;
    ChordProgression chords;
    RhythmPattern rhythm;
    KeySequence keys;
};

// Chord of a scale degree numeral ("I", "ii", "V7", ...) in a key.
Chord chord_for_degree(const KeySignature& key, const std::string& numeral);

std::vector<CorpusPiece> synth_corpus(const CorpusSpec& spec);

nlohmann::json corpus_manifest(const CorpusSpec& spec, const std::vector<CorpusPiece>& pieces);

// Writes one MIDI file per piece plus manifest.json.
void write_corpus(const std::filesystem::path& dir, const CorpusSpec& spec, const std::vector<CorpusPiece>& pieces);

// Sorted *.mid files in a directory, split into 4-bar accompaniment segments
// with their melodies.
struct LoadedSegment {
    std::string source;
    PianoRoll melody;
    PianoRoll accompaniment;
};
std::vector<LoadedSegment> load_midi_dir(const std::filesystem::path& dir);

}  // namespace ftg
