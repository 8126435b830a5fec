#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ftg/pianoroll.hpp"
#include "ftg/theory.hpp"

namespace ftg {

inline constexpr std::size_t kDurationBins = 33;  // 1..32 steps plus overflow
inline constexpr std::size_t kDensityBins = 14;   // 0..12 onsets plus overflow

struct Segment {
    PianoRoll roll;
    // Set when the source ran out and the tail was padded with empty steps.
    bool padded = false;
};

// Non-overlapping windows of `bars` measures, in order.
std::vector<Segment> segment(const PianoRoll& roll, std::size_t bars = 2);

enum class Feature { Pitch, Duration, Density };

std::string feature_name(Feature f);

using Histogram = std::vector<double>;

// Normalised feature histograms of one segment. `empty` marks a segment with
// no onsets; its histograms are all zero.
struct SegmentFeatures {
    Histogram pitch;
    Histogram duration;
    Histogram density;
    bool empty = true;
    // Raw bin counts behind each histogram, indexed by Feature.
    Histogram counts[3];

    const Histogram& get(Feature f) const;
    const Histogram& count(Feature f) const { return counts[static_cast<int>(f)]; }
};

SegmentFeatures segment_features(const PianoRoll& segment);

// Sum of bin-wise minima of two normalised histograms.
double overlap(std::span<const double> h1, std::span<const double> h2);

struct MoaDetail {
    std::vector<double> overlaps;  // one per aligned segment pair
    bool truncated = false;        // segment counts differed
    double mean() const;
};

MoaDetail moa_detail(const PianoRoll& gen, const PianoRoll& gt, Feature f);
double moa(const PianoRoll& gen, const PianoRoll& gt, Feature f);

// 24-dim duration-weighted chroma (12) plus chord-root bass (12) of a
// progression slice.
std::vector<double> chord_embedding(const ChordProgression& chords, std::size_t begin, std::size_t end);

struct SimilarityReport {
    double mean = 0.0;
    double ci95 = 0.0;
    std::size_t n = 0;
    std::size_t skipped = 0;
};

// Mean and 95% normal-approximation half-width.
SimilarityReport summarize(std::span<const double> values, std::size_t skipped = 0);

// Per aligned 2-bar segment cosine similarities; pairs with a zero vector are
// counted in `skipped`.
std::vector<double> chord_cosines(const PianoRoll& gen, const PianoRoll& gt, std::size_t* skipped = nullptr);
SimilarityReport chord_similarity(const PianoRoll& gen, const PianoRoll& gt);

// Onsets at out-of-key positions over all onsets; 0 for an empty roll.
double out_of_key_rate(const PianoRoll& roll, const KeySequence& keys);
double out_of_key_rate(const PianoRoll& roll, const ConstraintMask& mask);

// Fraction of columns whose onset presence agrees with the pattern.
double rhythm_match_rate(const PianoRoll& roll, const RhythmPattern& rhythm);

struct MetricReport {
    std::string metric;
    SimilarityReport value;
};

nlohmann::json to_json(const MetricReport& r);
std::string to_csv(const std::vector<MetricReport>& reports);

// Chord similarity and OA(pitch/duration/density) over paired pieces, pooling
// the per-segment values of every pair.
std::vector<MetricReport> evaluate_pairs(const std::vector<PianoRoll>& gen, const std::vector<PianoRoll>& gt);

}  // namespace ftg
