#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ftg/metrics.hpp"

namespace ftg {

std::vector<Segment> segment(const PianoRoll& roll, std::size_t bars) {
    if (bars == 0) throw InvalidInput("segment length must be positive");
    const std::size_t span = bars * kStepsPerBar;
    std::vector<Segment> out;
    for (std::size_t start = 0; start < roll.length(); start += span) {
        Segment seg{PianoRoll(span, roll.pitches()), start + span > roll.length()};
        const std::size_t end = std::min(roll.length(), start + span);
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t l = start; l < end; ++l) {
                for (std::size_t h = 0; h < roll.pitches(); ++h) seg.roll(c, l - start, h) = roll(c, l, h);
            }
        }
        out.push_back(std::move(seg));
    }
    return out;
}

std::string feature_name(Feature f) {
    switch (f) {
        case Feature::Pitch: return "pitch";
        case Feature::Duration: return "duration";
        case Feature::Density: return "density";
    }
    return "unknown";
}

const Histogram& SegmentFeatures::get(Feature f) const {
    switch (f) {
        case Feature::Pitch: return pitch;
        case Feature::Duration: return duration;
        case Feature::Density: return density;
    }
    throw InvalidInput("unknown feature");
}

namespace {

void normalize(Histogram& h) {
    const double total = std::accumulate(h.begin(), h.end(), 0.0);
    if (total > 0.0) {
        for (double& v : h) v /= total;
    }
}

}  // namespace

SegmentFeatures segment_features(const PianoRoll& seg) {
    SegmentFeatures f;
    f.pitch.assign(seg.pitches(), 0.0);
    f.duration.assign(kDurationBins, 0.0);
    f.density.assign(kDensityBins, 0.0);
    std::size_t onsets = 0;
    for (std::size_t l = 0; l < seg.length(); ++l) {
        std::size_t count = 0;
        for (std::size_t h = 0; h < seg.pitches(); ++h) {
            if (!seg(kOnset, l, h)) continue;
            ++count;
            f.pitch[h] += 1.0;
            std::size_t dur = 1;
            while (l + dur < seg.length() && seg(kSustain, l + dur, h) && !seg(kOnset, l + dur, h)) ++dur;
            f.duration[std::min(dur, kDurationBins) - 1] += 1.0;
        }
        f.density[std::min(count, kDensityBins - 1)] += 1.0;
        onsets += count;
    }
    f.empty = onsets == 0;
    f.counts[0] = f.pitch;
    f.counts[1] = f.duration;
    f.counts[2] = f.density;
    if (f.empty) {
        std::fill(f.density.begin(), f.density.end(), 0.0);
        return f;
    }
    normalize(f.pitch);
    normalize(f.duration);
    normalize(f.density);
    return f;
}

double overlap(std::span<const double> h1, std::span<const double> h2) {
    if (h1.size() != h2.size()) throw ShapeMismatch("histograms use different binning");
    auto check = [](std::span<const double> h) {
        double total = 0.0;
        for (double v : h) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("histogram has a negative or non-finite bin");
            total += v;
        }
        if (std::abs(total - 1.0) > 1e-9) throw InvalidInput("histogram is not normalised");
    };
    check(h1);
    check(h2);
    double sum = 0.0;
    for (std::size_t i = 0; i < h1.size(); ++i) sum += std::min(h1[i], h2[i]);
    return sum;
}

namespace {

// Overlap of two count histograms as sum min(a/na, b/nb), evaluated as
// sum min(a nb, b na) / (na nb) so that identical inputs give exactly 1.
double count_overlap(const Histogram& a, const Histogram& b) {
    const double na = std::accumulate(a.begin(), a.end(), 0.0);
    const double nb = std::accumulate(b.begin(), b.end(), 0.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::min(a[i] * nb, b[i] * na);
    return sum / (na * nb);
}

}  // namespace

double MoaDetail::mean() const {
    if (overlaps.empty()) throw InvalidInput("MOA needs at least one segment");
    return std::accumulate(overlaps.begin(), overlaps.end(), 0.0) / static_cast<double>(overlaps.size());
}

MoaDetail moa_detail(const PianoRoll& gen, const PianoRoll& gt, Feature f) {
    const auto a = segment(gen);
    const auto b = segment(gt);
    MoaDetail d;
    d.truncated = a.size() != b.size();
    const std::size_t n = std::min(a.size(), b.size());
    if (n == 0) throw InvalidInput("MOA needs at least one segment");
    for (std::size_t i = 0; i < n; ++i) {
        const auto fa = segment_features(a[i].roll);
        const auto fb = segment_features(b[i].roll);
        if (fa.empty || fb.empty) {
            d.overlaps.push_back(fa.empty && fb.empty ? 1.0 : 0.0);
        } else {
            d.overlaps.push_back(count_overlap(fa.count(f), fb.count(f)));
        }
    }
    return d;
}

double moa(const PianoRoll& gen, const PianoRoll& gt, Feature f) { return moa_detail(gen, gt, f).mean(); }

std::vector<double> chord_embedding(const ChordProgression& chords, std::size_t begin, std::size_t end) {
    std::vector<double> v(24, 0.0);
    for (std::size_t l = begin; l < end && l < chords.length(); ++l) {
        for (int pc : members(chord_pitch_classes(chords[l]))) v[static_cast<std::size_t>(pc)] += 1.0;
        v[12 + static_cast<std::size_t>(chords[l].root)] += 1.0;
    }
    return v;
}

SimilarityReport summarize(std::span<const double> values, std::size_t skipped) {
    SimilarityReport r;
    r.n = values.size();
    r.skipped = skipped;
    if (values.empty()) return r;
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(r.n);
    if (r.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - r.mean) * (v - r.mean);
        const double sd = std::sqrt(ss / static_cast<double>(r.n - 1));
        r.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(r.n));
    }
    return r;
}

std::vector<double> chord_cosines(const PianoRoll& gen, const PianoRoll& gt, std::size_t* skipped) {
    if (gen.empty() || gt.empty()) throw InvalidInput("chord similarity needs nonempty rolls");
    const std::size_t span = 2 * kStepsPerBar;
    auto recognise = [](const PianoRoll& roll) {
        // The recogniser needs a length divisible by its window.
        const std::size_t padded = (roll.length() + kStepsPerBeat - 1) / kStepsPerBeat * kStepsPerBeat;
        if (padded == roll.length()) return recognize_chords(roll);
        PianoRoll p(padded, roll.pitches());
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t l = 0; l < roll.length(); ++l) {
                for (std::size_t h = 0; h < roll.pitches(); ++h) p(c, l, h) = roll(c, l, h);
            }
        }
        return recognize_chords(p);
    };
    const auto ca = recognise(gen);
    const auto cb = recognise(gt);
    const std::size_t n = (std::min(gen.length(), gt.length()) + span - 1) / span;
    std::vector<double> out;
    std::size_t skip = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto a = chord_embedding(ca, i * span, (i + 1) * span);
        const auto b = chord_embedding(cb, i * span, (i + 1) * span);
        const double na = std::inner_product(a.begin(), a.end(), a.begin(), 0.0);
        const double nb = std::inner_product(b.begin(), b.end(), b.begin(), 0.0);
        if (na == 0.0 || nb == 0.0) {
            ++skip;
            continue;
        }
        out.push_back(std::inner_product(a.begin(), a.end(), b.begin(), 0.0) / std::sqrt(na * nb));
    }
    if (skipped) *skipped += skip;
    return out;
}

SimilarityReport chord_similarity(const PianoRoll& gen, const PianoRoll& gt) {
    std::size_t skipped = 0;
    const auto cos = chord_cosines(gen, gt, &skipped);
    return summarize(cos, skipped);
}

double out_of_key_rate(const PianoRoll& roll, const ConstraintMask& mask) {
    if (mask.length() != roll.length() || mask.pitches() != roll.pitches()) {
        throw ShapeMismatch("mask does not match the roll");
    }
    std::size_t total = 0;
    std::size_t bad = 0;
    for (std::size_t l = 0; l < roll.length(); ++l) {
        for (std::size_t h = 0; h < roll.pitches(); ++h) {
            if (!roll(kOnset, l, h)) continue;
            ++total;
            if (mask.out_of_key(l, h)) ++bad;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(bad) / static_cast<double>(total);
}

double out_of_key_rate(const PianoRoll& roll, const KeySequence& keys) {
    if (keys.length() != roll.length()) throw ShapeMismatch("key sequence length differs from the roll");
    return out_of_key_rate(roll, build_constraint_mask(keys, {}, roll.pitches()));
}

double rhythm_match_rate(const PianoRoll& roll, const RhythmPattern& rhythm) {
    if (rhythm.length() != roll.length()) throw ShapeMismatch("rhythm length differs from the roll");
    if (roll.length() == 0) return 1.0;
    std::size_t agree = 0;
    for (std::size_t l = 0; l < roll.length(); ++l) {
        bool any = false;
        for (std::size_t h = 0; h < roll.pitches() && !any; ++h) any = roll(kOnset, l, h) != 0;
        if (any == rhythm.contains(l)) ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(roll.length());
}

nlohmann::json to_json(const MetricReport& r) {
    return {{"metric", r.metric},
            {"mean", r.value.mean},
            {"ci95", r.value.ci95},
            {"n", r.value.n},
            {"skipped", r.value.skipped}};
}

std::string to_csv(const std::vector<MetricReport>& reports) {
    std::ostringstream out;
    out.precision(17);
    out << "metric,mean,ci95,n,skipped\n";
    for (const auto& r : reports) {
        out << r.metric << ',' << r.value.mean << ',' << r.value.ci95 << ',' << r.value.n << ',' << r.value.skipped
            << '\n';
    }
    return out.str();
}

std::vector<MetricReport> evaluate_pairs(const std::vector<PianoRoll>& gen, const std::vector<PianoRoll>& gt) {
    if (gen.size() != gt.size()) throw ShapeMismatch("generated and reference sets differ in size");
    if (gen.empty()) throw InvalidInput("nothing to evaluate");
    std::vector<double> cos;
    std::size_t skipped = 0;
    std::vector<std::vector<double>> oa(3);
    const Feature features[] = {Feature::Pitch, Feature::Duration, Feature::Density};
    for (std::size_t i = 0; i < gen.size(); ++i) {
        if (gen[i].empty() || gt[i].empty()) {
            ++skipped;
        } else {
            const auto c = chord_cosines(gen[i], gt[i], &skipped);
            cos.insert(cos.end(), c.begin(), c.end());
        }
        for (std::size_t k = 0; k < 3; ++k) {
            const auto d = moa_detail(gen[i], gt[i], features[k]);
            oa[k].insert(oa[k].end(), d.overlaps.begin(), d.overlaps.end());
        }
    }
    std::vector<MetricReport> out;
    out.push_back({"chord_similarity", summarize(cos, skipped)});
    for (std::size_t k = 0; k < 3; ++k) out.push_back({"oa_" + feature_name(features[k]), summarize(oa[k])});
    return out;
}

}  // namespace ftg
