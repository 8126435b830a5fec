#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>

#include "ftg/midi.hpp"

namespace ftg {

namespace {

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::size_t base) : bytes_(bytes), base_(base) {}

    bool done() const { return at_ >= bytes_.size(); }
    std::size_t offset() const { return base_ + at_; }

    std::uint8_t u8() {
        need(1);
        return bytes_[at_++];
    }
    std::uint8_t peek() {
        need(1);
        return bytes_[at_];
    }
    std::uint32_t be(int n) {
        need(static_cast<std::size_t>(n));
        std::uint32_t v = 0;
        for (int i = 0; i < n; ++i) v = (v << 8) | bytes_[at_++];
        return v;
    }
    std::uint32_t vlq() {
        const std::size_t start = offset();
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            const std::uint8_t b = u8();
            v = (v << 7) | (b & 0x7Fu);
            if (!(b & 0x80u)) return v;
        }
        throw ParseError("variable-length quantity longer than 4 bytes", start);
    }
    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto s = bytes_.subspan(at_, n);
        at_ += n;
        return s;
    }

private:
    void need(std::size_t n) const {
        if (at_ + n > bytes_.size()) throw ParseError("unexpected end of data", offset());
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t base_;
    std::size_t at_ = 0;
};

void parse_track(std::span<const std::uint8_t> data, std::size_t base, MidiDocument& doc) {
    ByteReader r(data, base);
    MidiTrack track;
    std::uint64_t tick = 0;
    std::uint8_t running = 0;
    struct Open {
        std::uint64_t tick;
        int velocity;
    };
    std::map<std::pair<int, int>, std::deque<Open>> open;
    auto close = [&](int channel, int pitch) {
        auto it = open.find({channel, pitch});
        if (it == open.end() || it->second.empty()) return;
        const Open o = it->second.front();
        it->second.pop_front();
        track.notes.push_back(MidiNote{o.tick, tick - o.tick, pitch, o.velocity, channel});
    };
    bool ended = false;
    while (!r.done() && !ended) {
        tick += r.vlq();
        std::uint8_t status = r.peek();
        if (status & 0x80u) {
            r.u8();
        } else {
            if (!running) throw ParseError("data byte without running status", r.offset());
            status = running;
        }
        if (status == 0xFF) {
            const std::uint8_t type = r.u8();
            const std::uint32_t len = r.vlq();
            const auto body = r.take(len);
            if (type == 0x03) {
                track.name.assign(body.begin(), body.end());
            } else if (type == 0x51 && len == 3) {
                doc.tempos.push_back(TempoEvent{tick, (std::uint32_t{body[0]} << 16) | (std::uint32_t{body[1]} << 8) |
                                                          std::uint32_t{body[2]}});
            } else if (type == 0x58 && len >= 2) {
                if (body[1] > 15) throw ParseError("time signature denominator out of range", r.offset() - len);
                doc.time_signatures.push_back(TimeSignatureEvent{tick, body[0], 1 << body[1]});
            } else if (type == 0x2F) {
                ended = true;
            }
            continue;
        }
        if (status == 0xF0 || status == 0xF7) {
            r.take(r.vlq());
            continue;
        }
        if (status >= 0xF0) throw ParseError("unsupported system message in track", r.offset() - 1);
        running = status;
        const int kind = status >> 4;
        const int channel = status & 0x0F;
        const int d1 = r.u8();
        const bool two = kind != 0xC && kind != 0xD;
        const int d2 = two ? r.u8() : 0;
        if ((d1 | d2) & 0x80) throw ParseError("data byte has its high bit set", r.offset() - 1);
        if (kind == 0x9 && d2 > 0) {
            open[{channel, d1}].push_back(Open{tick, d2});
        } else if (kind == 0x8 || kind == 0x9) {
            close(channel, d1);
        }
    }
    // Notes never switched off end with the track.
    for (auto& [key, queue] : open) {
        while (!queue.empty()) close(key.first, key.second);
    }
    track.end_tick = tick;
    std::sort(track.notes.begin(), track.notes.end(), [](const MidiNote& a, const MidiNote& b) {
        return a.tick != b.tick ? a.tick < b.tick : a.pitch < b.pitch;
    });
    doc.tracks.push_back(std::move(track));
}

}  // namespace

MidiDocument parse_midi(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes, 0);
    if (bytes.size() < 4 || std::string(bytes.begin(), bytes.begin() + 4) != "MThd") {
        throw ParseError("missing MThd header", 0);
    }
    r.take(4);
    const std::uint32_t header_len = r.be(4);
    if (header_len < 6) throw ParseError("MThd chunk shorter than 6 bytes", 4);
    MidiDocument doc;
    doc.format = static_cast<int>(r.be(2));
    if (doc.format > 1) throw ParseError("only SMF format 0 and 1 are supported", 8);
    const std::uint32_t ntracks = r.be(2);
    const std::uint32_t division = r.be(2);
    if (division & 0x8000u) throw ParseError("SMPTE time division is not supported", 12);
    if (division == 0) throw ParseError("ticks per quarter must be positive", 12);
    doc.ticks_per_quarter = static_cast<int>(division);
    r.take(header_len - 6);
    std::uint32_t seen = 0;
    while (!r.done() && seen < ntracks) {
        const std::size_t chunk_at = r.offset();
        const auto id = r.take(4);
        const std::uint32_t len = r.be(4);
        const std::size_t body_at = r.offset();
        if (body_at + len > bytes.size()) throw ParseError("chunk runs past end of file", chunk_at);
        const auto body = r.take(len);
        if (std::string(id.begin(), id.end()) != "MTrk") continue;  // unknown chunk
        parse_track(body, body_at, doc);
        ++seen;
    }
    if (seen < ntracks) throw ParseError("file declares more tracks than it contains", bytes.size());
    auto by_tick = [](const auto& a, const auto& b) { return a.tick < b.tick; };
    std::stable_sort(doc.tempos.begin(), doc.tempos.end(), by_tick);
    std::stable_sort(doc.time_signatures.begin(), doc.time_signatures.end(), by_tick);
    return doc;
}

MidiDocument read_midi_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_midi(bytes);
}

std::vector<QuantizedTrack> quantize(const MidiDocument& doc) {
    for (const auto& ts : doc.time_signatures) {
        if (ts.numerator != 4 || ts.denominator != 4) {
            throw RejectedPiece("time signature " + std::to_string(ts.numerator) + "/" +
                                std::to_string(ts.denominator) + " is not 4/4");
        }
    }
    const double ticks_per_step = static_cast<double>(doc.ticks_per_quarter) / static_cast<double>(kStepsPerBeat);
    auto to_step = [&](std::uint64_t tick) {
        return static_cast<std::size_t>(std::llround(static_cast<double>(tick) / ticks_per_step));
    };
    std::size_t length = 0;
    for (const auto& t : doc.tracks) {
        length = std::max(length, to_step(t.end_tick));
        for (const auto& n : t.notes) {
            const std::size_t start = to_step(n.tick);
            length = std::max(length, std::max(start + 1, to_step(n.tick + n.duration)));
        }
    }
    std::vector<QuantizedTrack> out;
    for (const auto& t : doc.tracks) {
        QuantizedTrack q{t.name, PianoRoll(length)};
        for (const auto& n : t.notes) {
            const std::size_t start = to_step(n.tick);
            const std::size_t end = to_step(n.tick + n.duration);
            q.roll.add_note(start, static_cast<std::size_t>(n.pitch), std::max<std::size_t>(1, end > start ? end - start : 1));
        }
        out.push_back(std::move(q));
    }
    return out;
}

MelodyAccompaniment select_tracks(const std::vector<QuantizedTrack>& tracks) {
    std::size_t length = tracks.empty() ? 0 : tracks.front().roll.length();
    const QuantizedTrack* melody = nullptr;
    const QuantizedTrack* piano = nullptr;
    for (const auto& t : tracks) {
        if (!melody && t.name == "MELODY") melody = &t;
        if (!piano && t.name == "PIANO") piano = &t;
    }
    if (!melody && !piano) {
        // Type-1 files often carry a note-less conductor track first.
        std::vector<const QuantizedTrack*> with_notes;
        for (const auto& t : tracks) {
            if (!t.roll.empty()) with_notes.push_back(&t);
        }
        if (with_notes.size() == 1) {
            piano = with_notes[0];
        } else if (with_notes.size() >= 2) {
            melody = with_notes[0];
            piano = with_notes[1];
        }
    }
    return MelodyAccompaniment{melody ? melody->roll : PianoRoll(length), piano ? piano->roll : PianoRoll(length)};
}

std::vector<PianoRoll> segment_4bars(const PianoRoll& roll) {
    constexpr std::size_t span = 4 * kStepsPerBar;
    std::vector<PianoRoll> out;
    for (std::size_t start = 0; start + span <= roll.length(); start += span) {
        PianoRoll seg(span, roll.pitches());
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t l = 0; l < span; ++l) {
                for (std::size_t h = 0; h < roll.pitches(); ++h) seg(c, l, h) = roll(c, start + l, h);
            }
        }
        out.push_back(std::move(seg));
    }
    return out;
}

std::vector<GridNote> roll_notes(const PianoRoll& roll) {
    std::vector<GridNote> notes;
    for (std::size_t l = 0; l < roll.length(); ++l) {
        for (std::size_t h = 0; h < roll.pitches(); ++h) {
            if (!roll(kOnset, l, h)) continue;
            std::size_t d = 1;
            while (l + d < roll.length() && roll(kSustain, l + d, h) && !roll(kOnset, l + d, h)) ++d;
            notes.push_back(GridNote{l, h, d});
        }
    }
    return notes;
}

namespace {

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes.push_back(v); }
    void be(std::uint32_t v, int n) {
        for (int i = n - 1; i >= 0; --i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void vlq(std::uint32_t v) {
        std::uint8_t buf[5];
        int n = 0;
        buf[n++] = v & 0x7F;
        while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
        while (n > 0) bytes.push_back(buf[--n]);
    }
    void text(const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); }
    std::vector<std::uint8_t> bytes;
};

std::vector<std::uint8_t> track_chunk(const std::string& name, const PianoRoll& roll, int channel,
                                      std::uint32_t tempo, bool conductor) {
    constexpr std::uint32_t ticks_per_step = kEmitTicksPerQuarter / kStepsPerBeat;
    struct Event {
        std::uint64_t tick;
        int order;  // note-offs sort before note-ons at equal ticks
        int pitch;
    };
    std::vector<Event> events;
    for (const auto& n : roll_notes(roll)) {
        events.push_back({n.step * ticks_per_step, 1, static_cast<int>(n.pitch)});
        events.push_back({(n.step + n.duration) * ticks_per_step, 0, static_cast<int>(n.pitch)});
    }
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        if (a.tick != b.tick) return a.tick < b.tick;
        if (a.order != b.order) return a.order < b.order;
        return a.pitch < b.pitch;
    });
    ByteWriter w;
    w.vlq(0);
    w.u8(0xFF);
    w.u8(0x03);
    w.vlq(static_cast<std::uint32_t>(name.size()));
    w.text(name);
    if (conductor) {
        w.vlq(0);
        w.u8(0xFF);
        w.u8(0x51);
        w.u8(3);
        w.be(tempo, 3);
        w.vlq(0);
        w.u8(0xFF);
        w.u8(0x58);
        w.u8(4);
        w.u8(4);
        w.u8(2);
        w.u8(24);
        w.u8(8);
    }
    std::uint64_t now = 0;
    for (const auto& e : events) {
        w.vlq(static_cast<std::uint32_t>(e.tick - now));
        now = e.tick;
        w.u8(static_cast<std::uint8_t>((e.order ? 0x90 : 0x80) | channel));
        w.u8(static_cast<std::uint8_t>(e.pitch));
        w.u8(e.order ? kEmitVelocity : 0);
    }
    const std::uint64_t end = roll.length() * ticks_per_step;
    w.vlq(static_cast<std::uint32_t>(end - now));
    w.u8(0xFF);
    w.u8(0x2F);
    w.u8(0);
    ByteWriter chunk;
    chunk.text("MTrk");
    chunk.be(static_cast<std::uint32_t>(w.bytes.size()), 4);
    chunk.bytes.insert(chunk.bytes.end(), w.bytes.begin(), w.bytes.end());
    return std::move(chunk.bytes);
}

}  // namespace

std::vector<std::uint8_t> emit_midi(const PianoRoll& melody, const PianoRoll& accompaniment, double bpm) {
    if (!(bpm > 0.0) || !std::isfinite(bpm)) throw InvalidInput("tempo must be positive");
    if (melody.pitches() > 128 || accompaniment.pitches() > 128) throw InvalidInput("MIDI has 128 pitches");
    const auto tempo = static_cast<std::uint32_t>(std::llround(60'000'000.0 / bpm));
    ByteWriter w;
    w.text("MThd");
    w.be(6, 4);
    w.be(1, 2);
    w.be(2, 2);
    w.be(kEmitTicksPerQuarter, 2);
    const auto a = track_chunk("MELODY", melody, 0, tempo, true);
    const auto b = track_chunk("PIANO", accompaniment, 1, tempo, false);
    w.bytes.insert(w.bytes.end(), a.begin(), a.end());
    w.bytes.insert(w.bytes.end(), b.begin(), b.end());
    return std::move(w.bytes);
}

void write_midi_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

nlohmann::json describe(const MidiDocument& doc) {
    nlohmann::json j{{"format", doc.format}, {"ticks_per_quarter", doc.ticks_per_quarter}};
    j["tempos"] = nlohmann::json::array();
    for (const auto& t : doc.tempos) j["tempos"].push_back({{"tick", t.tick}, {"micros_per_quarter", t.micros_per_quarter}});
    j["time_signatures"] = nlohmann::json::array();
    for (const auto& t : doc.time_signatures) {
        j["time_signatures"].push_back({{"tick", t.tick}, {"numerator", t.numerator}, {"denominator", t.denominator}});
    }
    j["tracks"] = nlohmann::json::array();
    for (const auto& t : doc.tracks) {
        j["tracks"].push_back({{"name", t.name}, {"notes", t.notes.size()}, {"end_tick", t.end_tick}});
    }
    return j;
}

}  // namespace ftg
