#include <algorithm>
#include <chrono>
#include <mutex>
#include <sstream>

#include "httplib.h"

#include "ftg/metrics.hpp"
#include "ftg/midi.hpp"
#include "ftg/service.hpp"

namespace ftg {

namespace {

using nlohmann::json;

std::vector<std::string> split_symbols(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (ch == ' ' || ch == '|' || ch == ',' || ch == '\t' || ch == '\n') {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

// Steps covered by each symbol: a symbol list of length L, L/4 or L/16 is
// read per step, per beat or per measure.
std::size_t steps_per_symbol(std::size_t count, std::size_t length, const std::string& unit) {
    if (unit == "step") return 1;
    if (unit == "beat") return kStepsPerBeat;
    if (unit == "measure") return kStepsPerBar;
    if (!unit.empty()) throw InvalidInput("unit must be \"step\", \"beat\" or \"measure\"");
    if (count == length) return 1;
    if (count * kStepsPerBeat == length) return kStepsPerBeat;
    if (count * kStepsPerBar == length) return kStepsPerBar;
    throw InvalidInput(std::to_string(count) + " symbols do not cover " + std::to_string(length) +
                       " steps per step, beat or measure");
}

std::vector<std::string> symbol_list(const json& j, const char* field) {
    if (j.is_string()) return split_symbols(j.get<std::string>());
    if (j.is_array()) {
        std::vector<std::string> out;
        for (const auto& s : j) {
            if (!s.is_string()) throw InvalidInput(std::string(field) + " entries must be strings");
            out.push_back(s.get<std::string>());
        }
        return out;
    }
    throw InvalidInput(std::string(field) + " must be a string or an array");
}

ChordProgression parse_chords(const json& j, std::size_t length, const std::string& unit) {
    if (j.is_array() && !j.empty() && j.front().is_object()) return progression_from_json(j, length);
    const auto symbols = symbol_list(j, "chords");
    if (symbols.empty()) throw InvalidInput("chords must not be empty");
    std::vector<Chord> chords;
    for (const auto& s : symbols) chords.push_back(parse_chord(s));
    return ChordProgression::from_blocks(chords, steps_per_symbol(chords.size(), length, unit));
}

KeySequence parse_keys(const json& j, std::size_t length, const std::string& unit, PitchClassSet allow) {
    const auto symbols = symbol_list(j, "keys");
    if (symbols.empty()) throw InvalidInput("keys must not be empty");
    const std::size_t per = symbols.size() == 1 ? length : steps_per_symbol(symbols.size(), length, unit);
    std::vector<KeySignature> keys;
    for (const auto& s : symbols) {
        KeySignature k = parse_key(s);
        k.allow |= allow;
        keys.insert(keys.end(), per, k);
    }
    return KeySequence(std::move(keys));
}

std::string normalise_rhythm(const std::string& raw, std::size_t length) {
    std::string s;
    for (char ch : raw) {
        if (ch != ' ' && ch != '|') s.push_back(ch);
    }
    if (s.empty() || length % s.size() != 0) {
        throw InvalidInput("rhythm pattern of " + std::to_string(s.size()) + " symbols does not tile " +
                           std::to_string(length) + " steps");
    }
    std::string out;
    while (out.size() < length) out += s;
    return out;
}

}  // namespace

GenerationRequest parse_generation_request(const json& j, std::size_t total_steps) {
    if (!j.is_object()) throw InvalidInput("request body must be a JSON object");
    try {
        GenerationRequest r;
        r.length = j.value("length", std::size_t{64});
        if (r.length == 0 || r.length % kStepsPerBeat != 0) {
            throw InvalidInput("length must be a positive multiple of " + std::to_string(kStepsPerBeat));
        }
        if (!j.contains("chords")) throw InvalidInput("chords are required");
        const std::string chord_unit = j.value("chord_unit", std::string());
        r.chords = parse_chords(j.at("chords"), r.length, chord_unit);

        PitchClassSet allow;
        if (j.contains("allow")) {
            for (const auto& pc : j.at("allow")) {
                const int v = pc.get<int>();
                if (v < 0 || v > 11) throw InvalidInput("allow entries must be pitch classes 0..11");
                allow.set(static_cast<std::size_t>(v));
            }
        }
        const std::string key_unit = j.value("key_unit", std::string());
        if (j.contains("keys") && !j.at("keys").is_null()) {
            r.keys = parse_keys(j.at("keys"), r.length, key_unit, allow);
        } else if (j.contains("key") && !j.at("key").is_null()) {
            r.keys = parse_keys(j.at("key"), r.length, key_unit, allow);
        } else if (allow.any()) {
            auto derived = derive_keys_from_chords(r.chords);
            std::vector<KeySignature> keys = derived.keys();
            for (auto& k : keys) k.allow |= allow;
            r.keys = KeySequence(std::move(keys));
        }

        if (j.contains("rhythm") && !j.at("rhythm").is_null()) {
            const std::string pattern = normalise_rhythm(j.at("rhythm").get<std::string>(), r.length);
            r.rhythm_string = pattern;
            r.rhythm_specs = parse_rhythm_string(pattern);
            const std::size_t n = j.value("rhythm_n", std::size_t{1});
            const std::string kind = j.value("rhythm_kind", std::string("at_least"));
            if (n == 0) throw InvalidInput("rhythm_n must be at least 1");
            if (kind != "at_least" && kind != "exactly") throw InvalidInput("rhythm_kind must be at_least or exactly");
            for (auto& spec : r.rhythm_specs) {
                if (spec.kind == RhythmConstraint::Kind::AtLeast) {
                    spec = kind == "exactly" ? RhythmConstraint::exactly(n) : RhythmConstraint::at_least(n);
                }
            }
            auto pattern_roll = rhythm_from_string(pattern);
            if (!pattern_roll.empty()) r.rhythm = std::move(pattern_roll);
        }

        if (j.contains("melody") && !j.at("melody").is_null()) {
            r.melody = piano_roll_from_json(j.at("melody"));
            if (r.melody->length() != r.length || r.melody->pitches() != kPitches) {
                throw InvalidInput("melody must be 2 x " + std::to_string(r.length) + " x 128");
            }
        }
        if (j.contains("guidance")) r.guidance = guidance_from_json(j.at("guidance"));
        r.plan = sampler_plan_from_json(j.value("sampler", json::object()), total_steps);
        r.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("checkpoint") && !j.at("checkpoint").is_null()) r.checkpoint = j.at("checkpoint").get<std::string>();
        return r;
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("malformed request: ") + e.what());
    }
}

// --- checkpoint store ---------------------------------------------------------

namespace {

void check_id(const std::string& id) {
    if (id.empty() || id.find_first_of("/\\") != std::string::npos || id == "." || id == "..") {
        throw InvalidInput("invalid checkpoint id \"" + id + "\"");
    }
}

}  // namespace

CheckpointStore::CheckpointStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::vector<std::string> CheckpointStore::list() const {
    std::vector<std::string> ids;
    std::error_code ec;
    if (!std::filesystem::is_directory(dir_, ec)) return ids;
    for (const auto& e : std::filesystem::directory_iterator(dir_, ec)) {
        if (e.is_regular_file() && e.path().extension() == ".ftgc") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::shared_ptr<const LoadedModel> CheckpointStore::load(const std::string& id) {
    check_id(id);
    const auto path = dir_ / (id + ".ftgc");
    if (!std::filesystem::is_regular_file(path)) throw UnknownCheckpoint("no checkpoint \"" + id + "\"");
    return install(id, load_checkpoint(path));
}

std::shared_ptr<const LoadedModel> CheckpointStore::install(std::string id, Checkpoint checkpoint) {
    auto model = std::make_shared<const LoadedModel>(LoadedModel{std::move(id), std::move(checkpoint)});
    std::unique_lock lock(mutex_);
    current_ = model;
    return model;
}

std::shared_ptr<const LoadedModel> CheckpointStore::current() const {
    std::shared_lock lock(mutex_);
    return current_;
}

// --- generation ----------------------------------------------------------------

GenerationResult generate(const LoadedModel& model, const GenerationRequest& request) {
    const auto start = std::chrono::steady_clock::now();
    GenerationResult out;
    out.keys = request.keys ? *request.keys : derive_keys_from_chords(request.chords);
    const auto conflicts = chord_key_conflicts(request.chords, out.keys);
    if (!conflicts.empty()) {
        std::ostringstream msg;
        msg << "chord tones outside the key at " << conflicts.size() << " steps (first step " << conflicts.front()
            << "); the key wins";
        out.warnings.push_back(msg.str());
    }
    out.mask = build_constraint_mask(out.keys, request.rhythm_specs, kPitches, true);
    Conditions cond{request.chords, request.rhythm, request.melody, out.mask, request.length, kPitches};
    const auto result = sample(model.checkpoint.model, model.checkpoint.schedule, cond, request.guidance,
                               request.plan, request.seed);
    out.roll = result.roll;
    out.out_of_key_rate = out_of_key_rate(out.roll, out.mask);
    if (request.guidance.harmonic && out.out_of_key_rate != 0.0) {
        throw Error("harmonic guidance produced out-of-key notes");
    }
    if (request.rhythm) out.rhythm_match_rate = rhythm_match_rate(out.roll, *request.rhythm);
    const PianoRoll melody = request.melody ? *request.melody : PianoRoll(request.length);
    out.midi = emit_midi(melody, out.roll);
    out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return out;
}

nlohmann::json keys_to_json(const KeySequence& keys) {
    json out = json::array();
    for (std::size_t l = 0; l < keys.length(); ++l) {
        if (l == 0 || !(keys[l] == keys[l - 1])) out.push_back({{"step", l}, {"key", key_symbol(keys[l])}});
    }
    return out;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

nlohmann::json to_json(const GenerationResult& r, const GenerationRequest& request, const std::string& model_id) {
    json audit{{"out_of_key_rate", r.out_of_key_rate},
               {"rhythm_match_rate", r.rhythm_match_rate ? json(*r.rhythm_match_rate) : json(nullptr)},
               {"wall_ms", r.wall_ms},
               {"seed", request.seed}};
    json oob = json::array();
    for (std::size_t l = 0; l < r.keys.length(); ++l) {
        if (l == 0 || !(r.keys[l] == r.keys[l - 1])) {
            oob.push_back({{"step", l}, {"pitch_classes", members(out_of_key_pitch_classes(r.keys[l]))}});
        }
    }
    return {{"roll", to_json(r.roll)},
            {"midi_base64", base64_encode(r.midi)},
            {"audit", audit},
            {"keys", keys_to_json(r.keys)},
            {"out_of_key", oob},
            {"chords", progression_to_json(request.chords)},
            {"guidance", to_json(request.guidance)},
            {"sampler", to_json(request.plan)},
            {"checkpoint", model_id},
            {"warnings", r.warnings}};
}

// --- HTTP ---------------------------------------------------------------------

namespace {

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(body.dump(), "application/json");
}

json error_body(const std::string& code, const std::string& message) {
    return {{"error", code}, {"message", message}};
}

json model_info(const LoadedModel& m) {
    const auto& cfg = m.checkpoint.model.config();
    return {{"name", m.checkpoint.model.name()},
            {"parameters", m.checkpoint.model.parameter_count()},
            {"width", cfg.width},
            {"embed_dim", cfg.embed_dim},
            {"kernel", cfg.kernel}};
}

template <typename Handler>
void guarded(httplib::Response& res, Handler&& handler) {
    try {
        handler();
    } catch (const InfeasibleConstraint& e) {
        json body = error_body("infeasible", e.what());
        body["columns"] = e.columns();
        reply(res, 409, body);
    } catch (const NoCheckpoint& e) {
        reply(res, 503, error_body("no_checkpoint", e.what()));
    } catch (const UnknownCheckpoint& e) {
        reply(res, 404, error_body("unknown_checkpoint", e.what()));
    } catch (const InvalidInput& e) {
        reply(res, 400, error_body("invalid_request", e.what()));
    } catch (const ShapeMismatch& e) {
        reply(res, 400, error_body("invalid_request", e.what()));
    } catch (const json::exception& e) {
        reply(res, 400, error_body("invalid_json", e.what()));
    } catch (const std::exception& e) {
        reply(res, 500, error_body("internal", e.what()));
    }
}

}  // namespace

void register_routes(httplib::Server& server, CheckpointStore& store) {
    for (const std::string prefix : {"/api", "/api/v1"}) {
        server.Get(prefix + "/health", [&store](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                const auto model = store.current();
                json body{{"status", "ok"}, {"api_version", 1}};
                body["checkpoint"] = model ? json(model->id) : json(nullptr);
                body["schedule"] = model ? model->checkpoint.schedule.describe() : json(nullptr);
                body["model"] = model ? model_info(*model) : json(nullptr);
                reply(res, 200, body);
            });
        });
        server.Get(prefix + "/checkpoints", [&store](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                const auto model = store.current();
                reply(res, 200,
                      {{"dir", store.dir().string()},
                       {"checkpoints", store.list()},
                       {"loaded", model ? json(model->id) : json(nullptr)}});
            });
        });
        server.Post(prefix + "/checkpoints/load", [&store](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json body = json::parse(req.body);
                if (!body.is_object() || !body.contains("id") || !body.at("id").is_string()) {
                    throw InvalidInput("body must be {\"id\": <checkpoint id>}");
                }
                const auto model = store.load(body.at("id").get<std::string>());
                reply(res, 200, {{"loaded", model->id}, {"model", model_info(*model)}});
            });
        });
        server.Post(prefix + "/generate", [&store](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json body = json::parse(req.body);
                auto model = store.current();
                if (body.is_object() && body.contains("checkpoint") && body.at("checkpoint").is_string()) {
                    const std::string id = body.at("checkpoint").get<std::string>();
                    if (!model || model->id != id) {
                        check_id(id);
                        const auto path = store.dir() / (id + ".ftgc");
                        if (!std::filesystem::is_regular_file(path)) {
                            throw UnknownCheckpoint("no checkpoint \"" + id + "\"");
                        }
                        model = std::make_shared<const LoadedModel>(LoadedModel{id, load_checkpoint(path)});
                    }
                }
                if (!model) throw NoCheckpoint("no checkpoint loaded; POST /api/checkpoints/load first");
                const auto request = parse_generation_request(body, model->checkpoint.schedule.steps());
                const auto result = generate(*model, request);
                reply(res, 200, to_json(result, request, model->id));
            });
        });
        server.Get(prefix + "/out-of-key", [](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                if (!req.has_param("key")) throw InvalidInput("query parameter \"key\" is required");
                const auto key = parse_key(req.get_param_value("key"));
                const auto pcs = members(out_of_key_pitch_classes(key));
                json names = json::array();
                for (int pc : pcs) names.push_back(pitch_class_name(pc));
                reply(res, 200, {{"key", key_symbol(key)}, {"pitch_classes", pcs}, {"names", names}});
            });
        });
        server.Get(prefix + "/vocabulary", [](const httplib::Request&, httplib::Response& res) {
            json roots = json::array();
            for (int pc = 0; pc < 12; ++pc) roots.push_back(pitch_class_name(pc));
            reply(res, 200,
                  {{"roots", roots},
                   {"qualities", {"", "m", "7", "m7", "maj7", "dim", "aug"}},
                   {"rhythm_symbols", {{"x", "onset required"}, {".", "free"}, {"o", "no onset"}}}});
        });
    }
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });
}

}  // namespace ftg
