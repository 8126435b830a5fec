#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"

#include "ftg/diffusion.hpp"
#include "ftg/guidance.hpp"

namespace httplib {
class Server;
}

namespace ftg {

// Thrown when generation is requested before any checkpoint is loaded.
class NoCheckpoint : public Error {
public:
    using Error::Error;
};

class UnknownCheckpoint : public Error {
public:
    using Error::Error;
};

struct GenerationRequest {
    std::size_t length = 64;
    ChordProgression chords;
    std::optional<std::string> rhythm_string;  // normalised to `length` characters
    std::vector<RhythmConstraint> rhythm_specs;
    std::optional<RhythmPattern> rhythm;
    std::optional<KeySequence> keys;  // unset = derive from chords
    std::optional<PianoRoll> melody;
    GuidanceConfig guidance;
    SamplerPlan plan;
    std::uint64_t seed = 0;
    std::optional<std::string> checkpoint;
};

// Validates and normalises the request JSON; throws InvalidInput on schema
// errors. `total_steps` is the schedule length used to build the DDIM plan.
GenerationRequest parse_generation_request(const nlohmann::json& j, std::size_t total_steps);

struct LoadedModel {
    std::string id;
    Checkpoint checkpoint;
};

// Checkpoints are files "<id>.ftgc" in one directory. Loads are exclusive,
// reads shared.
class CheckpointStore {
public:
    explicit CheckpointStore(std::filesystem::path dir);

    const std::filesystem::path& dir() const { return dir_; }
    std::vector<std::string> list() const;
    // Throws UnknownCheckpoint when the file does not exist.
    std::shared_ptr<const LoadedModel> load(const std::string& id);
    // Installs an in-memory model under `id`.
    std::shared_ptr<const LoadedModel> install(std::string id, Checkpoint checkpoint);
    std::shared_ptr<const LoadedModel> current() const;

private:
    std::filesystem::path dir_;
    mutable std::shared_mutex mutex_;
    std::shared_ptr<const LoadedModel> current_;
};

struct GenerationResult {
    PianoRoll roll;
    KeySequence keys;
    ConstraintMask mask;
    std::vector<std::uint8_t> midi;
    double out_of_key_rate = 0.0;
    std::optional<double> rhythm_match_rate;
    double wall_ms = 0.0;
    std::vector<std::string> warnings;
};

GenerationResult generate(const LoadedModel& model, const GenerationRequest& request);
nlohmann::json to_json(const GenerationResult& result, const GenerationRequest& request, const std::string& model_id);

// Key change points as [{"step","key"}].
nlohmann::json keys_to_json(const KeySequence& keys);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);

// Registers /api/... and /api/v1/... routes.
void register_routes(httplib::Server& server, CheckpointStore& store);

}  // namespace ftg
