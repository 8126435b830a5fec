#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include "ftg/diffusion.hpp"
#include "ftg/metrics.hpp"
#include "ftg/midi.hpp"
#include "ftg/service.hpp"

using nlohmann::json;

namespace {

enum Exit : int {
    kOk = 0,
    kInternal = 1,
    kInvalid = 3,
    kInfeasible = 4,
    kParse = 5,
    kIo = 6,
};

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ftg::Error("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ftg::InvalidInput(path + ": " + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ftg::Error("cannot write " + path.string());
    out << text;
}

std::vector<ftg::TrainingExample> examples_from_segments(const std::vector<ftg::LoadedSegment>& segs) {
    std::vector<ftg::TrainingExample> out;
    for (const auto& s : segs) {
        const bool has_melody = !s.melody.empty();
        out.push_back(ftg::make_training_example(s.accompaniment, has_melody ? std::optional(s.melody) : std::nullopt));
    }
    return out;
}

std::vector<ftg::TrainingExample> examples_from_corpus(const std::vector<ftg::CorpusPiece>& pieces) {
    std::vector<ftg::TrainingExample> out;
    for (const auto& p : pieces) out.push_back(ftg::make_training_example(p.accompaniment, p.melody));
    return out;
}

int run_corpus(std::size_t pieces, std::uint64_t seed, std::size_t measures, const std::string& out_dir,
               const std::string& config) {
    auto spec = ftg::default_corpus_spec(pieces, seed);
    spec.measures = measures;
    if (!config.empty()) {
        const json j = read_json_file(config);
        spec.pieces = j.value("pieces", spec.pieces);
        spec.measures = j.value("measures", spec.measures);
        spec.seed = j.value("seed", spec.seed);
        if (j.contains("progressions")) spec.progressions = j.at("progressions").get<decltype(spec.progressions)>();
        if (j.contains("rhythms")) spec.rhythms = j.at("rhythms").get<std::vector<std::string>>();
        if (j.contains("keys")) {
            for (const auto& k : j.at("keys")) spec.key_pool.push_back(ftg::parse_key(k.get<std::string>()));
        }
    }
    const auto corpus = ftg::synth_corpus(spec);
    ftg::write_corpus(out_dir, spec, corpus);
    std::cout << json{{"pieces", corpus.size()}, {"dir", out_dir}}.dump() << '\n';
    return kOk;
}

struct TrainArgs {
    std::string data;
    std::size_t synthetic = 0;
    std::uint64_t corpus_seed = 0;
    std::string out = "checkpoints/model.ftgc";
    std::string loss_csv;
    std::string config;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch;
    std::optional<double> lr;
    std::optional<double> p_drop;
    std::optional<std::uint64_t> seed;
    std::size_t width = 12;
};

int run_train(const TrainArgs& a) {
    ftg::TrainConfig cfg;
    ftg::ToyDenoiserConfig model_cfg;
    model_cfg.width = a.width;
    if (!a.config.empty()) {
        const json j = read_json_file(a.config);
        cfg = ftg::train_config_from_json(j);
        if (j.contains("model")) {
            const auto& m = j.at("model");
            model_cfg.width = m.value("width", model_cfg.width);
            model_cfg.embed_dim = m.value("embed_dim", model_cfg.embed_dim);
            model_cfg.kernel = m.value("kernel", model_cfg.kernel);
            model_cfg.seed = m.value("seed", model_cfg.seed);
        }
    }
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.batch) cfg.batch_size = *a.batch;
    if (a.lr) cfg.learning_rate = *a.lr;
    if (a.p_drop) cfg.p_drop = *a.p_drop;
    if (a.seed) cfg.seed = *a.seed;
    cfg.validate();

    std::vector<ftg::TrainingExample> data;
    if (!a.data.empty()) {
        data = examples_from_segments(ftg::load_midi_dir(a.data));
    } else {
        data = examples_from_corpus(ftg::synth_corpus(ftg::default_corpus_spec(a.synthetic ? a.synthetic : 64, a.corpus_seed)));
    }
    if (data.empty()) throw ftg::InvalidInput("no 4-bar segments found for training");
    const auto sched = ftg::default_schedule();
    ftg::ToyDenoiser model(model_cfg);
    const auto logs = ftg::train(data, model, cfg, sched);
    std::filesystem::path out(a.out);
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    ftg::save_checkpoint(out, sched, model);
    std::string csv = "epoch,step,loss\n";
    for (const auto& log : logs) {
        for (std::size_t s = 0; s < log.step_losses.size(); ++s) {
            csv += std::to_string(log.epoch) + "," + std::to_string(s) + "," + std::to_string(log.step_losses[s]) + "\n";
        }
    }
    write_text(a.loss_csv.empty() ? out.string() + ".loss.csv" : a.loss_csv, csv);
    json summary{{"checkpoint", out.string()}, {"examples", data.size()}, {"parameters", model.parameter_count()}};
    summary["epoch_mean_loss"] = json::array();
    for (const auto& log : logs) summary["epoch_mean_loss"].push_back(log.mean_loss);
    std::cout << summary.dump() << '\n';
    return kOk;
}

struct GenerateArgs {
    std::string config;
    std::string checkpoint;
    std::string chords;
    std::string key;
    std::string rhythm;
    std::optional<std::size_t> steps;
    std::optional<double> w;
    std::optional<double> kappa;
    bool no_harmonic = false;
    std::optional<std::uint64_t> seed;
    std::string out = "generated.mid";
    std::string audit;
    std::string roll_json;
};

int run_generate(const GenerateArgs& a) {
    json req = a.config.empty() ? json::object() : read_json_file(a.config);
    if (!a.chords.empty()) req["chords"] = a.chords;
    if (!a.key.empty()) req["key"] = a.key;
    if (!a.rhythm.empty()) req["rhythm"] = a.rhythm;
    if (a.steps) req["sampler"] = json{{"mode", "ddim"}, {"steps", *a.steps}, {"eta", 0.0}};
    if (!req.contains("guidance")) req["guidance"] = json::object();
    if (a.w) req["guidance"]["w"] = *a.w;
    if (a.kappa) req["guidance"]["kappa"] = *a.kappa;
    if (a.no_harmonic) req["guidance"]["harmonic"] = false;
    if (a.seed) req["seed"] = *a.seed;

    std::vector<std::string> warnings;
    std::optional<ftg::LoadedModel> model;
    if (!a.checkpoint.empty()) {
        model = ftg::LoadedModel{std::filesystem::path(a.checkpoint).stem().string(), ftg::load_checkpoint(a.checkpoint)};
    } else {
        warnings.push_back("no checkpoint given; using an untrained toy denoiser");
        model = ftg::LoadedModel{"untrained", ftg::Checkpoint{ftg::default_schedule(), ftg::ToyDenoiser()}};
    }
    const auto request = ftg::parse_generation_request(req, model->checkpoint.schedule.steps());
    auto result = ftg::generate(*model, request);
    result.warnings.insert(result.warnings.begin(), warnings.begin(), warnings.end());
    std::filesystem::path out(a.out);
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    ftg::write_midi_file(out, result.midi);
    json body = ftg::to_json(result, request, model->id);
    const json audit{{"midi", out.string()},
                     {"audit", body["audit"]},
                     {"keys", body["keys"]},
                     {"warnings", body["warnings"]},
                     {"checkpoint", model->id}};
    if (!a.audit.empty()) write_text(a.audit, audit.dump(2) + "\n");
    if (!a.roll_json.empty()) write_text(a.roll_json, body["roll"].dump() + "\n");
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << audit.dump() << '\n';
    return kOk;
}

int run_evaluate(const std::string& gen_dir, const std::string& gt_dir, const std::string& out, const std::string& csv) {
    const auto gen = ftg::load_midi_dir(gen_dir);
    const auto gt = ftg::load_midi_dir(gt_dir);
    if (gen.size() != gt.size()) {
        throw ftg::InvalidInput("generated set has " + std::to_string(gen.size()) + " segments, reference has " +
                                std::to_string(gt.size()));
    }
    std::vector<ftg::PianoRoll> a;
    std::vector<ftg::PianoRoll> b;
    for (std::size_t i = 0; i < gen.size(); ++i) {
        a.push_back(gen[i].accompaniment);
        b.push_back(gt[i].accompaniment);
    }
    const auto reports = ftg::evaluate_pairs(a, b);
    json body = json::array();
    for (const auto& r : reports) body.push_back(ftg::to_json(r));
    if (!out.empty()) write_text(out, body.dump(2) + "\n");
    if (!csv.empty()) write_text(csv, ftg::to_csv(reports));
    std::cout << body.dump() << '\n';
    return kOk;
}

int run_midi_inspect(const std::string& file) {
    const auto doc = ftg::read_midi_file(file);
    json j = ftg::describe(doc);
    try {
        const auto tracks = ftg::quantize(doc);
        j["steps"] = tracks.empty() ? 0 : tracks.front().roll.length();
        j["segments_4bar"] = tracks.empty() ? 0 : ftg::segment_4bars(tracks.front().roll).size();
    } catch (const ftg::RejectedPiece& e) {
        j["rejected"] = e.what();
    }
    std::cout << j.dump(2) << '\n';
    return kOk;
}

int run_midi_convert(const std::string& in, const std::string& out) {
    const auto ext = std::filesystem::path(in).extension().string();
    if (ext == ".json") {
        const json j = read_json_file(in);
        const auto acc = ftg::piano_roll_from_json(j.contains("accompaniment") ? j.at("accompaniment") : j);
        const auto mel = j.contains("melody") ? ftg::piano_roll_from_json(j.at("melody")) : ftg::PianoRoll(acc.length());
        ftg::write_midi_file(out, ftg::emit_midi(mel, acc));
    } else {
        const auto tracks = ftg::select_tracks(ftg::quantize(ftg::read_midi_file(in)));
        write_text(out, json{{"melody", ftg::to_json(tracks.melody)}, {"accompaniment", ftg::to_json(tracks.accompaniment)}}
                            .dump() +
                            "\n");
    }
    std::cout << json{{"written", out}}.dump() << '\n';
    return kOk;
}

int run_serve(const std::string& host, int port, std::string dir, const std::string& load) {
    if (dir.empty()) {
        const char* env = std::getenv("FTG_CHECKPOINT_DIR");
        dir = env ? env : "checkpoints";
    }
    ftg::CheckpointStore store(dir);
    if (!load.empty()) store.load(load);
    httplib::Server server;
    ftg::register_routes(server, store);
    std::cerr << "listening on http://" << host << ":" << port << " (checkpoints in " << dir << ")\n";
    if (!server.listen(host, port)) throw ftg::Error("cannot listen on " + host + ":" + std::to_string(port));
    return kOk;
}

int fail(int code, const std::string& kind, const std::string& message, const json& extra = json::object()) {
    json body{{"error", kind}, {"message", message}, {"exit_code", code}};
    body.update(extra);
    std::cerr << body.dump() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fine-grained textural guidance for piano-roll diffusion"};
    app.require_subcommand(1);

    std::size_t corpus_pieces = 16;
    std::uint64_t corpus_seed = 0;
    std::size_t corpus_measures = 4;
    std::string corpus_out = "corpus";
    std::string corpus_config;
    auto* corpus = app.add_subcommand("corpus", "Write a synthetic MIDI corpus");
    corpus->add_option("--pieces", corpus_pieces, "Number of pieces");
    corpus->add_option("--seed", corpus_seed, "Random seed");
    corpus->add_option("--measures", corpus_measures, "Measures per piece");
    corpus->add_option("--out", corpus_out, "Output directory");
    corpus->add_option("--config", corpus_config, "JSON corpus spec");

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train the toy denoiser");
    train->add_option("--data", train_args.data, "Directory of MIDI files (default: synthetic corpus)");
    train->add_option("--synthetic", train_args.synthetic, "Synthetic corpus size when --data is absent");
    train->add_option("--corpus-seed", train_args.corpus_seed, "Seed of the synthetic corpus");
    train->add_option("--out", train_args.out, "Checkpoint path (.ftgc)");
    train->add_option("--loss-csv", train_args.loss_csv, "Loss curve CSV path");
    train->add_option("--config", train_args.config, "JSON training config");
    train->add_option("--epochs", train_args.epochs, "Epochs");
    train->add_option("--batch", train_args.batch, "Batch size");
    train->add_option("--lr", train_args.lr, "Learning rate");
    train->add_option("--p-drop", train_args.p_drop, "Probability of the chord-only condition");
    train->add_option("--seed", train_args.seed, "Training seed");
    train->add_option("--width", train_args.width, "Hidden channels");

    GenerateArgs gen_args;
    auto* gen = app.add_subcommand("generate", "Generate an accompaniment");
    gen->add_option("--config", gen_args.config, "Generation request JSON");
    gen->add_option("--checkpoint", gen_args.checkpoint, "Checkpoint file");
    gen->add_option("--chords", gen_args.chords, "Chord symbols per step, beat or measure, e.g. \"C F G C\"");
    gen->add_option("--key", gen_args.key, "Key, e.g. D or Bm (default: derived from chords)");
    gen->add_option("--rhythm", gen_args.rhythm, "Onset pattern: x required, . free, o none");
    gen->add_option("--steps", gen_args.steps, "DDIM steps");
    gen->add_option("--w", gen_args.w, "Guidance weight");
    gen->add_option("--kappa", gen_args.kappa, "Projection margin");
    gen->add_flag("--no-harmonic", gen_args.no_harmonic, "Disable harmonic correction");
    gen->add_option("--seed", gen_args.seed, "Sampling seed");
    gen->add_option("--out", gen_args.out, "Output MIDI path");
    gen->add_option("--audit", gen_args.audit, "Audit JSON path");
    gen->add_option("--roll", gen_args.roll_json, "Piano-roll JSON path");

    std::string eval_gen;
    std::string eval_gt;
    std::string eval_out;
    std::string eval_csv;
    auto* evaluate = app.add_subcommand("evaluate", "Chord similarity and overlap metrics");
    evaluate->add_option("--gen", eval_gen, "Generated MIDI directory")->required();
    evaluate->add_option("--gt", eval_gt, "Reference MIDI directory")->required();
    evaluate->add_option("--out", eval_out, "Report JSON path");
    evaluate->add_option("--csv", eval_csv, "Report CSV path");

    auto* midi = app.add_subcommand("midi", "MIDI utilities");
    midi->require_subcommand(1);
    std::string inspect_file;
    auto* inspect = midi->add_subcommand("inspect", "Describe a MIDI file");
    inspect->add_option("file", inspect_file, "MIDI file")->required();
    std::string convert_in;
    std::string convert_out;
    auto* convert = midi->add_subcommand("convert", "MIDI to roll JSON, or roll JSON to MIDI");
    convert->add_option("input", convert_in, "Input .mid or .json")->required();
    convert->add_option("--out", convert_out, "Output path")->required();

    std::string serve_host = "127.0.0.1";
    int serve_port = 8080;
    std::string serve_dir;
    std::string serve_load;
    auto* serve = app.add_subcommand("serve", "Run the HTTP generation service");
    serve->add_option("--host", serve_host, "Bind address");
    serve->add_option("--port", serve_port, "Port");
    serve->add_option("--checkpoint-dir", serve_dir, "Checkpoint directory (default $FTG_CHECKPOINT_DIR)");
    serve->add_option("--load", serve_load, "Checkpoint id to load at startup");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*corpus) return run_corpus(corpus_pieces, corpus_seed, corpus_measures, corpus_out, corpus_config);
        if (*train) return run_train(train_args);
        if (*gen) return run_generate(gen_args);
        if (*evaluate) return run_evaluate(eval_gen, eval_gt, eval_out, eval_csv);
        if (*inspect) return run_midi_inspect(inspect_file);
        if (*convert) return run_midi_convert(convert_in, convert_out);
        if (*serve) return run_serve(serve_host, serve_port, serve_dir, serve_load);
    } catch (const ftg::InfeasibleConstraint& e) {
        return fail(kInfeasible, "infeasible", e.what(), {{"columns", e.columns()}});
    } catch (const ftg::ParseError& e) {
        return fail(kParse, "parse", e.what(), {{"offset", e.offset()}});
    } catch (const ftg::RejectedPiece& e) {
        return fail(kParse, "rejected", e.what());
    } catch (const ftg::InvalidInput& e) {
        return fail(kInvalid, "invalid_input", e.what());
    } catch (const ftg::ShapeMismatch& e) {
        return fail(kInvalid, "shape_mismatch", e.what());
    } catch (const ftg::UnknownCheckpoint& e) {
        return fail(kIo, "unknown_checkpoint", e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(kIo, "io", e.what());
    } catch (const ftg::Error& e) {
        return fail(kIo, "error", e.what());
    } catch (const std::exception& e) {
        return fail(kInternal, "internal", e.what());
    }
    return kOk;
}
