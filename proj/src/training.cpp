#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "ftg/diffusion.hpp"

namespace ftg {

void TrainConfig::validate() const {
    if (!(p_drop >= 0.0 && p_drop <= 1.0)) throw InvalidInput("p_drop must lie in [0, 1]");
    if (batch_size == 0) throw InvalidInput("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw InvalidInput("learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw InvalidInput("optimizer moments must lie in [0, 1)");
    }
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},           {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
            {"beta1", c.beta1},             {"beta2", c.beta2},           {"adam_epsilon", c.adam_epsilon},
            {"weight_decay", c.weight_decay}, {"p_drop", c.p_drop},       {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.p_drop = j.value("p_drop", c.p_drop);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

AdamW::AdamW(std::size_t parameter_count, const TrainConfig& config)
    : config_(config), m_(parameter_count, 0.0), v_(parameter_count, 0.0) {}

void AdamW::step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw ShapeMismatch("optimizer size mismatch");
    ++t_;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double lr = config_.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
        v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
        const double mhat = m_[i] / c1;
        const double vhat = v_[i] / c2;
        params[i] -= lr * (mhat / (std::sqrt(vhat) + config_.adam_epsilon) + config_.weight_decay * params[i]);
    }
}

TrainingExample make_training_example(PianoRoll x0, std::optional<PianoRoll> melody, std::size_t chord_granularity) {
    TrainingExample ex;
    if (melody && melody->shape() != x0.shape()) throw ShapeMismatch("melody and accompaniment shapes differ");
    // Chords are recognised from everything sounding, melody included.
    PianoRoll sounding = x0;
    if (melody) {
        for (std::size_t i = 0; i < sounding.size(); ++i) sounding.values()[i] |= melody->values()[i];
    }
    ex.chords = recognize_chords(sounding, chord_granularity);
    ex.rhythm = RhythmPattern::from_roll(x0);
    ex.x0 = std::move(x0);
    ex.melody = std::move(melody);
    return ex;
}

double training_step(std::span<const TrainingExample> batch, TrainableDenoiser& model, AdamW& optimizer,
                     const TrainConfig& config, const NoiseSchedule& sched, Rng& rng, ConditionCounters* counters) {
    if (batch.empty()) throw InvalidInput("training batch is empty");
    config.validate();
    const std::size_t n_params = model.parameters().size();
    std::vector<double> grad(n_params, 0.0);
    double total = 0.0;
    for (const auto& ex : batch) {
        const std::size_t L = ex.x0.length();
        const std::size_t H = ex.x0.pitches();
        if (ex.melody && ex.melody->shape() != ex.x0.shape()) throw ShapeMismatch("melody shape mismatch");
        const std::size_t t = 1 + static_cast<std::size_t>(rng.below(sched.steps()));
        LatentRoll eps(L, H);
        for (double& e : eps.values()) e = rng.normal();
        const LatentRoll x_t = forward_noise(LatentRoll::from_piano_roll(ex.x0), t, eps, sched);
        const bool chord_only = rng.bernoulli(config.p_drop);
        ConditionRoll cond;
        if (chord_only) {
            cond = build_condition_c(ex.chords, L, H);
            if (counters) ++counters->chord_only;
        } else {
            cond = build_condition_cr(ex.chords, ex.rhythm, L, H);
            if (counters) ++counters->chord_rhythm;
        }
        const ModelInput input = concat_model_input(x_t, cond, ex.melody ? &*ex.melody : nullptr);
        total += model.loss_and_gradient(input, t, eps, grad);
    }
    const double scale = 1.0 / static_cast<double>(batch.size());
    const double loss = total * scale;
    if (!std::isfinite(loss)) throw Error("non-finite training loss; step aborted");
    for (double& g : grad) g *= scale;
    if (!std::all_of(grad.begin(), grad.end(), [](double g) { return std::isfinite(g); })) {
        throw Error("non-finite gradient; step aborted");
    }
    optimizer.step(model.parameters(), grad);
    return loss;
}

std::vector<EpochLog> train(std::span<const TrainingExample> data, TrainableDenoiser& model, const TrainConfig& config,
                            const NoiseSchedule& sched) {
    if (data.empty()) throw InvalidInput("training set is empty");
    config.validate();
    AdamW optimizer(model.parameters().size(), config);
    Rng rng(config.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<EpochLog> logs;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        EpochLog log;
        log.epoch = epoch;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::vector<TrainingExample> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
                batch.push_back(data[order[i]]);
            }
            log.step_losses.push_back(training_step(batch, model, optimizer, config, sched, rng));
        }
        log.mean_loss = std::accumulate(log.step_losses.begin(), log.step_losses.end(), 0.0) /
                        static_cast<double>(log.step_losses.size());
        logs.push_back(std::move(log));
    }
    return logs;
}

// --- checkpoints -----------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'T', 'G', 'C'};

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    std::vector<std::uint8_t> bytes;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[at_ + static_cast<std::size_t>(i)]) << (8 * i);
        at_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[at_ + static_cast<std::size_t>(i)]) << (8 * i);
        at_ += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::size_t offset() const { return at_; }

private:
    void need(std::size_t n) const {
        if (at_ + n > bytes_.size()) throw ParseError("checkpoint truncated", at_);
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t at_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NoiseSchedule& sched, const ToyDenoiser& model) {
    Writer w;
    w.bytes.assign(kCheckpointMagic, kCheckpointMagic + 4);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(sched.steps()));
    w.f64(sched.beta_first());
    w.f64(sched.beta_last());
    w.f64(sched.eta());
    w.u32(sched.variant() == SigmaVariant::Standard ? 0 : 1);
    const auto& cfg = model.config();
    w.u32(static_cast<std::uint32_t>(cfg.width));
    w.u32(static_cast<std::uint32_t>(cfg.embed_dim));
    w.u32(static_cast<std::uint32_t>(cfg.kernel));
    w.u64(cfg.seed);
    w.u32(static_cast<std::uint32_t>(model.parameter_count()));
    for (double p : model.parameters()) w.f32(static_cast<float>(p));
    return std::move(w.bytes);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || !std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin())) {
        throw ParseError("bad checkpoint magic", 0);
    }
    Reader r(bytes.subspan(4));
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
    }
    const auto steps = r.u32();
    const double beta_first = r.f64();
    const double beta_last = r.f64();
    const double eta = r.f64();
    const auto variant = r.u32() == 0 ? SigmaVariant::Standard : SigmaVariant::BetaRatio;
    ToyDenoiserConfig cfg;
    cfg.width = r.u32();
    cfg.embed_dim = r.u32();
    cfg.kernel = r.u32();
    cfg.seed = r.u64();
    const auto count = r.u32();
    ToyDenoiser model(cfg);
    if (count != model.parameter_count()) {
        throw ParseError("checkpoint parameter count does not match its model config", 4 + r.offset());
    }
    std::vector<double> params(count);
    for (auto& p : params) p = static_cast<double>(r.f32());
    model.set_parameters(params);
    return Checkpoint{NoiseSchedule::linear(steps, beta_first, beta_last, eta, variant), std::move(model)};
}

void save_checkpoint(const std::filesystem::path& path, const NoiseSchedule& sched, const ToyDenoiser& model) {
    const auto bytes = encode_checkpoint(sched, model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace ftg
