#include <algorithm>
#include <cmath>

#include "ftg/diffusion.hpp"

namespace ftg {

namespace {

struct ConvDims {
    std::size_t in_channels;
    std::size_t out_channels;
    std::size_t kernel;
    std::size_t length;
    std::size_t pitches;
};

// Zero-padded "same" convolution, accumulated into `out`.
void conv_forward(const double* in, const double* w, double* out, const ConvDims& d) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(d.kernel / 2);
    const auto L = static_cast<std::ptrdiff_t>(d.length);
    const auto H = static_cast<std::ptrdiff_t>(d.pitches);
    for (std::size_t co = 0; co < d.out_channels; ++co) {
        for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
            for (std::size_t kl = 0; kl < d.kernel; ++kl) {
                for (std::size_t kh = 0; kh < d.kernel; ++kh) {
                    const double wv = w[((co * d.in_channels + ci) * d.kernel + kl) * d.kernel + kh];
                    const std::ptrdiff_t dl = static_cast<std::ptrdiff_t>(kl) - pad;
                    const std::ptrdiff_t dh = static_cast<std::ptrdiff_t>(kh) - pad;
                    const std::ptrdiff_t h0 = std::max<std::ptrdiff_t>(0, -dh);
                    const std::ptrdiff_t h1 = std::min<std::ptrdiff_t>(H, H - dh);
                    for (std::ptrdiff_t l = std::max<std::ptrdiff_t>(0, -dl); l < std::min(L, L - dl); ++l) {
                        double* orow = out + (static_cast<std::ptrdiff_t>(co) * L + l) * H;
                        const double* irow = in + (static_cast<std::ptrdiff_t>(ci) * L + l + dl) * H + dh;
                        for (std::ptrdiff_t h = h0; h < h1; ++h) orow[h] += wv * irow[h];
                    }
                }
            }
        }
    }
}

// Accumulates dL/dw and, when `din` is non-null, dL/din.
void conv_backward(const double* in, const double* w, const double* dout, double* dw, double* din,
                   const ConvDims& d) {
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(d.kernel / 2);
    const auto L = static_cast<std::ptrdiff_t>(d.length);
    const auto H = static_cast<std::ptrdiff_t>(d.pitches);
    for (std::size_t co = 0; co < d.out_channels; ++co) {
        for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
            for (std::size_t kl = 0; kl < d.kernel; ++kl) {
                for (std::size_t kh = 0; kh < d.kernel; ++kh) {
                    const std::size_t wi = ((co * d.in_channels + ci) * d.kernel + kl) * d.kernel + kh;
                    const double wv = w[wi];
                    const std::ptrdiff_t dl = static_cast<std::ptrdiff_t>(kl) - pad;
                    const std::ptrdiff_t dh = static_cast<std::ptrdiff_t>(kh) - pad;
                    const std::ptrdiff_t h0 = std::max<std::ptrdiff_t>(0, -dh);
                    const std::ptrdiff_t h1 = std::min<std::ptrdiff_t>(H, H - dh);
                    double acc[4] = {0.0, 0.0, 0.0, 0.0};
                    for (std::ptrdiff_t l = std::max<std::ptrdiff_t>(0, -dl); l < std::min(L, L - dl); ++l) {
                        const double* grow = dout + (static_cast<std::ptrdiff_t>(co) * L + l) * H;
                        const std::ptrdiff_t src = (static_cast<std::ptrdiff_t>(ci) * L + l + dl) * H + dh;
                        const double* irow = in + src;
                        std::ptrdiff_t h = h0;
                        for (; h + 3 < h1; h += 4) {
                            acc[0] += grow[h] * irow[h];
                            acc[1] += grow[h + 1] * irow[h + 1];
                            acc[2] += grow[h + 2] * irow[h + 2];
                            acc[3] += grow[h + 3] * irow[h + 3];
                        }
                        for (; h < h1; ++h) acc[0] += grow[h] * irow[h];
                        if (din) {
                            double* drow = din + src;
                            for (std::ptrdiff_t hh = h0; hh < h1; ++hh) drow[hh] += wv * grow[hh];
                        }
                    }
                    dw[wi] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
                }
            }
        }
    }
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

struct ToyDenoiser::Activations {
    std::vector<double> emb;
    std::vector<double> input;
    std::vector<double> z1, h1, z2, h2;
    std::vector<double> gain;
    std::vector<double> out;
};

ToyDenoiser::ToyDenoiser(ToyDenoiserConfig config) : config_(config) {
    if (config_.kernel % 2 == 0 || config_.kernel == 0) throw InvalidInput("toy denoiser kernel must be odd");
    if (config_.width == 0 || config_.embed_dim == 0 || config_.embed_dim % 2 != 0) {
        throw InvalidInput("toy denoiser width must be positive and embed_dim even");
    }
    const std::size_t W = config_.width;
    const std::size_t D = config_.embed_dim;
    const std::size_t K2 = config_.kernel * config_.kernel;
    std::size_t at = 0;
    auto take = [&at](std::size_t n) {
        const std::size_t start = at;
        at += n;
        return start;
    };
    layout_.w1 = take(W * kInputChannels * K2);
    layout_.b1 = take(W);
    layout_.a1 = take(W * D);
    layout_.w2 = take(W * W * K2);
    layout_.b2 = take(W);
    layout_.a2 = take(W * D);
    layout_.w3 = take(kOutputChannels * W);
    layout_.b3 = take(kOutputChannels);
    layout_.g0 = take(kOutputChannels);
    layout_.g1 = take(kOutputChannels * D);
    layout_.total = at;
    params_.assign(at, 0.0);

    Rng rng(config_.seed);
    const double s1 = std::sqrt(2.0 / static_cast<double>(kInputChannels * K2));
    const double s2 = std::sqrt(2.0 / static_cast<double>(W * K2));
    const double s3 = 0.1 / std::sqrt(static_cast<double>(W));
    for (std::size_t i = 0; i < W * kInputChannels * K2; ++i) params_[layout_.w1 + i] = s1 * rng.normal();
    for (std::size_t i = 0; i < W * W * K2; ++i) params_[layout_.w2 + i] = s2 * rng.normal();
    for (std::size_t i = 0; i < kOutputChannels * W; ++i) params_[layout_.w3 + i] = s3 * rng.normal();
}

void ToyDenoiser::set_parameters(std::span<const double> values) {
    if (values.size() != params_.size()) throw ShapeMismatch("parameter count mismatch");
    std::copy(values.begin(), values.end(), params_.begin());
}

std::vector<double> ToyDenoiser::embedding(std::size_t t) const {
    const std::size_t half = config_.embed_dim / 2;
    std::vector<double> emb(config_.embed_dim);
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        emb[2 * i] = std::sin(static_cast<double>(t) * freq);
        emb[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
    }
    return emb;
}

void ToyDenoiser::forward(const ModelInput& input, std::size_t t, Activations& act) const {
    const std::size_t W = config_.width;
    const std::size_t D = config_.embed_dim;
    const std::size_t L = input.length();
    const std::size_t H = input.pitches();
    const std::size_t N = L * H;
    const double* p = params_.data();

    act.emb = embedding(t);
    act.input.assign(input.values().begin(), input.values().end());

    auto hidden = [&](const std::vector<double>& in, std::size_t cin, std::size_t w_off, std::size_t b_off,
                      std::size_t a_off, std::vector<double>& z, std::vector<double>& h) {
        z.assign(W * N, 0.0);
        conv_forward(in.data(), p + w_off, z.data(), ConvDims{cin, W, config_.kernel, L, H});
        for (std::size_t co = 0; co < W; ++co) {
            double bias = p[b_off + co];
            for (std::size_t j = 0; j < D; ++j) bias += p[a_off + co * D + j] * act.emb[j];
            double* zc = z.data() + co * N;
            for (std::size_t i = 0; i < N; ++i) zc[i] += bias;
        }
        h.resize(W * N);
        for (std::size_t i = 0; i < W * N; ++i) h[i] = z[i] * sigmoid(z[i]);
    };
    hidden(act.input, kInputChannels, layout_.w1, layout_.b1, layout_.a1, act.z1, act.h1);
    hidden(act.h1, W, layout_.w2, layout_.b2, layout_.a2, act.z2, act.h2);

    act.gain.assign(kOutputChannels, 0.0);
    act.out.assign(kOutputChannels * N, 0.0);
    for (std::size_t c = 0; c < kOutputChannels; ++c) {
        double g = p[layout_.g0 + c];
        for (std::size_t j = 0; j < D; ++j) g += p[layout_.g1 + c * D + j] * act.emb[j];
        act.gain[c] = g;
        double* oc = act.out.data() + c * N;
        const double* xc = act.input.data() + c * N;
        const double b = p[layout_.b3 + c];
        for (std::size_t i = 0; i < N; ++i) oc[i] = b + g * xc[i];
        for (std::size_t co = 0; co < W; ++co) {
            const double wv = p[layout_.w3 + c * W + co];
            const double* hc = act.h2.data() + co * N;
            for (std::size_t i = 0; i < N; ++i) oc[i] += wv * hc[i];
        }
    }
}

LatentRoll ToyDenoiser::predict(const ModelInput& input, std::size_t t) const {
    if (input.channels() != kInputChannels) throw ShapeMismatch("toy denoiser expects 6 input channels");
    Activations act;
    forward(input, t, act);
    LatentRoll out(input.length(), input.pitches());
    std::copy(act.out.begin(), act.out.end(), out.values().begin());
    return out;
}

double ToyDenoiser::loss_and_gradient(const ModelInput& input, std::size_t t, const LatentRoll& target,
                                      std::span<double> grad) const {
    if (input.channels() != kInputChannels) throw ShapeMismatch("toy denoiser expects 6 input channels");
    if (target.length() != input.length() || target.pitches() != input.pitches()) {
        throw ShapeMismatch("target shape does not match input");
    }
    if (grad.size() != params_.size()) throw ShapeMismatch("gradient buffer size mismatch");
    const std::size_t W = config_.width;
    const std::size_t D = config_.embed_dim;
    const std::size_t L = input.length();
    const std::size_t H = input.pitches();
    const std::size_t N = L * H;
    const double* p = params_.data();
    double* g = grad.data();

    Activations act;
    forward(input, t, act);

    const double inv = 1.0 / static_cast<double>(kOutputChannels * N);
    std::vector<double> dout(kOutputChannels * N);
    double loss = 0.0;
    for (std::size_t i = 0; i < dout.size(); ++i) {
        const double r = act.out[i] - target.values()[i];
        loss += r * r;
        dout[i] = 2.0 * r * inv;
    }
    loss *= inv;

    std::vector<double> dh2(W * N, 0.0);
    for (std::size_t c = 0; c < kOutputChannels; ++c) {
        const double* dc = dout.data() + c * N;
        const double* xc = act.input.data() + c * N;
        double db = 0.0;
        double dg = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            db += dc[i];
            dg += dc[i] * xc[i];
        }
        g[layout_.b3 + c] += db;
        g[layout_.g0 + c] += dg;
        for (std::size_t j = 0; j < D; ++j) g[layout_.g1 + c * D + j] += dg * act.emb[j];
        for (std::size_t co = 0; co < W; ++co) {
            const double* hc = act.h2.data() + co * N;
            double* dhc = dh2.data() + co * N;
            const double wv = p[layout_.w3 + c * W + co];
            double dw = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                dw += dc[i] * hc[i];
                dhc[i] += wv * dc[i];
            }
            g[layout_.w3 + c * W + co] += dw;
        }
    }

    // Through SiLU and the bias/embedding terms of a hidden layer.
    auto through_hidden = [&](std::vector<double>& dh, const std::vector<double>& z, std::size_t b_off,
                              std::size_t a_off) {
        for (std::size_t co = 0; co < W; ++co) {
            double db = 0.0;
            double* dc = dh.data() + co * N;
            const double* zc = z.data() + co * N;
            for (std::size_t i = 0; i < N; ++i) {
                const double s = sigmoid(zc[i]);
                dc[i] *= s * (1.0 + zc[i] * (1.0 - s));
                db += dc[i];
            }
            g[b_off + co] += db;
            for (std::size_t j = 0; j < D; ++j) g[a_off + co * D + j] += db * act.emb[j];
        }
    };

    through_hidden(dh2, act.z2, layout_.b2, layout_.a2);
    std::vector<double> dh1(W * N, 0.0);
    conv_backward(act.h1.data(), p + layout_.w2, dh2.data(), g + layout_.w2, dh1.data(),
                  ConvDims{W, W, config_.kernel, L, H});
    through_hidden(dh1, act.z1, layout_.b1, layout_.a1);
    conv_backward(act.input.data(), p + layout_.w1, dh1.data(), g + layout_.w1, nullptr,
                  ConvDims{kInputChannels, W, config_.kernel, L, H});
    return loss;
}

}  // namespace ftg
