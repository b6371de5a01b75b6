#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sasegan/attention.hpp"
#include "sasegan/errors.hpp"
#include "sasegan/feature_map.hpp"
#include "sasegan/nn.hpp"
#include "sasegan/rng.hpp"

namespace sasegan {

constexpr int kBottleneckTime = 8;  // time dim of the deepest feature map
constexpr int kReduceChannels = 8;  // discriminator 1x1 reduction width

/// Architecture description. input_len and filter_schedule are the base
/// (full-scale) values; scale_divisor shrinks both for desk-scale runs.
/// The ladder depth follows from the effective input length: halving from
/// effective_input_len down to a bottleneck time of 8 (16384 -> 11 layers).
struct ModelConfig {
    std::vector<int> filter_schedule = {16, 32, 32, 64, 64, 128, 128, 256, 256, 512, 1024};
    int filter_width = 31;
    int stride = 2;
    int input_len = 16384;
    std::vector<int> attention_layers;  // 1-based placement indices in {1..11}
    int k = kAttnChannelReduction;
    int p = kAttnPoolFactor;
    int scale_divisor = 1;

    int effective_input_len() const { return input_len / scale_divisor; }

    int n_layers() const {
        int len = effective_input_len();
        int n = 0;
        while (len > kBottleneckTime) {
            len /= 2;
            ++n;
        }
        return n;
    }

    /// Last n entries of the base schedule, each divided by scale_divisor.
    std::vector<int> effective_schedule() const {
        int n = n_layers();
        std::vector<int> out(n);
        int base = static_cast<int>(filter_schedule.size());
        for (int i = 0; i < n; ++i) out[i] = filter_schedule[base - n + i] / scale_divisor;
        return out;
    }

    /// Placement indices clamped into the shrunk ladder: l -> min(l, n).
    std::vector<int> effective_attention() const {
        int n = n_layers();
        std::vector<int> out;
        for (int l : attention_layers) {
            int e = std::min(l, n);
            bool dup = false;
            for (int x : out) dup |= (x == e);
            if (!dup) out.push_back(e);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    void validate() const {
        if (filter_schedule.size() != 11)
            throw InvalidConfig("filter_schedule must have 11 entries");
        if (filter_width < 1 || filter_width % 2 == 0)
            throw InvalidConfig("filter_width must be odd and positive");
        if (stride != 2) throw InvalidConfig("the encoder ladder requires stride 2");
        if (scale_divisor < 1 || input_len % scale_divisor != 0)
            throw InvalidConfig("scale_divisor must divide input_len");
        int len = effective_input_len();
        int n = 0;
        while (len > kBottleneckTime && len % 2 == 0) {
            len /= 2;
            ++n;
        }
        if (len != kBottleneckTime)
            throw InvalidConfig("effective input length must be 8*2^n, got " +
                                std::to_string(effective_input_len()));
        if (n > static_cast<int>(filter_schedule.size()))
            throw InvalidConfig("input length implies more layers than the filter schedule");
        for (int i = 11 - n; i < 11; ++i)
            if (filter_schedule[i] % scale_divisor != 0 || filter_schedule[i] / scale_divisor < 1)
                throw InvalidConfig("scale_divisor must divide the used filter counts");
        for (int l : attention_layers)
            if (l < 1 || l > 11)
                throw InvalidConfig("attention layer index " + std::to_string(l) +
                                    " outside {1..11}");
        if (k < 1 || p < 1) throw InvalidConfig("k and p must be >= 1");
        auto sched = effective_schedule();
        for (int l : effective_attention()) {
            if (sched[l - 1] % k != 0)
                throw InvalidConfig("attention at layer " + std::to_string(l) + ": " +
                                    std::to_string(sched[l - 1]) + " channels not divisible by k=" +
                                    std::to_string(k));
            if (l == n && (2 * sched[n - 1]) % k != 0)
                throw InvalidConfig("bottleneck attention channels not divisible by k");
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Generator

struct GenEncLayer {
    ConvParams conv;
    SpectralState sn;
    std::vector<double> prelu_alpha;
    std::optional<AttentionParams> attn;
};

struct GenDecLayer {
    ConvParams deconv;
    SpectralState sn;
    std::vector<double> prelu_alpha;  // unused on the last stage (tanh output)
    std::optional<AttentionParams> attn;
};

/// Encoder-decoder generator with skip connections and latent stacking.
/// Attention at placement l sits after encoder conv l (+PReLU) and after the
/// mirrored decoder deconv (stage n-l, before the skip concatenation); for
/// l = n the decoder-side layer attends the z-stacked bottleneck.
struct Generator {
    ModelConfig cfg;
    std::vector<GenEncLayer> enc;
    std::vector<GenDecLayer> dec;
    std::optional<AttentionParams> bottleneck_attn;

    int bottleneck_channels() const { return enc.back().conv.out_channels; }
};

namespace detail {

inline void xavier_fill(std::vector<double>& w, int fan_in, int fan_out, Rng& rng) {
    double scale = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& x : w) x = rng.uniform(-scale, scale);
}

inline void init_conv(ConvParams& p, Rng& rng) {
    xavier_fill(p.kernel, p.width * p.in_channels, p.width * p.out_channels, rng);
    std::fill(p.bias.begin(), p.bias.end(), 0.0);
}

}  // namespace detail

inline Generator build_generator(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const int n = cfg.n_layers();
    const auto sched = cfg.effective_schedule();
    const auto attn_at = cfg.effective_attention();
    auto wants_attn = [&](int l) {
        for (int x : attn_at)
            if (x == l) return true;
        return false;
    };

    Generator g;
    g.cfg = cfg;
    g.enc.resize(n);
    for (int i = 0; i < n; ++i) {
        int cin = (i == 0) ? 1 : sched[i - 1];
        g.enc[i].conv = ConvParams(cfg.filter_width, cfg.stride, cin, sched[i]);
        detail::init_conv(g.enc[i].conv, rng);
        g.enc[i].sn = spectral_init(sched[i], rng);
        g.enc[i].prelu_alpha.assign(sched[i], kPreluInit);
        if (wants_attn(i + 1)) g.enc[i].attn = attn_init(sched[i], cfg.k, cfg.p, rng);
    }
    if (wants_attn(n)) g.bottleneck_attn = attn_init(2 * sched[n - 1], cfg.k, cfg.p, rng);
    g.dec.resize(n);
    for (int jj = 1; jj <= n; ++jj) {
        int cin = 2 * sched[n - jj];
        int cout = (jj == n) ? 1 : sched[n - jj - 1];
        auto& layer = g.dec[jj - 1];
        layer.deconv = ConvParams(cfg.filter_width, cfg.stride, cin, cout);
        detail::init_conv(layer.deconv, rng);
        layer.sn = spectral_init(cout, rng);
        layer.prelu_alpha.assign(cout, kPreluInit);
        int l = n - jj;  // placement index whose mirror slot this is
        if (l >= 1 && wants_attn(l)) layer.attn = attn_init(cout, cfg.k, cfg.p, rng);
    }
    return g;
}

/// Latent noise stacked onto the bottleneck: i.i.d. standard normal, shape
/// 8 x bottleneck_channels.
inline FeatureMap sample_latent(Rng& rng, int channels) {
    FeatureMap z(kBottleneckTime, channels);
    for (double& v : z.data) v = rng.normal();
    return z;
}

// ---------------------------------------------------------------------------
// Spectral-normalized (de)convolution wrapper. Instead of materializing
// kernel/sigma, the input is scaled by 1/sigma (the same linear map, bias
// unaffected). The tape keeps the UNSCALED input: convolving it against dout
// yields exactly d(loss)/d(normalized kernel), which spectral_backward then
// maps back to the raw kernel; the input gradient picks up the 1/sigma.

struct SnConvTape {
    FeatureMap input;
    double sigma = 1.0;
    std::vector<double> v;
};

inline FeatureMap sn_conv_forward(const FeatureMap& x, const ConvParams& p,
                                  const SpectralState& st, bool transposed,
                                  SnConvTape* tape = nullptr) {
    SpectralEstimate est = spectral_estimate(spectral_view(p), st);
    FeatureMap scaled(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) scaled.data[i] = x.data[i] / est.sigma;
    FeatureMap out = transposed ? deconv1d(scaled, p) : conv1d(scaled, p);
    if (tape) {
        tape->input = x;
        tape->sigma = est.sigma;
        tape->v = std::move(est.v);
    }
    return out;
}

inline FeatureMap sn_conv_backward(const SnConvTape& tape, const ConvParams& p,
                                   const SpectralState& st, bool transposed,
                                   const FeatureMap& dout, ConvGrads& grads) {
    ConvGrads local(p);
    FeatureMap draw = transposed ? deconv1d_backward(tape.input, p, dout, local)
                                 : conv1d_backward(tape.input, p, dout, local);
    // local.kernel == d(loss)/d(normalized kernel); bias is untouched by the
    // normalization.
    spectral_backward(p, st, tape.sigma, tape.v, local.kernel);
    for (size_t i = 0; i < grads.kernel.size(); ++i) grads.kernel[i] += local.kernel[i];
    for (size_t i = 0; i < grads.bias.size(); ++i) grads.bias[i] += local.bias[i];
    FeatureMap dx(draw.rows, draw.cols);
    for (size_t i = 0; i < draw.size(); ++i) dx.data[i] = draw.data[i] / tape.sigma;
    return dx;
}

// ---------------------------------------------------------------------------
// Generator forward/backward

struct GenTape {
    std::vector<SnConvTape> enc_conv;
    std::vector<FeatureMap> enc_preact;        // conv output (PReLU input)
    std::vector<AttentionTape> enc_attn;
    std::vector<FeatureMap> enc_out;           // skip sources
    AttentionTape bottleneck_attn;
    std::vector<SnConvTape> dec_conv;
    std::vector<FeatureMap> dec_preact;        // deconv output (activation input)
    std::vector<FeatureMap> dec_act_out;       // activation output (tanh output for last)
    std::vector<AttentionTape> dec_attn;
};

struct GeneratorGrads {
    std::vector<ConvGrads> enc_conv;
    std::vector<std::vector<double>> enc_alpha;
    std::vector<std::optional<AttentionGrads>> enc_attn;
    std::optional<AttentionGrads> bottleneck_attn;
    std::vector<ConvGrads> dec_conv;
    std::vector<std::vector<double>> dec_alpha;
    std::vector<std::optional<AttentionGrads>> dec_attn;

    explicit GeneratorGrads(const Generator& g) {
        for (const auto& l : g.enc) {
            enc_conv.emplace_back(l.conv);
            enc_alpha.emplace_back(l.prelu_alpha.size(), 0.0);
            enc_attn.emplace_back(l.attn ? std::optional<AttentionGrads>(AttentionGrads(*l.attn))
                                         : std::nullopt);
        }
        if (g.bottleneck_attn) bottleneck_attn = AttentionGrads(*g.bottleneck_attn);
        for (const auto& l : g.dec) {
            dec_conv.emplace_back(l.deconv);
            dec_alpha.emplace_back(l.prelu_alpha.size(), 0.0);
            dec_attn.emplace_back(l.attn ? std::optional<AttentionGrads>(AttentionGrads(*l.attn))
                                         : std::nullopt);
        }
    }
};

inline FeatureMap map_from_samples(const std::vector<double>& samples) {
    FeatureMap m(static_cast<int>(samples.size()), 1);
    for (size_t i = 0; i < samples.size(); ++i) m.data[i] = samples[i];
    return m;
}

/// Encoder-only pass: the per-layer feature maps (post activation and
/// attention) and, where attention is present, the attention maps.
struct EncoderTrace {
    std::vector<FeatureMap> maps;
    std::vector<FeatureMap> attn_maps;  // empty FeatureMap where absent
};

inline EncoderTrace generator_encode(const Generator& g, const std::vector<double>& samples) {
    const int w = g.cfg.effective_input_len();
    if (static_cast<int>(samples.size()) != w)
        throw ShapeMismatch("generator_encode: expected " + std::to_string(w) + " samples, got " +
                            std::to_string(samples.size()));
    EncoderTrace trace;
    FeatureMap h = [&] {
        FeatureMap m(static_cast<int>(samples.size()), 1);
        for (size_t i = 0; i < samples.size(); ++i) m.data[i] = samples[i];
        return m;
    }();
    for (const auto& layer : g.enc) {
        h = sn_conv_forward(h, layer.conv, layer.sn, false);
        h = prelu(h, layer.prelu_alpha);
        FeatureMap attn_map;
        if (layer.attn) {
            AttentionOutput out = attn_forward(h, *layer.attn);
            attn_map = std::move(out.attn_map);
            h = std::move(out.f_tilde);
        }
        trace.maps.push_back(h);
        trace.attn_maps.push_back(std::move(attn_map));
    }
    return trace;
}

inline std::vector<double> generator_forward(const Generator& g, const std::vector<double>& noisy,
                                             const FeatureMap& z, GenTape* tape = nullptr) {
    const int n = static_cast<int>(g.enc.size());
    const int w = g.cfg.effective_input_len();
    if (static_cast<int>(noisy.size()) != w)
        throw ShapeMismatch("generator_forward: expected " + std::to_string(w) + " samples, got " +
                            std::to_string(noisy.size()));
    require_shape(z, kBottleneckTime, g.bottleneck_channels(), "generator_forward z");

    if (tape) {
        tape->enc_conv.resize(n);
        tape->enc_preact.resize(n);
        tape->enc_attn.resize(n);
        tape->enc_out.resize(n);
        tape->dec_conv.resize(n);
        tape->dec_preact.resize(n);
        tape->dec_act_out.resize(n);
        tape->dec_attn.resize(n);
    }

    FeatureMap h = map_from_samples(noisy);
    std::vector<FeatureMap> enc_out(n);
    for (int i = 0; i < n; ++i) {
        const auto& layer = g.enc[i];
        FeatureMap pre = sn_conv_forward(h, layer.conv, layer.sn, false,
                                         tape ? &tape->enc_conv[i] : nullptr);
        if (tape) tape->enc_preact[i] = pre;
        h = prelu(pre, layer.prelu_alpha);
        if (layer.attn)
            h = attn_forward(h, *layer.attn, tape ? &tape->enc_attn[i] : nullptr).f_tilde;
        enc_out[i] = h;
        if (tape) tape->enc_out[i] = h;
    }

    h = concat_channels(enc_out[n - 1], z);
    if (g.bottleneck_attn)
        h = attn_forward(h, *g.bottleneck_attn, tape ? &tape->bottleneck_attn : nullptr).f_tilde;

    for (int jj = 1; jj <= n; ++jj) {
        const auto& layer = g.dec[jj - 1];
        FeatureMap pre = sn_conv_forward(h, layer.deconv, layer.sn, true,
                                         tape ? &tape->dec_conv[jj - 1] : nullptr);
        if (tape) tape->dec_preact[jj - 1] = pre;
        FeatureMap act = (jj == n) ? tanh_map(pre) : prelu(pre, layer.prelu_alpha);
        if (tape) tape->dec_act_out[jj - 1] = act;
        if (layer.attn)
            act = attn_forward(act, *layer.attn, tape ? &tape->dec_attn[jj - 1] : nullptr).f_tilde;
        if (jj < n)
            h = concat_channels(act, enc_out[n - jj - 1]);
        else
            h = std::move(act);
    }
    return h.data;  // w x 1
}

/// Backpropagates d(loss)/d(output samples) through the generator,
/// accumulating parameter gradients. Returns d(loss)/d(input samples).
inline std::vector<double> generator_backward(const Generator& g, const GenTape& tape,
                                              const std::vector<double>& dout,
                                              GeneratorGrads& grads) {
    const int n = static_cast<int>(g.enc.size());
    std::vector<FeatureMap> skip_grad(n);
    for (int i = 0; i < n; ++i)
        skip_grad[i] = FeatureMap(tape.enc_out[i].rows, tape.enc_out[i].cols);

    FeatureMap h_grad = map_from_samples(dout);
    for (int jj = n; jj >= 1; --jj) {
        const auto& layer = g.dec[jj - 1];
        if (jj < n) {
            // h_grad is the gradient of concat(act, skip)
            FeatureMap d_act, d_skip;
            split_channels(h_grad, d_act, d_skip, tape.dec_act_out[jj - 1].cols);
            for (size_t q = 0; q < d_skip.size(); ++q)
                skip_grad[n - jj - 1].data[q] += d_skip.data[q];
            h_grad = std::move(d_act);
        }
        if (layer.attn)
            h_grad = attn_backward(tape.dec_attn[jj - 1], *layer.attn, h_grad,
                                   *grads.dec_attn[jj - 1]);
        FeatureMap d_pre = (jj == n)
                               ? tanh_backward(tape.dec_act_out[jj - 1], h_grad)
                               : prelu_backward(tape.dec_preact[jj - 1], layer.prelu_alpha, h_grad,
                                                grads.dec_alpha[jj - 1]);
        h_grad = sn_conv_backward(tape.dec_conv[jj - 1], layer.deconv, layer.sn, true, d_pre,
                                  grads.dec_conv[jj - 1]);
    }

    // h_grad is now the gradient of the (possibly attended) z-stacked bottleneck
    if (g.bottleneck_attn)
        h_grad = attn_backward(tape.bottleneck_attn, *g.bottleneck_attn, h_grad,
                               *grads.bottleneck_attn);
    {
        FeatureMap d_enc, d_z;
        split_channels(h_grad, d_enc, d_z, tape.enc_out[n - 1].cols);
        for (size_t q = 0; q < d_enc.size(); ++q) skip_grad[n - 1].data[q] += d_enc.data[q];
        // z is an input, not a parameter; its gradient is dropped.
    }

    for (int i = n - 1; i >= 0; --i) {
        const auto& layer = g.enc[i];
        FeatureMap gout = std::move(skip_grad[i]);
        if (layer.attn)
            gout = attn_backward(tape.enc_attn[i], *layer.attn, gout, *grads.enc_attn[i]);
        FeatureMap d_pre =
            prelu_backward(tape.enc_preact[i], layer.prelu_alpha, gout, grads.enc_alpha[i]);
        FeatureMap d_in =
            sn_conv_backward(tape.enc_conv[i], layer.conv, layer.sn, false, d_pre,
                             grads.enc_conv[i]);
        if (i > 0)
            for (size_t q = 0; q < d_in.size(); ++q) skip_grad[i - 1].data[q] += d_in.data[q];
        else
            return d_in.data;
    }
    return {};
}

// ---------------------------------------------------------------------------
// Discriminator

struct DiscLayer {
    ConvParams conv;
    SpectralState sn;
    std::vector<double> gamma;
    std::vector<double> beta;
    VbnState vbn;
    std::optional<AttentionParams> attn;
};

/// Convolutional stack over a 2-channel (signal, condition) input with
/// virtual batch norm and LeakyReLU, a 1x1 reduction conv and a linear head
/// producing one unbounded score.
struct Discriminator {
    ModelConfig cfg;
    std::vector<DiscLayer> layers;
    ConvParams reduce;            // 1x1 conv to kReduceChannels
    std::vector<double> head_w;   // flatten(8 x kReduceChannels) -> 1
    double head_b = 0.0;
};

inline Discriminator build_discriminator(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const int n = cfg.n_layers();
    const auto sched = cfg.effective_schedule();
    const auto attn_at = cfg.effective_attention();
    auto wants_attn = [&](int l) {
        for (int x : attn_at)
            if (x == l) return true;
        return false;
    };

    Discriminator d;
    d.cfg = cfg;
    d.layers.resize(n);
    for (int i = 0; i < n; ++i) {
        int cin = (i == 0) ? 2 : sched[i - 1];
        auto& layer = d.layers[i];
        layer.conv = ConvParams(cfg.filter_width, cfg.stride, cin, sched[i]);
        detail::init_conv(layer.conv, rng);
        layer.sn = spectral_init(sched[i], rng);
        layer.gamma.assign(sched[i], 1.0);
        layer.beta.assign(sched[i], 0.0);
        // Identity statistics until the first reference-batch refresh.
        layer.vbn.ref_mean.assign(sched[i], 0.0);
        layer.vbn.ref_var.assign(sched[i], 1.0);
        layer.vbn.n_ref = 1;
        layer.vbn.initialized = true;
        if (wants_attn(i + 1)) layer.attn = attn_init(sched[i], cfg.k, cfg.p, rng);
    }
    d.reduce = ConvParams(1, 1, sched[n - 1], kReduceChannels);
    detail::init_conv(d.reduce, rng);
    d.head_w.resize(static_cast<size_t>(kBottleneckTime) * kReduceChannels);
    detail::xavier_fill(d.head_w, static_cast<int>(d.head_w.size()), 1, rng);
    d.head_b = 0.0;
    return d;
}

struct DiscTape {
    std::vector<SnConvTape> conv;
    std::vector<VbnTape> vbn;
    std::vector<FeatureMap> lrelu_in;
    std::vector<AttentionTape> attn;
    FeatureMap reduce_in;
    FeatureMap flat;  // reduce output, row-major flattened by the head
};

struct DiscriminatorGrads {
    std::vector<ConvGrads> conv;
    std::vector<std::vector<double>> gamma, beta;
    std::vector<std::optional<AttentionGrads>> attn;
    ConvGrads reduce;
    std::vector<double> head_w;
    double head_b = 0.0;

    explicit DiscriminatorGrads(const Discriminator& d) : reduce(d.reduce) {
        for (const auto& l : d.layers) {
            conv.emplace_back(l.conv);
            gamma.emplace_back(l.gamma.size(), 0.0);
            beta.emplace_back(l.beta.size(), 0.0);
            attn.emplace_back(l.attn ? std::optional<AttentionGrads>(AttentionGrads(*l.attn))
                                     : std::nullopt);
        }
        head_w.assign(d.head_w.size(), 0.0);
    }
};

inline FeatureMap stack_pair(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeMismatch("discriminator input pair lengths differ");
    FeatureMap m(static_cast<int>(a.size()), 2);
    for (size_t t = 0; t < a.size(); ++t) {
        m.data[2 * t] = a[t];
        m.data[2 * t + 1] = b[t];
    }
    return m;
}

inline double discriminator_forward_map(const Discriminator& d, const FeatureMap& input,
                                        bool training, DiscTape* tape = nullptr) {
    const int n = static_cast<int>(d.layers.size());
    if (tape) {
        tape->conv.resize(n);
        tape->vbn.resize(n);
        tape->lrelu_in.resize(n);
        tape->attn.resize(n);
    }
    FeatureMap h = input;
    for (int i = 0; i < n; ++i) {
        const auto& layer = d.layers[i];
        h = sn_conv_forward(h, layer.conv, layer.sn, false, tape ? &tape->conv[i] : nullptr);
        h = vbn_apply(h, layer.vbn, layer.gamma, layer.beta, training,
                      tape ? &tape->vbn[i] : nullptr);
        if (tape) tape->lrelu_in[i] = h;
        h = leaky_relu(h);
        if (layer.attn) h = attn_forward(h, *layer.attn, tape ? &tape->attn[i] : nullptr).f_tilde;
    }
    if (tape) tape->reduce_in = h;
    FeatureMap flat = conv1d(h, d.reduce);  // width 1, stride 1
    if (tape) tape->flat = flat;
    double score = d.head_b;
    for (size_t q = 0; q < flat.size(); ++q) score += d.head_w[q] * flat.data[q];
    return score;
}

inline double discriminator_forward(const Discriminator& d, const std::vector<double>& a,
                                    const std::vector<double>& b, bool training,
                                    DiscTape* tape = nullptr) {
    const int w = d.cfg.effective_input_len();
    if (static_cast<int>(a.size()) != w)
        throw ShapeMismatch("discriminator_forward: expected " + std::to_string(w) + " samples");
    return discriminator_forward_map(d, stack_pair(a, b), training, tape);
}

/// Returns d(score*dscore)/d(input map) (W x 2); column 0 is the gradient
/// w.r.t. the judged signal.
inline FeatureMap discriminator_backward(const Discriminator& d, const DiscTape& tape,
                                         double dscore, DiscriminatorGrads& grads) {
    const int n = static_cast<int>(d.layers.size());
    FeatureMap d_flat(tape.flat.rows, tape.flat.cols);
    for (size_t q = 0; q < tape.flat.size(); ++q) {
        grads.head_w[q] += dscore * tape.flat.data[q];
        d_flat.data[q] = dscore * d.head_w[q];
    }
    grads.head_b += dscore;
    FeatureMap h_grad = conv1d_backward(tape.reduce_in, d.reduce, d_flat, grads.reduce);
    for (int i = n - 1; i >= 0; --i) {
        const auto& layer = d.layers[i];
        if (layer.attn) h_grad = attn_backward(tape.attn[i], *layer.attn, h_grad, *grads.attn[i]);
        h_grad = leaky_relu_backward(tape.lrelu_in[i], h_grad);
        h_grad = vbn_backward(tape.vbn[i], layer.gamma, h_grad, grads.gamma[i], grads.beta[i]);
        h_grad = sn_conv_backward(tape.conv[i], layer.conv, layer.sn, false, h_grad,
                                  grads.conv[i]);
    }
    return h_grad;
}

/// Recomputes per-layer reference statistics by propagating the fixed
/// reference batch through the stack (each layer's reference activations are
/// normalized with their own statistics). Run once per training step.
inline void discriminator_refresh_vbn(Discriminator& d, const std::vector<FeatureMap>& ref_batch) {
    if (ref_batch.empty()) throw UninitializedState("refresh_vbn: empty reference batch");
    std::vector<FeatureMap> batch = ref_batch;
    for (auto& layer : d.layers) {
        for (auto& m : batch) m = sn_conv_forward(m, layer.conv, layer.sn, false);
        layer.vbn = vbn_collect_stats(batch);
        for (auto& m : batch) {
            m = vbn_apply(m, layer.vbn, layer.gamma, layer.beta, false);
            m = leaky_relu(m);
            if (layer.attn) m = attn_forward(m, *layer.attn).f_tilde;
        }
    }
}

/// One power-iteration step on every spectral-normalized layer.
inline void refresh_spectral(Generator& g) {
    for (auto& l : g.enc) spectral_power_step(spectral_view(l.conv), l.sn);
    for (auto& l : g.dec) spectral_power_step(spectral_view(l.deconv), l.sn);
}
inline void refresh_spectral(Discriminator& d) {
    for (auto& l : d.layers) spectral_power_step(spectral_view(l.conv), l.sn);
}

// ---------------------------------------------------------------------------
// Named parameter traversal (drives the optimizer, checkpointing and tests).
// Order is fixed; every visit is (name, data pointer, length).

template <typename Fn>
void visit_attn(const std::string& prefix, AttentionParams& a, Fn&& fn) {
    fn(prefix + ".wq", a.w_q.data(), a.w_q.size());
    fn(prefix + ".wk", a.w_k.data(), a.w_k.size());
    fn(prefix + ".wv", a.w_v.data(), a.w_v.size());
    fn(prefix + ".wo", a.w_o.data(), a.w_o.size());
    fn(prefix + ".beta", &a.beta, 1);
}

template <typename Fn>
void visit_attn_grads(const std::string& prefix, AttentionGrads& a, Fn&& fn) {
    fn(prefix + ".wq", a.w_q.data(), a.w_q.size());
    fn(prefix + ".wk", a.w_k.data(), a.w_k.size());
    fn(prefix + ".wv", a.w_v.data(), a.w_v.size());
    fn(prefix + ".wo", a.w_o.data(), a.w_o.size());
    fn(prefix + ".beta", &a.beta, 1);
}

template <typename Fn>
void for_each_param(Generator& g, Fn&& fn) {
    for (size_t i = 0; i < g.enc.size(); ++i) {
        std::string p = "g.enc" + std::to_string(i + 1);
        auto& l = g.enc[i];
        fn(p + ".kernel", l.conv.kernel.data(), l.conv.kernel.size());
        fn(p + ".bias", l.conv.bias.data(), l.conv.bias.size());
        fn(p + ".alpha", l.prelu_alpha.data(), l.prelu_alpha.size());
        if (l.attn) visit_attn(p + ".attn", *l.attn, fn);
    }
    if (g.bottleneck_attn) visit_attn("g.zattn", *g.bottleneck_attn, fn);
    for (size_t j = 0; j < g.dec.size(); ++j) {
        std::string p = "g.dec" + std::to_string(j + 1);
        auto& l = g.dec[j];
        fn(p + ".kernel", l.deconv.kernel.data(), l.deconv.kernel.size());
        fn(p + ".bias", l.deconv.bias.data(), l.deconv.bias.size());
        if (j + 1 < g.dec.size())
            fn(p + ".alpha", l.prelu_alpha.data(), l.prelu_alpha.size());
        if (l.attn) visit_attn(p + ".attn", *l.attn, fn);
    }
}

template <typename Fn>
void for_each_grad(const Generator& g, GeneratorGrads& grads, Fn&& fn) {
    for (size_t i = 0; i < g.enc.size(); ++i) {
        std::string p = "g.enc" + std::to_string(i + 1);
        fn(p + ".kernel", grads.enc_conv[i].kernel.data(), grads.enc_conv[i].kernel.size());
        fn(p + ".bias", grads.enc_conv[i].bias.data(), grads.enc_conv[i].bias.size());
        fn(p + ".alpha", grads.enc_alpha[i].data(), grads.enc_alpha[i].size());
        if (grads.enc_attn[i]) visit_attn_grads(p + ".attn", *grads.enc_attn[i], fn);
    }
    if (grads.bottleneck_attn) visit_attn_grads("g.zattn", *grads.bottleneck_attn, fn);
    for (size_t j = 0; j < g.dec.size(); ++j) {
        std::string p = "g.dec" + std::to_string(j + 1);
        fn(p + ".kernel", grads.dec_conv[j].kernel.data(), grads.dec_conv[j].kernel.size());
        fn(p + ".bias", grads.dec_conv[j].bias.data(), grads.dec_conv[j].bias.size());
        if (j + 1 < g.dec.size())
            fn(p + ".alpha", grads.dec_alpha[j].data(), grads.dec_alpha[j].size());
        if (grads.dec_attn[j]) visit_attn_grads(p + ".attn", *grads.dec_attn[j], fn);
    }
}

template <typename Fn>
void for_each_param(Discriminator& d, Fn&& fn) {
    for (size_t i = 0; i < d.layers.size(); ++i) {
        std::string p = "d.l" + std::to_string(i + 1);
        auto& l = d.layers[i];
        fn(p + ".kernel", l.conv.kernel.data(), l.conv.kernel.size());
        fn(p + ".bias", l.conv.bias.data(), l.conv.bias.size());
        fn(p + ".gamma", l.gamma.data(), l.gamma.size());
        fn(p + ".beta", l.beta.data(), l.beta.size());
        if (l.attn) visit_attn(p + ".attn", *l.attn, fn);
    }
    fn("d.reduce.kernel", d.reduce.kernel.data(), d.reduce.kernel.size());
    fn("d.reduce.bias", d.reduce.bias.data(), d.reduce.bias.size());
    fn("d.head.w", d.head_w.data(), d.head_w.size());
    fn("d.head.b", &d.head_b, 1);
}

template <typename Fn>
void for_each_grad(const Discriminator& d, DiscriminatorGrads& grads, Fn&& fn) {
    for (size_t i = 0; i < d.layers.size(); ++i) {
        std::string p = "d.l" + std::to_string(i + 1);
        fn(p + ".kernel", grads.conv[i].kernel.data(), grads.conv[i].kernel.size());
        fn(p + ".bias", grads.conv[i].bias.data(), grads.conv[i].bias.size());
        fn(p + ".gamma", grads.gamma[i].data(), grads.gamma[i].size());
        fn(p + ".beta", grads.beta[i].data(), grads.beta[i].size());
        if (grads.attn[i]) visit_attn_grads(p + ".attn", *grads.attn[i], fn);
    }
    fn("d.reduce.kernel", grads.reduce.kernel.data(), grads.reduce.kernel.size());
    fn("d.reduce.bias", grads.reduce.bias.data(), grads.reduce.bias.size());
    fn("d.head.w", grads.head_w.data(), grads.head_w.size());
    fn("d.head.b", &grads.head_b, 1);
}

// Persisted non-parameter state (power-iteration vectors, VBN statistics).
template <typename Fn>
void for_each_state(Generator& g, Fn&& fn) {
    for (size_t i = 0; i < g.enc.size(); ++i)
        fn("g.enc" + std::to_string(i + 1) + ".u", g.enc[i].sn.u.data(), g.enc[i].sn.u.size());
    for (size_t j = 0; j < g.dec.size(); ++j)
        fn("g.dec" + std::to_string(j + 1) + ".u", g.dec[j].sn.u.data(), g.dec[j].sn.u.size());
}

template <typename Fn>
void for_each_state(Discriminator& d, Fn&& fn) {
    for (size_t i = 0; i < d.layers.size(); ++i) {
        std::string p = "d.l" + std::to_string(i + 1);
        auto& l = d.layers[i];
        fn(p + ".u", l.sn.u.data(), l.sn.u.size());
        fn(p + ".ref_mean", l.vbn.ref_mean.data(), l.vbn.ref_mean.size());
        fn(p + ".ref_var", l.vbn.ref_var.data(), l.vbn.ref_var.size());
    }
}

template <typename Model>
std::size_t parameter_count(Model& m) {
    std::size_t total = 0;
    for_each_param(m, [&](const std::string&, double*, size_t n) { total += n; });
    return total;
}

}  // namespace sasegan
