#pragma once

#include <cstdint>
#include <vector>

#include "sasegan/errors.hpp"
#include "sasegan/feature_map.hpp"
#include "sasegan/nn.hpp"
#include "sasegan/rng.hpp"

namespace sasegan {

constexpr int kAttnChannelReduction = 8;  // k
constexpr int kAttnPoolFactor = 4;        // p

/// Non-local self-attention layer parameters: 1x1 projections with channel
/// reduction k, key/value time pooling p, and the learnable shortcut gain.
struct AttentionParams {
    int channels = 0;  // C
    int k = kAttnChannelReduction;
    int p = kAttnPoolFactor;
    std::vector<double> w_q;  // C x (C/k), row-major
    std::vector<double> w_k;  // C x (C/k)
    std::vector<double> w_v;  // C x (C/k)
    std::vector<double> w_o;  // (C/k) x C
    double beta = 0.0;

    int reduced() const { return channels / k; }
};

struct AttentionGrads {
    std::vector<double> w_q, w_k, w_v, w_o;
    double beta = 0.0;
    explicit AttentionGrads(const AttentionParams& p)
        : w_q(p.w_q.size(), 0.0), w_k(p.w_k.size(), 0.0), w_v(p.w_v.size(), 0.0),
          w_o(p.w_o.size(), 0.0) {}
};

struct AttentionOutput {
    FeatureMap f_tilde;   // L x C, beta*O + F
    FeatureMap attn_map;  // L x ceil(L/p), rows are probability vectors
};

struct AttentionTape {
    FeatureMap input;        // F
    FeatureMap q;            // L x r
    FeatureMap k_pooled;     // P x r
    FeatureMap v_pooled;     // P x r
    MaxPoolTape k_pool_tape;
    MaxPoolTape v_pool_tape;
    FeatureMap attn;         // A, L x P
    FeatureMap attended;     // A*Vbar, L x r
    FeatureMap output;       // O, L x C
};

namespace detail {

// out(LxN) = in(LxM) * w(MxN)
inline FeatureMap project(const FeatureMap& in, const std::vector<double>& w, int n_out) {
    FeatureMap out(in.rows, n_out);
    for (int t = 0; t < in.rows; ++t) {
        const double* src = in.row(t);
        double* dst = out.row(t);
        for (int m = 0; m < in.cols; ++m) {
            double x = src[m];
            if (x == 0.0) continue;
            const double* wr = &w[static_cast<size_t>(m) * n_out];
            for (int n = 0; n < n_out; ++n) dst[n] += x * wr[n];
        }
    }
    return out;
}

// dW(MxN) += in^T(MxL) * dout(LxN); returns din(LxM) = dout * W^T
inline FeatureMap project_backward(const FeatureMap& in, const std::vector<double>& w, int n_out,
                                   const FeatureMap& dout, std::vector<double>& dw) {
    FeatureMap din(in.rows, in.cols);
    for (int t = 0; t < in.rows; ++t) {
        const double* src = in.row(t);
        const double* dy = dout.row(t);
        double* dx = din.row(t);
        for (int m = 0; m < in.cols; ++m) {
            const double* wr = &w[static_cast<size_t>(m) * n_out];
            double* dwr = &dw[static_cast<size_t>(m) * n_out];
            double x = src[m];
            double acc = 0.0;
            for (int n = 0; n < n_out; ++n) {
                dwr[n] += x * dy[n];
                acc += wr[n] * dy[n];
            }
            dx[m] += acc;
        }
    }
    return din;
}

// out(LxP) = a(Lxr) * b(Pxr)^T
inline FeatureMap matmul_bt(const FeatureMap& a, const FeatureMap& b) {
    FeatureMap out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        const double* ra = a.row(i);
        double* dst = out.row(i);
        for (int j = 0; j < b.rows; ++j) {
            const double* rb = b.row(j);
            double acc = 0.0;
            for (int c = 0; c < a.cols; ++c) acc += ra[c] * rb[c];
            dst[j] = acc;
        }
    }
    return out;
}

// out(Lxr) = a(LxP) * b(Pxr)
inline FeatureMap matmul(const FeatureMap& a, const FeatureMap& b) {
    FeatureMap out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* ra = a.row(i);
        double* dst = out.row(i);
        for (int j = 0; j < a.cols; ++j) {
            double x = ra[j];
            if (x == 0.0) continue;
            const double* rb = b.row(j);
            for (int c = 0; c < b.cols; ++c) dst[c] += x * rb[c];
        }
    }
    return out;
}

// out(Pxr) = a(LxP)^T * b(Lxr)
inline FeatureMap matmul_at(const FeatureMap& a, const FeatureMap& b) {
    FeatureMap out(a.cols, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* ra = a.row(i);
        const double* rb = b.row(i);
        for (int j = 0; j < a.cols; ++j) {
            double x = ra[j];
            if (x == 0.0) continue;
            double* dst = out.row(j);
            for (int c = 0; c < b.cols; ++c) dst[c] += x * rb[c];
        }
    }
    return out;
}

}  // namespace detail

/// Weights initialized per the shared policy (uniform, scale
/// sqrt(6/(fan_in+fan_out))); beta starts at 0 so the layer is the identity.
inline AttentionParams attn_init(int channels, int k, int p, Rng& rng) {
    if (k < 1 || p < 1) throw Error("attn_init: k and p must be >= 1");
    if (channels % k != 0)
        throw IndivisibleChannels("attn_init: C=" + std::to_string(channels) +
                                  " not divisible by k=" + std::to_string(k));
    AttentionParams params;
    params.channels = channels;
    params.k = k;
    params.p = p;
    int r = channels / k;
    auto fill = [&](std::vector<double>& w, int fan_in, int fan_out) {
        w.resize(static_cast<size_t>(fan_in) * fan_out);
        double scale = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& x : w) x = rng.uniform(-scale, scale);
    };
    fill(params.w_q, channels, r);
    fill(params.w_k, channels, r);
    fill(params.w_v, channels, r);
    fill(params.w_o, r, channels);
    params.beta = 0.0;
    return params;
}

/// Q = F Wq; Kbar, Vbar = maxpool_p(F Wk), maxpool_p(F Wv);
/// A = softmax(Q Kbar^T); O = (A Vbar) Wo; F~ = beta*O + F.
inline AttentionOutput attn_forward(const FeatureMap& f, const AttentionParams& params,
                                    AttentionTape* tape = nullptr) {
    if (f.cols != params.channels)
        throw ShapeMismatch("attn_forward: input has " + std::to_string(f.cols) +
                            " channels, params expect " + std::to_string(params.channels));
    const int r = params.reduced();

    FeatureMap q = detail::project(f, params.w_q, r);
    FeatureMap k_raw = detail::project(f, params.w_k, r);
    FeatureMap v_raw = detail::project(f, params.w_v, r);

    MaxPoolTape k_pool_tape, v_pool_tape;
    FeatureMap k_bar = maxpool1d(k_raw, params.p, &k_pool_tape);
    FeatureMap v_bar = maxpool1d(v_raw, params.p, &v_pool_tape);

    FeatureMap scores = detail::matmul_bt(q, k_bar);
    FeatureMap attn = softmax_rows(scores);
    FeatureMap attended = detail::matmul(attn, v_bar);
    FeatureMap output = detail::project(attended, params.w_o, params.channels);

    AttentionOutput out;
    out.attn_map = attn;
    if (params.beta == 0.0) {
        out.f_tilde = f;  // exact shortcut identity
    } else {
        out.f_tilde = FeatureMap(f.rows, f.cols);
        for (size_t i = 0; i < f.size(); ++i)
            out.f_tilde.data[i] = params.beta * output.data[i] + f.data[i];
    }
    if (tape) {
        tape->input = f;
        tape->q = std::move(q);
        tape->k_pooled = std::move(k_bar);
        tape->v_pooled = std::move(v_bar);
        tape->k_pool_tape = std::move(k_pool_tape);
        tape->v_pool_tape = std::move(v_pool_tape);
        tape->attn = out.attn_map;
        tape->attended = std::move(attended);
        tape->output = std::move(output);
    }
    return out;
}

inline FeatureMap attn_backward(const AttentionTape& tape, const AttentionParams& params,
                                const FeatureMap& dout, AttentionGrads& grads) {
    const int r = params.reduced();
    const FeatureMap& f = tape.input;

    // beta*O + F
    for (size_t i = 0; i < dout.size(); ++i) grads.beta += dout.data[i] * tape.output.data[i];
    FeatureMap d_output(dout.rows, dout.cols);
    for (size_t i = 0; i < dout.size(); ++i) d_output.data[i] = params.beta * dout.data[i];
    FeatureMap dinput = dout;  // shortcut branch

    // O = (A Vbar) Wo
    FeatureMap d_attended =
        detail::project_backward(tape.attended, params.w_o, params.channels, d_output, grads.w_o);

    // A Vbar
    FeatureMap d_attn = detail::matmul_bt(d_attended, tape.v_pooled);  // (Lxr)*(Pxr)^T
    FeatureMap d_v_bar = detail::matmul_at(tape.attn, d_attended);     // (LxP)^T*(Lxr)

    // softmax
    FeatureMap d_scores = softmax_rows_backward(tape.attn, d_attn);

    // scores = Q Kbar^T
    FeatureMap d_q = detail::matmul(d_scores, tape.k_pooled);      // (LxP)*(Pxr)
    FeatureMap d_k_bar = detail::matmul_at(d_scores, tape.q);      // (LxP)^T*(Lxr)

    // unpool
    FeatureMap d_k_raw = maxpool1d_backward(tape.k_pool_tape, d_k_bar);
    FeatureMap d_v_raw = maxpool1d_backward(tape.v_pool_tape, d_v_bar);

    // projections
    FeatureMap d_f_q = detail::project_backward(f, params.w_q, r, d_q, grads.w_q);
    FeatureMap d_f_k = detail::project_backward(f, params.w_k, r, d_k_raw, grads.w_k);
    FeatureMap d_f_v = detail::project_backward(f, params.w_v, r, d_v_raw, grads.w_v);
    for (size_t i = 0; i < dinput.size(); ++i)
        dinput.data[i] += d_f_q.data[i] + d_f_k.data[i] + d_f_v.data[i];
    return dinput;
}

/// Memory footprint of the attention map at (de)convolutional layer l for a
/// model input of L_input samples: the attended feature map has time
/// dimension L_input/2^l.
struct AttentionFootprint {
    std::int64_t time_dim = 0;
    std::int64_t raw_map_elems = 0;     // time_dim^2, unpooled keys
    std::int64_t pooled_map_elems = 0;  // time_dim * ceil(time_dim/p)
};

inline AttentionFootprint attn_footprint(std::int64_t l_input = 16384, int layer_index = 11,
                                         int p = kAttnPoolFactor) {
    if (layer_index < 1 || layer_index > 11)
        throw OutOfRangeLayer("attn_footprint: layer index " + std::to_string(layer_index) +
                              " outside {1..11}");
    AttentionFootprint fp;
    fp.time_dim = l_input >> layer_index;
    fp.raw_map_elems = fp.time_dim * fp.time_dim;
    fp.pooled_map_elems = fp.time_dim * ((fp.time_dim + p - 1) / p);
    return fp;
}

}  // namespace sasegan
