#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sasegan/errors.hpp"
#include "sasegan/feature_map.hpp"
#include "sasegan/rng.hpp"

namespace sasegan {

constexpr double kLeakyReluAlpha = 0.3;
constexpr double kPreluInit = 0.25;
constexpr double kVbnEps = 1e-5;

/// Strided 1D convolution parameters. kernel layout: [width][c_in][c_out],
/// flat index (w*c_in + ci)*c_out + co.
struct ConvParams {
    int width = 31;
    int stride = 2;
    int in_channels = 0;
    int out_channels = 0;
    std::vector<double> kernel;
    std::vector<double> bias;

    ConvParams() = default;
    ConvParams(int w, int s, int cin, int cout)
        : width(w), stride(s), in_channels(cin), out_channels(cout),
          kernel(static_cast<size_t>(w) * cin * cout, 0.0), bias(cout, 0.0) {}

    size_t kernel_size() const { return kernel.size(); }
};

struct ConvGrads {
    std::vector<double> kernel;
    std::vector<double> bias;
    explicit ConvGrads(const ConvParams& p) : kernel(p.kernel.size(), 0.0), bias(p.bias.size(), 0.0) {}
};

inline int conv_output_len(int len, int stride) { return (len + stride - 1) / stride; }

/// "same"-style padding: total = max((ceil(L/s)-1)*s + width - L, 0),
/// left = floor(total/2).
inline int conv_pad_left(int len, int stride, int width) {
    int out_len = conv_output_len(len, stride);
    int total = std::max((out_len - 1) * stride + width - len, 0);
    return total / 2;
}

/// Cross-correlation with zero padding; output length is exactly ceil(L/stride).
inline FeatureMap conv1d(const FeatureMap& input, const ConvParams& p) {
    if (input.cols != p.in_channels)
        throw ShapeMismatch("conv1d: input has " + std::to_string(input.cols) +
                            " channels, kernel expects " + std::to_string(p.in_channels));
    const int L = input.rows, cin = p.in_channels, cout = p.out_channels;
    const int out_len = conv_output_len(L, p.stride);
    const int left = conv_pad_left(L, p.stride, p.width);

    FeatureMap out(out_len, cout);
    for (int o = 0; o < out_len; ++o) {
        double* dst = out.row(o);
        for (int c = 0; c < cout; ++c) dst[c] = p.bias[c];
        for (int w = 0; w < p.width; ++w) {
            int t = o * p.stride + w - left;
            if (t < 0 || t >= L) continue;
            const double* src = input.row(t);
            const double* ker = &p.kernel[static_cast<size_t>(w) * cin * cout];
            for (int ci = 0; ci < cin; ++ci) {
                double x = src[ci];
                if (x == 0.0) continue;
                const double* kc = ker + static_cast<size_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) dst[co] += x * kc[co];
            }
        }
    }
    return out;
}

/// Backward pass of conv1d. Accumulates parameter gradients into `grads`
/// and returns the input gradient.
inline FeatureMap conv1d_backward(const FeatureMap& input, const ConvParams& p,
                                  const FeatureMap& dout, ConvGrads& grads) {
    const int L = input.rows, cin = p.in_channels, cout = p.out_channels;
    const int out_len = conv_output_len(L, p.stride);
    require_shape(dout, out_len, cout, "conv1d_backward dout");
    const int left = conv_pad_left(L, p.stride, p.width);

    FeatureMap dinput(L, cin);
    for (int o = 0; o < out_len; ++o) {
        const double* dy = dout.row(o);
        for (int co = 0; co < cout; ++co) grads.bias[co] += dy[co];
        for (int w = 0; w < p.width; ++w) {
            int t = o * p.stride + w - left;
            if (t < 0 || t >= L) continue;
            const double* src = input.row(t);
            double* dsrc = dinput.row(t);
            const double* ker = &p.kernel[static_cast<size_t>(w) * cin * cout];
            double* dker = &grads.kernel[static_cast<size_t>(w) * cin * cout];
            for (int ci = 0; ci < cin; ++ci) {
                const double* kc = ker + static_cast<size_t>(ci) * cout;
                double* dkc = dker + static_cast<size_t>(ci) * cout;
                double x = src[ci];
                double acc = 0.0;
                for (int co = 0; co < cout; ++co) {
                    dkc[co] += x * dy[co];
                    acc += kc[co] * dy[co];
                }
                dsrc[ci] += acc;
            }
        }
    }
    return dinput;
}

/// Transposed 1D convolution: the exact adjoint of conv1d's linear map for
/// the same padding scheme. Output length is L*stride.
inline FeatureMap deconv1d(const FeatureMap& input, const ConvParams& p) {
    if (input.cols != p.in_channels)
        throw ShapeMismatch("deconv1d: input has " + std::to_string(input.cols) +
                            " channels, kernel expects " + std::to_string(p.in_channels));
    const int L = input.rows, cin = p.in_channels, cout = p.out_channels;
    const int out_len = L * p.stride;
    const int left = conv_pad_left(out_len, p.stride, p.width);

    FeatureMap out(out_len, cout);
    for (int t = 0; t < out_len; ++t) {
        double* dst = out.row(t);
        for (int c = 0; c < cout; ++c) dst[c] = p.bias[c];
    }
    for (int o = 0; o < L; ++o) {
        const double* src = input.row(o);
        for (int w = 0; w < p.width; ++w) {
            int t = o * p.stride + w - left;
            if (t < 0 || t >= out_len) continue;
            double* dst = out.row(t);
            const double* ker = &p.kernel[static_cast<size_t>(w) * cin * cout];
            for (int ci = 0; ci < cin; ++ci) {
                double x = src[ci];
                if (x == 0.0) continue;
                const double* kc = ker + static_cast<size_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) dst[co] += x * kc[co];
            }
        }
    }
    return out;
}

inline FeatureMap deconv1d_backward(const FeatureMap& input, const ConvParams& p,
                                    const FeatureMap& dout, ConvGrads& grads) {
    const int L = input.rows, cin = p.in_channels, cout = p.out_channels;
    const int out_len = L * p.stride;
    require_shape(dout, out_len, cout, "deconv1d_backward dout");
    const int left = conv_pad_left(out_len, p.stride, p.width);

    for (int t = 0; t < out_len; ++t) {
        const double* dy = dout.row(t);
        for (int co = 0; co < cout; ++co) grads.bias[co] += dy[co];
    }
    FeatureMap dinput(L, cin);
    for (int o = 0; o < L; ++o) {
        const double* src = input.row(o);
        double* dsrc = dinput.row(o);
        for (int w = 0; w < p.width; ++w) {
            int t = o * p.stride + w - left;
            if (t < 0 || t >= out_len) continue;
            const double* dy = dout.row(t);
            const double* ker = &p.kernel[static_cast<size_t>(w) * cin * cout];
            double* dker = &grads.kernel[static_cast<size_t>(w) * cin * cout];
            for (int ci = 0; ci < cin; ++ci) {
                const double* kc = ker + static_cast<size_t>(ci) * cout;
                double* dkc = dker + static_cast<size_t>(ci) * cout;
                double x = src[ci];
                double acc = 0.0;
                for (int co = 0; co < cout; ++co) {
                    dkc[co] += x * dy[co];
                    acc += kc[co] * dy[co];
                }
                dsrc[ci] += acc;
            }
        }
    }
    return dinput;
}

// ---------------------------------------------------------------------------
// Activations

inline FeatureMap prelu(const FeatureMap& input, const std::vector<double>& alpha) {
    if (static_cast<int>(alpha.size()) != input.cols)
        throw ShapeMismatch("prelu: alpha length must equal channel count");
    FeatureMap out(input.rows, input.cols);
    for (int t = 0; t < input.rows; ++t) {
        const double* src = input.row(t);
        double* dst = out.row(t);
        for (int c = 0; c < input.cols; ++c)
            dst[c] = src[c] >= 0.0 ? src[c] : alpha[c] * src[c];
    }
    return out;
}

inline FeatureMap prelu_backward(const FeatureMap& input, const std::vector<double>& alpha,
                                 const FeatureMap& dout, std::vector<double>& dalpha) {
    FeatureMap dinput(input.rows, input.cols);
    for (int t = 0; t < input.rows; ++t) {
        const double* src = input.row(t);
        const double* dy = dout.row(t);
        double* dx = dinput.row(t);
        for (int c = 0; c < input.cols; ++c) {
            if (src[c] >= 0.0) {
                dx[c] = dy[c];
            } else {
                dx[c] = alpha[c] * dy[c];
                dalpha[c] += src[c] * dy[c];
            }
        }
    }
    return dinput;
}

inline FeatureMap leaky_relu(const FeatureMap& input, double alpha = kLeakyReluAlpha) {
    FeatureMap out(input.rows, input.cols);
    for (size_t i = 0; i < input.size(); ++i)
        out.data[i] = input.data[i] >= 0.0 ? input.data[i] : alpha * input.data[i];
    return out;
}

inline FeatureMap leaky_relu_backward(const FeatureMap& input, const FeatureMap& dout,
                                      double alpha = kLeakyReluAlpha) {
    FeatureMap dinput(input.rows, input.cols);
    for (size_t i = 0; i < input.size(); ++i)
        dinput.data[i] = input.data[i] >= 0.0 ? dout.data[i] : alpha * dout.data[i];
    return dinput;
}

inline FeatureMap tanh_map(const FeatureMap& input) {
    FeatureMap out(input.rows, input.cols);
    for (size_t i = 0; i < input.size(); ++i) out.data[i] = std::tanh(input.data[i]);
    return out;
}

inline FeatureMap tanh_backward(const FeatureMap& output, const FeatureMap& dout) {
    FeatureMap dinput(output.rows, output.cols);
    for (size_t i = 0; i < output.size(); ++i)
        dinput.data[i] = (1.0 - output.data[i] * output.data[i]) * dout.data[i];
    return dinput;
}

// ---------------------------------------------------------------------------
// Max pooling over time, non-overlapping windows of width p; the final
// window may be shorter.

struct MaxPoolTape {
    std::vector<int> argmax;  // [out_row * cols + c] -> input row index
    int in_rows = 0;
};

inline FeatureMap maxpool1d(const FeatureMap& input, int p, MaxPoolTape* tape = nullptr) {
    if (p < 1) throw Error("maxpool1d: p must be >= 1");
    const int out_len = (input.rows + p - 1) / p;
    FeatureMap out(out_len, input.cols);
    if (tape) {
        tape->argmax.assign(static_cast<size_t>(out_len) * input.cols, 0);
        tape->in_rows = input.rows;
    }
    for (int o = 0; o < out_len; ++o) {
        int begin = o * p;
        int end = std::min(begin + p, input.rows);
        double* dst = out.row(o);
        for (int c = 0; c < input.cols; ++c) {
            int best_t = begin;
            double best = input.at(begin, c);
            for (int t = begin + 1; t < end; ++t) {
                if (input.at(t, c) > best) {
                    best = input.at(t, c);
                    best_t = t;
                }
            }
            dst[c] = best;
            if (tape) tape->argmax[static_cast<size_t>(o) * input.cols + c] = best_t;
        }
    }
    return out;
}

inline FeatureMap maxpool1d_backward(const MaxPoolTape& tape, const FeatureMap& dout) {
    FeatureMap dinput(tape.in_rows, dout.cols);
    for (int o = 0; o < dout.rows; ++o)
        for (int c = 0; c < dout.cols; ++c)
            dinput.at(tape.argmax[static_cast<size_t>(o) * dout.cols + c], c) += dout.at(o, c);
    return dinput;
}

// ---------------------------------------------------------------------------
// Row softmax (shift-by-max for stability)

inline FeatureMap softmax_rows(const FeatureMap& input) {
    FeatureMap out(input.rows, input.cols);
    for (int t = 0; t < input.rows; ++t) {
        const double* src = input.row(t);
        double* dst = out.row(t);
        double mx = src[0];
        for (int c = 1; c < input.cols; ++c) mx = std::max(mx, src[c]);
        double sum = 0.0;
        for (int c = 0; c < input.cols; ++c) {
            dst[c] = std::exp(src[c] - mx);
            sum += dst[c];
        }
        for (int c = 0; c < input.cols; ++c) dst[c] /= sum;
    }
    return out;
}

/// dS_ij = A_ij * (dA_ij - sum_j' A_ij' dA_ij'), computed from the output.
inline FeatureMap softmax_rows_backward(const FeatureMap& output, const FeatureMap& dout) {
    FeatureMap dinput(output.rows, output.cols);
    for (int t = 0; t < output.rows; ++t) {
        const double* a = output.row(t);
        const double* da = dout.row(t);
        double* ds = dinput.row(t);
        double dot = 0.0;
        for (int c = 0; c < output.cols; ++c) dot += a[c] * da[c];
        for (int c = 0; c < output.cols; ++c) ds[c] = a[c] * (da[c] - dot);
    }
    return dinput;
}

// ---------------------------------------------------------------------------
// Spectral normalization (power iteration, persisted u)

/// Persisted power-iteration vector for one (de)convolutional layer;
/// length equals the layer's output channel count.
struct SpectralState {
    std::vector<double> u;
};

inline void normalize_vector(std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n == 0.0) throw DegenerateKernel("spectral_normalize: zero vector in power iteration");
    for (double& x : v) x /= n;
}

inline SpectralState spectral_init(int out_channels, Rng& rng) {
    SpectralState s;
    s.u.resize(out_channels);
    for (double& x : s.u) x = rng.normal();
    normalize_vector(s.u);
    return s;
}

/// Matrix view of a conv kernel: rows = c_out, cols = width*c_in, with
/// W[q][j] = kernel[j*c_out + q]. Any fixed column order gives the same
/// singular values.
struct SpectralView {
    const std::vector<double>* kernel;
    int rows;  // c_out
    int cols;  // width*c_in

    double get(int q, int j) const { return (*kernel)[static_cast<size_t>(j) * rows + q]; }
};

inline SpectralView spectral_view(const ConvParams& p) {
    return SpectralView{&p.kernel, p.out_channels, p.width * p.in_channels};
}

/// v = normalize(W^T u); with u frozen, sigma = u^T W v = ||W^T u|| exactly,
/// which makes the gradient of W/sigma analytic (dsigma/dW = u v^T).
struct SpectralEstimate {
    double sigma = 0.0;
    std::vector<double> v;
};

inline SpectralEstimate spectral_estimate(const SpectralView& w, const SpectralState& state) {
    SpectralEstimate est;
    est.v.assign(w.cols, 0.0);
    for (int j = 0; j < w.cols; ++j) {
        const double* col = w.kernel->data() + static_cast<size_t>(j) * w.rows;
        double acc = 0.0;
        for (int q = 0; q < w.rows; ++q) acc += col[q] * state.u[q];
        est.v[j] = acc;
    }
    double norm = 0.0;
    for (double x : est.v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw DegenerateKernel("spectral_estimate: W^T u vanished (all-zero kernel?)");
    for (double& x : est.v) x /= norm;
    est.sigma = norm;
    return est;
}

/// One power-iteration step: v = normalize(W^T u), u = normalize(W v).
inline void spectral_power_step(const SpectralView& w, SpectralState& state) {
    SpectralEstimate est = spectral_estimate(w, state);
    std::vector<double> wu(w.rows, 0.0);
    for (int j = 0; j < w.cols; ++j) {
        const double* col = w.kernel->data() + static_cast<size_t>(j) * w.rows;
        double vj = est.v[j];
        for (int q = 0; q < w.rows; ++q) wu[q] += col[q] * vj;
    }
    normalize_vector(wu);
    state.u = std::move(wu);
}

/// Returns kernel / sigma; when `update` is set, first runs one power
/// iteration on the persisted u.
inline std::vector<double> spectral_normalize(const ConvParams& p, SpectralState& state,
                                              bool update, double* sigma_out = nullptr,
                                              std::vector<double>* v_out = nullptr) {
    SpectralView w = spectral_view(p);
    if (update) spectral_power_step(w, state);
    SpectralEstimate est = spectral_estimate(w, state);
    std::vector<double> normalized(p.kernel.size());
    for (size_t i = 0; i < p.kernel.size(); ++i) normalized[i] = p.kernel[i] / est.sigma;
    if (sigma_out) *sigma_out = est.sigma;
    if (v_out) *v_out = std::move(est.v);
    return normalized;
}

/// Maps the gradient w.r.t. the normalized kernel back to the raw kernel:
/// dW = (dWbar - <dWbar, Wbar> u v^T) / sigma, with <dWbar, Wbar> computed
/// from the raw kernel as <dWbar, W>/sigma.
inline void spectral_backward(const ConvParams& p, const SpectralState& state, double sigma,
                              const std::vector<double>& v, std::vector<double>& dkernel_io) {
    double dot = 0.0;
    for (size_t i = 0; i < p.kernel.size(); ++i) dot += dkernel_io[i] * p.kernel[i];
    dot /= sigma;
    const int rows = p.out_channels;
    const int cols = p.width * p.in_channels;
    for (int j = 0; j < cols; ++j) {
        double* dcol = dkernel_io.data() + static_cast<size_t>(j) * rows;
        double vj = v[j];
        for (int q = 0; q < rows; ++q)
            dcol[q] = (dcol[q] - dot * state.u[q] * vj) / sigma;
    }
}

// ---------------------------------------------------------------------------
// Virtual batch normalization

struct VbnState {
    std::vector<double> ref_mean;
    std::vector<double> ref_var;
    int n_ref = 0;
    bool initialized = false;
};

/// Per-channel statistics of a fixed reference batch (over all examples and
/// time steps).
inline VbnState vbn_collect_stats(const std::vector<FeatureMap>& ref_batch) {
    if (ref_batch.empty()) throw UninitializedState("vbn_collect_stats: empty reference batch");
    const int C = ref_batch[0].cols;
    VbnState st;
    st.ref_mean.assign(C, 0.0);
    st.ref_var.assign(C, 0.0);
    st.n_ref = static_cast<int>(ref_batch.size());
    st.initialized = true;
    size_t count = 0;
    for (const auto& m : ref_batch) {
        require_shape(m, m.rows, C, "vbn_collect_stats");
        count += static_cast<size_t>(m.rows);
        for (int t = 0; t < m.rows; ++t) {
            const double* src = m.row(t);
            for (int c = 0; c < C; ++c) st.ref_mean[c] += src[c];
        }
    }
    for (int c = 0; c < C; ++c) st.ref_mean[c] /= static_cast<double>(count);
    for (const auto& m : ref_batch)
        for (int t = 0; t < m.rows; ++t) {
            const double* src = m.row(t);
            for (int c = 0; c < C; ++c) {
                double d = src[c] - st.ref_mean[c];
                st.ref_var[c] += d * d;
            }
        }
    for (int c = 0; c < C; ++c) st.ref_var[c] /= static_cast<double>(count);
    return st;
}

struct VbnTape {
    FeatureMap input;
    std::vector<double> ex_mean;   // m, example's own per-channel mean
    std::vector<double> mu;        // combined mean
    std::vector<double> inv_std;   // 1/sqrt(v + eps)
    double w = 0.0;                // example weight 1/(n_ref+1); 0 at inference
};

/// Normalizes one example with reference statistics combined with the
/// example's own (example weighted 1/(n_ref+1)); at inference the reference
/// statistics are used alone.
inline FeatureMap vbn_apply(const FeatureMap& x, const VbnState& state,
                            const std::vector<double>& gamma, const std::vector<double>& beta,
                            bool training, VbnTape* tape = nullptr) {
    if (!state.initialized) throw UninitializedState("vbn_apply: state not initialized");
    const int C = x.cols;
    if (static_cast<int>(state.ref_mean.size()) != C)
        throw ShapeMismatch("vbn_apply: channel mismatch with reference statistics");
    const double w = training ? 1.0 / (state.n_ref + 1.0) : 0.0;

    std::vector<double> m(C, 0.0), s2(C, 0.0);
    if (training) {
        for (int t = 0; t < x.rows; ++t) {
            const double* src = x.row(t);
            for (int c = 0; c < C; ++c) m[c] += src[c];
        }
        for (int c = 0; c < C; ++c) m[c] /= x.rows;
        for (int t = 0; t < x.rows; ++t) {
            const double* src = x.row(t);
            for (int c = 0; c < C; ++c) {
                double d = src[c] - m[c];
                s2[c] += d * d;
            }
        }
        for (int c = 0; c < C; ++c) s2[c] /= x.rows;
    }

    std::vector<double> mu(C), inv(C);
    for (int c = 0; c < C; ++c) {
        mu[c] = w * m[c] + (1.0 - w) * state.ref_mean[c];
        double v = w * s2[c] + (1.0 - w) * state.ref_var[c];
        inv[c] = 1.0 / std::sqrt(v + kVbnEps);
    }

    FeatureMap out(x.rows, C);
    for (int t = 0; t < x.rows; ++t) {
        const double* src = x.row(t);
        double* dst = out.row(t);
        for (int c = 0; c < C; ++c)
            dst[c] = gamma[c] * (src[c] - mu[c]) * inv[c] + beta[c];
    }
    if (tape) {
        tape->input = x;
        tape->ex_mean = std::move(m);
        tape->mu = std::move(mu);
        tape->inv_std = std::move(inv);
        tape->w = w;
    }
    return out;
}

/// Gradients flow through the example's own statistics (weight w); the
/// reference statistics are constants of the step.
inline FeatureMap vbn_backward(const VbnTape& tape, const std::vector<double>& gamma,
                               const FeatureMap& dout, std::vector<double>& dgamma,
                               std::vector<double>& dbeta) {
    const FeatureMap& x = tape.input;
    const int L = x.rows, C = x.cols;
    const double w = tape.w;

    FeatureMap dinput(L, C);
    std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
    for (int t = 0; t < L; ++t) {
        const double* src = x.row(t);
        const double* dy = dout.row(t);
        for (int c = 0; c < C; ++c) {
            double xhat = (src[c] - tape.mu[c]) * tape.inv_std[c];
            double g = dy[c] * gamma[c];
            dgamma[c] += dy[c] * xhat;
            dbeta[c] += dy[c];
            sum_g[c] += g;
            sum_gx[c] += g * xhat;
        }
    }
    for (int t = 0; t < L; ++t) {
        const double* src = x.row(t);
        const double* dy = dout.row(t);
        double* dx = dinput.row(t);
        for (int c = 0; c < C; ++c) {
            double g = dy[c] * gamma[c];
            double inv = tape.inv_std[c];
            dx[c] = g * inv - (w / L) * inv * sum_g[c] -
                    (w / L) * (src[c] - tape.ex_mean[c]) * inv * inv * sum_gx[c];
        }
    }
    return dinput;
}

}  // namespace sasegan
