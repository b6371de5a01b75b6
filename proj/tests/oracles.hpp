// Test-only reference implementations, written independently of the library
// code paths they check: direct-sum convolution, an element-wise attention
// layer, a window-scan max pool, and a dense SVD (Eigen) for spectral norms.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "sasegan/feature_map.hpp"
#include "sasegan/nn.hpp"

namespace oracles {

using sasegan::FeatureMap;

/// Direct triple-loop strided cross-correlation with the same padding rule.
inline FeatureMap naive_conv1d(const FeatureMap& x, const sasegan::ConvParams& p) {
    int L = x.rows;
    int out_len = (L + p.stride - 1) / p.stride;
    int total_pad = std::max((out_len - 1) * p.stride + p.width - L, 0);
    int left = total_pad / 2;
    FeatureMap y(out_len, p.out_channels);
    for (int o = 0; o < out_len; ++o)
        for (int co = 0; co < p.out_channels; ++co) {
            double acc = p.bias[co];
            for (int w = 0; w < p.width; ++w)
                for (int ci = 0; ci < p.in_channels; ++ci) {
                    int t = o * p.stride + w - left;
                    if (t < 0 || t >= L) continue;
                    acc += x.at(t, ci) * p.kernel[(static_cast<size_t>(w) * p.in_channels + ci) *
                                                      p.out_channels +
                                                  co];
                }
            y.at(o, co) = acc;
        }
    return y;
}

/// Window-scan max pool.
inline FeatureMap naive_maxpool(const FeatureMap& x, int p) {
    int out_len = (x.rows + p - 1) / p;
    FeatureMap y(out_len, x.cols);
    for (int o = 0; o < out_len; ++o)
        for (int c = 0; c < x.cols; ++c) {
            double best = -1e300;
            for (int t = o * p; t < std::min((o + 1) * p, x.rows); ++t)
                best = std::max(best, x.at(t, c));
            y.at(o, c) = best;
        }
    return y;
}

/// Element-wise self-attention: explicit sums only, own softmax.
struct NaiveAttentionResult {
    FeatureMap f_tilde;
    FeatureMap attn;
};

inline NaiveAttentionResult naive_attention(const FeatureMap& f, const std::vector<double>& wq,
                                            const std::vector<double>& wk,
                                            const std::vector<double>& wv,
                                            const std::vector<double>& wo, double beta, int k,
                                            int p) {
    const int L = f.rows, C = f.cols, r = C / k;
    auto proj = [&](const std::vector<double>& w) {
        FeatureMap out(L, r);
        for (int t = 0; t < L; ++t)
            for (int j = 0; j < r; ++j) {
                double acc = 0.0;
                for (int c = 0; c < C; ++c) acc += f.at(t, c) * w[static_cast<size_t>(c) * r + j];
                out.at(t, j) = acc;
            }
        return out;
    };
    FeatureMap q = proj(wq), kr = proj(wk), vr = proj(wv);
    FeatureMap kbar = naive_maxpool(kr, p), vbar = naive_maxpool(vr, p);
    const int pp = kbar.rows;

    FeatureMap attn(L, pp);
    for (int i = 0; i < L; ++i) {
        std::vector<double> s(pp);
        double mx = -1e300;
        for (int j = 0; j < pp; ++j) {
            double acc = 0.0;
            for (int c = 0; c < r; ++c) acc += q.at(i, c) * kbar.at(j, c);
            s[j] = acc;
            mx = std::max(mx, acc);
        }
        double z = 0.0;
        for (int j = 0; j < pp; ++j) z += std::exp(s[j] - mx);
        for (int j = 0; j < pp; ++j) attn.at(i, j) = std::exp(s[j] - mx) / z;
    }

    NaiveAttentionResult out;
    out.attn = attn;
    out.f_tilde = FeatureMap(L, C);
    for (int i = 0; i < L; ++i)
        for (int c = 0; c < C; ++c) {
            double o_ic = 0.0;
            for (int e = 0; e < r; ++e) {
                double m = 0.0;
                for (int j = 0; j < pp; ++j) m += attn.at(i, j) * vbar.at(j, e);
                o_ic += m * wo[static_cast<size_t>(e) * C + c];
            }
            out.f_tilde.at(i, c) = beta * o_ic + f.at(i, c);
        }
    return out;
}

/// Largest singular value of a conv kernel viewed as c_out x (width*c_in).
inline double svd_top_singular(const sasegan::ConvParams& p) {
    int rows = p.out_channels, cols = p.width * p.in_channels;
    Eigen::MatrixXd w(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int q = 0; q < rows; ++q) w(q, j) = p.kernel[static_cast<size_t>(j) * rows + q];
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w);
    return svd.singularValues()(0);
}

}  // namespace oracles
