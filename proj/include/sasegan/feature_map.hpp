#pragma once

#include <cassert>
#include <cmath>
#include <vector>

#include "sasegan/errors.hpp"

namespace sasegan {

/// Real-valued L x C array (time steps x channels), row-major. The unit of
/// all layer I/O.
struct FeatureMap {
    int rows = 0;  // L, time steps
    int cols = 0;  // C, channels
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int L, int C) : rows(L), cols(C), data(static_cast<size_t>(L) * C, 0.0) {
        assert(L >= 0 && C >= 0);
    }

    double& at(int t, int c) { return data[static_cast<size_t>(t) * cols + c]; }
    double at(int t, int c) const { return data[static_cast<size_t>(t) * cols + c]; }

    double* row(int t) { return data.data() + static_cast<size_t>(t) * cols; }
    const double* row(int t) const { return data.data() + static_cast<size_t>(t) * cols; }

    size_t size() const { return data.size(); }

    bool same_shape(const FeatureMap& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void require_shape(const FeatureMap& m, int rows, int cols, const char* what) {
    if (m.rows != rows || m.cols != cols)
        throw ShapeMismatch(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", got " + std::to_string(m.rows) + "x" +
                            std::to_string(m.cols));
}

/// Channel-wise concatenation [a | b]; rows must match.
inline FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
    if (a.rows != b.rows)
        throw ShapeMismatch("concat_channels: row mismatch");
    FeatureMap out(a.rows, a.cols + b.cols);
    for (int t = 0; t < a.rows; ++t) {
        double* dst = out.row(t);
        const double* pa = a.row(t);
        const double* pb = b.row(t);
        for (int c = 0; c < a.cols; ++c) dst[c] = pa[c];
        for (int c = 0; c < b.cols; ++c) dst[a.cols + c] = pb[c];
    }
    return out;
}

/// Splits the channel gradient of concat_channels back into its two parts.
inline void split_channels(const FeatureMap& m, FeatureMap& a, FeatureMap& b, int cols_a) {
    a = FeatureMap(m.rows, cols_a);
    b = FeatureMap(m.rows, m.cols - cols_a);
    for (int t = 0; t < m.rows; ++t) {
        const double* src = m.row(t);
        for (int c = 0; c < cols_a; ++c) a.at(t, c) = src[c];
        for (int c = 0; c < m.cols - cols_a; ++c) b.at(t, c) = src[cols_a + c];
    }
}

}  // namespace sasegan
