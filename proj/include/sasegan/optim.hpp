#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "sasegan/errors.hpp"

namespace sasegan {

/// Per-parameter running mean-square accumulators, keyed by parameter name.
struct OptimState {
    std::unordered_map<std::string, std::vector<double>> acc;

    std::vector<double>& slot(const std::string& name, size_t n) {
        auto it = acc.find(name);
        if (it == acc.end()) it = acc.emplace(name, std::vector<double>(n, 0.0)).first;
        if (it->second.size() != n) throw ShapeMismatch("optimizer state shape changed: " + name);
        return it->second;
    }
};

/// acc <- decay*acc + (1-decay)*g^2; param <- param - lr*g/sqrt(acc + eps).
inline void rmsprop_step(const std::string& name, double* params, const double* grads, size_t n,
                         OptimState& state, double lr, double decay, double eps) {
    std::vector<double>& a = state.slot(name, n);
    for (size_t i = 0; i < n; ++i) {
        double g = grads[i];
        a[i] = decay * a[i] + (1.0 - decay) * g * g;
        params[i] -= lr * g / std::sqrt(a[i] + eps);
    }
}

}  // namespace sasegan
