#pragma once

#include <cmath>
#include <functional>
#include <vector>

namespace sasegan {

/// Central finite differences against analytic gradients, one coordinate at
/// a time. `params[i]` points at the coordinate, `analytic[i]` is its
/// analytic gradient under the scalar loss `f`. Returns
/// max |analytic - numeric| / max(1, |numeric|).
inline double grad_check(const std::function<double()>& f, const std::vector<double*>& params,
                         const std::vector<double>& analytic, double eps = 1e-5) {
    double worst = 0.0;
    for (size_t i = 0; i < params.size(); ++i) {
        double saved = *params[i];
        *params[i] = saved + eps;
        double fp = f();
        *params[i] = saved - eps;
        double fm = f();
        *params[i] = saved;
        double numeric = (fp - fm) / (2.0 * eps);
        double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        worst = std::max(worst, rel);
    }
    return worst;
}

/// Convenience: every coordinate of a parameter array.
inline void append_coords(std::vector<double*>& out, std::vector<double>& values) {
    for (double& v : values) out.push_back(&v);
}

}  // namespace sasegan
