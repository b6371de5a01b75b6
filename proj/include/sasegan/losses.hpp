#pragma once

#include <cmath>
#include <vector>

#include "sasegan/errors.hpp"

namespace sasegan {

constexpr double kDefaultLambdaL1 = 100.0;

/// 1/2 mean[(s_real - 1)^2] + 1/2 mean[s_fake^2].
inline double d_loss_from_scores(const std::vector<double>& real_scores,
                                 const std::vector<double>& fake_scores) {
    if (real_scores.empty() || fake_scores.empty())
        throw Error("d_loss: empty score batch");
    double a = 0.0, b = 0.0;
    for (double s : real_scores) a += (s - 1.0) * (s - 1.0);
    for (double s : fake_scores) b += s * s;
    return 0.5 * a / real_scores.size() + 0.5 * b / fake_scores.size();
}

/// 1/2 mean[(s_fake - 1)^2].
inline double g_adv_from_scores(const std::vector<double>& fake_scores) {
    if (fake_scores.empty()) throw Error("g_loss: empty score batch");
    double a = 0.0;
    for (double s : fake_scores) a += (s - 1.0) * (s - 1.0);
    return 0.5 * a / fake_scores.size();
}

/// Mean absolute error per element within a segment, averaged over the
/// batch (the L1 norm is per-element so lambda's scale is
/// length-independent).
inline double l1_term(const std::vector<std::vector<double>>& x_hat,
                      const std::vector<std::vector<double>>& x) {
    if (x_hat.size() != x.size() || x_hat.empty())
        throw Error("l1_term: batch size mismatch or empty");
    double total = 0.0;
    for (size_t i = 0; i < x_hat.size(); ++i) {
        if (x_hat[i].size() != x[i].size()) throw LengthMismatch("l1_term: segment lengths differ");
        double acc = 0.0;
        for (size_t t = 0; t < x[i].size(); ++t) acc += std::abs(x_hat[i][t] - x[i][t]);
        total += acc / static_cast<double>(x[i].size());
    }
    return total / static_cast<double>(x_hat.size());
}

/// Least-squares objective of D over a batch, with D given as a callable
/// score function D(a, b) -> real.
template <typename ScoreFn>
double d_loss(ScoreFn&& d, const std::vector<std::vector<double>>& x,
              const std::vector<std::vector<double>>& x_tilde,
              const std::vector<std::vector<double>>& x_hat) {
    std::vector<double> real, fake;
    for (size_t i = 0; i < x.size(); ++i) real.push_back(d(x[i], x_tilde[i]));
    for (size_t i = 0; i < x_hat.size(); ++i) fake.push_back(d(x_hat[i], x_tilde[i]));
    return d_loss_from_scores(real, fake);
}

/// Least-squares objective of G plus the lambda-weighted L1 term.
template <typename ScoreFn>
double g_loss(ScoreFn&& d, const std::vector<std::vector<double>>& x_hat,
              const std::vector<std::vector<double>>& x_tilde,
              const std::vector<std::vector<double>>& x, double lambda_l1) {
    std::vector<double> fake;
    for (size_t i = 0; i < x_hat.size(); ++i) fake.push_back(d(x_hat[i], x_tilde[i]));
    return g_adv_from_scores(fake) + lambda_l1 * l1_term(x_hat, x);
}

}  // namespace sasegan
