#pragma once

#include <cmath>
#include <numbers>

namespace sfa {

inline constexpr double log_2pi = 1.8378770664093454835606594728112;

inline double normal_logpdf(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * (log_2pi + std::log(var) + d * d / var);
}

// Shape-rate parametrisation.
inline double gamma_logpdf(double x, double shape, double rate) {
    return shape * std::log(rate) - std::lgamma(shape) +
           (shape - 1.0) * std::log(x) - rate * x;
}

inline double bernoulli_logpmf(bool x, double p) {
    if (x) return std::log(p);
    return std::log1p(-p);
}

inline double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace sfa
