#pragma once

#include <random>

#include "core/types.hpp"
#include "core/cavi.hpp"

namespace sfa::test {

inline ModelState random_state(Index g, Index n, Index k, Rng& rng,
                               double active_prob = 0.7) {
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    ModelState s;
    s.l = Matrix::Zero(g, k);
    s.z = BoolMatrix::Zero(g, k);
    for (Index i = 0; i < g; ++i)
        for (Index kk = 0; kk < k; ++kk)
            if (unif(rng) < active_prob) {
                s.z(i, kk) = 1;
                s.l(i, kk) = stdnorm(rng);
            }
    s.f.resize(k, n);
    for (Index kk = 0; kk < k; ++kk)
        for (Index j = 0; j < n; ++j) s.f(kk, j) = stdnorm(rng);
    s.tau.resize(g);
    for (Index i = 0; i < g; ++i) s.tau[i] = 0.2 + 2.0 * unif(rng);
    s.alpha.resize(k);
    for (Index kk = 0; kk < k; ++kk) s.alpha[kk] = 0.2 + 2.0 * unif(rng);
    return s;
}

inline Dataset random_dataset(Index g, Index n, Rng& rng) {
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    Matrix y(g, n);
    for (Index i = 0; i < g; ++i)
        for (Index j = 0; j < n; ++j) y(i, j) = stdnorm(rng);
    return Dataset(std::move(y));
}

inline Hyperparameters default_hyper(Index k, double pi = 0.5) {
    Hyperparameters h;
    h.pi = Vector::Constant(k, pi);
    h.a_tau = 1.5;
    h.b_tau = 1.0;
    h.a_alpha = 2.0;
    h.b_alpha = 1.5;
    return h;
}

inline VariationalState random_vstate(Index g, Index n, Index k, Rng& rng) {
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.1, 0.9);
    VariationalState v;
    v.eta.resize(g, k);
    v.mu_l.resize(g, k);
    v.var_l.resize(g, k);
    v.mu_f.resize(k, n);
    v.var_f.resize(k, n);
    for (Index i = 0; i < g; ++i)
        for (Index kk = 0; kk < k; ++kk) {
            v.eta(i, kk) = unif(rng);
            v.mu_l(i, kk) = stdnorm(rng);
            v.var_l(i, kk) = 0.3 + unif(rng);
        }
    for (Index kk = 0; kk < k; ++kk)
        for (Index j = 0; j < n; ++j) {
            v.mu_f(kk, j) = stdnorm(rng);
            v.var_f(kk, j) = 0.3 + unif(rng);
        }
    v.a_tau_hat = Vector::Constant(g, 0.0);
    v.b_tau_hat = Vector::Constant(g, 0.0);
    v.a_alpha_hat = Vector::Constant(k, 0.0);
    v.b_alpha_hat = Vector::Constant(k, 0.0);
    for (Index i = 0; i < g; ++i) {
        v.a_tau_hat[i] = 1.0 + 2.0 * unif(rng);
        v.b_tau_hat[i] = 0.5 + unif(rng);
    }
    for (Index kk = 0; kk < k; ++kk) {
        v.a_alpha_hat[kk] = 1.0 + 2.0 * unif(rng);
        v.b_alpha_hat[kk] = 0.5 + unif(rng);
    }
    return v;
}

struct MonteCarloEstimate {
    double mean = 0.0;
    double std_error = 0.0;
};

template <typename Fn>
MonteCarloEstimate monte_carlo(std::size_t draws, Fn&& sample) {
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t t = 0; t < draws; ++t) {
        const double x = sample();
        sum += x;
        sumsq += x * x;
    }
    const double n = static_cast<double>(draws);
    MonteCarloEstimate est;
    est.mean = sum / n;
    const double var = (sumsq - sum * sum / n) / (n - 1.0);
    est.std_error = std::sqrt(var / n);
    return est;
}

}  // namespace sfa::test
