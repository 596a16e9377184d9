#include "core/model.hpp"

#include "core/densities.hpp"

namespace sfa {

double log_likelihood(const ModelState& state, const Dataset& data) {
    if (state.g() != data.g() || state.n() != data.n())
        fail("state dimensions do not match dataset");
    for (Index i = 0; i < state.g(); ++i)
        if (!(state.tau[i] > 0)) fail("tau entries must be strictly positive");

    const Matrix lf = state.l * state.f;
    double total = 0.0;
    for (Index i = 0; i < data.g(); ++i) {
        const double var = 1.0 / state.tau[i];
        for (Index j = 0; j < data.n(); ++j)
            if (data.observed(i, j))
                total += normal_logpdf(data.y(i, j), lf(i, j), var);
    }
    return total;
}

double log_joint(const ModelState& state, const Dataset& data,
                 const Hyperparameters& hyper) {
    state.check_spike_constraint();
    if (hyper.k() != state.k()) fail("hyperparameter pi length does not match K");

    double total = log_likelihood(state, data);
    for (Index i = 0; i < state.g(); ++i) {
        for (Index k = 0; k < state.k(); ++k) {
            const bool active = state.z(i, k) != 0;
            total += bernoulli_logpmf(active, hyper.pi[k]);
            if (active)
                total += normal_logpdf(state.l(i, k), 0.0, 1.0 / state.alpha[k]);
        }
        total += gamma_logpdf(state.tau[i], hyper.a_tau, hyper.b_tau);
    }
    for (Index k = 0; k < state.k(); ++k) {
        total += gamma_logpdf(state.alpha[k], hyper.a_alpha, hyper.b_alpha);
        for (Index j = 0; j < state.n(); ++j)
            total += normal_logpdf(state.f(k, j), 0.0, 1.0);
    }
    return total;
}

}  // namespace sfa
