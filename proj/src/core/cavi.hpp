#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "core/types.hpp"
#include "core/rng.hpp"

namespace sfa {

// Mean-field variational parameters with the exact spike-and-slab factor
// q(l_ik, z_ik) = N(l | mu, var)^z * delta_0(l)^(1-z) * Bernoulli(z | eta).
struct VariationalState {
    Matrix eta;     // G x K, q(z_ik = 1)
    Matrix mu_l;    // G x K slab mean
    Matrix var_l;   // G x K slab variance, > 0
    Matrix mu_f;    // K x N
    Matrix var_f;   // K x N, > 0
    Vector a_tau_hat, b_tau_hat;      // length G
    Vector a_alpha_hat, b_alpha_hat;  // length K

    Index g() const { return eta.rows(); }
    Index k() const { return eta.cols(); }
    Index n() const { return mu_f.cols(); }

    double tau_mean(Index i) const { return a_tau_hat[i] / b_tau_hat[i]; }
    double alpha_mean(Index k) const { return a_alpha_hat[k] / b_alpha_hat[k]; }

    void validate() const;
};

struct CaviConfig {
    Index max_sweeps = 10000;
    double abs_tol = 1e-10;
    double rel_tol = 1e-14;
    Index elbo_every = 1;
    std::uint64_t seed = 0;
    std::optional<VariationalState> init_state;
    Index snapshot_every = 0;  // sweeps between progress callbacks (0 = off)

    void validate() const;
};

struct CaviResult {
    VariationalState state;
    std::vector<double> elbo_trace;
    bool converged = false;
    Index sweeps = 0;
    double seconds = 0.0;
};

using CaviProgress =
    std::function<void(const VariationalState& state, Index sweep, double elbo,
                       double seconds)>;

// Single-coordinate updates (Gauss-Seidel within a sweep).
void update_lz(VariationalState& v, const Dataset& data,
               const Hyperparameters& hyper, Index i, Index k);
void update_f(VariationalState& v, const Dataset& data,
              const Hyperparameters& hyper, Index k, Index j);
void update_tau(VariationalState& v, const Dataset& data,
                const Hyperparameters& hyper, Index i);
void update_alpha(VariationalState& v, const Hyperparameters& hyper, Index k);

double compute_elbo(const VariationalState& v, const Dataset& data,
                    const Hyperparameters& hyper);

// One full sweep: all (i,k) spike-and-slab updates, all (k,j) activation
// updates, all tau, all alpha.
void cavi_sweep(VariationalState& v, const Dataset& data,
                const Hyperparameters& hyper);

VariationalState random_init(const Dataset& data, const Hyperparameters& hyper,
                             Rng& rng);

CaviResult run_cavi(const Dataset& data, const Hyperparameters& hyper,
                    const CaviConfig& config,
                    const CaviProgress& progress = nullptr);

struct MultiTrialResult {
    CaviResult best;
    Index best_index = 0;
    std::vector<std::vector<double>> all_traces;
    std::vector<double> final_elbos;
    std::vector<double> trial_seconds;
};

// Runs `trials` independent CAVI instances with seeds derived from
// config.seed and returns the one with the largest converged ELBO (ties break
// toward the lowest index). With early_stop_sweeps > 0, every trial runs for
// that sweep budget first and only the leader is run to convergence.
MultiTrialResult run_multi_trial(const Dataset& data,
                                 const Hyperparameters& hyper,
                                 const CaviConfig& config, Index trials,
                                 Index early_stop_sweeps = 0, int threads = 1,
                                 const CaviProgress& progress = nullptr);

}  // namespace sfa
