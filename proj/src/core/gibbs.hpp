#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "core/types.hpp"
#include "core/rng.hpp"

namespace sfa {

struct ChainConfig {
    Index iterations = 0;
    Index burn_in = 0;
    Index thin = 1;
    std::uint64_t seed = 0;
    // When set, sampling starts from this state instead of a prior draw.
    std::optional<ModelState> init_state;
    // Progress hook: called after every snapshot_every kept samples (0 = off).
    Index snapshot_every = 0;

    void validate() const;
};

struct SampleChain {
    std::vector<ModelState> samples;
    std::vector<double> log_joints;
    ChainConfig config;
};

// Progress callback: kept-sample count so far and elapsed seconds. The chain
// passed in holds the samples kept so far.
using ChainProgress =
    std::function<void(const SampleChain& partial, double seconds)>;

// Per-row cached quantities for the collapsed z updates and the L draw:
// Gram matrix of F over the columns observed in this row and the projection
// of the observed data onto F.
struct RowContext {
    Matrix gram;   // K x K, F_o F_o^T
    Vector proj;   // K, F_o y_{i,o}
};

RowContext make_row_context(const ModelState& state, const Dataset& data,
                            Index i);

// Redraws z(i,k) from its collapsed conditional with the loadings row
// marginalised out. Requires ctx built from the current F for row i.
void sample_z_entry(ModelState& state, const Dataset& data,
                    const Hyperparameters& hyper, const RowContext& ctx,
                    Index i, Index k, Rng& rng);

// Conditional moments of the active loadings of row i (given Z, F, tau,
// alpha). Exposed for the sampler and for moment checks.
struct ActiveRowMoments {
    std::vector<Index> active;   // factor indices with z(i,k) == 1
    Matrix precision;            // |active| x |active|, inverse covariance
    Vector mean;
};

ActiveRowMoments active_row_moments(const ModelState& state,
                                    const RowContext& ctx, Index i);

void sample_l_rows(ModelState& state, const Dataset& data,
                   const Hyperparameters& hyper, Rng& rng);
void sample_f_cols(ModelState& state, const Dataset& data,
                   const Hyperparameters& hyper, Rng& rng);
void sample_tau(ModelState& state, const Dataset& data,
                const Hyperparameters& hyper, Rng& rng);
void sample_alpha(ModelState& state, const Hyperparameters& hyper, Rng& rng);

// One full sweep: all z entries row-major, then L, F, tau, alpha.
void gibbs_sweep(ModelState& state, const Dataset& data,
                 const Hyperparameters& hyper, Rng& rng);

ModelState prior_draw(const Dataset& data, const Hyperparameters& hyper,
                      Rng& rng);

SampleChain run_chain(const Dataset& data, const Hyperparameters& hyper,
                      const ChainConfig& config,
                      const ChainProgress& progress = nullptr);

// Shape-rate gamma draw (std::gamma_distribution is shape-scale).
double draw_gamma(double shape, double rate, Rng& rng);

}  // namespace sfa
