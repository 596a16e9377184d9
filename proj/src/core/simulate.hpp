#pragma once

#include <cstdint>
#include <utility>

#include "core/types.hpp"

namespace sfa {

struct SimulationSpec {
    Index g = 0;
    Index n = 0;
    Index k = 0;
    Vector pi;          // length k, entries in (0, 1]
    double snr = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Reference configuration used throughout the synthetic studies:
// G=800, N=100, K=6, pi=(0.075, 0.15, 0.25, 0.375, 0.5, 1).
SimulationSpec reference_spec(double snr, std::uint64_t seed);

// Draws Z ~ Bernoulli(pi_k), active loadings and all activations standard
// normal, then sets the noise precision of each feature to snr divided by the
// sample variance of that feature's row of LF. Rows whose signal variance is
// zero are redrawn up to a retry cap. Deterministic given the seed.
std::pair<Dataset, ModelState> simulate(const SimulationSpec& spec);

// Sample variance with the 1/(n-1) denominator.
double sample_variance(const Eigen::Ref<const Eigen::RowVectorXd>& row);

}  // namespace sfa
