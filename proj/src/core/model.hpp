#pragma once

#include "core/types.hpp"

namespace sfa {

// Log-likelihood of the observed entries under independent normal errors with
// feature-specific precision. Masked entries contribute nothing.
double log_likelihood(const ModelState& state, const Dataset& data);

// Log joint density: likelihood plus log-priors for active loadings, Z, alpha,
// F and tau. Point-mass terms for inactive loadings are omitted by convention;
// every consumer of the joint uses the same convention.
double log_joint(const ModelState& state, const Dataset& data,
                 const Hyperparameters& hyper);

}  // namespace sfa
