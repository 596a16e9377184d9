#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "core/types.hpp"
#include "core/gibbs.hpp"
#include "core/cavi.hpp"
#include "core/relabel.hpp"

namespace sfa {

enum class SummarySource { gibbs, cavi };

struct PosteriorSummary {
    Matrix mean_l;   // G x K
    Matrix mean_z;   // G x K, entries in [0, 1]
    Matrix mean_f;   // K x N
    Matrix mean_lf;  // G x N, E[LF]
    SummarySource source = SummarySource::gibbs;
};

// Elementwise averages over kept samples; mean_lf averages the per-sample
// products, which is the posterior mean of LF.
PosteriorSummary summarize(const SampleChain& chain);
// Variational means; under the mean-field factorisation E[LF] = E[L] E[F].
PosteriorSummary summarize(const VariationalState& v);

// Aligns the summary's factors to a ground-truth state by permutation and
// sign only (the truth's F serves as a unit-variance reference).
PosteriorSummary align_to_truth(const PosteriorSummary& summary,
                                const ModelState& truth);

// Proportion of correctly inferred connectivity entries after rounding the
// posterior means; ties at 0.5 round up.
double z_accuracy(const Matrix& mean_z, const BoolMatrix& true_z);

// sqrt(sum (est - truth)^2 / sum truth^2); equals 1 for the zero estimator.
double rrmse(const Matrix& estimate, const Matrix& truth);

struct EntryIndex {
    Index i;
    Index j;
    bool operator==(const EntryIndex&) const = default;
};

// Uniformly masks the requested fraction of currently-observed entries,
// guaranteeing every row and column keeps at least one observation.
std::pair<Dataset, std::vector<EntryIndex>> make_fill_in_split(
    const Dataset& data, double fraction, std::uint64_t seed);

// RRMSE of the predicted means on the held-out entries against their true
// values.
double fill_in_rrmse(const PosteriorSummary& summary, const Dataset& full_data,
                     const std::vector<EntryIndex>& heldout);

}  // namespace sfa
