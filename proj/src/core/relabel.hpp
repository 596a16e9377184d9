#pragma once

#include <vector>

#include "core/types.hpp"
#include "core/gibbs.hpp"

namespace sfa {

// Reference means and variances for the entries of F; the "action" of the
// decision-theoretic alignment.
struct Action {
    Matrix m_f;    // K x N
    Matrix s2_f;   // K x N, strictly positive (floored)
};

// A joint factor permutation and sign assignment. Row k of the relabelled
// sample is nu[sigma[k]] * f.row(sigma[k]); columns of L/Z and entries of
// alpha move the same way.
struct Relabelling {
    std::vector<Index> sigma;  // permutation of 0..K-1
    std::vector<int> nu;       // +1 / -1 per source factor

    static Relabelling identity(Index k);
    Relabelling inverse() const;
    bool operator==(const Relabelling&) const = default;
};

inline constexpr double kVarianceFloor = 1e-12;

// Negative log-density loss of one relabelled sample against the action.
double loss(const Action& action, const Relabelling& r, const Matrix& f);

Matrix apply_to_f(const Relabelling& r, const Matrix& f);
void apply_to_state(const Relabelling& r, ModelState& state);

// Per-cell mean and biased (1/T) variance of the relabelled samples,
// with the variance floored away from zero.
Action update_action(const std::vector<Matrix>& samples,
                     const std::vector<Relabelling>& relabellings);

// Exact linear assignment over permutations and signs for one sample.
Relabelling assign_sample(const Action& action, const Matrix& f);

// Minimum-cost perfect matching on a square cost matrix; returns for each row
// the assigned column. Shortest augmenting path, O(K^3).
std::vector<Index> solve_assignment(const Matrix& cost);

double monte_carlo_risk(const Action& action,
                        const std::vector<Relabelling>& relabellings,
                        const std::vector<Matrix>& samples);

struct RelabelResult {
    // One relabelling per sample, chains concatenated in order.
    std::vector<Relabelling> relabellings;
    // Monte Carlo risk after each alternation (action update + assignment).
    std::vector<double> risk_trace;
    Index iterations = 0;
    bool converged = false;
};

// Joint alignment of all samples across chains: alternates the action update
// and per-sample assignment until the relabellings reach a fixed point or the
// iteration cap. With normalize set, each row of F is scaled to unit norm for
// the alignment computation only; outputs keep the original scale.
RelabelResult relabel_chains(std::vector<SampleChain>& chains, bool normalize,
                             Index max_iterations = 100);

}  // namespace sfa
