#include "core/relabel.hpp"

#include <cmath>
#include <limits>

#include "core/densities.hpp"

namespace sfa {

Relabelling Relabelling::identity(Index k) {
    Relabelling r;
    r.sigma.resize(k);
    r.nu.assign(k, 1);
    for (Index i = 0; i < k; ++i) r.sigma[i] = i;
    return r;
}

Relabelling Relabelling::inverse() const {
    const Index k = static_cast<Index>(sigma.size());
    Relabelling inv;
    inv.sigma.resize(k);
    inv.nu.assign(k, 1);
    for (Index i = 0; i < k; ++i) {
        inv.sigma[sigma[i]] = i;
        inv.nu[i] = nu[sigma[i]];
    }
    return inv;
}

double loss(const Action& action, const Relabelling& r, const Matrix& f) {
    const Index K = f.rows(), N = f.cols();
    if (action.m_f.rows() != K || action.m_f.cols() != N)
        fail("action shape does not match sample shape");
    double total = 0.0;
    for (Index k = 0; k < K; ++k) {
        const Index src = r.sigma[k];
        const double sign = r.nu[src];
        for (Index j = 0; j < N; ++j)
            total -= normal_logpdf(sign * f(src, j), action.m_f(k, j),
                                   action.s2_f(k, j));
    }
    return total;
}

Matrix apply_to_f(const Relabelling& r, const Matrix& f) {
    Matrix out(f.rows(), f.cols());
    for (Index k = 0; k < f.rows(); ++k)
        out.row(k) = static_cast<double>(r.nu[r.sigma[k]]) * f.row(r.sigma[k]);
    return out;
}

void apply_to_state(const Relabelling& r, ModelState& state) {
    const Index K = state.k();
    Matrix l(state.l.rows(), K);
    Matrix f(K, state.f.cols());
    BoolMatrix z(state.z.rows(), K);
    Vector alpha(K);
    for (Index k = 0; k < K; ++k) {
        const Index src = r.sigma[k];
        const double sign = r.nu[src];
        l.col(k) = sign * state.l.col(src);
        f.row(k) = sign * state.f.row(src);
        z.col(k) = state.z.col(src);
        alpha[k] = state.alpha[src];
    }
    state.l = std::move(l);
    state.f = std::move(f);
    state.z = std::move(z);
    state.alpha = std::move(alpha);
}

Action update_action(const std::vector<Matrix>& samples,
                     const std::vector<Relabelling>& relabellings) {
    if (samples.empty()) fail("update_action requires at least one sample");
    if (samples.size() != relabellings.size())
        fail("sample and relabelling counts differ");
    const Index K = samples.front().rows(), N = samples.front().cols();
    const double t = static_cast<double>(samples.size());

    Action action;
    action.m_f = Matrix::Zero(K, N);
    action.s2_f = Matrix::Zero(K, N);
    for (std::size_t s = 0; s < samples.size(); ++s)
        action.m_f += apply_to_f(relabellings[s], samples[s]);
    action.m_f /= t;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const Matrix d = apply_to_f(relabellings[s], samples[s]) - action.m_f;
        action.s2_f += d.cwiseProduct(d);
    }
    action.s2_f /= t;
    action.s2_f = action.s2_f.cwiseMax(kVarianceFloor);
    return action;
}

std::vector<Index> solve_assignment(const Matrix& cost) {
    // Shortest augmenting path with potentials (Jonker-Volgenant style).
    const Index n = cost.rows();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<Index> match(n + 1, n);  // match[col] = row, n = unmatched
    for (Index row = 0; row < n; ++row) {
        std::vector<double> dist(n + 1, inf);
        std::vector<Index> prev(n + 1, n);
        std::vector<bool> used(n + 1, false);
        Index j0 = n;
        match[n] = row;
        do {
            used[j0] = true;
            const Index r = match[j0];
            double best = inf;
            Index j1 = n;
            for (Index j = 0; j < n; ++j) {
                if (used[j]) continue;
                const double reduced = cost(r, j) - u[r] - v[j];
                if (reduced < dist[j]) {
                    dist[j] = reduced;
                    prev[j] = j0;
                }
                if (dist[j] < best) {
                    best = dist[j];
                    j1 = j;
                }
            }
            for (Index j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += best;
                    v[j] -= best;
                } else {
                    dist[j] -= best;
                }
            }
            j0 = j1;
        } while (match[j0] != n);
        while (j0 != n) {
            const Index j1 = prev[j0];
            match[j0] = match[j1];
            j0 = j1;
        }
    }
    std::vector<Index> row_to_col(n);
    for (Index j = 0; j < n; ++j)
        if (match[j] != n) row_to_col[match[j]] = j;
    return row_to_col;
}

Relabelling assign_sample(const Action& action, const Matrix& f) {
    const Index K = f.rows(), N = f.cols();
    Matrix cost(K, K);
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> sign(K, K);
    for (Index k = 0; k < K; ++k) {
        for (Index src = 0; src < K; ++src) {
            double plus = 0.0, minus = 0.0;
            for (Index j = 0; j < N; ++j) {
                plus -= normal_logpdf(f(src, j), action.m_f(k, j), action.s2_f(k, j));
                minus -=
                    normal_logpdf(-f(src, j), action.m_f(k, j), action.s2_f(k, j));
            }
            if (plus <= minus) {  // ties break toward the positive sign
                cost(k, src) = plus;
                sign(k, src) = 1;
            } else {
                cost(k, src) = minus;
                sign(k, src) = -1;
            }
        }
    }

    const std::vector<Index> slot_to_src = solve_assignment(cost);
    double total = 0.0;
    for (Index k = 0; k < K; ++k) total += cost(k, slot_to_src[k]);

    // equal-cost solutions resolve toward the identity permutation
    double identity_total = 0.0;
    for (Index k = 0; k < K; ++k) identity_total += cost(k, k);

    Relabelling r;
    r.sigma.resize(K);
    r.nu.assign(K, 1);
    const bool use_identity = identity_total <= total;
    for (Index k = 0; k < K; ++k) {
        const Index src = use_identity ? k : slot_to_src[k];
        r.sigma[k] = src;
        r.nu[src] = sign(k, src);
    }
    return r;
}

double monte_carlo_risk(const Action& action,
                        const std::vector<Relabelling>& relabellings,
                        const std::vector<Matrix>& samples) {
    double total = 0.0;
    for (std::size_t s = 0; s < samples.size(); ++s)
        total += loss(action, relabellings[s], samples[s]);
    return total;
}

RelabelResult relabel_chains(std::vector<SampleChain>& chains, bool normalize,
                             Index max_iterations) {
    if (chains.empty()) fail("relabel_chains requires at least one chain");
    const Index K = chains.front().samples.empty()
                        ? 0
                        : chains.front().samples.front().k();
    std::vector<Matrix> fs;
    for (const auto& chain : chains)
        for (const auto& state : chain.samples) {
            if (state.k() != K) fail("chains disagree on factor count");
            Matrix f = state.f;
            if (normalize)
                for (Index k = 0; k < K; ++k) {
                    const double norm = f.row(k).norm();
                    if (norm > 0.0) f.row(k) /= norm;
                }
            fs.push_back(std::move(f));
        }
    if (fs.empty()) fail("relabel_chains requires at least one sample");

    RelabelResult result;
    result.relabellings.assign(fs.size(), Relabelling::identity(K));
    for (Index it = 0; it < max_iterations; ++it) {
        const Action action = update_action(fs, result.relabellings);
        bool changed = false;
        for (std::size_t s = 0; s < fs.size(); ++s) {
            Relabelling r = assign_sample(action, fs[s]);
            if (!(r == result.relabellings[s])) changed = true;
            result.relabellings[s] = std::move(r);
        }
        result.risk_trace.push_back(
            monte_carlo_risk(action, result.relabellings, fs));
        result.iterations = it + 1;
        if (!changed) {
            result.converged = true;
            break;
        }
    }

    std::size_t s = 0;
    for (auto& chain : chains)
        for (auto& state : chain.samples)
            apply_to_state(result.relabellings[s++], state);
    return result;
}

}  // namespace sfa
