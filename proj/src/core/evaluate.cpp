#include "core/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "core/rng.hpp"

namespace sfa {

PosteriorSummary summarize(const SampleChain& chain) {
    if (chain.samples.empty()) fail("cannot summarize an empty chain");
    const auto& first = chain.samples.front();
    PosteriorSummary s;
    s.source = SummarySource::gibbs;
    s.mean_l = Matrix::Zero(first.g(), first.k());
    s.mean_z = Matrix::Zero(first.g(), first.k());
    s.mean_f = Matrix::Zero(first.k(), first.n());
    s.mean_lf = Matrix::Zero(first.g(), first.n());
    for (const auto& state : chain.samples) {
        s.mean_l += state.l;
        s.mean_z += state.z.cast<double>();
        s.mean_f += state.f;
        s.mean_lf.noalias() += state.l * state.f;
    }
    const double t = static_cast<double>(chain.samples.size());
    s.mean_l /= t;
    s.mean_z /= t;
    s.mean_f /= t;
    s.mean_lf /= t;
    return s;
}

PosteriorSummary summarize(const VariationalState& v) {
    PosteriorSummary s;
    s.source = SummarySource::cavi;
    s.mean_l = v.eta.cwiseProduct(v.mu_l);
    s.mean_z = v.eta;
    s.mean_f = v.mu_f;
    s.mean_lf = s.mean_l * s.mean_f;
    return s;
}

PosteriorSummary align_to_truth(const PosteriorSummary& summary,
                                const ModelState& truth) {
    if (truth.k() != summary.mean_f.rows())
        fail("truth factor count does not match summary");
    Action action;
    action.m_f = truth.f;
    action.s2_f = Matrix::Ones(truth.f.rows(), truth.f.cols());
    const Relabelling r = assign_sample(action, summary.mean_f);

    PosteriorSummary aligned = summary;
    aligned.mean_f = apply_to_f(r, summary.mean_f);
    for (Index k = 0; k < truth.k(); ++k) {
        const Index src = r.sigma[k];
        const double sign = r.nu[src];
        aligned.mean_l.col(k) = sign * summary.mean_l.col(src);
        aligned.mean_z.col(k) = summary.mean_z.col(src);
    }
    // mean_lf is invariant under a joint factor relabelling
    return aligned;
}

double z_accuracy(const Matrix& mean_z, const BoolMatrix& true_z) {
    if (mean_z.rows() != true_z.rows() || mean_z.cols() != true_z.cols())
        fail("connectivity shapes do not match");
    Index correct = 0;
    for (Index i = 0; i < mean_z.rows(); ++i)
        for (Index k = 0; k < mean_z.cols(); ++k) {
            const int rounded = mean_z(i, k) >= 0.5 ? 1 : 0;
            correct += rounded == static_cast<int>(true_z(i, k));
        }
    return static_cast<double>(correct) /
           static_cast<double>(mean_z.size());
}

double rrmse(const Matrix& estimate, const Matrix& truth) {
    if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
        fail("estimate and truth shapes do not match");
    const double denom = truth.squaredNorm();
    if (denom == 0.0) fail("rrmse undefined for an all-zero truth");
    return std::sqrt((estimate - truth).squaredNorm() / denom);
}

std::pair<Dataset, std::vector<EntryIndex>> make_fill_in_split(
    const Dataset& data, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        fail("fill-in fraction must lie in (0, 1)");

    std::vector<EntryIndex> observed;
    for (Index i = 0; i < data.g(); ++i)
        for (Index j = 0; j < data.n(); ++j)
            if (data.observed(i, j)) observed.push_back({i, j});
    const auto count = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(observed.size())));
    if (count == 0 || count >= observed.size())
        fail("fill-in fraction leaves no held-out or no observed entries");

    Rng rng(seed);
    constexpr int kAttemptCap = 1000;
    for (int attempt = 0; attempt < kAttemptCap; ++attempt) {
        std::vector<EntryIndex> pool = observed;
        std::shuffle(pool.begin(), pool.end(), rng);
        std::vector<EntryIndex> heldout(pool.begin(),
                                        pool.begin() + static_cast<long>(count));

        BoolMatrix mask = data.mask;
        for (const auto& e : heldout) mask(e.i, e.j) = 0;
        bool ok = true;
        for (Index i = 0; ok && i < data.g(); ++i)
            ok = (mask.row(i).cast<int>().sum() > 0);
        for (Index j = 0; ok && j < data.n(); ++j)
            ok = (mask.col(j).cast<int>().sum() > 0);
        if (!ok) continue;  // resample the whole split

        return {Dataset(data.y, std::move(mask)), std::move(heldout)};
    }
    throw std::runtime_error(
        "fill-in split: could not satisfy the row/column retention constraint");
}

double fill_in_rrmse(const PosteriorSummary& summary, const Dataset& full_data,
                     const std::vector<EntryIndex>& heldout) {
    if (heldout.empty()) fail("held-out index list is empty");
    double num = 0.0, denom = 0.0;
    for (const auto& e : heldout) {
        const double truth = full_data.y(e.i, e.j);
        const double d = summary.mean_lf(e.i, e.j) - truth;
        num += d * d;
        denom += truth * truth;
    }
    if (denom == 0.0) fail("rrmse undefined: held-out truth is all zero");
    return std::sqrt(num / denom);
}

}  // namespace sfa
