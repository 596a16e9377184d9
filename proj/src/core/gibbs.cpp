#include "core/gibbs.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "core/densities.hpp"
#include "core/model.hpp"

namespace sfa {

void ChainConfig::validate() const {
    if (iterations < 0) fail("iterations must be nonnegative");
    if (burn_in < 0) fail("burn_in must be nonnegative");
    if (thin < 1) fail("thin must be >= 1");
    if (snapshot_every < 0) fail("snapshot_every must be nonnegative");
    if (init_state) init_state->validate();
}

double draw_gamma(double shape, double rate, Rng& rng) {
    std::gamma_distribution<double> dist(shape, 1.0 / rate);
    // Vague priors (shape ~ 1e-3) put real mass at scales like e^{-1000},
    // which underflows to an exact zero and breaks the precision algebra
    // downstream. Clamp to a huge-but-finite range instead.
    return std::clamp(dist(rng), 1e-100, 1e100);
}

RowContext make_row_context(const ModelState& state, const Dataset& data,
                            Index i) {
    const Index k = state.k();
    RowContext ctx;
    ctx.gram = Matrix::Zero(k, k);
    ctx.proj = Vector::Zero(k);
    for (Index j = 0; j < data.n(); ++j) {
        if (!data.observed(i, j)) continue;
        const auto fcol = state.f.col(j);
        ctx.gram.noalias() += fcol * fcol.transpose();
        ctx.proj.noalias() += data.y(i, j) * fcol;
    }
    return ctx;
}

namespace {

// Active-set part of the collapsed z weight:
//   -1/2 logdet(M) + 1/2 tau^2 b_S^T M^{-1} b_S,
// where M = tau * gram[S,S] + diag(alpha[S]) is the precision of the
// marginalised loadings row.
double collapsed_active_term(const std::vector<Index>& active,
                             const RowContext& ctx, double tau,
                             const Vector& alpha, Index i, Index k_ctx) {
    const Index m = static_cast<Index>(active.size());
    if (m == 0) return 0.0;
    Matrix prec(m, m);
    Vector b(m);
    for (Index a = 0; a < m; ++a) {
        b[a] = ctx.proj[active[a]];
        for (Index c = 0; c < m; ++c)
            prec(a, c) = tau * ctx.gram(active[a], active[c]);
        prec(a, a) += alpha[active[a]];
    }
    Eigen::LLT<Matrix> llt(prec);
    if (llt.info() != Eigen::Success) {
        std::ostringstream os;
        os << "collapsed z update: singular active-set precision at row " << i
           << ", factor " << k_ctx;
        throw std::runtime_error(os.str());
    }
    double logdet = 0.0;
    for (Index a = 0; a < m; ++a) logdet += std::log(llt.matrixL()(a, a));
    logdet *= 2.0;
    const Vector solved = llt.solve(b);
    const double quad = tau * tau * b.dot(solved);
    return -0.5 * logdet + 0.5 * quad;
}

std::vector<Index> active_set(const ModelState& state, Index i) {
    std::vector<Index> active;
    for (Index k = 0; k < state.k(); ++k)
        if (state.z(i, k)) active.push_back(k);
    return active;
}

}  // namespace

void sample_z_entry(ModelState& state, const Dataset& data,
                    const Hyperparameters& hyper, const RowContext& ctx,
                    Index i, Index k, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double pi_k = hyper.pi[k];
    if (pi_k >= 1.0) {
        state.z(i, k) = 1;
        return;
    }

    std::vector<Index> without;
    std::vector<Index> with;
    for (Index kk = 0; kk < state.k(); ++kk) {
        if (kk == k) continue;
        if (state.z(i, kk)) without.push_back(kk);
    }
    with = without;
    with.insert(std::lower_bound(with.begin(), with.end(), k), k);

    const double tau = state.tau[i];
    const double lw0 = collapsed_active_term(without, ctx, tau, state.alpha, i, k) +
                       std::log1p(-pi_k);
    // The sqrt(alpha_k / 2pi) prior factor meets a (2pi)^{1/2} from the extra
    // integrated-out loading, leaving sqrt(alpha_k) in the odds.
    const double lw1 = collapsed_active_term(with, ctx, tau, state.alpha, i, k) +
                       0.5 * std::log(state.alpha[k]) + std::log(pi_k);
    const double p1 = logistic(lw1 - lw0);
    const bool newz = unif(rng) < p1;
    state.z(i, k) = newz ? 1 : 0;
    if (!newz) state.l(i, k) = 0.0;  // keep the spike constraint tight
}

ActiveRowMoments active_row_moments(const ModelState& state,
                                    const RowContext& ctx, Index i) {
    ActiveRowMoments mom;
    mom.active = active_set(state, i);
    const Index m = static_cast<Index>(mom.active.size());
    mom.precision.resize(m, m);
    Vector b(m);
    const double tau = state.tau[i];
    for (Index a = 0; a < m; ++a) {
        b[a] = ctx.proj[mom.active[a]];
        for (Index c = 0; c < m; ++c)
            mom.precision(a, c) = tau * ctx.gram(mom.active[a], mom.active[c]);
        mom.precision(a, a) += state.alpha[mom.active[a]];
    }
    if (m > 0) {
        Eigen::LLT<Matrix> llt(mom.precision);
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("loading row draw: singular precision");
        mom.mean = tau * llt.solve(b);
    } else {
        mom.mean.resize(0);
    }
    return mom;
}

namespace {

// Draws x ~ N(mean, P^{-1}) given the precision P via its Cholesky factor.
Vector draw_gaussian_from_precision(const Vector& mean, const Matrix& precision,
                                    Rng& rng) {
    const Index m = mean.size();
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    Vector noise(m);
    for (Index a = 0; a < m; ++a) noise[a] = stdnorm(rng);
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("gaussian draw: precision not positive definite");
    // cov = P^{-1} = L^{-T} L^{-1}, so L^{-T} noise has the right covariance
    return mean + llt.matrixU().solve(noise);
}

}  // namespace

void sample_l_rows(ModelState& state, const Dataset& data,
                   const Hyperparameters& hyper, Rng& rng) {
    (void)hyper;
    for (Index i = 0; i < state.g(); ++i) {
        const RowContext ctx = make_row_context(state, data, i);
        const ActiveRowMoments mom = active_row_moments(state, ctx, i);
        state.l.row(i).setZero();
        if (mom.active.empty()) continue;
        const Vector draw = draw_gaussian_from_precision(mom.mean, mom.precision, rng);
        for (std::size_t a = 0; a < mom.active.size(); ++a)
            state.l(i, mom.active[a]) = draw[static_cast<Index>(a)];
    }
}

void sample_f_cols(ModelState& state, const Dataset& data,
                   const Hyperparameters& hyper, Rng& rng) {
    (void)hyper;
    const Index k = state.k();
    for (Index j = 0; j < data.n(); ++j) {
        Matrix prec = Matrix::Identity(k, k);
        Vector rhs = Vector::Zero(k);
        for (Index i = 0; i < data.g(); ++i) {
            if (!data.observed(i, j)) continue;
            const auto lrow = state.l.row(i).transpose();
            prec.noalias() += state.tau[i] * lrow * lrow.transpose();
            rhs.noalias() += state.tau[i] * data.y(i, j) * lrow;
        }
        Eigen::LLT<Matrix> llt(prec);
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("activation column draw: singular precision");
        const Vector mean = llt.solve(rhs);
        std::normal_distribution<double> stdnorm(0.0, 1.0);
        Vector noise(k);
        for (Index a = 0; a < k; ++a) noise[a] = stdnorm(rng);
        state.f.col(j) = mean + llt.matrixU().solve(noise);
    }
}

void sample_tau(ModelState& state, const Dataset& data,
                const Hyperparameters& hyper, Rng& rng) {
    const Matrix lf = state.l * state.f;
    for (Index i = 0; i < state.g(); ++i) {
        double ss = 0.0;
        Index n_obs = 0;
        for (Index j = 0; j < data.n(); ++j) {
            if (!data.observed(i, j)) continue;
            const double r = data.y(i, j) - lf(i, j);
            ss += r * r;
            ++n_obs;
        }
        state.tau[i] = draw_gamma(hyper.a_tau + 0.5 * static_cast<double>(n_obs),
                                  hyper.b_tau + 0.5 * ss, rng);
    }
}

void sample_alpha(ModelState& state, const Hyperparameters& hyper, Rng& rng) {
    for (Index k = 0; k < state.k(); ++k) {
        double count = 0.0;
        double ss = 0.0;
        for (Index i = 0; i < state.g(); ++i) {
            if (!state.z(i, k)) continue;
            count += 1.0;
            ss += state.l(i, k) * state.l(i, k);
        }
        state.alpha[k] = draw_gamma(hyper.a_alpha + 0.5 * count,
                                    hyper.b_alpha + 0.5 * ss, rng);
    }
}

void gibbs_sweep(ModelState& state, const Dataset& data,
                 const Hyperparameters& hyper, Rng& rng) {
    for (Index i = 0; i < state.g(); ++i) {
        const RowContext ctx = make_row_context(state, data, i);
        for (Index k = 0; k < state.k(); ++k)
            sample_z_entry(state, data, hyper, ctx, i, k, rng);
    }
    sample_l_rows(state, data, hyper, rng);
    sample_f_cols(state, data, hyper, rng);
    sample_tau(state, data, hyper, rng);
    sample_alpha(state, hyper, rng);
}

ModelState prior_draw(const Dataset& data, const Hyperparameters& hyper,
                      Rng& rng) {
    const Index g = data.g();
    const Index n = data.n();
    const Index k = hyper.k();
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    ModelState state;
    state.alpha.resize(k);
    for (Index kk = 0; kk < k; ++kk)
        state.alpha[kk] = draw_gamma(hyper.a_alpha, hyper.b_alpha, rng);
    state.tau.resize(g);
    for (Index i = 0; i < g; ++i)
        state.tau[i] = draw_gamma(hyper.a_tau, hyper.b_tau, rng);
    state.z = BoolMatrix::Zero(g, k);
    state.l = Matrix::Zero(g, k);
    for (Index i = 0; i < g; ++i)
        for (Index kk = 0; kk < k; ++kk)
            if (unif(rng) < hyper.pi[kk]) {
                state.z(i, kk) = 1;
                state.l(i, kk) = stdnorm(rng) / std::sqrt(state.alpha[kk]);
            }
    state.f.resize(k, n);
    for (Index kk = 0; kk < k; ++kk)
        for (Index j = 0; j < n; ++j) state.f(kk, j) = stdnorm(rng);
    return state;
}

SampleChain run_chain(const Dataset& data, const Hyperparameters& hyper,
                      const ChainConfig& config, const ChainProgress& progress) {
    config.validate();
    hyper.validate();
    Rng rng(config.seed);

    ModelState state =
        config.init_state ? *config.init_state : prior_draw(data, hyper, rng);
    if (state.g() != data.g() || state.n() != data.n() || state.k() != hyper.k())
        fail("initial state dimensions do not match data/hyperparameters");

    SampleChain chain;
    chain.config = config;
    const auto start = std::chrono::steady_clock::now();
    for (Index t = 1; t <= config.iterations; ++t) {
        try {
            gibbs_sweep(state, data, hyper, rng);
        } catch (const std::runtime_error& e) {
            std::ostringstream os;
            os << "gibbs iteration " << t << ": " << e.what();
            throw std::runtime_error(os.str());
        }
        if (t > config.burn_in && (t - config.burn_in) % config.thin == 0) {
            chain.samples.push_back(state);
            chain.log_joints.push_back(log_joint(state, data, hyper));
            if (progress && config.snapshot_every > 0 &&
                static_cast<Index>(chain.samples.size()) % config.snapshot_every == 0) {
                const double secs =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                  start)
                        .count();
                progress(chain, secs);
            }
        }
    }
    if (progress && config.snapshot_every > 0 && !chain.samples.empty() &&
        static_cast<Index>(chain.samples.size()) % config.snapshot_every != 0) {
        const double secs = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - start)
                                .count();
        progress(chain, secs);
    }
    return chain;
}

}  // namespace sfa
