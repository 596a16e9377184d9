#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/densities.hpp"
#include "core/gibbs.hpp"
#include "core/model.hpp"
#include "helpers.hpp"

using namespace sfa;

namespace {

// Quadrature oracle for the K=1 collapsed inclusion probability: integrate
// the loading out numerically instead of using the closed-form weight.
double quadrature_p_active(const ModelState& state, const Dataset& data,
                           const Hyperparameters& hyper, Index i) {
    const double tau = state.tau[i];
    const double alpha = state.alpha[0];
    auto loglik_given_l = [&](double l) {
        double total = 0.0;
        for (Index j = 0; j < data.n(); ++j) {
            if (!data.observed(i, j)) continue;
            total += normal_logpdf(data.y(i, j), l * state.f(0, j), 1.0 / tau);
        }
        return total;
    };
    // wide trapezoid over the slab; integrand decays like a Gaussian
    const double half_width = 12.0 / std::sqrt(alpha) + 12.0;
    const int points = 40001;
    const double h = 2.0 * half_width / (points - 1);
    double integral = 0.0;
    for (int t = 0; t < points; ++t) {
        const double l = -half_width + t * h;
        const double val =
            std::exp(normal_logpdf(l, 0.0, 1.0 / alpha) + loglik_given_l(l));
        integral += (t == 0 || t == points - 1) ? 0.5 * val : val;
    }
    integral *= h;
    const double w1 = hyper.pi[0] * integral;
    const double w0 = (1.0 - hyper.pi[0]) * std::exp(loglik_given_l(0.0));
    return w1 / (w1 + w0);
}

// Marginal likelihood of one row under active set S via the N x N observation
// covariance (1/tau) I + F_S^T A_S^{-1} F_S — an independent route to the
// collapsed weights, which work in the K x K precision instead.
double mvn_row_logml(const ModelState& state, const Dataset& data, Index i,
                     const std::vector<Index>& active) {
    std::vector<Index> obs;
    for (Index j = 0; j < data.n(); ++j)
        if (data.observed(i, j)) obs.push_back(j);
    const Index n = static_cast<Index>(obs.size());
    Matrix cov = Matrix::Zero(n, n);
    for (Index a = 0; a < n; ++a) cov(a, a) = 1.0 / state.tau[i];
    for (const Index k : active)
        for (Index a = 0; a < n; ++a)
            for (Index c = 0; c < n; ++c)
                cov(a, c) +=
                    state.f(k, obs[a]) * state.f(k, obs[c]) / state.alpha[k];
    Vector y(n);
    for (Index a = 0; a < n; ++a) y[a] = data.y(i, obs[a]);
    Eigen::LLT<Matrix> llt(cov);
    double logdet = 0.0;
    for (Index a = 0; a < n; ++a) logdet += 2.0 * std::log(llt.matrixL()(a, a));
    return -0.5 * (n * log_2pi + logdet + y.dot(llt.solve(y)));
}

double empirical_p_active(const ModelState& base, const Dataset& data,
                          const Hyperparameters& hyper, Index i, Index k,
                          int draws, Rng& rng) {
    const RowContext ctx = make_row_context(base, data, i);
    int ones = 0;
    for (int t = 0; t < draws; ++t) {
        ModelState s = base;
        sample_z_entry(s, data, hyper, ctx, i, k, rng);
        ones += s.z(i, k);
    }
    return static_cast<double>(ones) / draws;
}

}  // namespace

TEST_CASE("collapsed z update matches the quadrature oracle at K=1") {
    Rng rng(101);
    ModelState state = test::random_state(1, 5, 1, rng);
    state.z(0, 0) = 0;
    state.l(0, 0) = 0.0;
    Dataset data = test::random_dataset(1, 5, rng);
    data.mask(0, 3) = 0;  // exercise the observed-entry restriction
    const auto hyper = test::default_hyper(1, 0.4);

    const double oracle = quadrature_p_active(state, data, hyper, 0);
    const int draws = 40000;
    const double freq =
        empirical_p_active(state, data, hyper, 0, 0, draws, rng);
    const double se = std::sqrt(oracle * (1.0 - oracle) / draws);
    CHECK(std::abs(freq - oracle) <= 4.0 * se + 1e-4);
}

TEST_CASE("zero data reduces the inclusion odds to the Occam factor") {
    // With y = 0 the collapsed odds are pi sqrt(alpha / (tau g + alpha)) to
    // (1 - pi), where g is the Gram scalar of the activations.
    Rng rng(103);
    ModelState state = test::random_state(1, 6, 1, rng);
    Dataset data(Matrix::Zero(1, 6));
    const auto hyper = test::default_hyper(1, 0.35);

    const double gram = state.f.row(0).squaredNorm();
    const double alpha = state.alpha[0];
    const double tau = state.tau[0];
    const double w1 =
        hyper.pi[0] * std::sqrt(alpha / (tau * gram + alpha));
    const double expected = w1 / (w1 + 1.0 - hyper.pi[0]);
    CHECK(expected ==
          doctest::Approx(quadrature_p_active(state, data, hyper, 0))
              .epsilon(1e-6));

    const int draws = 40000;
    const double freq =
        empirical_p_active(state, data, hyper, 0, 0, draws, rng);
    const double se = std::sqrt(expected * (1.0 - expected) / draws);
    CHECK(std::abs(freq - expected) <= 4.0 * se + 1e-4);
}

TEST_CASE("collapsed z update matches the covariance-form oracle at K=2") {
    Rng rng(105);
    ModelState state = test::random_state(1, 4, 2, rng);
    state.z(0, 1) = 1;  // companion factor active throughout
    const Dataset data = test::random_dataset(1, 4, rng);
    const auto hyper = test::default_hyper(2, 0.5);

    const double lw1 = std::log(hyper.pi[0]) +
                       mvn_row_logml(state, data, 0, {0, 1});
    const double lw0 = std::log1p(-hyper.pi[0]) +
                       mvn_row_logml(state, data, 0, {1});
    const double oracle = logistic(lw1 - lw0);

    const int draws = 40000;
    const double freq =
        empirical_p_active(state, data, hyper, 0, 0, draws, rng);
    const double se = std::sqrt(oracle * (1.0 - oracle) / draws);
    CHECK(std::abs(freq - oracle) <= 4.0 * se + 1e-4);
}

TEST_CASE("pi = 1 forces the connectivity on deterministically") {
    Rng rng(107);
    ModelState state = test::random_state(2, 3, 1, rng);
    state.z.setZero();
    state.l.setZero();
    const Dataset data = test::random_dataset(2, 3, rng);
    const auto hyper = test::default_hyper(1, 1.0);
    const RowContext ctx = make_row_context(state, data, 0);
    sample_z_entry(state, data, hyper, ctx, 0, 0, rng);
    CHECK(state.z(0, 0) == 1);
}

TEST_CASE("active row moments solve the masked normal equations") {
    Rng rng(109);
    ModelState state = test::random_state(1, 6, 3, rng);
    state.z(0, 0) = 1;
    state.z(0, 1) = 0;
    state.z(0, 2) = 1;
    Dataset data = test::random_dataset(1, 6, rng);
    data.mask(0, 2) = 0;
    const RowContext ctx = make_row_context(state, data, 0);
    const auto mom = active_row_moments(state, ctx, 0);
    REQUIRE(mom.active == std::vector<Index>{0, 2});

    // independent scalar-loop assembly of tau F_o F_o^T + diag(alpha) and rhs
    const double tau = state.tau[0];
    Matrix prec = Matrix::Zero(2, 2);
    Vector rhs = Vector::Zero(2);
    prec(0, 0) = state.alpha[0];
    prec(1, 1) = state.alpha[2];
    for (Index j = 0; j < 6; ++j) {
        if (!data.observed(0, j)) continue;
        const double f0 = state.f(0, j), f2 = state.f(2, j);
        prec(0, 0) += tau * f0 * f0;
        prec(0, 1) += tau * f0 * f2;
        prec(1, 0) += tau * f2 * f0;
        prec(1, 1) += tau * f2 * f2;
        rhs[0] += tau * f0 * data.y(0, j);
        rhs[1] += tau * f2 * data.y(0, j);
    }
    CHECK((mom.precision - prec).cwiseAbs().maxCoeff() < 1e-12);
    const Vector mean = prec.llt().solve(rhs);
    CHECK((mom.mean - mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("loading row draws have the conditional mean and covariance") {
    Rng rng(111);
    ModelState base = test::random_state(1, 8, 2, rng);
    base.z.setOnes();
    const Dataset data = test::random_dataset(1, 8, rng);
    const auto hyper = test::default_hyper(2);

    const RowContext ctx = make_row_context(base, data, 0);
    const auto mom = active_row_moments(base, ctx, 0);
    const Matrix cov = mom.precision.inverse();

    const int draws = 60000;
    Vector mean_acc = Vector::Zero(2);
    Matrix second_acc = Matrix::Zero(2, 2);
    for (int t = 0; t < draws; ++t) {
        ModelState s = base;
        sample_l_rows(s, data, hyper, rng);
        const Vector l = s.l.row(0).transpose();
        mean_acc += l;
        second_acc += l * l.transpose();
    }
    mean_acc /= draws;
    const Matrix cov_hat =
        second_acc / draws - mean_acc * mean_acc.transpose();
    for (Index a = 0; a < 2; ++a) {
        const double se = std::sqrt(cov(a, a) / draws);
        CHECK(std::abs(mean_acc[a] - mom.mean[a]) <= 4.0 * se);
        for (Index c = 0; c < 2; ++c)
            CHECK(cov_hat(a, c) == doctest::Approx(cov(a, c)).epsilon(0.05));
    }
}

TEST_CASE("inactive loadings stay pinned at zero through the L draw") {
    Rng rng(113);
    ModelState state = test::random_state(4, 5, 3, rng);
    const Dataset data = test::random_dataset(4, 5, rng);
    sample_l_rows(state, data, test::default_hyper(3), rng);
    for (Index i = 0; i < 4; ++i)
        for (Index k = 0; k < 3; ++k)
            if (!state.z(i, k)) CHECK(state.l(i, k) == 0.0);
    state.check_spike_constraint();
}

TEST_CASE("activation column draws have the conjugate regression moments") {
    Rng rng(115);
    ModelState base = test::random_state(5, 1, 2, rng);
    const Dataset data = test::random_dataset(5, 1, rng);
    const auto hyper = test::default_hyper(2);

    Matrix prec = Matrix::Identity(2, 2);
    Vector rhs = Vector::Zero(2);
    for (Index i = 0; i < 5; ++i) {
        const Vector l = base.l.row(i).transpose();
        prec += base.tau[i] * l * l.transpose();
        rhs += base.tau[i] * data.y(i, 0) * l;
    }
    const Vector mean = prec.llt().solve(rhs);
    const Matrix cov = prec.inverse();

    const int draws = 60000;
    Vector mean_acc = Vector::Zero(2);
    Matrix second_acc = Matrix::Zero(2, 2);
    for (int t = 0; t < draws; ++t) {
        ModelState s = base;
        sample_f_cols(s, data, hyper, rng);
        const Vector f = s.f.col(0);
        mean_acc += f;
        second_acc += f * f.transpose();
    }
    mean_acc /= draws;
    const Matrix cov_hat =
        second_acc / draws - mean_acc * mean_acc.transpose();
    for (Index a = 0; a < 2; ++a) {
        const double se = std::sqrt(cov(a, a) / draws);
        CHECK(std::abs(mean_acc[a] - mean[a]) <= 4.0 * se);
        for (Index c = 0; c < 2; ++c)
            CHECK(cov_hat(a, c) == doctest::Approx(cov(a, c)).epsilon(0.05));
    }
}

TEST_CASE("noise precision draws follow the conjugate gamma") {
    Rng rng(117);
    ModelState base = test::random_state(2, 6, 2, rng);
    Dataset data = test::random_dataset(2, 6, rng);
    data.mask(0, 1) = 0;
    const auto hyper = test::default_hyper(2);

    const Matrix lf = base.l * base.f;
    for (Index i = 0; i < 2; ++i) {
        double ss = 0.0;
        int n_obs = 0;
        for (Index j = 0; j < 6; ++j) {
            if (!data.observed(i, j)) continue;
            const double r = data.y(i, j) - lf(i, j);
            ss += r * r;
            ++n_obs;
        }
        const double shape = hyper.a_tau + 0.5 * n_obs;
        const double rate = hyper.b_tau + 0.5 * ss;
        const auto est = test::monte_carlo(40000, [&] {
            ModelState s = base;
            sample_tau(s, data, hyper, rng);
            return s.tau[i];
        });
        CHECK(std::abs(est.mean - shape / rate) <= 4.0 * est.std_error);
    }
}

TEST_CASE("slab precision draws follow the conjugate gamma") {
    Rng rng(119);
    ModelState base = test::random_state(6, 3, 2, rng);
    const auto hyper = test::default_hyper(2);

    for (Index k = 0; k < 2; ++k) {
        double ss = 0.0;
        double count = 0.0;
        for (Index i = 0; i < 6; ++i)
            if (base.z(i, k)) {
                count += 1.0;
                ss += base.l(i, k) * base.l(i, k);
            }
        const double shape = hyper.a_alpha + 0.5 * count;
        const double rate = hyper.b_alpha + 0.5 * ss;
        const auto est = test::monte_carlo(40000, [&] {
            ModelState s = base;
            sample_alpha(s, hyper, rng);
            return s.alpha[k];
        });
        CHECK(std::abs(est.mean - shape / rate) <= 4.0 * est.std_error);
    }
}

TEST_CASE("draw_gamma is parameterised shape-rate") {
    Rng rng(121);
    const auto est =
        test::monte_carlo(60000, [&] { return draw_gamma(3.0, 4.0, rng); });
    CHECK(std::abs(est.mean - 0.75) <= 4.0 * est.std_error);
}

TEST_CASE("large tau pins the loadings to the least-squares solution") {
    Rng rng(123);
    ModelState state = test::random_state(1, 6, 2, rng);
    state.z.setOnes();
    state.tau[0] = 1e10;
    const Dataset data = test::random_dataset(1, 6, rng);
    const RowContext ctx = make_row_context(state, data, 0);
    const auto mom = active_row_moments(state, ctx, 0);
    const Vector ls = ctx.gram.llt().solve(ctx.proj);
    CHECK((mom.mean - ls).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("run_chain is bit-reproducible and applies the keep rule") {
    Rng rng(125);
    const Dataset data = test::random_dataset(6, 5, rng);
    const auto hyper = test::default_hyper(2, 0.5);
    ChainConfig config;
    config.iterations = 10;
    config.burn_in = 4;
    config.thin = 2;
    config.seed = 77;

    const auto a = run_chain(data, hyper, config);
    const auto b = run_chain(data, hyper, config);
    CHECK(a.samples.size() == 3);  // iterations 6, 8, 10
    CHECK(a.log_joints.size() == 3);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t t = 0; t < a.samples.size(); ++t) {
        CHECK(a.samples[t].l == b.samples[t].l);
        CHECK(a.samples[t].f == b.samples[t].f);
        CHECK(a.log_joints[t] == b.log_joints[t]);
    }
    for (std::size_t t = 0; t < a.samples.size(); ++t)
        CHECK(a.log_joints[t] ==
              doctest::Approx(log_joint(a.samples[t], data, hyper))
                  .epsilon(1e-12));
}

TEST_CASE("zero iterations yields an empty chain") {
    Rng rng(127);
    const Dataset data = test::random_dataset(3, 3, rng);
    ChainConfig config;
    config.iterations = 0;
    const auto chain = run_chain(data, test::default_hyper(2), config);
    CHECK(chain.samples.empty());
    CHECK(chain.log_joints.empty());
}

TEST_CASE("run_chain starts from init_state when provided") {
    Rng rng(129);
    const Dataset data = test::random_dataset(4, 4, rng);
    const auto hyper = test::default_hyper(2);
    ChainConfig config;
    config.iterations = 1;
    config.burn_in = 0;
    config.seed = 3;
    config.init_state = test::random_state(4, 4, 2, rng);
    const auto a = run_chain(data, hyper, config);
    const auto b = run_chain(data, hyper, config);
    CHECK(a.samples.front().f == b.samples.front().f);

    auto bad = config;
    bad.init_state = test::random_state(4, 4, 3, rng);
    CHECK_THROWS_AS(run_chain(data, hyper, bad), std::invalid_argument);
}

TEST_CASE("progress callback fires at the snapshot cadence") {
    Rng rng(131);
    const Dataset data = test::random_dataset(3, 3, rng);
    ChainConfig config;
    config.iterations = 7;
    config.snapshot_every = 3;
    std::vector<std::size_t> kept_at_call;
    run_chain(data, test::default_hyper(1), config,
              [&](const SampleChain& partial, double) {
                  kept_at_call.push_back(partial.samples.size());
              });
    CHECK(kept_at_call == std::vector<std::size_t>{3, 6, 7});
}

TEST_CASE("invalid chain configs are rejected") {
    ChainConfig config;
    config.iterations = -1;
    CHECK_THROWS_AS(config.validate(), std::invalid_argument);
    config.iterations = 5;
    config.thin = 0;
    CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}

TEST_CASE("Geweke-style joint distribution check on a tiny model") {
    // Compare prior-only forward draws against successive-conditional draws
    // (Gibbs sweep followed by data regeneration); the two Markov chains share
    // the joint, so low-order statistics must agree.
    const Index G = 2, N = 4, K = 1;
    Hyperparameters hyper;
    hyper.pi = Vector::Constant(K, 0.5);
    hyper.a_tau = 3.0;
    hyper.b_tau = 3.0;
    hyper.a_alpha = 3.0;
    hyper.b_alpha = 3.0;

    Rng rng(133);
    const int forward_draws = 6000;
    double fz = 0.0, ftau = 0.0, ff2 = 0.0;
    const Dataset shape_only(Matrix::Zero(G, N));
    for (int t = 0; t < forward_draws; ++t) {
        const auto s = prior_draw(shape_only, hyper, rng);
        fz += s.z.cast<double>().mean();
        ftau += s.tau.mean();
        ff2 += s.f.array().square().mean();
    }
    fz /= forward_draws;
    ftau /= forward_draws;
    ff2 /= forward_draws;

    auto regenerate = [&](Dataset& data, const ModelState& s, Rng& r) {
        std::normal_distribution<double> stdnorm(0.0, 1.0);
        const Matrix lf = s.l * s.f;
        for (Index i = 0; i < G; ++i)
            for (Index j = 0; j < N; ++j)
                data.y(i, j) = lf(i, j) + stdnorm(r) / std::sqrt(s.tau[i]);
    };

    ModelState state = prior_draw(shape_only, hyper, rng);
    Dataset data(Matrix::Zero(G, N));
    regenerate(data, state, rng);
    const int burn = 500, keep = 12000;
    double gz = 0.0, gtau = 0.0, gf2 = 0.0;
    for (int t = 0; t < burn + keep; ++t) {
        gibbs_sweep(state, data, hyper, rng);
        regenerate(data, state, rng);
        if (t >= burn) {
            gz += state.z.cast<double>().mean();
            gtau += state.tau.mean();
            gf2 += state.f.array().square().mean();
        }
    }
    gz /= keep;
    gtau /= keep;
    gf2 /= keep;

    // loose bounds: successive draws are autocorrelated
    CHECK(std::abs(gz - fz) < 0.03);
    CHECK(std::abs(gtau - ftau) < 0.06);
    CHECK(std::abs(gf2 - ff2) < 0.08);
}
