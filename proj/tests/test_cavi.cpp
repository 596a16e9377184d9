#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/cavi.hpp"
#include "core/densities.hpp"
#include "core/gibbs.hpp"  // draw_gamma
#include "core/model.hpp"
#include "helpers.hpp"

using namespace sfa;

namespace {

// Scalar-loop oracle for E_q[(y_ij - l_i.^T f_.j)^2] summed over the observed
// columns of row i, written directly from the moment decomposition.
double residual_expectation_oracle(const VariationalState& v,
                                   const Dataset& data, Index i) {
    double total = 0.0;
    for (Index j = 0; j < data.n(); ++j) {
        if (!data.observed(i, j)) continue;
        const double y = data.y(i, j);
        double mean_pred = 0.0;
        double second = 0.0;
        for (Index k = 0; k < v.k(); ++k) {
            const double m = v.eta(i, k) * v.mu_l(i, k) * v.mu_f(k, j);
            mean_pred += m;
            for (Index kp = 0; kp < v.k(); ++kp) {
                if (k == kp)
                    second += v.eta(i, k) *
                              (v.mu_l(i, k) * v.mu_l(i, k) + v.var_l(i, k)) *
                              (v.mu_f(k, j) * v.mu_f(k, j) + v.var_f(k, j));
                else
                    second += v.eta(i, k) * v.eta(i, kp) * v.mu_l(i, k) *
                              v.mu_l(i, kp) * v.mu_f(k, j) * v.mu_f(kp, j);
            }
        }
        total += y * y - 2.0 * y * mean_pred + second;
    }
    return total;
}

// log q(theta) for one draw from the mean-field family; the point-mass factor
// is omitted exactly as in log_joint.
double log_q(const VariationalState& v, const ModelState& s) {
    double total = 0.0;
    for (Index i = 0; i < v.g(); ++i)
        for (Index k = 0; k < v.k(); ++k) {
            if (s.z(i, k))
                total += std::log(v.eta(i, k)) +
                         normal_logpdf(s.l(i, k), v.mu_l(i, k), v.var_l(i, k));
            else
                total += std::log1p(-v.eta(i, k));
        }
    for (Index k = 0; k < v.k(); ++k)
        for (Index j = 0; j < v.n(); ++j)
            total += normal_logpdf(s.f(k, j), v.mu_f(k, j), v.var_f(k, j));
    for (Index i = 0; i < v.g(); ++i)
        total += gamma_logpdf(s.tau[i], v.a_tau_hat[i], v.b_tau_hat[i]);
    for (Index k = 0; k < v.k(); ++k)
        total += gamma_logpdf(s.alpha[k], v.a_alpha_hat[k], v.b_alpha_hat[k]);
    return total;
}

ModelState draw_from_q(const VariationalState& v, Rng& rng) {
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    ModelState s;
    s.l = Matrix::Zero(v.g(), v.k());
    s.z = BoolMatrix::Zero(v.g(), v.k());
    for (Index i = 0; i < v.g(); ++i)
        for (Index k = 0; k < v.k(); ++k)
            if (unif(rng) < v.eta(i, k)) {
                s.z(i, k) = 1;
                s.l(i, k) =
                    v.mu_l(i, k) + std::sqrt(v.var_l(i, k)) * stdnorm(rng);
            }
    s.f.resize(v.k(), v.n());
    for (Index k = 0; k < v.k(); ++k)
        for (Index j = 0; j < v.n(); ++j)
            s.f(k, j) = v.mu_f(k, j) + std::sqrt(v.var_f(k, j)) * stdnorm(rng);
    s.tau.resize(v.g());
    for (Index i = 0; i < v.g(); ++i)
        s.tau[i] = draw_gamma(v.a_tau_hat[i], v.b_tau_hat[i], rng);
    s.alpha.resize(v.k());
    for (Index k = 0; k < v.k(); ++k)
        s.alpha[k] = draw_gamma(v.a_alpha_hat[k], v.b_alpha_hat[k], rng);
    return s;
}

}  // namespace

TEST_CASE("ELBO matches the Monte Carlo estimate of E_q[log p - log q]") {
    Rng rng(201);
    const auto v = test::random_vstate(2, 3, 2, rng);
    const auto data = test::random_dataset(2, 3, rng);
    const auto hyper = test::default_hyper(2, 0.4);

    const double elbo = compute_elbo(v, data, hyper);
    const auto est = test::monte_carlo(200000, [&] {
        const auto s = draw_from_q(v, rng);
        return log_joint(s, data, hyper) - log_q(v, s);
    });
    CHECK(std::abs(est.mean - elbo) <= 4.0 * est.std_error);
}

TEST_CASE("tau update matches the scalar residual-moment oracle") {
    Rng rng(203);
    auto v = test::random_vstate(3, 5, 2, rng);
    Dataset data = test::random_dataset(3, 5, rng);
    data.mask(1, 2) = 0;
    const auto hyper = test::default_hyper(2);

    for (Index i = 0; i < 3; ++i) {
        const double oracle = residual_expectation_oracle(v, data, i);
        Index n_obs = 0;
        for (Index j = 0; j < 5; ++j) n_obs += data.observed(i, j) ? 1 : 0;
        update_tau(v, data, hyper, i);
        CHECK(v.a_tau_hat[i] ==
              doctest::Approx(hyper.a_tau + 0.5 * n_obs).epsilon(1e-14));
        CHECK(v.b_tau_hat[i] ==
              doctest::Approx(hyper.b_tau + 0.5 * oracle).epsilon(1e-12));
    }
}

TEST_CASE("alpha update matches the responsibility-weighted moments") {
    Rng rng(205);
    auto v = test::random_vstate(4, 3, 2, rng);
    const auto hyper = test::default_hyper(2);

    double eta_sum = 0.0, moment = 0.0;
    for (Index i = 0; i < 4; ++i) {
        eta_sum += v.eta(i, 1);
        moment +=
            v.eta(i, 1) * (v.var_l(i, 1) + v.mu_l(i, 1) * v.mu_l(i, 1));
    }
    update_alpha(v, hyper, 1);
    CHECK(v.a_alpha_hat[1] ==
          doctest::Approx(hyper.a_alpha + 0.5 * eta_sum).epsilon(1e-14));
    CHECK(v.b_alpha_hat[1] ==
          doctest::Approx(hyper.b_alpha + 0.5 * moment).epsilon(1e-13));
}

TEST_CASE("each coordinate update maximises the ELBO along its coordinate") {
    Rng rng(207);
    auto v = test::random_vstate(3, 4, 2, rng);
    const auto data = test::random_dataset(3, 4, rng);
    const auto hyper = test::default_hyper(2, 0.45);

    auto probe_not_better = [&](const VariationalState& base,
                                auto&& mutate) {
        const double at_opt = compute_elbo(base, data, hyper);
        for (const double eps : {1e-3, -1e-3}) {
            VariationalState probe = base;
            mutate(probe, eps);
            CHECK(compute_elbo(probe, data, hyper) <=
                  at_opt + 1e-10 * std::abs(at_opt));
        }
    };

    update_lz(v, data, hyper, 1, 0);
    probe_not_better(v, [](VariationalState& s, double e) { s.mu_l(1, 0) += e; });
    probe_not_better(v, [](VariationalState& s, double e) {
        s.var_l(1, 0) *= 1.0 + e;
    });
    probe_not_better(v, [](VariationalState& s, double e) {
        s.eta(1, 0) = std::clamp(s.eta(1, 0) + e, 1e-6, 1.0 - 1e-6);
    });

    update_f(v, data, hyper, 1, 2);
    probe_not_better(v, [](VariationalState& s, double e) { s.mu_f(1, 2) += e; });
    probe_not_better(v, [](VariationalState& s, double e) {
        s.var_f(1, 2) *= 1.0 + e;
    });

    update_tau(v, data, hyper, 2);
    probe_not_better(v, [](VariationalState& s, double e) {
        s.a_tau_hat[2] *= 1.0 + e;
    });
    probe_not_better(v, [](VariationalState& s, double e) {
        s.b_tau_hat[2] *= 1.0 + e;
    });

    update_alpha(v, hyper, 0);
    probe_not_better(v, [](VariationalState& s, double e) {
        s.a_alpha_hat[0] *= 1.0 + e;
    });
    probe_not_better(v, [](VariationalState& s, double e) {
        s.b_alpha_hat[0] *= 1.0 + e;
    });
}

TEST_CASE("coordinate updates are idempotent") {
    // No update reads its own coordinate, so a repeat must be an exact no-op.
    Rng rng(209);
    auto v = test::random_vstate(3, 4, 2, rng);
    const auto data = test::random_dataset(3, 4, rng);
    const auto hyper = test::default_hyper(2, 0.3);

    update_lz(v, data, hyper, 0, 1);
    auto w = v;
    update_lz(w, data, hyper, 0, 1);
    CHECK(w.mu_l == v.mu_l);
    CHECK(w.var_l == v.var_l);
    CHECK(w.eta == v.eta);

    update_f(v, data, hyper, 0, 2);
    w = v;
    update_f(w, data, hyper, 0, 2);
    CHECK(w.mu_f == v.mu_f);
    CHECK(w.var_f == v.var_f);

    update_tau(v, data, hyper, 1);
    w = v;
    update_tau(w, data, hyper, 1);
    CHECK(w.b_tau_hat == v.b_tau_hat);

    update_alpha(v, hyper, 0);
    w = v;
    update_alpha(w, hyper, 0);
    CHECK(w.b_alpha_hat == v.b_alpha_hat);
}

TEST_CASE("pi = 1 clamps the responsibility to one") {
    Rng rng(211);
    auto v = test::random_vstate(2, 3, 1, rng);
    const auto data = test::random_dataset(2, 3, rng);
    const auto hyper = test::default_hyper(1, 1.0);
    update_lz(v, data, hyper, 0, 0);
    CHECK(v.eta(0, 0) == 1.0);
}

TEST_CASE("ELBO is non-decreasing across full sweeps") {
    Rng rng(213);
    const auto data = test::random_dataset(8, 6, rng);
    const auto hyper = test::default_hyper(3, 0.4);
    auto v = random_init(data, hyper, rng);

    double prev = compute_elbo(v, data, hyper);
    for (int sweep = 0; sweep < 30; ++sweep) {
        cavi_sweep(v, data, hyper);
        const double elbo = compute_elbo(v, data, hyper);
        CHECK(elbo >= prev - 1e-9 * std::abs(prev));
        prev = elbo;
    }
}

TEST_CASE("run_cavi is deterministic and reports convergence") {
    Rng rng(215);
    const auto data = test::random_dataset(10, 8, rng);
    const auto hyper = test::default_hyper(2, 0.5);
    CaviConfig config;
    config.max_sweeps = 5000;
    config.abs_tol = 1e-10;
    config.seed = 99;

    const auto a = run_cavi(data, hyper, config);
    const auto b = run_cavi(data, hyper, config);
    CHECK(a.converged);
    CHECK(a.sweeps == b.sweeps);
    CHECK(a.state.mu_l == b.state.mu_l);
    CHECK(a.state.mu_f == b.state.mu_f);
    CHECK(a.elbo_trace == b.elbo_trace);
    for (std::size_t t = 1; t < a.elbo_trace.size(); ++t)
        CHECK(a.elbo_trace[t] >=
              a.elbo_trace[t - 1] - 1e-9 * std::abs(a.elbo_trace[t - 1]));
}

TEST_CASE("max_sweeps of zero returns the initial state untouched") {
    Rng rng(217);
    const auto data = test::random_dataset(4, 4, rng);
    const auto hyper = test::default_hyper(2);
    CaviConfig config;
    config.max_sweeps = 0;
    config.init_state = test::random_vstate(4, 4, 2, rng);
    const auto result = run_cavi(data, hyper, config);
    CHECK_FALSE(result.converged);
    CHECK(result.sweeps == 0);
    CHECK(result.elbo_trace.empty());
    CHECK(result.state.mu_l == config.init_state->mu_l);
}

TEST_CASE("elbo_every thins the trace") {
    Rng rng(219);
    const auto data = test::random_dataset(5, 5, rng);
    const auto hyper = test::default_hyper(2);
    CaviConfig config;
    config.max_sweeps = 10;
    config.elbo_every = 3;
    config.abs_tol = 0.0;
    config.rel_tol = 1e-300;  // effectively never converge
    const auto result = run_cavi(data, hyper, config);
    CHECK(result.sweeps == 10);
    CHECK(result.elbo_trace.size() == 3);  // sweeps 3, 6, 9
}

TEST_CASE("mismatched init state dimensions are rejected") {
    Rng rng(221);
    const auto data = test::random_dataset(4, 4, rng);
    CaviConfig config;
    config.init_state = test::random_vstate(4, 4, 3, rng);
    CHECK_THROWS_AS(run_cavi(data, test::default_hyper(2), config),
                    std::invalid_argument);
}

TEST_CASE("invalid cavi configs are rejected") {
    CaviConfig config;
    config.abs_tol = 0.0;
    config.rel_tol = 0.0;
    CHECK_THROWS_AS(config.validate(), std::invalid_argument);
    config.rel_tol = 1e-12;
    config.elbo_every = 0;
    CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}

TEST_CASE("multi-trial returns the argmax trial and is thread-invariant") {
    Rng rng(223);
    const auto data = test::random_dataset(12, 8, rng);
    const auto hyper = test::default_hyper(3, 0.4);
    CaviConfig config;
    config.max_sweeps = 2000;
    config.seed = 7;

    const auto serial = run_multi_trial(data, hyper, config, 4, 0, 1);
    REQUIRE(serial.final_elbos.size() == 4);
    REQUIRE(serial.all_traces.size() == 4);
    Index argmax = 0;
    for (Index t = 1; t < 4; ++t)
        if (serial.final_elbos[t] > serial.final_elbos[argmax]) argmax = t;
    CHECK(serial.best_index == argmax);
    CHECK(serial.best.elbo_trace.back() ==
          doctest::Approx(serial.final_elbos[argmax]).epsilon(1e-12));

    const auto parallel = run_multi_trial(data, hyper, config, 4, 0, 4);
    CHECK(parallel.best_index == serial.best_index);
    CHECK(parallel.final_elbos == serial.final_elbos);
    CHECK(parallel.best.state.mu_f == serial.best.state.mu_f);
}

TEST_CASE("early stopping still runs the leader to convergence") {
    Rng rng(225);
    const auto data = test::random_dataset(10, 6, rng);
    const auto hyper = test::default_hyper(2, 0.5);
    CaviConfig config;
    config.max_sweeps = 5000;
    config.seed = 13;

    const auto result = run_multi_trial(data, hyper, config, 3, 5, 1);
    CHECK(result.best.converged);
    // non-leaders stopped at the probe budget
    for (Index t = 0; t < 3; ++t)
        if (t != result.best_index)
            CHECK(result.all_traces[t].size() <= 5);
}
