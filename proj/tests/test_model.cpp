#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/densities.hpp"
#include "core/model.hpp"
#include "helpers.hpp"

using namespace sfa;
using test::random_state;

namespace {

// Independent scalar-by-scalar oracle: evaluate the normal log-pdf of every
// observed entry directly, without the matrix product path.
double scalar_loglik_oracle(const ModelState& s, const Dataset& d) {
    double total = 0.0;
    for (Index i = 0; i < d.g(); ++i)
        for (Index j = 0; j < d.n(); ++j) {
            if (!d.observed(i, j)) continue;
            double mean = 0.0;
            for (Index k = 0; k < s.k(); ++k) mean += s.l(i, k) * s.f(k, j);
            total += normal_logpdf(d.y(i, j), mean, 1.0 / s.tau[i]);
        }
    return total;
}

ModelState scalar_state(double l, bool z, double f, double tau, double alpha) {
    ModelState s;
    s.l = Matrix::Constant(1, 1, l);
    s.z = BoolMatrix::Constant(1, 1, z ? 1 : 0);
    s.f = Matrix::Constant(1, 1, f);
    s.tau = Vector::Constant(1, tau);
    s.alpha = Vector::Constant(1, alpha);
    return s;
}

}  // namespace

TEST_CASE("log_likelihood of a zero-mean unit-precision scalar") {
    const auto state = scalar_state(0.0, false, 0.3, 1.0, 1.0);
    const Dataset data(Matrix::Zero(1, 1));
    CHECK(log_likelihood(state, data) ==
          doctest::Approx(0.5 * std::log(1.0 / (2.0 * M_PI))).epsilon(1e-12));
    CHECK(log_likelihood(state, data) == doctest::Approx(-0.9189385).epsilon(1e-6));
}

TEST_CASE("log_likelihood of a fully masked dataset is zero") {
    const auto state = scalar_state(0.0, false, 0.3, 1.0, 1.0);
    Matrix y = Matrix::Constant(1, 1, 4.2);
    BoolMatrix mask = BoolMatrix::Ones(1, 1);
    Dataset data(y, mask);
    data.mask(0, 0) = 0;  // bypass the loader's all-observed requirement
    CHECK(log_likelihood(state, data) == 0.0);
}

TEST_CASE("log_likelihood matches the scalar oracle on random states") {
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        const auto state = random_state(2, 2, 1, rng);
        const auto data = test::random_dataset(2, 2, rng);
        CHECK(log_likelihood(state, data) ==
              doctest::Approx(scalar_loglik_oracle(state, data)).epsilon(1e-12));
    }
}

TEST_CASE("log_likelihood rejects dimension mismatches and bad tau") {
    const auto state = scalar_state(0.0, false, 0.3, 1.0, 1.0);
    CHECK_THROWS_AS(log_likelihood(state, Dataset(Matrix::Zero(2, 1))),
                    std::invalid_argument);
    auto bad = state;
    bad.tau[0] = -1.0;
    CHECK_THROWS_AS(log_likelihood(bad, Dataset(Matrix::Zero(1, 1))),
                    std::invalid_argument);
}

TEST_CASE("log_joint with all-inactive Z isolates the Bernoulli term") {
    const auto state = scalar_state(0.0, false, 0.3, 1.2, 0.8);
    const Dataset data(Matrix::Constant(1, 1, 0.5));
    const auto hyper = test::default_hyper(1, 0.5);

    const double expected = log_likelihood(state, data) + std::log(0.5) +
                            gamma_logpdf(1.2, hyper.a_tau, hyper.b_tau) +
                            gamma_logpdf(0.8, hyper.a_alpha, hyper.b_alpha) +
                            normal_logpdf(0.3, 0.0, 1.0);
    CHECK(log_joint(state, data, hyper) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("log_joint matches a term-by-term density oracle") {
    Rng rng(11);
    const auto state = random_state(2, 2, 1, rng);
    const auto data = test::random_dataset(2, 2, rng);
    const auto hyper = test::default_hyper(1, 0.4);

    double expected = scalar_loglik_oracle(state, data);
    for (Index i = 0; i < 2; ++i) {
        expected += bernoulli_logpmf(state.z(i, 0), hyper.pi[0]);
        if (state.z(i, 0))
            expected += normal_logpdf(state.l(i, 0), 0.0, 1.0 / state.alpha[0]);
        expected += gamma_logpdf(state.tau[i], hyper.a_tau, hyper.b_tau);
    }
    expected += gamma_logpdf(state.alpha[0], hyper.a_alpha, hyper.b_alpha);
    for (Index j = 0; j < 2; ++j)
        expected += normal_logpdf(state.f(0, j), 0.0, 1.0);

    CHECK(log_joint(state, data, hyper) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("doubling b_tau shifts log_joint by the gamma log-pdf difference") {
    Rng rng(3);
    const auto state = random_state(2, 3, 2, rng);
    const auto data = test::random_dataset(2, 3, rng);
    auto hyper = test::default_hyper(2);
    auto doubled = hyper;
    doubled.b_tau *= 2.0;

    double delta = 0.0;
    for (Index i = 0; i < 2; ++i)
        delta += gamma_logpdf(state.tau[i], hyper.a_tau, doubled.b_tau) -
                 gamma_logpdf(state.tau[i], hyper.a_tau, hyper.b_tau);
    CHECK(log_joint(state, data, doubled) - log_joint(state, data, hyper) ==
          doctest::Approx(delta).epsilon(1e-12));
}

TEST_CASE("log_joint rejects spike-constraint violations") {
    auto state = scalar_state(0.5, false, 0.3, 1.0, 1.0);
    const Dataset data(Matrix::Zero(1, 1));
    CHECK_THROWS_AS(log_joint(state, data, test::default_hyper(1)),
                    std::invalid_argument);
}

TEST_CASE("prior part of log_joint is independent of the data") {
    Rng rng(19);
    const auto state = random_state(3, 4, 2, rng);
    const auto hyper = test::default_hyper(2);
    const auto d1 = test::random_dataset(3, 4, rng);
    const auto d2 = test::random_dataset(3, 4, rng);
    const double p1 = log_joint(state, d1, hyper) - log_likelihood(state, d1);
    const double p2 = log_joint(state, d2, hyper) - log_likelihood(state, d2);
    CHECK(p1 == doctest::Approx(p2).epsilon(1e-12));
}

TEST_CASE("joint sign flip of a factor leaves log_joint unchanged") {
    Rng rng(23);
    const auto state = random_state(3, 4, 2, rng);
    const auto data = test::random_dataset(3, 4, rng);
    const auto hyper = test::default_hyper(2);

    auto flipped = state;
    flipped.l.col(1) *= -1.0;
    flipped.f.row(1) *= -1.0;
    CHECK(log_joint(flipped, data, hyper) ==
          doctest::Approx(log_joint(state, data, hyper)).epsilon(1e-12));
}

TEST_CASE("joint factor permutation leaves log_joint unchanged") {
    Rng rng(29);
    const auto state = random_state(3, 4, 2, rng);
    const auto data = test::random_dataset(3, 4, rng);
    auto hyper = test::default_hyper(2);
    hyper.pi << 0.3, 0.8;

    auto permuted = state;
    permuted.l.col(0) = state.l.col(1);
    permuted.l.col(1) = state.l.col(0);
    permuted.z.col(0) = state.z.col(1);
    permuted.z.col(1) = state.z.col(0);
    permuted.f.row(0) = state.f.row(1);
    permuted.f.row(1) = state.f.row(0);
    permuted.alpha << state.alpha[1], state.alpha[0];
    auto permuted_hyper = hyper;
    permuted_hyper.pi << hyper.pi[1], hyper.pi[0];

    CHECK(log_joint(permuted, data, permuted_hyper) ==
          doctest::Approx(log_joint(state, data, hyper)).epsilon(1e-12));
}

TEST_CASE("masking one entry removes exactly its scalar log-pdf") {
    Rng rng(31);
    const auto state = random_state(3, 4, 2, rng);
    auto data = test::random_dataset(3, 4, rng);
    const double full = log_likelihood(state, data);

    const Matrix lf = state.l * state.f;
    const double entry =
        normal_logpdf(data.y(1, 2), lf(1, 2), 1.0 / state.tau[1]);
    data.mask(1, 2) = 0;
    CHECK(full - log_likelihood(state, data) ==
          doctest::Approx(entry).epsilon(1e-12));
}

TEST_CASE("dataset validation rejects empty rows and columns") {
    Matrix y = Matrix::Zero(2, 2);
    BoolMatrix mask = BoolMatrix::Ones(2, 2);
    mask(0, 0) = mask(0, 1) = 0;
    CHECK_THROWS_AS(Dataset(y, mask), std::invalid_argument);
    mask.setOnes();
    mask(0, 1) = mask(1, 1) = 0;
    CHECK_THROWS_AS(Dataset(y, mask), std::invalid_argument);
}
