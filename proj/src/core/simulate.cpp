#include "core/simulate.hpp"

#include <stdexcept>

#include "core/rng.hpp"

namespace sfa {

namespace {
constexpr int kRowRetryCap = 100;
}

void SimulationSpec::validate() const {
    if (g < 1 || n < 2 || k < 1)
        fail("simulation requires g >= 1, n >= 2, k >= 1");
    if (pi.size() != k) fail("pi length does not match k");
    for (Index kk = 0; kk < k; ++kk)
        if (!(pi[kk] > 0.0 && pi[kk] <= 1.0)) fail("pi entries must lie in (0, 1]");
    if (!(snr > 0.0)) fail("snr must be positive");
}

SimulationSpec reference_spec(double snr, std::uint64_t seed) {
    SimulationSpec spec;
    spec.g = 800;
    spec.n = 100;
    spec.k = 6;
    spec.pi.resize(6);
    spec.pi << 0.075, 0.15, 0.25, 0.375, 0.5, 1.0;
    spec.snr = snr;
    spec.seed = seed;
    return spec;
}

double sample_variance(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    const Index n = row.size();
    if (n < 2) fail("sample variance requires at least two values");
    const double mean = row.mean();
    double ss = 0.0;
    for (Index j = 0; j < n; ++j) {
        const double d = row[j] - mean;
        ss += d * d;
    }
    return ss / static_cast<double>(n - 1);
}

std::pair<Dataset, ModelState> simulate(const SimulationSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    ModelState truth;
    truth.f.resize(spec.k, spec.n);
    for (Index k = 0; k < spec.k; ++k)
        for (Index j = 0; j < spec.n; ++j) truth.f(k, j) = stdnorm(rng);

    truth.z = BoolMatrix::Zero(spec.g, spec.k);
    truth.l = Matrix::Zero(spec.g, spec.k);
    truth.tau.resize(spec.g);
    truth.alpha = Vector::Ones(spec.k);  // the generating slab is standard normal

    Eigen::RowVectorXd signal(spec.n);
    for (Index i = 0; i < spec.g; ++i) {
        int attempt = 0;
        for (;;) {
            for (Index k = 0; k < spec.k; ++k) {
                truth.z(i, k) = unif(rng) < spec.pi[k] ? 1 : 0;
                truth.l(i, k) = truth.z(i, k) ? stdnorm(rng) : 0.0;
            }
            signal = truth.l.row(i) * truth.f;
            const double v = sample_variance(signal);
            if (v > 0.0) {
                truth.tau[i] = spec.snr / v;
                break;
            }
            if (++attempt >= kRowRetryCap)
                throw std::runtime_error(
                    "simulate: row signal variance stayed zero after retries");
        }
    }

    Matrix y = truth.l * truth.f;
    for (Index i = 0; i < spec.g; ++i) {
        const double sd = 1.0 / std::sqrt(truth.tau[i]);
        for (Index j = 0; j < spec.n; ++j) y(i, j) += sd * stdnorm(rng);
    }

    return {Dataset(std::move(y)), std::move(truth)};
}

}  // namespace sfa
