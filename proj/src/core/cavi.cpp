#include "core/cavi.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "core/densities.hpp"

namespace sfa {

namespace {

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

double digamma(double x) {
    // Recurrence into the asymptotic regime, then the standard expansion.
    double result = 0.0;
    while (x < 6.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv -
              inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 -
                      inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    return result;
}

}  // namespace

void VariationalState::validate() const {
    const Index gg = g(), kk = k(), nn = n();
    if (mu_l.rows() != gg || mu_l.cols() != kk || var_l.rows() != gg ||
        var_l.cols() != kk)
        fail("slab parameter shapes do not match eta");
    if (var_f.rows() != kk || var_f.cols() != nn || mu_f.rows() != kk)
        fail("activation parameter shapes inconsistent");
    if (a_tau_hat.size() != gg || b_tau_hat.size() != gg ||
        a_alpha_hat.size() != kk || b_alpha_hat.size() != kk)
        fail("gamma parameter lengths inconsistent");
    for (Index i = 0; i < gg; ++i)
        for (Index c = 0; c < kk; ++c) {
            if (!(eta(i, c) >= 0.0 && eta(i, c) <= 1.0))
                fail("eta entries must lie in [0, 1]");
            if (!(var_l(i, c) > 0.0)) fail("var_l entries must be positive");
        }
    if ((var_f.array() <= 0.0).any()) fail("var_f entries must be positive");
    for (Index i = 0; i < gg; ++i)
        if (!(a_tau_hat[i] > 0 && b_tau_hat[i] > 0))
            fail("tau factor parameters must be positive");
    for (Index c = 0; c < kk; ++c)
        if (!(a_alpha_hat[c] > 0 && b_alpha_hat[c] > 0))
            fail("alpha factor parameters must be positive");
}

void CaviConfig::validate() const {
    if (max_sweeps < 0) fail("max_sweeps must be nonnegative");
    if (abs_tol < 0 || rel_tol < 0) fail("tolerances must be nonnegative");
    if (abs_tol == 0 && rel_tol == 0)
        fail("at least one of abs_tol, rel_tol must be positive");
    if (elbo_every < 1) fail("elbo_every must be >= 1");
    if (init_state) init_state->validate();
}

void update_lz(VariationalState& v, const Dataset& data,
               const Hyperparameters& hyper, Index i, Index k) {
    const double tbar = v.tau_mean(i);
    const double abar = v.alpha_mean(k);

    // mask as 0/1 weights so the whole row vectorises
    const Eigen::ArrayXd m = data.mask.row(i).transpose().cast<double>();
    Eigen::RowVectorXd w = v.eta.row(i).cwiseProduct(v.mu_l.row(i));
    w[k] = 0.0;
    const Eigen::ArrayXd cross = (w * v.mu_f).transpose().array();
    const Eigen::ArrayXd mf = v.mu_f.row(k).transpose().array();

    const double second_moment_sum =
        ((mf.square() + v.var_f.row(k).transpose().array()) * m).sum();
    const double lin =
        (mf * (data.y.row(i).transpose().array() - cross) * m).sum();

    const double var_star = 1.0 / (tbar * second_moment_sum + abar);
    const double mu_star = tbar * var_star * lin;
    v.var_l(i, k) = var_star;
    v.mu_l(i, k) = mu_star;

    const double pi_k = hyper.pi[k];
    if (pi_k >= 1.0) {
        v.eta(i, k) = 1.0;  // infinite prior log-odds
        return;
    }
    const double evidence =
        0.5 * (digamma(v.a_alpha_hat[k]) - std::log(2.0 * M_PI * v.b_alpha_hat[k])) +
        0.5 * mu_star * mu_star / var_star +
        0.5 * std::log(2.0 * M_PI * var_star);
    const double log_odds = evidence + std::log(pi_k) - std::log1p(-pi_k);
    v.eta(i, k) = logistic(log_odds);
}

void update_f(VariationalState& v, const Dataset& data,
              const Hyperparameters& hyper, Index k, Index j) {
    (void)hyper;
    const Eigen::ArrayXd m = data.mask.col(j).cast<double>();
    const Eigen::ArrayXd tbar =
        v.a_tau_hat.array() / v.b_tau_hat.array();
    const Matrix w = v.eta.cwiseProduct(v.mu_l);  // G x K, E[l_ik]
    const Eigen::ArrayXd cross =
        (w * v.mu_f.col(j)).array() - w.col(k).array() * v.mu_f(k, j);
    const Eigen::ArrayXd weight = m * tbar * v.eta.col(k).array();

    const double quad =
        (weight * (v.mu_l.col(k).array().square() + v.var_l.col(k).array()))
            .sum();
    const double lin =
        (weight * v.mu_l.col(k).array() * (data.y.col(j).array() - cross))
            .sum();
    v.var_f(k, j) = 1.0 / (quad + 1.0);
    v.mu_f(k, j) = v.var_f(k, j) * lin;
}

namespace {

// E[ (l_i.^T f_.j)^2 ]-style double sum restricted to the observed columns of
// row i: sum_{k,k'} eta_ik eta_ik'^{1-d} (mu mu' + d var_l) *
//        sum_j (mu_f mu_f' + d var_f).
double row_quadratic_expectation(const VariationalState& v, const Dataset& data,
                                 Index i) {
    const Index K = v.k();
    const Eigen::ArrayXd m = data.mask.row(i).transpose().cast<double>();
    double total = 0.0;
    for (Index k = 0; k < K; ++k) {
        const Eigen::ArrayXd mfk = v.mu_f.row(k).transpose().array();
        for (Index kp = 0; kp < K; ++kp) {
            double fsum;
            double lterm;
            if (k == kp) {
                fsum = ((mfk.square() + v.var_f.row(k).transpose().array()) * m)
                           .sum();
                lterm = v.eta(i, k) *
                        (v.mu_l(i, k) * v.mu_l(i, k) + v.var_l(i, k));
            } else {
                fsum = (mfk * v.mu_f.row(kp).transpose().array() * m).sum();
                lterm = v.eta(i, k) * v.eta(i, kp) * v.mu_l(i, k) * v.mu_l(i, kp);
            }
            total += lterm * fsum;
        }
    }
    return total;
}

// sum over observed j of y^2 and of y * E[l_i.^T f_.j], plus the count
struct RowResidualLinear {
    double ss = 0.0;
    double cross = 0.0;
    double n_obs = 0.0;
};

RowResidualLinear row_residual_linear(const VariationalState& v,
                                      const Dataset& data, Index i) {
    const Eigen::ArrayXd m = data.mask.row(i).transpose().cast<double>();
    const Eigen::RowVectorXd w = v.eta.row(i).cwiseProduct(v.mu_l.row(i));
    const Eigen::ArrayXd pred = (w * v.mu_f).transpose().array();
    const Eigen::ArrayXd y = data.y.row(i).transpose().array();
    RowResidualLinear out;
    out.ss = (y.square() * m).sum();
    out.cross = (y * pred * m).sum();
    out.n_obs = m.sum();
    return out;
}

}  // namespace

void update_tau(VariationalState& v, const Dataset& data,
                const Hyperparameters& hyper, Index i) {
    const RowResidualLinear r = row_residual_linear(v, data, i);
    v.a_tau_hat[i] = hyper.a_tau + 0.5 * r.n_obs;
    v.b_tau_hat[i] =
        hyper.b_tau +
        0.5 * (r.ss - 2.0 * r.cross + row_quadratic_expectation(v, data, i));
}

void update_alpha(VariationalState& v, const Hyperparameters& hyper, Index k) {
    double eta_sum = 0.0;
    double moment_sum = 0.0;
    for (Index i = 0; i < v.g(); ++i) {
        eta_sum += v.eta(i, k);
        moment_sum += v.eta(i, k) *
                      (v.var_l(i, k) + v.mu_l(i, k) * v.mu_l(i, k));
    }
    v.a_alpha_hat[k] = hyper.a_alpha + 0.5 * eta_sum;
    v.b_alpha_hat[k] = hyper.b_alpha + 0.5 * moment_sum;
}

double compute_elbo(const VariationalState& v, const Dataset& data,
                    const Hyperparameters& hyper) {
    const Index G = v.g(), K = v.k(), N = v.n();
    double elbo = 0.0;

    // Expected log-likelihood over observed entries. Writing the quadratic
    // expectation as E[(y - pred)^2] = (y - E pred)^2 + sum_k (E[z l^2] E[f^2]
    // - E[zl]^2 E[f]^2) turns the whole block into a handful of matrix
    // products instead of a per-row double loop over factor pairs.
    {
        const Matrix w = v.eta.cwiseProduct(v.mu_l);               // E[z l]
        const Matrix a = v.eta.cwiseProduct(
            v.mu_l.cwiseProduct(v.mu_l) + v.var_l);                // E[z l^2]
        const Matrix f2 = v.mu_f.cwiseProduct(v.mu_f);             // E[f]^2
        const Matrix md = data.mask.cast<double>();                // G x N
        const Matrix pred = w * v.mu_f;
        const Matrix dev = (data.y - pred).cwiseProduct(data.y - pred);
        const Matrix bm = (f2 + v.var_f) * md.transpose();         // K x G
        const Matrix cm = f2 * md.transpose();                     // K x G
        for (Index i = 0; i < G; ++i) {
            const double tbar = v.tau_mean(i);
            const double log_tau_term =
                digamma(v.a_tau_hat[i]) - std::log(2.0 * M_PI * v.b_tau_hat[i]);
            const double n_obs = md.row(i).sum();
            const double resid =
                dev.row(i).cwiseProduct(md.row(i)).sum() +
                a.row(i).dot(bm.col(i)) -
                w.row(i).cwiseProduct(w.row(i)).dot(cm.col(i));
            elbo += 0.5 * (n_obs * log_tau_term - tbar * resid);
        }
    }

    // loading prior (slab part; the point-mass terms cancel with the entropy)
    for (Index i = 0; i < G; ++i)
        for (Index k = 0; k < K; ++k) {
            const double abar = v.alpha_mean(k);
            elbo += 0.5 * v.eta(i, k) *
                    (digamma(v.a_alpha_hat[k]) -
                     std::log(2.0 * M_PI * v.b_alpha_hat[k]) -
                     abar * (v.mu_l(i, k) * v.mu_l(i, k) + v.var_l(i, k)));
        }

    // connectivity prior
    for (Index i = 0; i < G; ++i)
        for (Index k = 0; k < K; ++k) {
            const double eta = v.eta(i, k);
            if (eta > 0.0) elbo += eta * std::log(hyper.pi[k]);
            if (eta < 1.0) elbo += (1.0 - eta) * std::log1p(-hyper.pi[k]);
        }

    // activation prior
    for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < N; ++j)
            elbo -= 0.5 * (v.mu_f(k, j) * v.mu_f(k, j) + v.var_f(k, j) + log_2pi);

    // precision priors
    for (Index i = 0; i < G; ++i)
        elbo += (hyper.a_tau - 1.0) *
                    (digamma(v.a_tau_hat[i]) - std::log(v.b_tau_hat[i])) -
                v.tau_mean(i) * hyper.b_tau + hyper.a_tau * std::log(hyper.b_tau) -
                std::lgamma(hyper.a_tau);
    for (Index k = 0; k < K; ++k)
        elbo += (hyper.a_alpha - 1.0) *
                    (digamma(v.a_alpha_hat[k]) - std::log(v.b_alpha_hat[k])) -
                v.alpha_mean(k) * hyper.b_alpha +
                hyper.a_alpha * std::log(hyper.b_alpha) -
                std::lgamma(hyper.a_alpha);

    // entropies
    for (Index i = 0; i < G; ++i)
        for (Index k = 0; k < K; ++k) {
            const double eta = v.eta(i, k);
            elbo += 0.5 * eta * (std::log(2.0 * M_PI * v.var_l(i, k)) + 1.0) -
                    xlogx(eta) - xlogx(1.0 - eta);
        }
    for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < N; ++j)
            elbo += 0.5 * (std::log(2.0 * M_PI * v.var_f(k, j)) + 1.0);
    for (Index i = 0; i < G; ++i)
        elbo += v.a_tau_hat[i] - std::log(v.b_tau_hat[i]) +
                std::lgamma(v.a_tau_hat[i]) +
                (1.0 - v.a_tau_hat[i]) * digamma(v.a_tau_hat[i]);
    for (Index k = 0; k < K; ++k)
        elbo += v.a_alpha_hat[k] - std::log(v.b_alpha_hat[k]) +
                std::lgamma(v.a_alpha_hat[k]) +
                (1.0 - v.a_alpha_hat[k]) * digamma(v.a_alpha_hat[k]);

    return elbo;
}

namespace {

// Blocked coordinate updates for fully observed data. Same update order and
// the same per-coordinate maximizers as the update_* functions, but with the
// quantities that are invariant within a phase (Gram matrices of mu_f, data
// projections, precision means) hoisted out of the inner loops.
void sweep_dense(VariationalState& v, const Dataset& data,
                 const Hyperparameters& hyper) {
    const Index G = v.g(), K = v.k(), N = v.n();

    // --- loadings / inclusion phase -------------------------------------
    {
        const Matrix fg = v.mu_f * v.mu_f.transpose();  // K x K Gram
        Vector s2(K);                                   // sum_j E[f_kj^2]
        for (Index k = 0; k < K; ++k) s2[k] = fg(k, k) + v.var_f.row(k).sum();
        const Matrix yf = data.y * v.mu_f.transpose();  // G x K
        Vector elog_alpha(K), abar(K), log_prior_odds(K);
        for (Index k = 0; k < K; ++k) {
            elog_alpha[k] = digamma(v.a_alpha_hat[k]) -
                            std::log(2.0 * M_PI * v.b_alpha_hat[k]);
            abar[k] = v.alpha_mean(k);
            log_prior_odds[k] = hyper.pi[k] >= 1.0
                                    ? 0.0
                                    : std::log(hyper.pi[k]) -
                                          std::log1p(-hyper.pi[k]);
        }
        Vector w(K);
        for (Index i = 0; i < G; ++i) {
            const double tbar = v.tau_mean(i);
            for (Index k = 0; k < K; ++k) w[k] = v.eta(i, k) * v.mu_l(i, k);
            for (Index k = 0; k < K; ++k) {
                double cross = 0.0;
                for (Index kp = 0; kp < K; ++kp)
                    if (kp != k) cross += w[kp] * fg(k, kp);
                const double lin = yf(i, k) - cross;
                const double var_star = 1.0 / (tbar * s2[k] + abar[k]);
                const double mu_star = tbar * var_star * lin;
                v.var_l(i, k) = var_star;
                v.mu_l(i, k) = mu_star;
                if (hyper.pi[k] >= 1.0) {
                    v.eta(i, k) = 1.0;
                } else {
                    const double evidence =
                        0.5 * elog_alpha[k] +
                        0.5 * mu_star * mu_star / var_star +
                        0.5 * std::log(2.0 * M_PI * var_star);
                    v.eta(i, k) = logistic(evidence + log_prior_odds[k]);
                }
                w[k] = v.eta(i, k) * v.mu_l(i, k);
            }
        }
    }

    // --- activation phase ------------------------------------------------
    {
        const Vector tbar = v.a_tau_hat.cwiseQuotient(v.b_tau_hat);
        const Matrix w = v.eta.cwiseProduct(v.mu_l);
        const Matrix u = tbar.asDiagonal() * w;  // tbar_i eta_ik mu_ik
        Vector quad(K);                          // j-independent quadratic term
        for (Index k = 0; k < K; ++k)
            quad[k] = (tbar.cwiseProduct(v.eta.col(k))
                           .cwiseProduct(v.mu_l.col(k).cwiseProduct(
                                             v.mu_l.col(k)) +
                                         v.var_l.col(k)))
                          .sum();
        const Matrix uty = u.transpose() * data.y;  // K x N
        const Matrix gw = u.transpose() * w;        // K x K
        for (Index k = 0; k < K; ++k)
            for (Index j = 0; j < N; ++j) {
                double cross = 0.0;
                for (Index kp = 0; kp < K; ++kp)
                    if (kp != k) cross += gw(k, kp) * v.mu_f(kp, j);
                v.var_f(k, j) = 1.0 / (quad[k] + 1.0);
                v.mu_f(k, j) = v.var_f(k, j) * (uty(k, j) - cross);
            }
    }

    // --- precision phases ------------------------------------------------
    {
        const Matrix w = v.eta.cwiseProduct(v.mu_l);
        const Matrix a = v.eta.cwiseProduct(
            v.mu_l.cwiseProduct(v.mu_l) + v.var_l);
        Vector s2(K), c2(K);
        for (Index k = 0; k < K; ++k) {
            c2[k] = v.mu_f.row(k).squaredNorm();
            s2[k] = c2[k] + v.var_f.row(k).sum();
        }
        const Matrix pred = w * v.mu_f;
        for (Index i = 0; i < G; ++i) {
            const double resid =
                (data.y.row(i) - pred.row(i)).squaredNorm() +
                a.row(i).dot(s2) -
                w.row(i).cwiseProduct(w.row(i)).dot(c2);
            v.a_tau_hat[i] = hyper.a_tau + 0.5 * static_cast<double>(N);
            v.b_tau_hat[i] = hyper.b_tau + 0.5 * resid;
        }
    }
    for (Index k = 0; k < K; ++k) update_alpha(v, hyper, k);
}

}  // namespace

void cavi_sweep(VariationalState& v, const Dataset& data,
                const Hyperparameters& hyper) {
    if ((data.mask.array() != 0).all()) {
        sweep_dense(v, data, hyper);
        return;
    }
    for (Index i = 0; i < v.g(); ++i)
        for (Index k = 0; k < v.k(); ++k) update_lz(v, data, hyper, i, k);
    for (Index k = 0; k < v.k(); ++k)
        for (Index j = 0; j < v.n(); ++j) update_f(v, data, hyper, k, j);
    for (Index i = 0; i < v.g(); ++i) update_tau(v, data, hyper, i);
    for (Index k = 0; k < v.k(); ++k) update_alpha(v, hyper, k);
}

VariationalState random_init(const Dataset& data, const Hyperparameters& hyper,
                             Rng& rng) {
    const Index G = data.g(), N = data.n(), K = hyper.k();
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.25, 0.75);

    VariationalState v;
    v.eta.resize(G, K);
    v.mu_l.resize(G, K);
    v.var_l = Matrix::Ones(G, K);
    v.mu_f.resize(K, N);
    v.var_f = Matrix::Ones(K, N);
    for (Index i = 0; i < G; ++i)
        for (Index k = 0; k < K; ++k) {
            v.eta(i, k) = unif(rng);
            v.mu_l(i, k) = stdnorm(rng);
        }
    for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < N; ++j) v.mu_f(k, j) = stdnorm(rng);
    // Start the gamma factors at the prior, but never below shape/rate 1:
    // a vague prior (a = b = 1e-3) has E[log x] = psi(a) - log(b) ~ -1000,
    // which would put ~ -500 into every slab log-odds on the first sweep and
    // kill all factors before the data is ever consulted. Flooring at 1 keeps
    // the initial mean at 1 for vague priors while E[log x] stays moderate.
    v.a_tau_hat = Vector::Constant(G, std::max(hyper.a_tau, 1.0));
    v.b_tau_hat = Vector::Constant(G, std::max(hyper.b_tau, 1.0));
    v.a_alpha_hat = Vector::Constant(K, std::max(hyper.a_alpha, 1.0));
    v.b_alpha_hat = Vector::Constant(K, std::max(hyper.b_alpha, 1.0));
    return v;
}

CaviResult run_cavi(const Dataset& data, const Hyperparameters& hyper,
                    const CaviConfig& config, const CaviProgress& progress) {
    config.validate();
    hyper.validate();
    Rng rng(config.seed);

    CaviResult result;
    result.state =
        config.init_state ? *config.init_state : random_init(data, hyper, rng);
    if (result.state.g() != data.g() || result.state.n() != data.n() ||
        result.state.k() != hyper.k())
        fail("initial variational state dimensions do not match data");

    const auto start = std::chrono::steady_clock::now();
    double prev_elbo = std::numeric_limits<double>::quiet_NaN();
    for (Index sweep = 1; sweep <= config.max_sweeps; ++sweep) {
        cavi_sweep(result.state, data, hyper);
        result.sweeps = sweep;
        if (sweep % config.elbo_every != 0) continue;
        const double elbo = compute_elbo(result.state, data, hyper);
        if (!std::isfinite(elbo)) {
            std::ostringstream os;
            os << "non-finite ELBO at sweep " << sweep;
            throw std::runtime_error(os.str());
        }
        result.elbo_trace.push_back(elbo);
        if (progress && config.snapshot_every > 0 &&
            sweep % (config.elbo_every * config.snapshot_every) == 0) {
            const double secs = std::chrono::duration<double>(
                                    std::chrono::steady_clock::now() - start)
                                    .count();
            progress(result.state, sweep, elbo, secs);
        }
        if (!std::isnan(prev_elbo)) {
            const double delta = std::abs(elbo - prev_elbo);
            if ((config.abs_tol > 0 && delta < config.abs_tol) ||
                (config.rel_tol > 0 && delta < config.rel_tol * std::abs(elbo))) {
                result.converged = true;
                break;
            }
        }
        prev_elbo = elbo;
    }
    result.seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    return result;
}

MultiTrialResult run_multi_trial(const Dataset& data,
                                 const Hyperparameters& hyper,
                                 const CaviConfig& config, Index trials,
                                 Index early_stop_sweeps, int threads,
                                 const CaviProgress& progress) {
    if (trials < 1) fail("trials must be >= 1");
    config.validate();

    std::vector<CaviConfig> trial_configs(trials, config);
    for (Index t = 0; t < trials; ++t)
        trial_configs[t].seed = derive_seed(config.seed, static_cast<std::uint64_t>(t));

    const bool early = early_stop_sweeps > 0;
    if (early)
        for (auto& c : trial_configs)
            c.max_sweeps = std::min(c.max_sweeps, early_stop_sweeps);

    std::vector<CaviResult> results(trials);
    std::vector<std::exception_ptr> errors(trials);
    auto worker = [&](Index t) {
        try {
            // Only the first trial reports progress to keep callback streams
            // single-writer.
            results[t] = run_cavi(data, hyper, trial_configs[t],
                                  t == 0 ? progress : CaviProgress());
        } catch (...) {
            errors[t] = std::current_exception();
        }
    };
    if (threads <= 1 || trials == 1) {
        for (Index t = 0; t < trials; ++t) worker(t);
    } else {
        std::vector<std::thread> pool;
        std::atomic<Index> next{0};
        const int n_workers = std::min<int>(threads, static_cast<int>(trials));
        for (int w = 0; w < n_workers; ++w)
            pool.emplace_back([&] {
                for (;;) {
                    const Index t = next.fetch_add(1);
                    if (t >= trials) return;
                    worker(t);
                }
            });
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    auto final_elbo = [&](Index t) {
        if (!results[t].elbo_trace.empty()) return results[t].elbo_trace.back();
        return compute_elbo(results[t].state, data, hyper);
    };

    Index best = 0;
    double best_elbo = final_elbo(0);
    for (Index t = 1; t < trials; ++t) {
        const double e = final_elbo(t);
        if (e > best_elbo) {
            best = t;
            best_elbo = e;
        }
    }

    if (early && !results[best].converged) {
        // finish only the leader
        CaviConfig finish = config;
        finish.seed = trial_configs[best].seed;
        finish.init_state = results[best].state;
        CaviResult finished = run_cavi(data, hyper, finish, progress);
        finished.sweeps += results[best].sweeps;
        finished.seconds += results[best].seconds;
        std::vector<double> trace = results[best].elbo_trace;
        trace.insert(trace.end(), finished.elbo_trace.begin(),
                     finished.elbo_trace.end());
        finished.elbo_trace = std::move(trace);
        results[best] = std::move(finished);
    }

    MultiTrialResult out;
    out.best_index = best;
    for (Index t = 0; t < trials; ++t) {
        out.all_traces.push_back(results[t].elbo_trace);
        out.final_elbos.push_back(final_elbo(t));
        out.trial_seconds.push_back(results[t].seconds);
    }
    out.best = std::move(results[best]);
    return out;
}

}  // namespace sfa
