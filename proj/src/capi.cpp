#include "sparsefactor/sparsefactor.h"

#include <cstring>
#include <exception>
#include <string>

#include "core/types.hpp"
#include "core/model.hpp"
#include "core/simulate.hpp"
#include "core/gibbs.hpp"
#include "core/cavi.hpp"
#include "core/relabel.hpp"
#include "core/evaluate.hpp"
#include "core/io.hpp"

using namespace sfa;

struct sf_dataset {
    Dataset d;
};
struct sf_model_state {
    ModelState s;
};
struct sf_chain {
    SampleChain c;
    Index g = 0, n = 0, k = 0;
};
struct sf_cavi_result {
    MultiTrialResult r;
};
struct sf_summary {
    PosteriorSummary s;
};
struct sf_relabel_result {
    RelabelResult r;
    Index k = 0;
};

namespace {

thread_local std::string g_last_error;

sf_status fail_with(sf_status code, const char* what) {
    g_last_error = what;
    return code;
}

template <typename Fn>
sf_status guarded(Fn&& fn) {
    try {
        fn();
        return SF_OK;
    } catch (const std::invalid_argument& e) {
        return fail_with(SF_ERR_INVALID, e.what());
    } catch (const std::ios_base::failure& e) {
        return fail_with(SF_ERR_IO, e.what());
    } catch (const std::exception& e) {
        // io errors surface as runtime_error with a path prefix
        const std::string what = e.what();
        if (what.find(".csv") != std::string::npos ||
            what.find(".json") != std::string::npos)
            return fail_with(SF_ERR_IO, e.what());
        return fail_with(SF_ERR_RUNTIME, e.what());
    }
}

Hyperparameters to_hyper(const sf_hyper* h) {
    if (h == nullptr || h->pi == nullptr) fail("hyperparameters are null");
    Hyperparameters out;
    out.pi = Eigen::Map<const Vector>(h->pi, h->k);
    out.a_tau = h->a_tau;
    out.b_tau = h->b_tau;
    out.a_alpha = h->a_alpha;
    out.b_alpha = h->b_alpha;
    out.validate();
    return out;
}

void copy_row_major(const Matrix& m, double* out) {
    if (out == nullptr) return;
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) *out++ = m(i, j);
}

Matrix from_row_major(const double* in, Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = *in++;
    return m;
}

}  // namespace

extern "C" {

const char* sf_last_error(void) { return g_last_error.c_str(); }

/* ---- datasets ---------------------------------------------------------- */

sf_status sf_dataset_create(int64_t g, int64_t n, const double* y,
                            const uint8_t* mask, sf_dataset** out) {
    return guarded([&] {
        if (y == nullptr || out == nullptr) fail("null argument");
        Matrix ym = from_row_major(y, g, n);
        BoolMatrix mm = BoolMatrix::Ones(g, n);
        if (mask != nullptr)
            for (Index i = 0; i < g; ++i)
                for (Index j = 0; j < n; ++j) mm(i, j) = mask[i * n + j] ? 1 : 0;
        *out = new sf_dataset{Dataset(std::move(ym), std::move(mm))};
    });
}

sf_status sf_dataset_load(const char* data_path, const char* mask_path,
                          sf_dataset** out) {
    return guarded([&] {
        if (data_path == nullptr || out == nullptr) fail("null argument");
        *out = new sf_dataset{io::load_dataset(
            data_path, mask_path ? io::fs::path(mask_path) : io::fs::path())};
    });
}

sf_status sf_dataset_save(const sf_dataset* d, const char* data_path,
                          const char* mask_path) {
    return guarded([&] {
        if (d == nullptr || data_path == nullptr) fail("null argument");
        io::save_dataset(data_path, d->d,
                         mask_path ? io::fs::path(mask_path) : io::fs::path());
    });
}

void sf_dataset_dims(const sf_dataset* d, int64_t* g, int64_t* n) {
    if (d == nullptr) return;
    if (g) *g = d->d.g();
    if (n) *n = d->d.n();
}

sf_status sf_dataset_get(const sf_dataset* d, double* y_out, uint8_t* mask_out) {
    return guarded([&] {
        if (d == nullptr) fail("null dataset");
        copy_row_major(d->d.y, y_out);
        if (mask_out != nullptr)
            for (Index i = 0; i < d->d.g(); ++i)
                for (Index j = 0; j < d->d.n(); ++j)
                    *mask_out++ = d->d.mask(i, j);
    });
}

void sf_dataset_free(sf_dataset* d) { delete d; }

/* ---- model states ------------------------------------------------------ */

sf_status sf_state_create(int64_t g, int64_t n, int64_t k, const double* l,
                          const double* f, const uint8_t* z, const double* tau,
                          const double* alpha, sf_model_state** out) {
    return guarded([&] {
        if (!l || !f || !z || !tau || !alpha || !out) fail("null argument");
        ModelState s;
        s.l = from_row_major(l, g, k);
        s.f = from_row_major(f, k, n);
        s.z.resize(g, k);
        for (Index i = 0; i < g; ++i)
            for (Index kk = 0; kk < k; ++kk) s.z(i, kk) = z[i * k + kk] ? 1 : 0;
        s.tau = Eigen::Map<const Vector>(tau, g);
        s.alpha = Eigen::Map<const Vector>(alpha, k);
        s.validate();
        *out = new sf_model_state{std::move(s)};
    });
}

void sf_state_dims(const sf_model_state* s, int64_t* g, int64_t* n, int64_t* k) {
    if (s == nullptr) return;
    if (g) *g = s->s.g();
    if (n) *n = s->s.n();
    if (k) *k = s->s.k();
}

sf_status sf_state_get(const sf_model_state* s, double* l, double* f,
                       uint8_t* z, double* tau, double* alpha) {
    return guarded([&] {
        if (s == nullptr) fail("null state");
        copy_row_major(s->s.l, l);
        copy_row_major(s->s.f, f);
        if (z != nullptr)
            for (Index i = 0; i < s->s.g(); ++i)
                for (Index kk = 0; kk < s->s.k(); ++kk) *z++ = s->s.z(i, kk);
        if (tau != nullptr)
            for (Index i = 0; i < s->s.g(); ++i) tau[i] = s->s.tau[i];
        if (alpha != nullptr)
            for (Index kk = 0; kk < s->s.k(); ++kk) alpha[kk] = s->s.alpha[kk];
    });
}

sf_status sf_state_save(const sf_model_state* s, const char* dir) {
    return guarded([&] {
        if (s == nullptr || dir == nullptr) fail("null argument");
        io::save_state(dir, s->s);
    });
}

sf_status sf_state_load(const char* dir, sf_model_state** out) {
    return guarded([&] {
        if (dir == nullptr || out == nullptr) fail("null argument");
        *out = new sf_model_state{io::load_state(dir)};
    });
}

void sf_state_free(sf_model_state* s) { delete s; }

sf_status sf_log_likelihood(const sf_model_state* s, const sf_dataset* d,
                            double* out) {
    return guarded([&] {
        if (!s || !d || !out) fail("null argument");
        *out = log_likelihood(s->s, d->d);
    });
}

sf_status sf_log_joint(const sf_model_state* s, const sf_dataset* d,
                       const sf_hyper* hyper, double* out) {
    return guarded([&] {
        if (!s || !d || !out) fail("null argument");
        *out = log_joint(s->s, d->d, to_hyper(hyper));
    });
}

/* ---- simulation -------------------------------------------------------- */

sf_status sf_simulate(const sf_sim_spec* spec, sf_dataset** data_out,
                      sf_model_state** truth_out) {
    return guarded([&] {
        if (!spec || !spec->pi || !data_out || !truth_out) fail("null argument");
        SimulationSpec s;
        s.g = spec->g;
        s.n = spec->n;
        s.k = spec->k;
        s.pi = Eigen::Map<const Vector>(spec->pi, spec->k);
        s.snr = spec->snr;
        s.seed = spec->seed;
        auto [data, truth] = simulate(s);
        *data_out = new sf_dataset{std::move(data)};
        *truth_out = new sf_model_state{std::move(truth)};
    });
}

/* ---- Gibbs sampling ---------------------------------------------------- */

sf_status sf_gibbs_run(const sf_dataset* d, const sf_hyper* hyper,
                       const sf_gibbs_config* config, sf_chain** out) {
    return guarded([&] {
        if (!d || !config || !out) fail("null argument");
        ChainConfig cc;
        cc.iterations = config->iterations;
        cc.burn_in = config->burn_in;
        cc.thin = config->thin;
        cc.seed = config->seed;
        cc.snapshot_every = config->snapshot_every;
        if (config->init_state != nullptr) cc.init_state = config->init_state->s;

        ChainProgress progress;
        if (config->progress != nullptr && config->snapshot_every > 0) {
            auto cb = config->progress;
            auto user = config->progress_user;
            progress = [cb, user](const SampleChain& partial, double seconds) {
                sf_summary running{summarize(partial)};
                cb(user, seconds, static_cast<int64_t>(partial.samples.size()),
                   &running);
            };
        }
        auto chain = run_chain(d->d, to_hyper(hyper), cc, progress);
        *out = new sf_chain{std::move(chain), d->d.g(), d->d.n(),
                            hyper ? static_cast<Index>(hyper->k) : 0};
    });
}

int64_t sf_chain_size(const sf_chain* c) {
    return c ? static_cast<int64_t>(c->c.samples.size()) : 0;
}

sf_status sf_chain_get_sample(const sf_chain* c, int64_t index,
                              sf_model_state** out) {
    return guarded([&] {
        if (!c || !out) fail("null argument");
        if (index < 0 || index >= sf_chain_size(c)) fail("sample index out of range");
        *out = new sf_model_state{c->c.samples[static_cast<std::size_t>(index)]};
    });
}

sf_status sf_chain_log_joints(const sf_chain* c, double* out) {
    return guarded([&] {
        if (!c || !out) fail("null argument");
        std::memcpy(out, c->c.log_joints.data(),
                    c->c.log_joints.size() * sizeof(double));
    });
}

sf_status sf_chain_save(const sf_chain* c, const char* dir) {
    return guarded([&] {
        if (!c || !dir) fail("null argument");
        io::save_chain(dir, c->c, c->g, c->n, c->k);
    });
}

sf_status sf_chain_load(const char* dir, sf_chain** out) {
    return guarded([&] {
        if (!dir || !out) fail("null argument");
        auto chain = io::load_chain(dir);
        Index g = 0, n = 0, k = 0;
        if (!chain.samples.empty()) {
            g = chain.samples.front().g();
            n = chain.samples.front().n();
            k = chain.samples.front().k();
        }
        *out = new sf_chain{std::move(chain), g, n, k};
    });
}

void sf_chain_free(sf_chain* c) { delete c; }

/* ---- variational inference --------------------------------------------- */

namespace {

CaviConfig to_cavi_config(const sf_cavi_config* config) {
    CaviConfig cc;
    cc.max_sweeps = config->max_sweeps;
    cc.abs_tol = config->abs_tol;
    cc.rel_tol = config->rel_tol;
    cc.elbo_every = config->elbo_every > 0 ? config->elbo_every : 1;
    cc.seed = config->seed;
    cc.snapshot_every = config->snapshot_every;
    return cc;
}

CaviProgress to_cavi_progress(const sf_cavi_config* config) {
    if (config->progress == nullptr || config->snapshot_every <= 0)
        return CaviProgress();
    auto cb = config->progress;
    auto user = config->progress_user;
    return [cb, user](const VariationalState& state, Index sweep, double /*elbo*/,
                      double seconds) {
        sf_summary running{summarize(state)};
        cb(user, seconds, static_cast<int64_t>(sweep), &running);
    };
}

}  // namespace

sf_status sf_cavi_run(const sf_dataset* d, const sf_hyper* hyper,
                      const sf_cavi_config* config, sf_cavi_result** out) {
    return sf_cavi_multi_trial(d, hyper, config, 1, 0, 1, out);
}

sf_status sf_cavi_multi_trial(const sf_dataset* d, const sf_hyper* hyper,
                              const sf_cavi_config* config, int64_t trials,
                              int64_t early_stop_sweeps, int threads,
                              sf_cavi_result** out) {
    return guarded([&] {
        if (!d || !config || !out) fail("null argument");
        if (trials < 1) fail("trials must be >= 1");
        auto result =
            run_multi_trial(d->d, to_hyper(hyper), to_cavi_config(config), trials,
                            early_stop_sweeps, threads, to_cavi_progress(config));
        *out = new sf_cavi_result{std::move(result)};
    });
}

int64_t sf_cavi_best_trial(const sf_cavi_result* r) {
    return r ? r->r.best_index : -1;
}

int64_t sf_cavi_num_trials(const sf_cavi_result* r) {
    return r ? static_cast<int64_t>(r->r.all_traces.size()) : 0;
}

int64_t sf_cavi_trace_size(const sf_cavi_result* r, int64_t trial) {
    if (!r || trial < 0 || trial >= sf_cavi_num_trials(r)) return -1;
    if (trial == r->r.best_index)
        return static_cast<int64_t>(r->r.best.elbo_trace.size());
    return static_cast<int64_t>(
        r->r.all_traces[static_cast<std::size_t>(trial)].size());
}

sf_status sf_cavi_trace(const sf_cavi_result* r, int64_t trial, double* out) {
    return guarded([&] {
        if (!r || !out) fail("null argument");
        if (trial < 0 || trial >= sf_cavi_num_trials(r))
            fail("trial index out of range");
        const auto& trace = trial == r->r.best_index
                                ? r->r.best.elbo_trace
                                : r->r.all_traces[static_cast<std::size_t>(trial)];
        std::memcpy(out, trace.data(), trace.size() * sizeof(double));
    });
}

sf_status sf_cavi_final_elbos(const sf_cavi_result* r, double* out) {
    return guarded([&] {
        if (!r || !out) fail("null argument");
        std::memcpy(out, r->r.final_elbos.data(),
                    r->r.final_elbos.size() * sizeof(double));
    });
}

sf_status sf_cavi_trial_seconds(const sf_cavi_result* r, double* out) {
    return guarded([&] {
        if (!r || !out) fail("null argument");
        std::memcpy(out, r->r.trial_seconds.data(),
                    r->r.trial_seconds.size() * sizeof(double));
    });
}

int sf_cavi_converged(const sf_cavi_result* r) {
    return r != nullptr && r->r.best.converged ? 1 : 0;
}

sf_status sf_cavi_save(const sf_cavi_result* r, const char* dir) {
    return guarded([&] {
        if (!r || !dir) fail("null argument");
        const io::fs::path base(dir);
        io::save_vstate(base / "best", r->r.best.state);
        for (std::size_t t = 0; t < r->r.all_traces.size(); ++t) {
            const auto& trace = static_cast<int64_t>(t) == r->r.best_index
                                    ? r->r.best.elbo_trace
                                    : r->r.all_traces[t];
            Vector v = Eigen::Map<const Vector>(trace.data(),
                                                static_cast<Index>(trace.size()));
            io::write_vector(base / ("elbo_trace_" + std::to_string(t) + ".csv"),
                             v);
        }
    });
}

void sf_cavi_free(sf_cavi_result* r) { delete r; }

/* ---- relabelling ------------------------------------------------------- */

sf_status sf_relabel_chains(sf_chain** chains, int64_t n_chains, int normalize,
                            sf_relabel_result** out) {
    return guarded([&] {
        if (!chains || n_chains < 1 || !out) fail("null argument");
        std::vector<SampleChain> work;
        work.reserve(static_cast<std::size_t>(n_chains));
        for (int64_t c = 0; c < n_chains; ++c) {
            if (chains[c] == nullptr) fail("null chain handle");
            work.push_back(std::move(chains[c]->c));
        }
        RelabelResult result;
        try {
            result = relabel_chains(work, normalize != 0);
        } catch (...) {
            for (int64_t c = 0; c < n_chains; ++c)
                chains[c]->c = std::move(work[static_cast<std::size_t>(c)]);
            throw;
        }
        Index k = 0;
        for (int64_t c = 0; c < n_chains; ++c) {
            chains[c]->c = std::move(work[static_cast<std::size_t>(c)]);
            if (!chains[c]->c.samples.empty())
                k = chains[c]->c.samples.front().k();
        }
        *out = new sf_relabel_result{std::move(result), k};
    });
}

int64_t sf_relabel_num_samples(const sf_relabel_result* r) {
    return r ? static_cast<int64_t>(r->r.relabellings.size()) : 0;
}

sf_status sf_relabel_get(const sf_relabel_result* r, int64_t* sigma,
                         int32_t* nu) {
    return guarded([&] {
        if (!r) fail("null argument");
        for (const auto& rel : r->r.relabellings) {
            for (Index k = 0; k < r->k; ++k) {
                if (sigma) *sigma++ = rel.sigma[static_cast<std::size_t>(k)];
                if (nu) *nu++ = rel.nu[static_cast<std::size_t>(k)];
            }
        }
    });
}

int64_t sf_relabel_risk_trace_size(const sf_relabel_result* r) {
    return r ? static_cast<int64_t>(r->r.risk_trace.size()) : 0;
}

sf_status sf_relabel_risk_trace(const sf_relabel_result* r, double* out) {
    return guarded([&] {
        if (!r || !out) fail("null argument");
        std::memcpy(out, r->r.risk_trace.data(),
                    r->r.risk_trace.size() * sizeof(double));
    });
}

void sf_relabel_free(sf_relabel_result* r) { delete r; }

/* ---- evaluation -------------------------------------------------------- */

sf_status sf_summarize_chain(const sf_chain* c, sf_summary** out) {
    return guarded([&] {
        if (!c || !out) fail("null argument");
        *out = new sf_summary{summarize(c->c)};
    });
}

sf_status sf_summarize_cavi(const sf_cavi_result* r, sf_summary** out) {
    return guarded([&] {
        if (!r || !out) fail("null argument");
        *out = new sf_summary{summarize(r->r.best.state)};
    });
}

sf_status sf_align_to_truth(const sf_summary* s, const sf_model_state* truth,
                            sf_summary** out) {
    return guarded([&] {
        if (!s || !truth || !out) fail("null argument");
        *out = new sf_summary{align_to_truth(s->s, truth->s)};
    });
}

void sf_summary_dims(const sf_summary* s, int64_t* g, int64_t* n, int64_t* k) {
    if (s == nullptr) return;
    if (g) *g = s->s.mean_l.rows();
    if (n) *n = s->s.mean_f.cols();
    if (k) *k = s->s.mean_l.cols();
}

sf_status sf_summary_get(const sf_summary* s, double* mean_l, double* mean_z,
                         double* mean_f, double* mean_lf) {
    return guarded([&] {
        if (!s) fail("null summary");
        copy_row_major(s->s.mean_l, mean_l);
        copy_row_major(s->s.mean_z, mean_z);
        copy_row_major(s->s.mean_f, mean_f);
        copy_row_major(s->s.mean_lf, mean_lf);
    });
}

sf_status sf_summary_save(const sf_summary* s, const char* dir) {
    return guarded([&] {
        if (!s || !dir) fail("null argument");
        const io::fs::path base(dir);
        io::fs::create_directories(base);
        io::write_matrix(base / "mean_l.csv", s->s.mean_l);
        io::write_matrix(base / "mean_z.csv", s->s.mean_z);
        io::write_matrix(base / "mean_f.csv", s->s.mean_f);
        io::write_matrix(base / "mean_lf.csv", s->s.mean_lf);
    });
}

sf_status sf_summary_load(const char* dir, sf_summary** out) {
    return guarded([&] {
        if (!dir || !out) fail("null argument");
        const io::fs::path base(dir);
        PosteriorSummary summary;
        summary.mean_l = io::read_matrix(base / "mean_l.csv");
        summary.mean_z = io::read_matrix(base / "mean_z.csv");
        summary.mean_f = io::read_matrix(base / "mean_f.csv");
        summary.mean_lf = io::read_matrix(base / "mean_lf.csv");
        if (summary.mean_z.rows() != summary.mean_l.rows() ||
            summary.mean_z.cols() != summary.mean_l.cols() ||
            summary.mean_f.rows() != summary.mean_l.cols() ||
            summary.mean_lf.rows() != summary.mean_l.rows() ||
            summary.mean_lf.cols() != summary.mean_f.cols())
            fail("summary blocks have inconsistent shapes");
        *out = new sf_summary{std::move(summary)};
    });
}

void sf_summary_free(sf_summary* s) { delete s; }

sf_status sf_z_accuracy(const sf_summary* s, const sf_model_state* truth,
                        double* out) {
    return guarded([&] {
        if (!s || !truth || !out) fail("null argument");
        *out = z_accuracy(s->s.mean_z, truth->s.z);
    });
}

sf_status sf_summary_rrmse(const sf_summary* s, const sf_model_state* truth,
                           sf_block block, double* out) {
    return guarded([&] {
        if (!s || !truth || !out) fail("null argument");
        switch (block) {
            case SF_BLOCK_L:
                *out = rrmse(s->s.mean_l, truth->s.l);
                return;
            case SF_BLOCK_F:
                *out = rrmse(s->s.mean_f, truth->s.f);
                return;
            case SF_BLOCK_LF:
                *out = rrmse(s->s.mean_lf, truth->s.l * truth->s.f);
                return;
        }
        fail("unknown summary block");
    });
}

sf_status sf_rrmse(const double* estimate, const double* truth, int64_t count,
                   double* out) {
    return guarded([&] {
        if (!estimate || !truth || !out) fail("null argument");
        const Matrix e = Eigen::Map<const Matrix>(estimate, count, 1);
        const Matrix t = Eigen::Map<const Matrix>(truth, count, 1);
        *out = rrmse(e, t);
    });
}

sf_status sf_fill_in_split(const sf_dataset* d, double fraction, uint64_t seed,
                           sf_dataset** masked_out, int64_t** heldout_ij,
                           int64_t* n_heldout) {
    return guarded([&] {
        if (!d || !masked_out || !heldout_ij || !n_heldout) fail("null argument");
        auto [masked, heldout] = make_fill_in_split(d->d, fraction, seed);
        *masked_out = new sf_dataset{std::move(masked)};
        auto* buf = new int64_t[heldout.size() * 2];
        for (std::size_t e = 0; e < heldout.size(); ++e) {
            buf[2 * e] = heldout[e].i;
            buf[2 * e + 1] = heldout[e].j;
        }
        *heldout_ij = buf;
        *n_heldout = static_cast<int64_t>(heldout.size());
    });
}

void sf_free_indices(int64_t* indices) { delete[] indices; }

sf_status sf_fill_in_rrmse(const sf_summary* s, const sf_dataset* full,
                           const int64_t* heldout_ij, int64_t n_heldout,
                           double* out) {
    return guarded([&] {
        if (!s || !full || !heldout_ij || !out) fail("null argument");
        std::vector<EntryIndex> heldout;
        heldout.reserve(static_cast<std::size_t>(n_heldout));
        for (int64_t e = 0; e < n_heldout; ++e)
            heldout.push_back({heldout_ij[2 * e], heldout_ij[2 * e + 1]});
        *out = fill_in_rrmse(s->s, full->d, heldout);
    });
}

} /* extern "C" */
