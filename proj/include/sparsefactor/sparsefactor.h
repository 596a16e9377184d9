/* Sparse Bayesian factor analysis C API.
 *
 * All objects are opaque handles created and destroyed through this API.
 * Functions return sf_status; on failure sf_last_error() carries a
 * thread-local description of the most recent error. Matrix buffers are
 * row-major doubles.
 */
#ifndef SPARSEFACTOR_H
#define SPARSEFACTOR_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sf_status {
    SF_OK = 0,
    SF_ERR_INVALID = 1, /* invalid arguments or object state */
    SF_ERR_RUNTIME = 2, /* numerical or internal failure */
    SF_ERR_IO = 3       /* file read/write failure */
} sf_status;

/* Thread-local message for the most recent failing call. */
const char* sf_last_error(void);

typedef struct sf_dataset sf_dataset;
typedef struct sf_model_state sf_model_state;
typedef struct sf_chain sf_chain;
typedef struct sf_cavi_result sf_cavi_result;
typedef struct sf_summary sf_summary;
typedef struct sf_relabel_result sf_relabel_result;

typedef struct sf_hyper {
    const double* pi; /* length k, entries in (0, 1] */
    int64_t k;
    double a_tau, b_tau, a_alpha, b_alpha;
} sf_hyper;

/* ---- datasets ---------------------------------------------------------- */

/* mask may be NULL (all observed); nonzero mask bytes mark observed cells. */
sf_status sf_dataset_create(int64_t g, int64_t n, const double* y,
                            const uint8_t* mask, sf_dataset** out);
/* mask_path may be NULL; NA tokens in the data file are masked out. */
sf_status sf_dataset_load(const char* data_path, const char* mask_path,
                          sf_dataset** out);
sf_status sf_dataset_save(const sf_dataset* d, const char* data_path,
                          const char* mask_path);
void sf_dataset_dims(const sf_dataset* d, int64_t* g, int64_t* n);
/* Either output pointer may be NULL. Buffers must hold g*n entries. */
sf_status sf_dataset_get(const sf_dataset* d, double* y_out, uint8_t* mask_out);
void sf_dataset_free(sf_dataset* d);

/* ---- model states ------------------------------------------------------ */

sf_status sf_state_create(int64_t g, int64_t n, int64_t k, const double* l,
                          const double* f, const uint8_t* z, const double* tau,
                          const double* alpha, sf_model_state** out);
void sf_state_dims(const sf_model_state* s, int64_t* g, int64_t* n, int64_t* k);
/* Any output pointer may be NULL. */
sf_status sf_state_get(const sf_model_state* s, double* l, double* f,
                       uint8_t* z, double* tau, double* alpha);
sf_status sf_state_save(const sf_model_state* s, const char* dir);
sf_status sf_state_load(const char* dir, sf_model_state** out);
void sf_state_free(sf_model_state* s);

sf_status sf_log_likelihood(const sf_model_state* s, const sf_dataset* d,
                            double* out);
sf_status sf_log_joint(const sf_model_state* s, const sf_dataset* d,
                       const sf_hyper* hyper, double* out);

/* ---- simulation -------------------------------------------------------- */

typedef struct sf_sim_spec {
    int64_t g, n, k;
    const double* pi; /* length k */
    double snr;
    uint64_t seed;
} sf_sim_spec;

sf_status sf_simulate(const sf_sim_spec* spec, sf_dataset** data_out,
                      sf_model_state** truth_out);

/* ---- Gibbs sampling ---------------------------------------------------- */

/* Called with the running posterior summary every snapshot interval. */
typedef void (*sf_progress_cb)(void* user, double seconds, int64_t step,
                               const sf_summary* running);

typedef struct sf_gibbs_config {
    int64_t iterations;
    int64_t burn_in;
    int64_t thin;
    uint64_t seed;
    const sf_model_state* init_state; /* NULL = draw from the prior */
    int64_t snapshot_every;           /* kept samples between callbacks, 0 = off */
    sf_progress_cb progress;
    void* progress_user;
} sf_gibbs_config;

sf_status sf_gibbs_run(const sf_dataset* d, const sf_hyper* hyper,
                       const sf_gibbs_config* config, sf_chain** out);
int64_t sf_chain_size(const sf_chain* c);
sf_status sf_chain_get_sample(const sf_chain* c, int64_t index,
                              sf_model_state** out);
/* Buffer must hold sf_chain_size entries. */
sf_status sf_chain_log_joints(const sf_chain* c, double* out);
sf_status sf_chain_save(const sf_chain* c, const char* dir);
sf_status sf_chain_load(const char* dir, sf_chain** out);
void sf_chain_free(sf_chain* c);

/* ---- variational inference --------------------------------------------- */

typedef struct sf_cavi_config {
    int64_t max_sweeps;
    double abs_tol;
    double rel_tol;
    int64_t elbo_every;
    uint64_t seed;
    int64_t snapshot_every; /* sweeps between callbacks, 0 = off */
    sf_progress_cb progress;
    void* progress_user;
} sf_cavi_config;

sf_status sf_cavi_run(const sf_dataset* d, const sf_hyper* hyper,
                      const sf_cavi_config* config, sf_cavi_result** out);
/* Runs `trials` independent instances with derived seeds; returns the best by
 * converged ELBO. early_stop_sweeps > 0 caps the losing trials. */
sf_status sf_cavi_multi_trial(const sf_dataset* d, const sf_hyper* hyper,
                              const sf_cavi_config* config, int64_t trials,
                              int64_t early_stop_sweeps, int threads,
                              sf_cavi_result** out);
int64_t sf_cavi_best_trial(const sf_cavi_result* r);
int64_t sf_cavi_num_trials(const sf_cavi_result* r);
int64_t sf_cavi_trace_size(const sf_cavi_result* r, int64_t trial);
sf_status sf_cavi_trace(const sf_cavi_result* r, int64_t trial, double* out);
sf_status sf_cavi_final_elbos(const sf_cavi_result* r, double* out);
sf_status sf_cavi_trial_seconds(const sf_cavi_result* r, double* out);
int sf_cavi_converged(const sf_cavi_result* r);
sf_status sf_cavi_save(const sf_cavi_result* r, const char* dir);
void sf_cavi_free(sf_cavi_result* r);

/* ---- relabelling ------------------------------------------------------- */

/* Aligns the samples of all chains in place. */
sf_status sf_relabel_chains(sf_chain** chains, int64_t n_chains, int normalize,
                            sf_relabel_result** out);
int64_t sf_relabel_num_samples(const sf_relabel_result* r);
/* sigma: n_samples*k indices; nu: n_samples*k entries of +-1. Either may be
 * NULL. */
sf_status sf_relabel_get(const sf_relabel_result* r, int64_t* sigma,
                         int32_t* nu);
int64_t sf_relabel_risk_trace_size(const sf_relabel_result* r);
sf_status sf_relabel_risk_trace(const sf_relabel_result* r, double* out);
void sf_relabel_free(sf_relabel_result* r);

/* ---- evaluation -------------------------------------------------------- */

sf_status sf_summarize_chain(const sf_chain* c, sf_summary** out);
sf_status sf_summarize_cavi(const sf_cavi_result* r, sf_summary** out);
sf_status sf_align_to_truth(const sf_summary* s, const sf_model_state* truth,
                            sf_summary** out);
void sf_summary_dims(const sf_summary* s, int64_t* g, int64_t* n, int64_t* k);
/* Any output pointer may be NULL. */
sf_status sf_summary_get(const sf_summary* s, double* mean_l, double* mean_z,
                         double* mean_f, double* mean_lf);
sf_status sf_summary_save(const sf_summary* s, const char* dir);
sf_status sf_summary_load(const char* dir, sf_summary** out);
void sf_summary_free(sf_summary* s);

sf_status sf_z_accuracy(const sf_summary* s, const sf_model_state* truth,
                        double* out);

typedef enum sf_block { SF_BLOCK_L = 0, SF_BLOCK_F = 1, SF_BLOCK_LF = 2 } sf_block;
sf_status sf_summary_rrmse(const sf_summary* s, const sf_model_state* truth,
                           sf_block block, double* out);
sf_status sf_rrmse(const double* estimate, const double* truth, int64_t count,
                   double* out);

/* heldout_ij receives n_heldout (i, j) pairs; pass NULL to query the count
 * via n_heldout first is not supported -- buffers are allocated by the
 * library and released with sf_free_indices. */
sf_status sf_fill_in_split(const sf_dataset* d, double fraction, uint64_t seed,
                           sf_dataset** masked_out, int64_t** heldout_ij,
                           int64_t* n_heldout);
void sf_free_indices(int64_t* indices);
sf_status sf_fill_in_rrmse(const sf_summary* s, const sf_dataset* full,
                           const int64_t* heldout_ij, int64_t n_heldout,
                           double* out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* SPARSEFACTOR_H */
