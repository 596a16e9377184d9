// Command-line driver for the sparse factor analysis library. Everything goes
// through the public C API; the CLI only adds config parsing, orchestration,
// and artifact layout.
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <sparsefactor/sparsefactor.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct CliError {
    int exit_code;
    std::string message;
};

void check(sf_status status, const std::string& stage) {
    if (status == SF_OK) return;
    const int code = status == SF_ERR_INVALID ? 1 : 2;
    throw CliError{code, stage + ": " + sf_last_error()};
}

[[noreturn]] void invalid(const std::string& message) {
    throw CliError{1, message};
}

// counter-based split of the master seed, same scheme as the library uses for
// multi-trial seeds
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter) {
    std::uint64_t x = master + 0x9e3779b97f4a7c15ULL * (counter + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string hex64(std::uint64_t value) {
    std::ostringstream os;
    os << std::hex << value;
    return os.str();
}

// RAII wrappers so error paths cannot leak handles
template <typename T, void (*Free)(T*)>
struct Handle {
    T* ptr = nullptr;
    Handle() = default;
    explicit Handle(T* p) : ptr(p) {}
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    Handle(Handle&& other) noexcept : ptr(other.ptr) { other.ptr = nullptr; }
    Handle& operator=(Handle&& other) noexcept {
        if (this != &other) {
            reset();
            ptr = other.ptr;
            other.ptr = nullptr;
        }
        return *this;
    }
    ~Handle() { reset(); }
    void reset() {
        if (ptr) Free(ptr);
        ptr = nullptr;
    }
    T** out() {
        reset();
        return &ptr;
    }
    T* get() const { return ptr; }
    explicit operator bool() const { return ptr != nullptr; }
};

using DatasetPtr = Handle<sf_dataset, sf_dataset_free>;
using StatePtr = Handle<sf_model_state, sf_state_free>;
using ChainPtr = Handle<sf_chain, sf_chain_free>;
using CaviPtr = Handle<sf_cavi_result, sf_cavi_free>;
using SummaryPtr = Handle<sf_summary, sf_summary_free>;
using RelabelPtr = Handle<sf_relabel_result, sf_relabel_free>;

struct HyperOpts {
    std::vector<double> pi;
    double a_tau = 1e-3, b_tau = 1e-3, a_alpha = 1e-3, b_alpha = 1e-3;

    sf_hyper to_api() const {
        if (pi.empty()) invalid("pi must be provided (one entry per factor)");
        sf_hyper h{};
        h.pi = pi.data();
        h.k = static_cast<int64_t>(pi.size());
        h.a_tau = a_tau;
        h.b_tau = b_tau;
        h.a_alpha = a_alpha;
        h.b_alpha = b_alpha;
        return h;
    }

    void add_flags(CLI::App* app) {
        app->add_option("--pi", pi, "prior activation probability per factor")
            ->delimiter(',');
        app->add_option("--a-tau", a_tau, "noise precision gamma shape");
        app->add_option("--b-tau", b_tau, "noise precision gamma rate");
        app->add_option("--a-alpha", a_alpha, "slab precision gamma shape");
        app->add_option("--b-alpha", b_alpha, "slab precision gamma rate");
    }
};

DatasetPtr load_dataset(const std::string& data_path,
                        const std::string& mask_path) {
    DatasetPtr d;
    check(sf_dataset_load(data_path.c_str(),
                          mask_path.empty() ? nullptr : mask_path.c_str(),
                          d.out()),
          "load dataset");
    return d;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw CliError{2, "cannot write " + path.string()};
    out << text;
}

void write_manifest(const fs::path& dir, const std::string& subcommand,
                    const json& config, std::uint64_t seed) {
    json manifest;
    manifest["tool"] = "sfa";
    manifest["version"] = kVersion;
    manifest["subcommand"] = subcommand;
    manifest["seed"] = seed;
    manifest["config"] = config;
    manifest["config_hash"] = hex64(fnv1a64(config.dump()));
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

void write_metrics(const fs::path& path,
                   const std::vector<std::pair<std::string, double>>& rows) {
    std::ostringstream os;
    for (const auto& [key, value] : rows) {
        os << key << '\t';
        os << std::setprecision(17) << value << '\n';
    }
    write_text_file(path, os.str());
}

// ---- snapshot instrumentation ------------------------------------------

// Appends (seconds, step, metric...) rows as the run progresses; metrics are
// computed against the truth when one is available.
struct SnapshotSink {
    std::ofstream out;
    const sf_model_state* truth = nullptr;
    bool header_written = false;

    void open(const fs::path& path, const sf_model_state* truth_state) {
        out.open(path);
        truth = truth_state;
    }

    void record(double seconds, int64_t step, const sf_summary* summary,
                std::optional<double> objective) {
        if (!out.is_open()) return;
        if (!header_written) {
            out << "seconds\tstep";
            if (objective) out << "\tobjective";
            if (truth) out << "\tz_accuracy\trrmse_lf";
            out << '\n';
            header_written = true;
        }
        out << std::setprecision(17) << seconds << '\t' << step;
        if (objective) out << '\t' << *objective;
        if (truth && summary) {
            SummaryPtr aligned;
            double acc = 0.0, err = 0.0;
            if (sf_align_to_truth(summary, truth, aligned.out()) == SF_OK &&
                sf_z_accuracy(aligned.get(), truth, &acc) == SF_OK &&
                sf_summary_rrmse(aligned.get(), truth, SF_BLOCK_LF, &err) ==
                    SF_OK)
                out << '\t' << acc << '\t' << err;
            else
                out << "\tnan\tnan";
        }
        out << '\n';
        out.flush();
    }
};

// ---- gibbs orchestration ------------------------------------------------

struct GibbsOpts {
    int64_t iterations = 1000;
    int64_t burn_in = 0;
    int64_t thin = 1;
    int64_t chains = 1;
    int64_t snapshot_every = 0;

    void add_flags(CLI::App* app) {
        app->add_option("--iterations", iterations, "Gibbs sweeps per chain");
        app->add_option("--burn-in", burn_in, "sweeps discarded up front");
        app->add_option("--thin", thin, "keep every thin-th sweep");
        app->add_option("--chains", chains, "number of independent chains");
        app->add_option("--snapshot-every", snapshot_every,
                        "kept samples between metric snapshots (0 = off)");
    }
};

struct ChainRun {
    ChainPtr chain;
    double mean_log_joint = 0.0;
};

std::vector<ChainRun> run_gibbs_chains(const sf_dataset* data,
                                       const sf_hyper& hyper,
                                       const GibbsOpts& opts,
                                       std::uint64_t master_seed,
                                       int threads, const fs::path& out_dir,
                                       const sf_model_state* truth) {
    if (opts.chains < 1) invalid("chains must be >= 1");
    std::vector<ChainRun> runs(static_cast<std::size_t>(opts.chains));
    std::vector<std::optional<CliError>> errors(runs.size());

    auto worker = [&](std::size_t c) {
        try {
            SnapshotSink sink;
            if (opts.snapshot_every > 0)
                sink.open(out_dir / ("chain_" + std::to_string(c)) /
                              "snapshots.tsv",
                          truth);

            sf_gibbs_config config{};
            config.iterations = opts.iterations;
            config.burn_in = opts.burn_in;
            config.thin = opts.thin;
            config.seed = derive_seed(master_seed, 100 + c);
            config.snapshot_every = opts.snapshot_every;
            config.progress_user = &sink;
            config.progress = [](void* user, double seconds, int64_t step,
                                 const sf_summary* running) {
                static_cast<SnapshotSink*>(user)->record(seconds, step,
                                                         running, std::nullopt);
            };
            check(sf_gibbs_run(data, &hyper, &config, runs[c].chain.out()),
                  "gibbs chain " + std::to_string(c));

            const int64_t kept = sf_chain_size(runs[c].chain.get());
            if (kept > 0) {
                std::vector<double> lj(static_cast<std::size_t>(kept));
                check(sf_chain_log_joints(runs[c].chain.get(), lj.data()),
                      "chain log joints");
                double total = 0.0;
                for (const double v : lj) total += v;
                runs[c].mean_log_joint = total / static_cast<double>(kept);
            }
        } catch (const CliError& e) {
            errors[c] = e;
        }
    };

    for (std::size_t c = 0; c < runs.size(); ++c)
        fs::create_directories(out_dir / ("chain_" + std::to_string(c)));
    if (threads <= 1 || runs.size() == 1) {
        for (std::size_t c = 0; c < runs.size(); ++c) worker(c);
    } else {
        std::vector<std::thread> pool;
        std::mutex next_mutex;
        std::size_t next = 0;
        const int n_workers =
            std::min<int>(threads, static_cast<int>(runs.size()));
        for (int w = 0; w < n_workers; ++w)
            pool.emplace_back([&] {
                for (;;) {
                    std::size_t c;
                    {
                        std::lock_guard<std::mutex> lock(next_mutex);
                        if (next >= runs.size()) return;
                        c = next++;
                    }
                    worker(c);
                }
            });
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (e) throw *e;

    for (std::size_t c = 0; c < runs.size(); ++c)
        check(sf_chain_save(runs[c].chain.get(),
                            (out_dir / ("chain_" + std::to_string(c)))
                                .string()
                                .c_str()),
              "save chain " + std::to_string(c));
    return runs;
}

void relabel_and_save(std::vector<ChainRun>& runs, bool normalize,
                      const fs::path& out_dir) {
    std::vector<sf_chain*> raw;
    raw.reserve(runs.size());
    for (auto& r : runs) raw.push_back(r.chain.get());
    RelabelPtr result;
    check(sf_relabel_chains(raw.data(), static_cast<int64_t>(raw.size()),
                            normalize ? 1 : 0, result.out()),
          "relabel chains");

    const int64_t risk_n = sf_relabel_risk_trace_size(result.get());
    std::vector<double> risk(static_cast<std::size_t>(risk_n));
    check(sf_relabel_risk_trace(result.get(), risk.data()), "risk trace");
    std::ostringstream os;
    os << std::setprecision(17);
    for (const double r : risk) os << r << '\n';
    write_text_file(out_dir / "relabel_risk_trace.csv", os.str());

    // relabelling mutates the chains; persist the aligned versions
    for (std::size_t c = 0; c < runs.size(); ++c)
        check(sf_chain_save(runs[c].chain.get(),
                            (out_dir / ("chain_" + std::to_string(c)))
                                .string()
                                .c_str()),
              "save relabelled chain");
}

std::vector<std::pair<std::string, double>> truth_metrics(
    const sf_summary* summary, const sf_model_state* truth,
    const std::string& prefix) {
    SummaryPtr aligned;
    check(sf_align_to_truth(summary, truth, aligned.out()), "align to truth");
    double acc = 0.0, err_l = 0.0, err_f = 0.0, err_lf = 0.0;
    check(sf_z_accuracy(aligned.get(), truth, &acc), "z accuracy");
    check(sf_summary_rrmse(aligned.get(), truth, SF_BLOCK_L, &err_l), "rrmse L");
    check(sf_summary_rrmse(aligned.get(), truth, SF_BLOCK_F, &err_f), "rrmse F");
    check(sf_summary_rrmse(aligned.get(), truth, SF_BLOCK_LF, &err_lf),
          "rrmse LF");
    return {{prefix + "z_accuracy", acc},
            {prefix + "rrmse_l", err_l},
            {prefix + "rrmse_f", err_f},
            {prefix + "rrmse_lf", err_lf}};
}

// ---- cavi orchestration -------------------------------------------------

struct CaviOpts {
    int64_t max_sweeps = 10000;
    double abs_tol = 1e-10;
    double rel_tol = 1e-14;
    int64_t elbo_every = 1;
    int64_t trials = 1;
    int64_t early_stop_sweeps = 0;
    int64_t snapshot_every = 0;

    void add_flags(CLI::App* app) {
        app->add_option("--max-sweeps", max_sweeps, "sweep budget per trial");
        app->add_option("--abs-tol", abs_tol, "absolute ELBO tolerance");
        app->add_option("--rel-tol", rel_tol, "relative ELBO tolerance");
        app->add_option("--elbo-every", elbo_every,
                        "sweeps between ELBO evaluations");
        app->add_option("--trials", trials, "independent restarts");
        app->add_option("--early-stop-sweeps", early_stop_sweeps,
                        "probe budget before only the leader continues");
        app->add_option("--snapshot-every", snapshot_every,
                        "sweeps between metric snapshots (0 = off)");
    }
};

CaviPtr run_cavi(const sf_dataset* data, const sf_hyper& hyper,
                 const CaviOpts& opts, std::uint64_t seed, int threads,
                 const fs::path& out_dir, const sf_model_state* truth) {
    SnapshotSink sink;
    if (opts.snapshot_every > 0) sink.open(out_dir / "snapshots.tsv", truth);

    sf_cavi_config config{};
    config.max_sweeps = opts.max_sweeps;
    config.abs_tol = opts.abs_tol;
    config.rel_tol = opts.rel_tol;
    config.elbo_every = opts.elbo_every;
    config.seed = seed;
    config.snapshot_every = opts.snapshot_every;
    config.progress_user = &sink;
    config.progress = [](void* user, double seconds, int64_t step,
                         const sf_summary* running) {
        static_cast<SnapshotSink*>(user)->record(seconds, step, running,
                                                 std::nullopt);
    };

    CaviPtr result;
    if (opts.trials <= 1)
        check(sf_cavi_run(data, &hyper, &config, result.out()), "cavi");
    else
        check(sf_cavi_multi_trial(data, &hyper, &config, opts.trials,
                                  opts.early_stop_sweeps, threads,
                                  result.out()),
              "cavi multi trial");

    check(sf_cavi_save(result.get(), out_dir.string().c_str()), "save cavi");
    SummaryPtr summary;
    check(sf_summarize_cavi(result.get(), summary.out()), "summarize cavi");
    check(sf_summary_save(summary.get(), (out_dir / "summary").string().c_str()),
          "save cavi summary");
    return result;
}

// ---- subcommand payloads ------------------------------------------------

struct GlobalOpts {
    std::string out;
    std::uint64_t seed = 0;
    int threads = 1;
    bool seed_set = false;
    bool out_set = false;
    bool threads_set = false;
};

fs::path require_out(const GlobalOpts& global) {
    if (global.out.empty()) invalid("--out is required");
    fs::path dir(global.out);
    fs::create_directories(dir);
    return dir;
}

json hyper_to_json(const HyperOpts& hyper) {
    return json{{"pi", hyper.pi},
                {"a_tau", hyper.a_tau},
                {"b_tau", hyper.b_tau},
                {"a_alpha", hyper.a_alpha},
                {"b_alpha", hyper.b_alpha}};
}

int cmd_simulate(const GlobalOpts& global, int64_t g, int64_t n,
                 const std::vector<double>& pi, double snr) {
    const fs::path out_dir = require_out(global);
    if (pi.empty()) invalid("--pi must list one activation probability per factor");

    sf_sim_spec spec{};
    spec.g = g;
    spec.n = n;
    spec.k = static_cast<int64_t>(pi.size());
    spec.pi = pi.data();
    spec.snr = snr;
    spec.seed = global.seed;

    DatasetPtr data;
    StatePtr truth;
    check(sf_simulate(&spec, data.out(), truth.out()), "simulate");
    check(sf_dataset_save(data.get(), (out_dir / "y.csv").string().c_str(),
                          nullptr),
          "save dataset");
    check(sf_state_save(truth.get(), (out_dir / "truth").string().c_str()),
          "save truth");

    write_manifest(out_dir, "simulate",
                   json{{"g", g}, {"n", n}, {"pi", pi}, {"snr", snr}},
                   global.seed);
    return 0;
}

int cmd_gibbs(const GlobalOpts& global, const std::string& data_path,
              const std::string& mask_path, const HyperOpts& hyper_opts,
              const GibbsOpts& opts, const std::string& truth_dir) {
    const fs::path out_dir = require_out(global);
    DatasetPtr data = load_dataset(data_path, mask_path);
    const sf_hyper hyper = hyper_opts.to_api();

    StatePtr truth;
    if (!truth_dir.empty())
        check(sf_state_load(truth_dir.c_str(), truth.out()), "load truth");

    auto runs = run_gibbs_chains(data.get(), hyper, opts, global.seed,
                                 global.threads, out_dir, truth.get());
    if (runs.size() > 1) relabel_and_save(runs, true, out_dir);

    std::size_t best = 0;
    for (std::size_t c = 1; c < runs.size(); ++c)
        if (runs[c].mean_log_joint > runs[best].mean_log_joint) best = c;

    std::vector<std::pair<std::string, double>> metrics{
        {"best_chain", static_cast<double>(best)},
        {"best_chain_mean_log_joint", runs[best].mean_log_joint}};
    SummaryPtr summary;
    check(sf_summarize_chain(runs[best].chain.get(), summary.out()),
          "summarize best chain");
    check(sf_summary_save(summary.get(),
                          (out_dir / "summary").string().c_str()),
          "save summary");
    if (truth) {
        const auto extra = truth_metrics(summary.get(), truth.get(), "");
        metrics.insert(metrics.end(), extra.begin(), extra.end());
    }
    write_metrics(out_dir / "metrics.tsv", metrics);

    write_manifest(out_dir, "gibbs",
                   json{{"data", data_path},
                        {"mask", mask_path},
                        {"hyper", hyper_to_json(hyper_opts)},
                        {"iterations", opts.iterations},
                        {"burn_in", opts.burn_in},
                        {"thin", opts.thin},
                        {"chains", opts.chains},
                        {"snapshot_every", opts.snapshot_every},
                        {"truth", truth_dir}},
                   global.seed);
    return 0;
}

int cmd_cavi(const GlobalOpts& global, const std::string& data_path,
             const std::string& mask_path, const HyperOpts& hyper_opts,
             const CaviOpts& opts, const std::string& truth_dir) {
    const fs::path out_dir = require_out(global);
    DatasetPtr data = load_dataset(data_path, mask_path);
    const sf_hyper hyper = hyper_opts.to_api();

    StatePtr truth;
    if (!truth_dir.empty())
        check(sf_state_load(truth_dir.c_str(), truth.out()), "load truth");

    CaviPtr result = run_cavi(data.get(), hyper, opts, global.seed,
                              global.threads, out_dir, truth.get());

    const int64_t trials = sf_cavi_num_trials(result.get());
    std::vector<double> finals(static_cast<std::size_t>(trials));
    check(sf_cavi_final_elbos(result.get(), finals.data()), "final elbos");
    const int64_t best = sf_cavi_best_trial(result.get());
    std::vector<std::pair<std::string, double>> metrics{
        {"best_trial", static_cast<double>(best)},
        {"best_elbo", finals[static_cast<std::size_t>(best)]},
        {"converged", static_cast<double>(sf_cavi_converged(result.get()))}};
    if (truth) {
        SummaryPtr summary;
        check(sf_summarize_cavi(result.get(), summary.out()), "summarize cavi");
        const auto extra = truth_metrics(summary.get(), truth.get(), "");
        metrics.insert(metrics.end(), extra.begin(), extra.end());
    }
    write_metrics(out_dir / "metrics.tsv", metrics);

    write_manifest(out_dir, "cavi",
                   json{{"data", data_path},
                        {"mask", mask_path},
                        {"hyper", hyper_to_json(hyper_opts)},
                        {"max_sweeps", opts.max_sweeps},
                        {"abs_tol", opts.abs_tol},
                        {"rel_tol", opts.rel_tol},
                        {"elbo_every", opts.elbo_every},
                        {"trials", opts.trials},
                        {"early_stop_sweeps", opts.early_stop_sweeps},
                        {"snapshot_every", opts.snapshot_every},
                        {"truth", truth_dir}},
                   global.seed);
    return 0;
}

int cmd_relabel(const GlobalOpts& global,
                const std::vector<std::string>& chain_dirs, bool normalize) {
    const fs::path out_dir = require_out(global);
    if (chain_dirs.empty()) invalid("at least one --chain directory is required");

    std::vector<ChainRun> runs(chain_dirs.size());
    for (std::size_t c = 0; c < chain_dirs.size(); ++c)
        check(sf_chain_load(chain_dirs[c].c_str(), runs[c].chain.out()),
              "load chain " + chain_dirs[c]);
    relabel_and_save(runs, normalize, out_dir);

    write_manifest(out_dir, "relabel",
                   json{{"chains", chain_dirs}, {"normalize", normalize}},
                   global.seed);
    return 0;
}

int cmd_evaluate(const GlobalOpts& global, const std::string& chain_dir,
                 const std::string& summary_dir, const std::string& truth_dir) {
    const fs::path out_dir = require_out(global);
    if (chain_dir.empty() == summary_dir.empty())
        invalid("exactly one of --chain and --summary is required");
    if (truth_dir.empty()) invalid("--truth is required");

    SummaryPtr summary;
    if (!chain_dir.empty()) {
        ChainPtr chain;
        check(sf_chain_load(chain_dir.c_str(), chain.out()), "load chain");
        check(sf_summarize_chain(chain.get(), summary.out()), "summarize");
    } else {
        check(sf_summary_load(summary_dir.c_str(), summary.out()),
              "load summary");
    }
    StatePtr truth;
    check(sf_state_load(truth_dir.c_str(), truth.out()), "load truth");

    write_metrics(out_dir / "metrics.tsv",
                  truth_metrics(summary.get(), truth.get(), ""));
    write_manifest(out_dir, "evaluate",
                   json{{"chain", chain_dir},
                        {"summary", summary_dir},
                        {"truth", truth_dir}},
                   global.seed);
    return 0;
}

int cmd_fillin(const GlobalOpts& global, const std::string& data_path,
               const std::string& mask_path, double fraction) {
    const fs::path out_dir = require_out(global);
    DatasetPtr data = load_dataset(data_path, mask_path);

    DatasetPtr masked;
    int64_t* heldout = nullptr;
    int64_t n_heldout = 0;
    check(sf_fill_in_split(data.get(), fraction, global.seed, masked.out(),
                           &heldout, &n_heldout),
          "fill-in split");
    check(sf_dataset_save(masked.get(),
                          (out_dir / "masked.csv").string().c_str(), nullptr),
          "save masked dataset");
    std::ostringstream os;
    for (int64_t t = 0; t < n_heldout; ++t)
        os << heldout[2 * t] << ',' << heldout[2 * t + 1] << '\n';
    sf_free_indices(heldout);
    write_text_file(out_dir / "heldout.csv", os.str());

    write_manifest(
        out_dir, "fillin",
        json{{"data", data_path}, {"mask", mask_path}, {"fraction", fraction}},
        global.seed);
    return 0;
}

// ---- full pipeline ------------------------------------------------------

HyperOpts hyper_from_json(const json& node) {
    HyperOpts hyper;
    hyper.pi = node.at("pi").get<std::vector<double>>();
    hyper.a_tau = node.value("a_tau", 1e-3);
    hyper.b_tau = node.value("b_tau", 1e-3);
    hyper.a_alpha = node.value("a_alpha", 1e-3);
    hyper.b_alpha = node.value("b_alpha", 1e-3);
    return hyper;
}

int cmd_run(const GlobalOpts& global, const std::string& config_path) {
    std::ifstream in(config_path);
    if (!in) invalid("cannot open config file " + config_path);
    json config;
    try {
        in >> config;
    } catch (const json::exception& e) {
        invalid(std::string("config parse error: ") + e.what());
    }

    const std::string out_path =
        global.out_set ? global.out : config.value("out", "");
    if (out_path.empty()) invalid("output directory missing (config.out or --out)");
    fs::path out_dir(out_path);
    fs::create_directories(out_dir);
    const std::uint64_t seed =
        global.seed_set ? global.seed : config.value("seed", std::uint64_t{0});
    const int threads =
        global.threads_set ? global.threads : config.value("threads", 1);

    const std::string method = config.value("method", "both");
    if (method != "gibbs" && method != "cavi" && method != "both")
        invalid("method must be gibbs, cavi, or both");
    if (config.contains("data") == config.contains("simulate"))
        invalid("config needs exactly one of data and simulate");
    if (!config.contains("hyper")) invalid("config.hyper is required");
    const HyperOpts hyper_opts = hyper_from_json(config.at("hyper"));
    const sf_hyper hyper = hyper_opts.to_api();

    write_manifest(out_dir, "run", config, seed);

    // stage 1: data
    DatasetPtr full_data;
    StatePtr truth;
    try {
        if (config.contains("simulate")) {
            const auto& sim = config.at("simulate");
            const auto pi = sim.at("pi").get<std::vector<double>>();
            sf_sim_spec spec{};
            spec.g = sim.at("g").get<int64_t>();
            spec.n = sim.at("n").get<int64_t>();
            spec.k = static_cast<int64_t>(pi.size());
            spec.pi = pi.data();
            spec.snr = sim.at("snr").get<double>();
            spec.seed = derive_seed(seed, 0);
            check(sf_simulate(&spec, full_data.out(), truth.out()), "simulate");
            check(sf_state_save(truth.get(),
                                (out_dir / "truth").string().c_str()),
                  "save truth");
        } else {
            const auto& src = config.at("data");
            full_data = load_dataset(src.at("y").get<std::string>(),
                                     src.value("mask", ""));
        }
        check(sf_dataset_save(full_data.get(),
                              (out_dir / "y.csv").string().c_str(), nullptr),
              "save dataset");
    } catch (const CliError& e) {
        throw CliError{e.exit_code, "stage data: " + e.message};
    }

    // stage 2: optional fill-in split
    DatasetPtr fit_data;
    std::vector<int64_t> heldout;
    const double fraction = config.value("fill_in_fraction", 0.0);
    if (fraction > 0.0) {
        try {
            int64_t* raw = nullptr;
            int64_t n_heldout = 0;
            check(sf_fill_in_split(full_data.get(), fraction,
                                   derive_seed(seed, 1), fit_data.out(), &raw,
                                   &n_heldout),
                  "split");
            heldout.assign(raw, raw + 2 * n_heldout);
            sf_free_indices(raw);
            check(sf_dataset_save(fit_data.get(),
                                  (out_dir / "masked.csv").string().c_str(),
                                  nullptr),
                  "save masked");
            std::ostringstream os;
            for (int64_t t = 0; t < n_heldout; ++t)
                os << heldout[2 * t] << ',' << heldout[2 * t + 1] << '\n';
            write_text_file(out_dir / "heldout.csv", os.str());
        } catch (const CliError& e) {
            throw CliError{e.exit_code, "stage fillin: " + e.message};
        }
    }
    const sf_dataset* data =
        fit_data ? fit_data.get() : full_data.get();

    auto fill_in_metric = [&](const sf_summary* summary) {
        double err = 0.0;
        check(sf_fill_in_rrmse(summary, full_data.get(), heldout.data(),
                               static_cast<int64_t>(heldout.size() / 2), &err),
              "fill-in rrmse");
        return err;
    };

    // stage 3: gibbs
    if (method == "gibbs" || method == "both") {
        try {
            const auto node = config.value("gibbs", json::object());
            GibbsOpts opts;
            opts.iterations = node.value("iterations", int64_t{1000});
            opts.burn_in = node.value("burn_in", int64_t{0});
            opts.thin = node.value("thin", int64_t{1});
            opts.chains = node.value("chains", int64_t{1});
            opts.snapshot_every =
                node.value("snapshot_every",
                           config.value("snapshot_every", int64_t{0}));
            const fs::path dir = out_dir / "gibbs";
            fs::create_directories(dir);
            auto runs = run_gibbs_chains(data, hyper, opts, seed, threads, dir,
                                         truth.get());
            if (runs.size() > 1) relabel_and_save(runs, true, dir);

            std::size_t best = 0;
            for (std::size_t c = 1; c < runs.size(); ++c)
                if (runs[c].mean_log_joint > runs[best].mean_log_joint)
                    best = c;
            SummaryPtr summary;
            check(sf_summarize_chain(runs[best].chain.get(), summary.out()),
                  "summarize");
            check(sf_summary_save(summary.get(),
                                  (dir / "summary").string().c_str()),
                  "save summary");

            std::vector<std::pair<std::string, double>> metrics{
                {"best_chain", static_cast<double>(best)},
                {"best_chain_mean_log_joint", runs[best].mean_log_joint}};
            if (truth) {
                const auto extra =
                    truth_metrics(summary.get(), truth.get(), "");
                metrics.insert(metrics.end(), extra.begin(), extra.end());
            }
            if (!heldout.empty())
                metrics.emplace_back("fill_in_rrmse",
                                     fill_in_metric(summary.get()));
            write_metrics(dir / "metrics.tsv", metrics);
        } catch (const CliError& e) {
            throw CliError{e.exit_code, "stage gibbs: " + e.message};
        }
    }

    // stage 4: cavi
    if (method == "cavi" || method == "both") {
        try {
            const auto node = config.value("cavi", json::object());
            CaviOpts opts;
            opts.max_sweeps = node.value("max_sweeps", int64_t{10000});
            opts.abs_tol = node.value("abs_tol", 1e-10);
            opts.rel_tol = node.value("rel_tol", 1e-14);
            opts.elbo_every = node.value("elbo_every", int64_t{1});
            opts.trials = node.value("trials", int64_t{1});
            opts.early_stop_sweeps =
                node.value("early_stop_sweeps", int64_t{0});
            opts.snapshot_every =
                node.value("snapshot_every",
                           config.value("snapshot_every", int64_t{0}));
            const fs::path dir = out_dir / "cavi";
            fs::create_directories(dir);
            CaviPtr result = run_cavi(data, hyper, opts, derive_seed(seed, 200),
                                      threads, dir, truth.get());

            const int64_t trials = sf_cavi_num_trials(result.get());
            std::vector<double> finals(static_cast<std::size_t>(trials));
            check(sf_cavi_final_elbos(result.get(), finals.data()),
                  "final elbos");
            const int64_t best = sf_cavi_best_trial(result.get());
            std::vector<std::pair<std::string, double>> metrics{
                {"best_trial", static_cast<double>(best)},
                {"best_elbo", finals[static_cast<std::size_t>(best)]},
                {"converged",
                 static_cast<double>(sf_cavi_converged(result.get()))}};
            SummaryPtr summary;
            check(sf_summarize_cavi(result.get(), summary.out()), "summarize");
            if (truth) {
                const auto extra =
                    truth_metrics(summary.get(), truth.get(), "");
                metrics.insert(metrics.end(), extra.begin(), extra.end());
            }
            if (!heldout.empty())
                metrics.emplace_back("fill_in_rrmse",
                                     fill_in_metric(summary.get()));
            write_metrics(dir / "metrics.tsv", metrics);
        } catch (const CliError& e) {
            throw CliError{e.exit_code, "stage cavi: " + e.message};
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse Bayesian factor analysis toolkit"};
    app.require_subcommand(1);

    GlobalOpts global;
    auto add_globals = [&](CLI::App* sub) {
        sub->add_option("--out", global.out, "output directory")
            ->each([&](const std::string&) { global.out_set = true; });
        sub->add_option("--seed", global.seed, "master seed")
            ->each([&](const std::string&) { global.seed_set = true; });
        sub->add_option("--threads", global.threads, "worker threads")
            ->each([&](const std::string&) { global.threads_set = true; });
    };

    // simulate
    auto* sim = app.add_subcommand("simulate", "draw a synthetic dataset");
    int64_t sim_g = 800, sim_n = 100;
    std::vector<double> sim_pi;
    double sim_snr = 5.0;
    sim->add_option("--g", sim_g, "number of features");
    sim->add_option("--n", sim_n, "number of samples");
    sim->add_option("--pi", sim_pi, "activation probability per factor")
        ->delimiter(',');
    sim->add_option("--snr", sim_snr, "signal-to-noise ratio");
    add_globals(sim);

    // gibbs
    auto* gibbs = app.add_subcommand("gibbs", "run collapsed Gibbs chains");
    std::string gibbs_data, gibbs_mask, gibbs_truth;
    HyperOpts gibbs_hyper;
    GibbsOpts gibbs_opts;
    gibbs->add_option("--data", gibbs_data, "data csv (NA = missing)")
        ->required();
    gibbs->add_option("--mask", gibbs_mask, "optional 0/1 mask csv");
    gibbs->add_option("--truth", gibbs_truth,
                      "truth state directory for snapshot metrics");
    gibbs_hyper.add_flags(gibbs);
    gibbs_opts.add_flags(gibbs);
    add_globals(gibbs);

    // cavi
    auto* cavi = app.add_subcommand("cavi", "run variational inference");
    std::string cavi_data, cavi_mask, cavi_truth;
    HyperOpts cavi_hyper;
    CaviOpts cavi_opts;
    cavi->add_option("--data", cavi_data, "data csv (NA = missing)")
        ->required();
    cavi->add_option("--mask", cavi_mask, "optional 0/1 mask csv");
    cavi->add_option("--truth", cavi_truth,
                     "truth state directory for snapshot metrics");
    cavi_hyper.add_flags(cavi);
    cavi_opts.add_flags(cavi);
    add_globals(cavi);

    // relabel
    auto* relabel = app.add_subcommand("relabel", "align saved chains");
    std::vector<std::string> relabel_chains;
    bool relabel_normalize = false;
    relabel->add_option("--chain", relabel_chains, "chain directory (repeat)")
        ->required();
    relabel->add_flag("--normalize", relabel_normalize,
                      "unit-normalise rows for the alignment");
    add_globals(relabel);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "score against a truth");
    std::string eval_chain, eval_summary, eval_truth;
    evaluate->add_option("--chain", eval_chain, "chain directory");
    evaluate->add_option("--summary", eval_summary, "summary directory");
    evaluate->add_option("--truth", eval_truth, "truth state directory")
        ->required();
    add_globals(evaluate);

    // fillin
    auto* fillin = app.add_subcommand("fillin", "hold out observed entries");
    std::string fillin_data, fillin_mask;
    double fillin_fraction = 0.1;
    fillin->add_option("--data", fillin_data, "data csv")->required();
    fillin->add_option("--mask", fillin_mask, "optional 0/1 mask csv");
    fillin->add_option("--fraction", fillin_fraction,
                       "fraction of observed entries to hold out");
    add_globals(fillin);

    // run
    auto* run = app.add_subcommand("run", "full configured pipeline");
    std::string run_config;
    run->add_option("--config", run_config, "experiment config json")
        ->required();
    add_globals(run);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (sim->parsed())
            return cmd_simulate(global, sim_g, sim_n, sim_pi, sim_snr);
        if (gibbs->parsed())
            return cmd_gibbs(global, gibbs_data, gibbs_mask, gibbs_hyper,
                             gibbs_opts, gibbs_truth);
        if (cavi->parsed())
            return cmd_cavi(global, cavi_data, cavi_mask, cavi_hyper,
                            cavi_opts, cavi_truth);
        if (relabel->parsed())
            return cmd_relabel(global, relabel_chains, relabel_normalize);
        if (evaluate->parsed())
            return cmd_evaluate(global, eval_chain, eval_summary, eval_truth);
        if (fillin->parsed())
            return cmd_fillin(global, fillin_data, fillin_mask,
                              fillin_fraction);
        if (run->parsed()) return cmd_run(global, run_config);
    } catch (const CliError& e) {
        std::cerr << "error: " << e.message << '\n';
        return e.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
