#include "core/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace sfa::io {

using nlohmann::json;

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

namespace {

[[noreturn]] void io_fail(const fs::path& path, const std::string& what) {
    throw std::runtime_error(path.string() + ": " + what);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (const char c : line) {
        if (c == ',' || c == '\t' || c == ' ' || c == ';') {
            if (!cur.empty()) {
                fields.push_back(cur);
                cur.clear();
            } else if (c == ',' || c == ';') {
                fields.emplace_back();
            }
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) fields.push_back(cur);
    return fields;
}

bool parse_value(const std::string& field, double& out) {
    if (field == "NA" || field == "NaN" || field == "nan") {
        out = std::numeric_limits<double>::quiet_NaN();
        return true;
    }
    const char* begin = field.data();
    const char* end = begin + field.size();
    const auto res = std::from_chars(begin, end, out);
    return res.ec == std::errc() && res.ptr == end;
}

std::vector<std::vector<double>> read_rows(const fs::path& path) {
    std::ifstream in(path);
    if (!in) io_fail(path, "cannot open for reading");
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        const auto fields = split_fields(line);
        if (fields.empty()) continue;
        std::vector<double> row;
        row.reserve(fields.size());
        bool ok = true;
        for (const auto& f : fields) {
            double v;
            if (!parse_value(f, v)) {
                ok = false;
                break;
            }
            row.push_back(v);
        }
        if (!ok) {
            if (first) {  // header line
                first = false;
                continue;
            }
            io_fail(path, "unparsable numeric line: " + line);
        }
        first = false;
        if (!rows.empty() && rows.front().size() != row.size())
            io_fail(path, "ragged rows");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) io_fail(path, "no numeric rows");
    return rows;
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) io_fail(path, "cannot open for writing");
    return out;
}

}  // namespace

Matrix read_matrix(const fs::path& path) {
    const auto rows = read_rows(path);
    Matrix m(static_cast<Index>(rows.size()),
             static_cast<Index>(rows.front().size()));
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
            m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return m;
}

void write_matrix(const fs::path& path, const Matrix& m, char delim) {
    auto out = open_out(path);
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) out << delim;
            if (std::isnan(m(i, j)))
                out << "NA";
            else
                out << format_double(m(i, j));
        }
        out << '\n';
    }
}

void write_vector(const fs::path& path, const Vector& v) {
    auto out = open_out(path);
    for (Index i = 0; i < v.size(); ++i) out << format_double(v[i]) << '\n';
}

Vector read_vector(const fs::path& path) {
    const Matrix m = read_matrix(path);
    if (m.cols() == 1) return m.col(0);
    if (m.rows() == 1) return m.row(0).transpose();
    io_fail(path, "expected a single row or column");
}

void write_bool_matrix(const fs::path& path, const BoolMatrix& m, char delim) {
    auto out = open_out(path);
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) out << delim;
            out << static_cast<int>(m(i, j));
        }
        out << '\n';
    }
}

BoolMatrix read_bool_matrix(const fs::path& path) {
    const Matrix m = read_matrix(path);
    BoolMatrix b(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) {
            if (m(i, j) != 0.0 && m(i, j) != 1.0)
                io_fail(path, "mask entries must be 0 or 1");
            b(i, j) = m(i, j) != 0.0 ? 1 : 0;
        }
    return b;
}

Dataset load_dataset(const fs::path& data_path, const fs::path& mask_path) {
    Matrix y = read_matrix(data_path);
    BoolMatrix mask = mask_path.empty()
                          ? BoolMatrix::Ones(y.rows(), y.cols()).eval()
                          : read_bool_matrix(mask_path);
    if (mask.rows() != y.rows() || mask.cols() != y.cols())
        io_fail(mask_path, "mask shape does not match data shape");
    for (Index i = 0; i < y.rows(); ++i)
        for (Index j = 0; j < y.cols(); ++j)
            if (std::isnan(y(i, j))) {
                mask(i, j) = 0;
                y(i, j) = 0.0;
            }
    return Dataset(std::move(y), std::move(mask));
}

void save_dataset(const fs::path& data_path, const Dataset& data,
                  const fs::path& mask_path) {
    Matrix y = data.y;
    if (mask_path.empty()) {
        // masked entries persist as the NA sentinel
        for (Index i = 0; i < y.rows(); ++i)
            for (Index j = 0; j < y.cols(); ++j)
                if (!data.observed(i, j))
                    y(i, j) = std::numeric_limits<double>::quiet_NaN();
        write_matrix(data_path, y);
    } else {
        write_matrix(data_path, y);
        write_bool_matrix(mask_path, data.mask);
    }
}

void save_state(const fs::path& dir, const ModelState& state) {
    fs::create_directories(dir);
    write_matrix(dir / "l.csv", state.l);
    write_matrix(dir / "f.csv", state.f);
    write_bool_matrix(dir / "z.csv", state.z);
    write_vector(dir / "tau.csv", state.tau);
    write_vector(dir / "alpha.csv", state.alpha);
}

ModelState load_state(const fs::path& dir) {
    ModelState state;
    state.l = read_matrix(dir / "l.csv");
    state.f = read_matrix(dir / "f.csv");
    state.z = read_bool_matrix(dir / "z.csv");
    state.tau = read_vector(dir / "tau.csv");
    state.alpha = read_vector(dir / "alpha.csv");
    state.validate();
    return state;
}

namespace {

Matrix flatten_samples(const SampleChain& chain,
                       const std::function<Matrix(const ModelState&)>& pick) {
    const Index t = static_cast<Index>(chain.samples.size());
    if (t == 0) return Matrix(0, 0);
    const Matrix first = pick(chain.samples.front());
    Matrix out(t, first.size());
    for (Index s = 0; s < t; ++s) {
        const Matrix m = pick(chain.samples[static_cast<std::size_t>(s)]);
        for (Index i = 0; i < m.rows(); ++i)
            for (Index j = 0; j < m.cols(); ++j)
                out(s, i * m.cols() + j) = m(i, j);
    }
    return out;
}

Matrix unflatten_row(const Matrix& trace, Index s, Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = trace(s, i * cols + j);
    return m;
}

}  // namespace

void save_chain(const fs::path& dir, const SampleChain& chain, Index g, Index n,
                Index k) {
    fs::create_directories(dir);
    write_matrix(dir / "l_trace.csv",
                 flatten_samples(chain, [](const ModelState& s) { return s.l; }));
    write_matrix(dir / "f_trace.csv",
                 flatten_samples(chain, [](const ModelState& s) { return s.f; }));
    write_matrix(dir / "z_trace.csv",
                 flatten_samples(chain, [](const ModelState& s) {
                     return s.z.cast<double>().eval();
                 }));
    write_matrix(dir / "tau_trace.csv",
                 flatten_samples(chain, [](const ModelState& s) {
                     return Matrix(s.tau.transpose());
                 }));
    write_matrix(dir / "alpha_trace.csv",
                 flatten_samples(chain, [](const ModelState& s) {
                     return Matrix(s.alpha.transpose());
                 }));

    json manifest;
    manifest["g"] = g;
    manifest["n"] = n;
    manifest["k"] = k;
    manifest["samples"] = chain.samples.size();
    manifest["iterations"] = chain.config.iterations;
    manifest["burn_in"] = chain.config.burn_in;
    manifest["thin"] = chain.config.thin;
    manifest["seed"] = chain.config.seed;
    manifest["log_joint"] = chain.log_joints;
    auto out = open_out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
}

SampleChain load_chain(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) io_fail(dir / "manifest.json", "cannot open for reading");
    json manifest = json::parse(in);
    const Index g = manifest.at("g");
    const Index n = manifest.at("n");
    const Index k = manifest.at("k");
    const auto t = manifest.at("samples").get<Index>();

    SampleChain chain;
    chain.config.iterations = manifest.at("iterations");
    chain.config.burn_in = manifest.at("burn_in");
    chain.config.thin = manifest.at("thin");
    chain.config.seed = manifest.at("seed");
    chain.log_joints = manifest.at("log_joint").get<std::vector<double>>();

    if (t == 0) return chain;
    const Matrix l_trace = read_matrix(dir / "l_trace.csv");
    const Matrix f_trace = read_matrix(dir / "f_trace.csv");
    const Matrix z_trace = read_matrix(dir / "z_trace.csv");
    const Matrix tau_trace = read_matrix(dir / "tau_trace.csv");
    const Matrix alpha_trace = read_matrix(dir / "alpha_trace.csv");
    if (l_trace.rows() != t) io_fail(dir / "l_trace.csv", "sample count mismatch");

    for (Index s = 0; s < t; ++s) {
        ModelState state;
        state.l = unflatten_row(l_trace, s, g, k);
        state.f = unflatten_row(f_trace, s, k, n);
        const Matrix z = unflatten_row(z_trace, s, g, k);
        state.z.resize(g, k);
        for (Index i = 0; i < g; ++i)
            for (Index kk = 0; kk < k; ++kk) state.z(i, kk) = z(i, kk) != 0.0;
        state.tau = tau_trace.row(s).transpose();
        state.alpha = alpha_trace.row(s).transpose();
        chain.samples.push_back(std::move(state));
    }
    return chain;
}

void save_vstate(const fs::path& dir, const VariationalState& v) {
    fs::create_directories(dir);
    write_matrix(dir / "eta.csv", v.eta);
    write_matrix(dir / "mu_l.csv", v.mu_l);
    write_matrix(dir / "var_l.csv", v.var_l);
    write_matrix(dir / "mu_f.csv", v.mu_f);
    write_matrix(dir / "var_f.csv", v.var_f);
    write_vector(dir / "a_tau_hat.csv", v.a_tau_hat);
    write_vector(dir / "b_tau_hat.csv", v.b_tau_hat);
    write_vector(dir / "a_alpha_hat.csv", v.a_alpha_hat);
    write_vector(dir / "b_alpha_hat.csv", v.b_alpha_hat);
}

VariationalState load_vstate(const fs::path& dir) {
    VariationalState v;
    v.eta = read_matrix(dir / "eta.csv");
    v.mu_l = read_matrix(dir / "mu_l.csv");
    v.var_l = read_matrix(dir / "var_l.csv");
    v.mu_f = read_matrix(dir / "mu_f.csv");
    v.var_f = read_matrix(dir / "var_f.csv");
    v.a_tau_hat = read_vector(dir / "a_tau_hat.csv");
    v.b_tau_hat = read_vector(dir / "b_tau_hat.csv");
    v.a_alpha_hat = read_vector(dir / "a_alpha_hat.csv");
    v.b_alpha_hat = read_vector(dir / "b_alpha_hat.csv");
    v.validate();
    return v;
}

void write_kv_metrics(const fs::path& path,
                      const std::vector<std::pair<std::string, double>>& rows) {
    auto out = open_out(path);
    for (const auto& [key, value] : rows)
        out << key << '\t' << format_double(value) << '\n';
}

}  // namespace sfa::io
