#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "core/types.hpp"
#include "core/gibbs.hpp"
#include "core/cavi.hpp"

namespace sfa::io {

namespace fs = std::filesystem;

// Shortest representation that round-trips the double exactly.
std::string format_double(double x);

// Reads a comma/tab/space delimited numeric matrix; an optional non-numeric
// header line is skipped; "NA" parses as NaN.
Matrix read_matrix(const fs::path& path);
void write_matrix(const fs::path& path, const Matrix& m, char delim = ',');

void write_vector(const fs::path& path, const Vector& v);
Vector read_vector(const fs::path& path);

void write_bool_matrix(const fs::path& path, const BoolMatrix& m,
                       char delim = ',');
BoolMatrix read_bool_matrix(const fs::path& path);

// NaN entries of the data file (the "NA" sentinel) are masked out, on top of
// an optional same-shaped 0/1 mask file.
Dataset load_dataset(const fs::path& data_path, const fs::path& mask_path = {});
void save_dataset(const fs::path& data_path, const Dataset& data,
                  const fs::path& mask_path = {});

void save_state(const fs::path& dir, const ModelState& state);
ModelState load_state(const fs::path& dir);

// One directory per chain: flattened row-major per-sample traces plus a
// manifest carrying the config and per-sample log-joint values.
void save_chain(const fs::path& dir, const SampleChain& chain, Index g, Index n,
                Index k);
SampleChain load_chain(const fs::path& dir);

void save_vstate(const fs::path& dir, const VariationalState& v);
VariationalState load_vstate(const fs::path& dir);

void write_kv_metrics(const fs::path& path,
                      const std::vector<std::pair<std::string, double>>& rows);

}  // namespace sfa::io
