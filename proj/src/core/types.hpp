#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sfa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

// Observation matrix Y (G features x N samples) with an observation mask.
// mask(i,j) == 1 means y(i,j) is observed; masked-out values are ignored by
// every likelihood sum.
struct Dataset {
    Matrix y;
    BoolMatrix mask;

    Dataset() = default;
    Dataset(Matrix y_in, BoolMatrix mask_in);
    explicit Dataset(Matrix y_in);

    Index g() const { return y.rows(); }
    Index n() const { return y.cols(); }
    bool observed(Index i, Index j) const { return mask(i, j) != 0; }
    Index observed_in_row(Index i) const;
    Index observed_in_col(Index j) const;
    Index observed_count() const;

    void validate() const;
};

struct Hyperparameters {
    Vector pi;  // length K, each in (0, 1]
    double a_tau = 1e-3;
    double b_tau = 1e-3;
    double a_alpha = 1e-3;
    double b_alpha = 1e-3;

    Index k() const { return pi.size(); }
    void validate() const;
};

// One joint parameter configuration; the unit of Gibbs sampling.
// Invariant: l(i,k) == 0 exactly whenever z(i,k) == 0.
struct ModelState {
    Matrix l;        // G x K
    Matrix f;        // K x N
    BoolMatrix z;    // G x K
    Vector tau;      // length G
    Vector alpha;    // length K

    Index g() const { return l.rows(); }
    Index k() const { return l.cols(); }
    Index n() const { return f.cols(); }

    void validate() const;
    void check_spike_constraint() const;
};

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::invalid_argument(msg);
}

}  // namespace sfa
