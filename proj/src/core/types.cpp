#include "core/types.hpp"

#include <sstream>

namespace sfa {

Dataset::Dataset(Matrix y_in, BoolMatrix mask_in)
    : y(std::move(y_in)), mask(std::move(mask_in)) {
    validate();
}

Dataset::Dataset(Matrix y_in) : y(std::move(y_in)) {
    mask = BoolMatrix::Ones(y.rows(), y.cols());
    validate();
}

Index Dataset::observed_in_row(Index i) const {
    Index c = 0;
    for (Index j = 0; j < n(); ++j) c += mask(i, j) != 0;
    return c;
}

Index Dataset::observed_in_col(Index j) const {
    Index c = 0;
    for (Index i = 0; i < g(); ++i) c += mask(i, j) != 0;
    return c;
}

Index Dataset::observed_count() const {
    Index c = 0;
    for (Index i = 0; i < g(); ++i) c += observed_in_row(i);
    return c;
}

void Dataset::validate() const {
    if (y.rows() < 1 || y.cols() < 1) fail("dataset must have G >= 1 and N >= 1");
    if (mask.rows() != y.rows() || mask.cols() != y.cols())
        fail("mask shape does not match data shape");
    for (Index i = 0; i < g(); ++i)
        if (observed_in_row(i) == 0) {
            std::ostringstream os;
            os << "row " << i << " has no observed entries";
            fail(os.str());
        }
    for (Index j = 0; j < n(); ++j)
        if (observed_in_col(j) == 0) {
            std::ostringstream os;
            os << "column " << j << " has no observed entries";
            fail(os.str());
        }
}

void Hyperparameters::validate() const {
    if (pi.size() < 1) fail("pi must have at least one entry");
    for (Index k = 0; k < pi.size(); ++k)
        if (!(pi[k] > 0.0 && pi[k] <= 1.0)) fail("pi entries must lie in (0, 1]");
    if (!(a_tau > 0 && b_tau > 0 && a_alpha > 0 && b_alpha > 0))
        fail("gamma hyperparameters must be strictly positive");
}

void ModelState::validate() const {
    if (z.rows() != l.rows() || z.cols() != l.cols())
        fail("z shape does not match l shape");
    if (f.rows() != l.cols()) fail("f row count does not match l column count");
    if (tau.size() != l.rows()) fail("tau length does not match feature count");
    if (alpha.size() != l.cols()) fail("alpha length does not match factor count");
    for (Index i = 0; i < tau.size(); ++i)
        if (!(tau[i] > 0)) fail("tau entries must be strictly positive");
    for (Index k = 0; k < alpha.size(); ++k)
        if (!(alpha[k] > 0)) fail("alpha entries must be strictly positive");
    check_spike_constraint();
}

void ModelState::check_spike_constraint() const {
    for (Index i = 0; i < l.rows(); ++i)
        for (Index k = 0; k < l.cols(); ++k)
            if (z(i, k) == 0 && l(i, k) != 0.0)
                fail("spike constraint violated: l != 0 where z == 0");
}

}  // namespace sfa
