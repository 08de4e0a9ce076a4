#pragma once

#include "bifctl/sparse.hpp"

#include <complex>
#include <string>
#include <vector>

namespace bifctl::sparse {

struct EigenPair {
    std::complex<double> value;
    Eigen::VectorXcd vector; // unit 2-norm
    double residual = 0.0;   // ||A x - value M x|| / ||x||
};

struct EigsOptions {
    int subspace_dim = 0; // 0 -> max(2k + 10, 40)
    int max_restarts = 300;
    double tolerance = 1e-8;
    unsigned seed = 20240611u;
    // problems up to this size go through a dense solve
    int dense_threshold = 64;
};

struct EigsResult {
    std::vector<EigenPair> pairs; // sorted by |value - shift|
    int requested = 0;
    int converged = 0;
    int restarts = 0;
    bool complete() const { return converged >= requested; }
    std::string report;
};

// Eigenvalues of A x = lambda M x nearest to shift. M may be singular.
// Throws ShiftError when A - shift M cannot be factorized.
EigsResult eigs_shift_invert(const CsrMatrix& a, const CsrMatrix& m, int k, std::complex<double> shift,
                             const EigsOptions& options = {});

// Reorders an upper triangular T (with unitary Q, A = Q T Q^H) so that the
// diagonal follows the given permutation of positions.
void reorder_schur(Eigen::MatrixXcd& t, Eigen::MatrixXcd& q, const std::vector<int>& order);

} // namespace bifctl::sparse
