#include "bifctl/eigs.hpp"

#include "bifctl/errors.hpp"
#include "bifctl/lu.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

namespace bifctl::sparse {

using cplx = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;

namespace {

// Givens rotation zeroing g against f (LAPACK zlartg convention).
void givens(cplx f, cplx g, double& cs, cplx& sn) {
    if (g == 0.0) {
        cs = 1.0;
        sn = 0.0;
        return;
    }
    if (f == 0.0) {
        cs = 0.0;
        sn = std::conj(g) / std::abs(g);
        return;
    }
    double f1 = std::abs(f), g1 = std::abs(g);
    double nrm = std::hypot(f1, g1);
    cs = f1 / nrm;
    sn = (f / f1) * std::conj(g) / nrm;
}

void swap_adjacent(MatrixXcd& t, MatrixXcd& q, int k) {
    const int n = static_cast<int>(t.rows());
    cplx t11 = t(k, k), t22 = t(k + 1, k + 1);
    double cs;
    cplx sn;
    givens(t(k, k + 1), t22 - t11, cs, sn);
    for (int c = k + 2; c < n; ++c) {
        cplx x = t(k, c), y = t(k + 1, c);
        t(k, c) = cs * x + sn * y;
        t(k + 1, c) = cs * y - std::conj(sn) * x;
    }
    cplx snc = std::conj(sn);
    for (int r = 0; r < k; ++r) {
        cplx x = t(r, k), y = t(r, k + 1);
        t(r, k) = cs * x + snc * y;
        t(r, k + 1) = cs * y - sn * x;
    }
    t(k, k) = t22;
    t(k + 1, k + 1) = t11;
    for (int r = 0; r < q.rows(); ++r) {
        cplx x = q(r, k), y = q(r, k + 1);
        q(r, k) = cs * x + snc * y;
        q(r, k + 1) = cs * y - sn * x;
    }
}

// Eigenvector of upper triangular T for its i-th diagonal entry.
VectorXcd triangular_eigenvector(const MatrixXcd& t, int i) {
    VectorXcd y = VectorXcd::Zero(t.rows());
    cplx lambda = t(i, i);
    double small = std::max(1e-300, 1e-15 * t.cwiseAbs().maxCoeff());
    y[i] = 1.0;
    for (int j = i - 1; j >= 0; --j) {
        cplx s = 0.0;
        for (int l = j + 1; l <= i; ++l) s += t(j, l) * y[l];
        cplx d = t(j, j) - lambda;
        if (std::abs(d) < small) d = small;
        y[j] = -s / d;
    }
    return y;
}

class ShiftInvertOperator {
public:
    ShiftInvertOperator(const CsrMatrix& a, const CsrMatrix& m, cplx shift) : m_(m) {
        try {
            if (shift.imag() == 0.0)
                real_.emplace(add(a, m, 1.0, -shift.real()));
            else
                complex_ = std::make_unique<ComplexLuFactorization>(a, m, shift);
        } catch (const SingularMatrixError& e) {
            std::ostringstream msg;
            msg << "shift (" << shift.real() << ", " << shift.imag() << ") is numerically an eigenvalue; retry with a "
                << "perturbed shift (" << e.what() << ")";
            throw ShiftError(msg.str());
        }
    }
    VectorXcd apply(const VectorXcd& x) const {
        VectorXcd mx = multiply(m_, x);
        return real_ ? real_->solve(mx) : complex_->solve(mx);
    }

private:
    const CsrMatrix& m_;
    std::optional<LuFactorization> real_;
    std::unique_ptr<ComplexLuFactorization> complex_;
};

double pencil_residual(const CsrMatrix& a, const CsrMatrix& m, const VectorXcd& x, cplx lambda) {
    VectorXcd r = multiply(a, x) - lambda * multiply(m, x);
    double nx = x.norm();
    return nx > 0.0 ? r.norm() / nx : INFINITY;
}

EigenPair make_pair(const CsrMatrix& a, const CsrMatrix& m, cplx shift, cplx theta, VectorXcd x) {
    EigenPair p;
    p.value = shift + 1.0 / theta;
    x.normalize();
    // fix the phase so that the largest component is real positive
    Eigen::Index imax;
    x.cwiseAbs().maxCoeff(&imax);
    x *= std::abs(x[imax]) / x[imax];
    p.residual = pencil_residual(a, m, x, p.value);
    p.vector = std::move(x);
    return p;
}

void sort_pairs(std::vector<EigenPair>& pairs, cplx shift) {
    std::stable_sort(pairs.begin(), pairs.end(), [&](const EigenPair& l, const EigenPair& r) {
        return std::abs(l.value - shift) < std::abs(r.value - shift);
    });
}

EigsResult dense_path(const CsrMatrix& a, const CsrMatrix& m, int k, cplx shift, const ShiftInvertOperator& op,
                      const EigsOptions& options) {
    const int n = a.n_rows;
    MatrixXcd s(n, n);
    for (int j = 0; j < n; ++j) {
        VectorXcd e = VectorXcd::Zero(n);
        e[j] = 1.0;
        s.col(j) = op.apply(e);
    }
    Eigen::ComplexEigenSolver<MatrixXcd> es(s);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const auto& th = es.eigenvalues();
    std::stable_sort(idx.begin(), idx.end(), [&](int l, int r) { return std::abs(th[l]) > std::abs(th[r]); });
    double thmax = n > 0 ? std::abs(th[idx[0]]) : 0.0;
    EigsResult res;
    res.requested = k;
    for (int i = 0; i < n && static_cast<int>(res.pairs.size()) < k; ++i) {
        cplx theta = th[idx[i]];
        if (std::abs(theta) <= 1e-12 * thmax) break; // infinite eigenvalues of a singular M
        res.pairs.push_back(make_pair(a, m, shift, theta, es.eigenvectors().col(idx[i])));
    }
    for (const auto& p : res.pairs)
        if (p.residual <= options.tolerance) ++res.converged;
    sort_pairs(res.pairs, shift);
    std::ostringstream rep;
    rep << "dense: " << res.converged << "/" << k << " converged";
    res.report = rep.str();
    return res;
}

} // namespace

void reorder_schur(MatrixXcd& t, MatrixXcd& q, const std::vector<int>& order) {
    const int n = static_cast<int>(t.rows());
    if (static_cast<int>(order.size()) > n) throw StructuralError("reorder_schur: order too long");
    std::vector<int> cur(n);
    std::iota(cur.begin(), cur.end(), 0);
    for (int i = 0; i < static_cast<int>(order.size()); ++i) {
        int j = static_cast<int>(std::find(cur.begin() + i, cur.end(), order[i]) - cur.begin());
        if (j == n) throw StructuralError("reorder_schur: order is not a permutation");
        for (int l = j - 1; l >= i; --l) {
            swap_adjacent(t, q, l);
            std::swap(cur[l], cur[l + 1]);
        }
    }
}

EigsResult eigs_shift_invert(const CsrMatrix& a, const CsrMatrix& m, int k, cplx shift,
                             const EigsOptions& options) {
    if (a.n_rows != a.n_cols || m.n_rows != a.n_rows || m.n_cols != a.n_cols)
        throw StructuralError("eigs: A and M must be square and of equal size");
    const int n = a.n_rows;
    if (k <= 0 || k >= n) throw ParameterError("eigs: k must satisfy 0 < k < n");

    ShiftInvertOperator op(a, m, shift);
    int dim = options.subspace_dim > 0 ? options.subspace_dim : std::max(2 * k + 10, 40);
    if (n <= options.dense_threshold || dim >= n) return dense_path(a, m, k, shift, op, options);
    dim = std::max(dim, k + 2);

    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal;
    auto random_vector = [&] {
        VectorXcd r(n);
        for (int i = 0; i < n; ++i) r[i] = normal(rng);
        return r;
    };

    MatrixXcd v = MatrixXcd::Zero(n, dim + 1);
    MatrixXcd h = MatrixXcd::Zero(dim + 1, dim);

    // start in the range of the operator to suppress components at infinity
    VectorXcd v0 = op.apply(random_vector());
    v.col(0) = v0 / v0.norm();

    auto orthogonalize = [&](VectorXcd& w, int j, VectorXcd& coeffs) {
        coeffs = VectorXcd::Zero(j + 1);
        for (int pass = 0; pass < 2; ++pass) {
            VectorXcd c = v.leftCols(j + 1).adjoint() * w;
            w -= v.leftCols(j + 1) * c;
            coeffs += c;
        }
    };

    EigsResult res;
    res.requested = k;
    int p = 0;
    MatrixXcd t, u;
    for (int restart = 0; restart <= options.max_restarts; ++restart) {
        res.restarts = restart;
        for (int j = p; j < dim; ++j) {
            VectorXcd w = op.apply(v.col(j));
            VectorXcd c;
            orthogonalize(w, j, c);
            h.block(0, j, j + 1, 1) = c;
            double beta = w.norm();
            if (beta <= 1e-13 * c.norm()) {
                // invariant subspace: continue with a fresh direction
                w = random_vector();
                VectorXcd dummy;
                orthogonalize(w, j, dummy);
                beta = 0.0;
                v.col(j + 1) = w / w.norm();
            } else {
                v.col(j + 1) = w / beta;
            }
            h(j + 1, j) = beta;
        }

        Eigen::ComplexSchur<MatrixXcd> schur(h.topLeftCorner(dim, dim));
        t = schur.matrixT();
        u = schur.matrixU();
        std::vector<int> order(dim);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int l, int r) { return std::abs(t(l, l)) > std::abs(t(r, r)); });
        reorder_schur(t, u, order);
        Eigen::RowVectorXcd b = h(dim, dim - 1) * u.row(dim - 1);

        res.pairs.clear();
        res.converged = 0;
        for (int i = 0; i < k; ++i) {
            cplx theta = t(i, i);
            VectorXcd y = triangular_eigenvector(t, i);
            VectorXcd x = v.leftCols(dim) * (u * y);
            res.pairs.push_back(make_pair(a, m, shift, theta, std::move(x)));
            if (res.pairs.back().residual <= options.tolerance) ++res.converged;
        }
        if (res.converged >= k) break;
        if (restart == options.max_restarts) break;

        int keep = std::min(k + (dim - k) / 2, dim - 1);
        MatrixXcd vk = v.leftCols(dim) * u.leftCols(keep);
        VectorXcd last = v.col(dim);
        v.setZero();
        v.leftCols(keep) = vk;
        v.col(keep) = last;
        h.setZero();
        h.topLeftCorner(keep, keep) = t.topLeftCorner(keep, keep);
        h.block(keep, 0, 1, keep) = b.leftCols(keep);
        p = keep;
    }
    sort_pairs(res.pairs, shift);
    std::ostringstream rep;
    rep << "krylov-schur: " << res.converged << "/" << k << " converged after " << res.restarts << " restarts";
    if (res.converged < k) rep << " (partial result)";
    res.report = rep.str();
    return res;
}

} // namespace bifctl::sparse
