#include <doctest.h>

#include "bifctl/eigs.hpp"
#include "bifctl/errors.hpp"
#include "bifctl/lu.hpp"
#include "bifctl/sparse.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace bifctl;
using namespace bifctl::sparse;

namespace {

CsrMatrix random_sparse(int n_rows, int n_cols, double density, std::mt19937_64& rng, double diag_shift = 0.0) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<Triplet> t;
    for (int r = 0; r < n_rows; ++r)
        for (int c = 0; c < n_cols; ++c)
            if (coin(rng) < density) t.push_back({r, c, u(rng)});
    if (diag_shift != 0.0)
        for (int i = 0; i < std::min(n_rows, n_cols); ++i) t.push_back({i, i, diag_shift});
    return csr_from_triplets(n_rows, n_cols, t);
}

CsrMatrix laplacian_1d(int n) {
    std::vector<Triplet> t;
    for (int i = 0; i < n; ++i) {
        t.push_back({i, i, 2.0});
        if (i > 0) t.push_back({i, i - 1, -1.0});
        if (i + 1 < n) t.push_back({i, i + 1, -1.0});
    }
    return csr_from_triplets(n, n, t);
}

} // namespace

TEST_CASE("triplets are summed and rows sorted") {
    std::vector<Triplet> t{{0, 2, 1.0}, {0, 0, 2.0}, {0, 2, 3.0}, {1, 1, -1.0}, {1, 0, 4.0}};
    CsrMatrix a = csr_from_triplets(2, 3, t);
    CHECK(a.nnz() == 4);
    CHECK(a.coeff(0, 2) == 4.0);
    CHECK(a.coeff(0, 0) == 2.0);
    CHECK(a.coeff(1, 0) == 4.0);
    CHECK(a.coeff(0, 1) == 0.0);
    for (int r = 0; r < a.n_rows; ++r)
        CHECK(std::is_sorted(a.col_indices.begin() + a.row_offsets[r], a.col_indices.begin() + a.row_offsets[r + 1]));
    CHECK_THROWS_AS(csr_from_triplets(2, 2, {{2, 0, 1.0}}), StructuralError);
}

TEST_CASE("spmv and transpose agree: y'(Ax) = (A'y)'x") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 20; ++trial) {
        CsrMatrix a = random_sparse(37, 23, 0.2, rng);
        Vector x(23), y(37);
        for (auto& v : x) v = g(rng);
        for (auto& v : y) v = g(rng);
        double lhs = y.dot(multiply(a, x));
        double rhs = multiply_transposed(a, y).dot(x);
        CHECK(std::abs(lhs - rhs) <= 1e-12 * (1.0 + std::abs(lhs)));
        CHECK((multiply(transpose(a), y) - multiply_transposed(a, y)).norm() < 1e-13);
    }
}

TEST_CASE("add, multiply, submatrix and blocks match dense algebra") {
    std::mt19937_64 rng(11);
    CsrMatrix a = random_sparse(12, 9, 0.3, rng);
    CsrMatrix b = random_sparse(12, 9, 0.3, rng);
    CsrMatrix c = random_sparse(9, 5, 0.4, rng);
    CHECK((to_dense(add(a, b, 2.0, -0.5)) - (2.0 * to_dense(a) - 0.5 * to_dense(b))).norm() < 1e-14);
    CHECK((to_dense(multiply(a, c)) - to_dense(a) * to_dense(c)).norm() < 1e-13);
    std::vector<int> rows{5, 1, 7}, cols{8, 0, 3};
    Eigen::MatrixXd d = to_dense(submatrix(a, rows, cols));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(d(i, j) == a.coeff(rows[i], cols[j]));

    BlockMatrix blk({12, 5}, {9, 9});
    blk.set(0, 0, a);
    blk.set(0, 1, b);
    blk.set(1, 1, transpose(c));
    CHECK_THROWS_AS(blk.set(1, 0, a), StructuralError);
    Eigen::MatrixXd f = to_dense(blk.flatten());
    CHECK(f.rows() == 17);
    CHECK((f.block(0, 0, 12, 9) - to_dense(a)).norm() == 0.0);
    CHECK((f.block(0, 9, 12, 9) - to_dense(b)).norm() == 0.0);
    CHECK((f.block(12, 9, 5, 9) - to_dense(c).transpose()).norm() == 0.0);
    CHECK(f.block(12, 0, 5, 9).norm() == 0.0);
}

TEST_CASE("100 random LU round trips") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> size(5, 120);
    for (int trial = 0; trial < 100; ++trial) {
        int n = size(rng);
        CsrMatrix a = random_sparse(n, n, 0.08, rng, 1.0 + 0.05 * n);
        Vector x(n);
        for (auto& v : x) v = g(rng);
        Vector b = multiply(a, x);
        Vector y = lu_solve(a, b);
        CHECK((y - x).norm() <= 1e-9 * x.norm());
        double res = (multiply(a, y) - b).norm();
        CHECK(res <= 1e-10 * (frobenius_norm(a) * y.norm() + b.norm()));
    }
}

TEST_CASE("determinant sign matches dense LU") {
    std::mt19937_64 rng(77);
    int negative = 0;
    for (int trial = 0; trial < 40; ++trial) {
        CsrMatrix a = random_sparse(15, 15, 0.3, rng, trial % 2 ? 2.0 : -2.0);
        double det = to_dense(a).partialPivLu().determinant();
        LuFactorization lu(a);
        CHECK(lu.determinant_sign() == (det < 0 ? -1 : 1));
        negative += det < 0;
    }
    CHECK(negative > 0);
    CHECK(LuFactorization(diagonal(Vector::Constant(3, -1.0))).determinant_sign() == -1);
}

TEST_CASE("singular matrix reports a pivot") {
    // third row is the sum of the first two
    std::vector<Triplet> t{{0, 0, 1}, {0, 1, 2}, {1, 1, 1}, {1, 2, 3}, {2, 0, 1}, {2, 1, 3}, {2, 2, 3}};
    CsrMatrix a = csr_from_triplets(3, 3, t);
    CHECK_THROWS_AS(LuFactorization{a}, SingularMatrixError);
    try {
        LuFactorization lu(a);
    } catch (const SingularMatrixError& e) {
        CHECK(e.pivot() >= 0);
        CHECK(e.pivot() < 3);
    }
}

TEST_CASE("complex LU solves the shifted pencil") {
    std::mt19937_64 rng(5);
    CsrMatrix a = random_sparse(60, 60, 0.1, rng, 3.0);
    CsrMatrix m = identity(60);
    std::complex<double> s(0.3, -0.7);
    ComplexLuFactorization lu(a, m, s);
    Eigen::VectorXcd x = Eigen::VectorXcd::Random(60);
    Eigen::VectorXcd b = multiply(a, x) - s * multiply(m, x);
    CHECK((lu.solve(b) - x).norm() < 1e-10 * x.norm());
}

TEST_CASE("eigs on diag(1..20)") {
    Vector d(20);
    for (int i = 0; i < 20; ++i) d[i] = i + 1.0;
    auto res = eigs_shift_invert(diagonal(d), identity(20), 3, 0.0);
    REQUIRE(res.pairs.size() == 3);
    CHECK(res.complete());
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(res.pairs[i].value - std::complex<double>(i + 1.0, 0.0)) < 1e-12);
        CHECK(res.pairs[i].residual <= 1e-12);
    }
}

TEST_CASE("krylov-schur on a 1D Laplacian matches the analytic spectrum") {
    const int n = 400;
    CsrMatrix a = laplacian_1d(n);
    auto res = eigs_shift_invert(a, identity(n), 6, 0.0);
    REQUIRE(res.complete());
    for (int j = 0; j < 6; ++j) {
        double exact = 2.0 - 2.0 * std::cos((j + 1) * M_PI / (n + 1));
        CHECK(std::abs(res.pairs[j].value.real() - exact) < 1e-10);
        CHECK(std::abs(res.pairs[j].value.imag()) < 1e-10);
        // residual recomputed independently
        Eigen::VectorXcd r = multiply(a, res.pairs[j].vector) - res.pairs[j].value * res.pairs[j].vector;
        CHECK(r.norm() <= 1e-8);
    }
}

TEST_CASE("krylov-schur finds complex pairs of a nonsymmetric matrix") {
    // convection-diffusion stencil: complex spectrum
    const int n = 300;
    std::vector<Triplet> t;
    for (int i = 0; i < n; ++i) {
        t.push_back({i, i, 2.0});
        if (i > 0) t.push_back({i, i - 1, -1.6});
        if (i + 1 < n) t.push_back({i, i + 1, -0.4});
        if (i + 7 < n) t.push_back({i, i + 7, 0.3});
        if (i >= 7) t.push_back({i, i - 7, -0.3});
    }
    CsrMatrix a = csr_from_triplets(n, n, t);
    std::complex<double> shift(0.05, 0.1);
    auto res = eigs_shift_invert(a, identity(n), 5, shift);
    REQUIRE(res.complete());
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(to_dense(a).cast<std::complex<double>>());
    std::vector<std::complex<double>> all(es.eigenvalues().begin(), es.eigenvalues().end());
    std::sort(all.begin(), all.end(),
              [&](auto l, auto r) { return std::abs(l - shift) < std::abs(r - shift); });
    for (int j = 0; j < 5; ++j) {
        CHECK(std::abs(res.pairs[j].value - all[j]) < 1e-8);
        CHECK(res.pairs[j].residual <= 1e-8);
    }
}

TEST_CASE("singular M: saddle point pencil keeps only finite eigenvalues") {
    // [K B'; B 0] x = lambda [I 0; 0 0] x
    const int nv = 120, np = 30;
    std::mt19937_64 rng(3);
    CsrMatrix k = laplacian_1d(nv);
    CsrMatrix b = random_sparse(np, nv, 0.05, rng);
    std::vector<Triplet> bt;
    for (int i = 0; i < np; ++i) bt.push_back({i, 4 * i, 1.0});
    b = add(b, csr_from_triplets(np, nv, bt));
    BlockMatrix am({nv, np}, {nv, np});
    am.set(0, 0, k);
    am.set(0, 1, transpose(b));
    am.set(1, 0, b);
    BlockMatrix mm({nv, np}, {nv, np});
    mm.set(0, 0, identity(nv));
    CsrMatrix a = am.flatten(), m = mm.flatten();
    auto res = eigs_shift_invert(a, m, 4, 0.0);
    REQUIRE(res.complete());
    // oracle: K restricted to ker B
    Eigen::MatrixXd bd = to_dense(b);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(bd);
    Eigen::MatrixXd z = lu.kernel();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(z);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(nv, z.cols());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q.transpose() * to_dense(k) * q);
    for (int j = 0; j < 4; ++j) {
        CHECK(std::abs(res.pairs[j].value.real() - es.eigenvalues()[j]) < 1e-9);
        CHECK(res.pairs[j].residual <= 1e-8);
    }
}

TEST_CASE("shift on an eigenvalue is rejected") {
    Vector d(100);
    for (int i = 0; i < 100; ++i) d[i] = i + 1.0;
    CHECK_THROWS_AS(eigs_shift_invert(diagonal(d), identity(100), 2, 5.0), ShiftError);
}

TEST_CASE("schur reordering keeps the similarity") {
    Eigen::MatrixXcd t = Eigen::MatrixXcd::Random(8, 8).triangularView<Eigen::Upper>();
    Eigen::MatrixXcd q = Eigen::MatrixXcd::Identity(8, 8);
    Eigen::MatrixXcd orig = t;
    std::vector<int> order{5, 2, 7, 0};
    std::vector<std::complex<double>> diag;
    for (int i : order) diag.push_back(orig(i, i));
    reorder_schur(t, q, order);
    CHECK((q * t * q.adjoint() - orig).norm() < 1e-12);
    CHECK((q.adjoint() * q - Eigen::MatrixXcd::Identity(8, 8)).norm() < 1e-12);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(t(i, i) - diag[i]) < 1e-12);
    CHECK(t.triangularView<Eigen::StrictlyLower>().toDenseMatrix().norm() < 1e-12);
}

TEST_CASE("matrix market round trip") {
    std::mt19937_64 rng(9);
    CsrMatrix a = random_sparse(6, 4, 0.5, rng);
    std::stringstream s;
    write_matrix_market(a, s);
    CHECK(s.str().rfind("%%MatrixMarket matrix coordinate real general\n", 0) == 0);
    CsrMatrix b = read_matrix_market(s);
    CHECK((to_dense(a) - to_dense(b)).norm() == 0.0);
}
