#pragma once

#include "bifctl/sparse.hpp"

#include <complex>
#include <memory>

namespace bifctl::sparse {

// Sparse LU with fill-reducing ordering. The factorization is immutable after
// construction, so one instance may serve concurrent solves.
class LuFactorization {
public:
    static constexpr double default_pivot_tolerance = 1e-13;

    explicit LuFactorization(const CsrMatrix& a, double pivot_tolerance = default_pivot_tolerance);
    ~LuFactorization();
    LuFactorization(LuFactorization&&) noexcept;
    LuFactorization& operator=(LuFactorization&&) noexcept;
    LuFactorization(const LuFactorization&) = delete;
    LuFactorization& operator=(const LuFactorization&) = delete;

    int size() const;
    Vector solve(const Vector& b) const;
    Eigen::VectorXcd solve(const Eigen::VectorXcd& b) const;
    // min |U_ii| / max |U_ii| of the scaled factor
    double pivot_ratio() const;
    // sign of det(A), +1 or -1
    int determinant_sign() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Factorization of A - shift * M for complex shift.
class ComplexLuFactorization {
public:
    ComplexLuFactorization(const CsrMatrix& a, const CsrMatrix& m, std::complex<double> shift,
                           double pivot_tolerance = LuFactorization::default_pivot_tolerance);
    ~ComplexLuFactorization();
    ComplexLuFactorization(ComplexLuFactorization&&) noexcept;
    ComplexLuFactorization(const ComplexLuFactorization&) = delete;
    ComplexLuFactorization& operator=(const ComplexLuFactorization&) = delete;

    int size() const;
    Eigen::VectorXcd solve(const Eigen::VectorXcd& b) const;
    double pivot_ratio() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

Vector lu_solve(const CsrMatrix& a, const Vector& b);

} // namespace bifctl::sparse
