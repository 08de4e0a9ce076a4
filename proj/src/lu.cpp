#include "bifctl/lu.hpp"

#include "bifctl/errors.hpp"

#include <suitesparse/umfpack.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace bifctl::sparse {

namespace {

// Our CSR arrays are the CSC arrays of the transpose; solves use UMFPACK_At.
// Udiag is inspected for tiny pivots; index reported in original numbering.
struct PivotCheck {
    double ratio = 1.0;
    int pivot = -1;
};

template <class GetNumeric>
PivotCheck check_pivots(int n, GetNumeric&& get) {
    std::vector<double> udiag_re(n), udiag_im(n);
    std::vector<int> p(n), q(n);
    get(udiag_re.data(), udiag_im.data(), p.data(), q.data());
    PivotCheck out;
    double max_u = 0.0, min_u = INFINITY;
    int min_k = 0;
    for (int k = 0; k < n; ++k) {
        double u = std::hypot(udiag_re[k], udiag_im[k]);
        max_u = std::max(max_u, u);
        if (u < min_u) {
            min_u = u;
            min_k = k;
        }
    }
    out.ratio = max_u > 0.0 ? min_u / max_u : 0.0;
    out.pivot = n > 0 ? q[min_k] : -1;
    return out;
}

void throw_singular(const char* who, const PivotCheck& c) {
    std::ostringstream msg;
    msg << who << ": numerically singular matrix (pivot ratio " << c.ratio << " at index " << c.pivot << ")";
    throw SingularMatrixError(msg.str(), c.pivot);
}

void check_status(int status, const char* stage) {
    if (status == UMFPACK_OK || status == UMFPACK_WARNING_singular_matrix) return;
    if (status == UMFPACK_ERROR_out_of_memory) throw std::bad_alloc();
    std::ostringstream msg;
    msg << "umfpack " << stage << " failed with status " << status;
    throw std::runtime_error(msg.str());
}

} // namespace

struct LuFactorization::Impl {
    CsrMatrix a;
    void* numeric = nullptr;
    double ratio = 1.0;
    ~Impl() {
        if (numeric) umfpack_di_free_numeric(&numeric);
    }
};

LuFactorization::LuFactorization(const CsrMatrix& a, double pivot_tolerance) : impl_(std::make_unique<Impl>()) {
    if (a.n_rows != a.n_cols) throw StructuralError("LU: matrix not square");
    impl_->a = a;
    int n = a.n_rows;
    if (n == 0) return;
    double control[UMFPACK_CONTROL];
    umfpack_di_defaults(control);
    control[UMFPACK_ORDERING] = UMFPACK_ORDERING_AMD;
    void* symbolic = nullptr;
    const auto& m = impl_->a;
    int status = umfpack_di_symbolic(n, n, m.row_offsets.data(), m.col_indices.data(), m.values.data(), &symbolic,
                                     control, nullptr);
    check_status(status, "symbolic");
    status = umfpack_di_numeric(m.row_offsets.data(), m.col_indices.data(), m.values.data(), symbolic,
                                &impl_->numeric, control, nullptr);
    umfpack_di_free_symbolic(&symbolic);
    check_status(status, "numeric");
    PivotCheck c = check_pivots(n, [&](double* ud, double*, int* p, int* q) {
        int do_recip = 0;
        int s = umfpack_di_get_numeric(nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, p, q, ud, &do_recip,
                                       nullptr, impl_->numeric);
        check_status(s, "get_numeric");
    });
    impl_->ratio = c.ratio;
    if (status == UMFPACK_WARNING_singular_matrix || c.ratio <= pivot_tolerance) throw_singular("LU", c);
}

LuFactorization::~LuFactorization() = default;
LuFactorization::LuFactorization(LuFactorization&&) noexcept = default;
LuFactorization& LuFactorization::operator=(LuFactorization&&) noexcept = default;

int LuFactorization::size() const {
    return impl_->a.n_rows;
}

double LuFactorization::pivot_ratio() const {
    return impl_->ratio;
}

int LuFactorization::determinant_sign() const {
    if (!impl_->numeric) return 1;
    double mantissa = 0.0, exponent = 0.0;
    int status = umfpack_di_get_determinant(&mantissa, &exponent, impl_->numeric, nullptr);
    check_status(status, "determinant");
    return mantissa < 0.0 ? -1 : 1;
}

Vector LuFactorization::solve(const Vector& b) const {
    const auto& m = impl_->a;
    if (b.size() != m.n_rows) throw StructuralError("LU solve: rhs has wrong length");
    Vector x = Vector::Zero(m.n_rows);
    if (m.n_rows == 0) return x;
    double control[UMFPACK_CONTROL];
    umfpack_di_defaults(control);
    int status = umfpack_di_solve(UMFPACK_At, m.row_offsets.data(), m.col_indices.data(), m.values.data(), x.data(),
                                  b.data(), impl_->numeric, control, nullptr);
    check_status(status, "solve");
    return x;
}

Eigen::VectorXcd LuFactorization::solve(const Eigen::VectorXcd& b) const {
    Vector re = solve(Vector(b.real()));
    Vector im = solve(Vector(b.imag()));
    Eigen::VectorXcd x(re.size());
    x.real() = re;
    x.imag() = im;
    return x;
}

struct ComplexLuFactorization::Impl {
    int n = 0;
    std::vector<int> ap, ai;
    std::vector<double> ax, az;
    void* numeric = nullptr;
    double ratio = 1.0;
    ~Impl() {
        if (numeric) umfpack_zi_free_numeric(&numeric);
    }
};

ComplexLuFactorization::ComplexLuFactorization(const CsrMatrix& a, const CsrMatrix& m, std::complex<double> shift,
                                               double pivot_tolerance)
    : impl_(std::make_unique<Impl>()) {
    if (a.n_rows != a.n_cols || m.n_rows != a.n_rows || m.n_cols != a.n_cols)
        throw StructuralError("complex LU: dimension mismatch");
    // real part A - Re(s) M, imaginary part -Im(s) M on the union pattern
    CsrMatrix re = add(a, m, 1.0, -shift.real());
    CsrMatrix im = add(scaled(a, 0.0), m, 1.0, -shift.imag());
    int n = a.n_rows;
    impl_->n = n;
    impl_->ap = re.row_offsets;
    impl_->ai = re.col_indices;
    impl_->ax = re.values;
    impl_->az = im.values;
    if (n == 0) return;
    double control[UMFPACK_CONTROL];
    umfpack_zi_defaults(control);
    control[UMFPACK_ORDERING] = UMFPACK_ORDERING_AMD;
    void* symbolic = nullptr;
    auto& s = *impl_;
    int status = umfpack_zi_symbolic(n, n, s.ap.data(), s.ai.data(), s.ax.data(), s.az.data(), &symbolic, control,
                                     nullptr);
    check_status(status, "symbolic");
    status = umfpack_zi_numeric(s.ap.data(), s.ai.data(), s.ax.data(), s.az.data(), symbolic, &s.numeric, control,
                                nullptr);
    umfpack_zi_free_symbolic(&symbolic);
    check_status(status, "numeric");
    PivotCheck c = check_pivots(n, [&](double* ud, double* udz, int* p, int* q) {
        int do_recip = 0;
        int st = umfpack_zi_get_numeric(nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, p, q, ud, udz, &do_recip, nullptr, s.numeric);
        check_status(st, "get_numeric");
    });
    s.ratio = c.ratio;
    if (status == UMFPACK_WARNING_singular_matrix || c.ratio <= pivot_tolerance) throw_singular("complex LU", c);
}

ComplexLuFactorization::~ComplexLuFactorization() = default;
ComplexLuFactorization::ComplexLuFactorization(ComplexLuFactorization&&) noexcept = default;

int ComplexLuFactorization::size() const {
    return impl_->n;
}

double ComplexLuFactorization::pivot_ratio() const {
    return impl_->ratio;
}

Eigen::VectorXcd ComplexLuFactorization::solve(const Eigen::VectorXcd& b) const {
    const auto& s = *impl_;
    if (b.size() != s.n) throw StructuralError("complex LU solve: rhs has wrong length");
    Eigen::VectorXcd out(s.n);
    if (s.n == 0) return out;
    std::vector<double> br(s.n), bi(s.n), xr(s.n), xi(s.n);
    for (int i = 0; i < s.n; ++i) {
        br[i] = b[i].real();
        bi[i] = b[i].imag();
    }
    double control[UMFPACK_CONTROL];
    umfpack_zi_defaults(control);
    // A^T (not conjugate) since the stored arrays are the transpose
    int status = umfpack_zi_solve(UMFPACK_Aat, s.ap.data(), s.ai.data(), s.ax.data(), s.az.data(), xr.data(),
                                  xi.data(), br.data(), bi.data(), s.numeric, control, nullptr);
    check_status(status, "solve");
    for (int i = 0; i < s.n; ++i) out[i] = {xr[i], xi[i]};
    return out;
}

Vector lu_solve(const CsrMatrix& a, const Vector& b) {
    return LuFactorization(a).solve(b);
}

} // namespace bifctl::sparse
