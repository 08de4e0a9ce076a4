#include "bifctl/sparse.hpp"

#include "bifctl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

namespace bifctl::sparse {

double CsrMatrix::coeff(int row, int col) const {
    if (row < 0 || row >= n_rows || col < 0 || col >= n_cols)
        throw StructuralError("coeff: index out of range");
    auto first = col_indices.begin() + row_offsets[row];
    auto last = col_indices.begin() + row_offsets[row + 1];
    auto it = std::lower_bound(first, last, col);
    if (it == last || *it != col) return 0.0;
    return values[static_cast<std::size_t>(it - col_indices.begin())];
}

CsrMatrix csr_from_triplets(int n_rows, int n_cols, const std::vector<Triplet>& triplets) {
    if (n_rows < 0 || n_cols < 0) throw StructuralError("negative matrix dimension");
    CsrMatrix m;
    m.n_rows = n_rows;
    m.n_cols = n_cols;
    std::vector<int> counts(static_cast<std::size_t>(n_rows) + 1, 0);
    for (const auto& t : triplets) {
        if (t.row < 0 || t.row >= n_rows || t.col < 0 || t.col >= n_cols) {
            std::ostringstream msg;
            msg << "triplet (" << t.row << ", " << t.col << ") outside " << n_rows << "x" << n_cols;
            throw StructuralError(msg.str());
        }
        ++counts[t.row + 1];
    }
    std::partial_sum(counts.begin(), counts.end(), counts.begin());

    // bucket by row, then sort each row by column and merge duplicates
    std::vector<int> cols(triplets.size());
    std::vector<double> vals(triplets.size());
    std::vector<int> fill(counts.begin(), counts.end() - 1);
    for (const auto& t : triplets) {
        int pos = fill[t.row]++;
        cols[pos] = t.col;
        vals[pos] = t.value;
    }

    m.row_offsets.assign(static_cast<std::size_t>(n_rows) + 1, 0);
    m.col_indices.reserve(triplets.size());
    m.values.reserve(triplets.size());
    std::vector<int> order;
    for (int r = 0; r < n_rows; ++r) {
        int b = counts[r], e = counts[r + 1];
        order.resize(static_cast<std::size_t>(e - b));
        std::iota(order.begin(), order.end(), b);
        std::sort(order.begin(), order.end(), [&](int i, int j) { return cols[i] < cols[j]; });
        for (std::size_t k = 0; k < order.size(); ++k) {
            int c = cols[order[k]];
            if (k > 0 && m.col_indices.back() == c && static_cast<int>(m.col_indices.size()) > m.row_offsets[r]) {
                m.values.back() += vals[order[k]];
            } else {
                m.col_indices.push_back(c);
                m.values.push_back(vals[order[k]]);
            }
        }
        m.row_offsets[r + 1] = static_cast<int>(m.col_indices.size());
    }
    return m;
}

CsrMatrix identity(int n) {
    return diagonal(Vector::Ones(n));
}

CsrMatrix diagonal(const Vector& d) {
    CsrMatrix m;
    int n = static_cast<int>(d.size());
    m.n_rows = m.n_cols = n;
    m.row_offsets.resize(static_cast<std::size_t>(n) + 1);
    m.col_indices.resize(n);
    m.values.resize(n);
    for (int i = 0; i < n; ++i) {
        m.row_offsets[i] = i;
        m.col_indices[i] = i;
        m.values[i] = d[i];
    }
    m.row_offsets[n] = n;
    return m;
}

CsrMatrix zeros(int n_rows, int n_cols) {
    CsrMatrix m;
    m.n_rows = n_rows;
    m.n_cols = n_cols;
    m.row_offsets.assign(static_cast<std::size_t>(n_rows) + 1, 0);
    return m;
}

void spmv(const CsrMatrix& a, const Vector& x, Vector& y, double alpha, double beta) {
    if (x.size() != a.n_cols) throw StructuralError("spmv: x has wrong length");
    if (beta == 0.0) {
        y.setZero(a.n_rows);
    } else {
        if (y.size() != a.n_rows) throw StructuralError("spmv: y has wrong length");
        y *= beta;
    }
    for (int r = 0; r < a.n_rows; ++r) {
        double s = 0.0;
        for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) s += a.values[k] * x[a.col_indices[k]];
        y[r] += alpha * s;
    }
}

Vector multiply(const CsrMatrix& a, const Vector& x) {
    Vector y;
    spmv(a, x, y);
    return y;
}

Eigen::VectorXcd multiply(const CsrMatrix& a, const Eigen::VectorXcd& x) {
    if (x.size() != a.n_cols) throw StructuralError("multiply: x has wrong length");
    Eigen::VectorXcd y = Eigen::VectorXcd::Zero(a.n_rows);
    for (int r = 0; r < a.n_rows; ++r) {
        std::complex<double> s = 0.0;
        for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) s += a.values[k] * x[a.col_indices[k]];
        y[r] = s;
    }
    return y;
}

Vector multiply_transposed(const CsrMatrix& a, const Vector& x) {
    if (x.size() != a.n_rows) throw StructuralError("multiply_transposed: x has wrong length");
    Vector y = Vector::Zero(a.n_cols);
    for (int r = 0; r < a.n_rows; ++r) {
        double xr = x[r];
        if (xr == 0.0) continue;
        for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) y[a.col_indices[k]] += a.values[k] * xr;
    }
    return y;
}

CsrMatrix transpose(const CsrMatrix& a) {
    CsrMatrix t;
    t.n_rows = a.n_cols;
    t.n_cols = a.n_rows;
    t.row_offsets.assign(static_cast<std::size_t>(t.n_rows) + 1, 0);
    for (int c : a.col_indices) ++t.row_offsets[c + 1];
    std::partial_sum(t.row_offsets.begin(), t.row_offsets.end(), t.row_offsets.begin());
    t.col_indices.resize(a.col_indices.size());
    t.values.resize(a.values.size());
    std::vector<int> fill(t.row_offsets.begin(), t.row_offsets.end() - 1);
    for (int r = 0; r < a.n_rows; ++r) {
        for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) {
            int pos = fill[a.col_indices[k]]++;
            t.col_indices[pos] = r;
            t.values[pos] = a.values[k];
        }
    }
    return t;
}

CsrMatrix scaled(const CsrMatrix& a, double factor) {
    CsrMatrix s = a;
    for (double& v : s.values) v *= factor;
    return s;
}

CsrMatrix add(const CsrMatrix& a, const CsrMatrix& b, double alpha, double beta) {
    if (a.n_rows != b.n_rows || a.n_cols != b.n_cols) throw StructuralError("add: dimension mismatch");
    CsrMatrix c;
    c.n_rows = a.n_rows;
    c.n_cols = a.n_cols;
    c.row_offsets.assign(static_cast<std::size_t>(c.n_rows) + 1, 0);
    c.col_indices.reserve(a.col_indices.size() + b.col_indices.size());
    c.values.reserve(a.values.size() + b.values.size());
    for (int r = 0; r < a.n_rows; ++r) {
        int i = a.row_offsets[r], ie = a.row_offsets[r + 1];
        int j = b.row_offsets[r], je = b.row_offsets[r + 1];
        while (i < ie || j < je) {
            int ca = i < ie ? a.col_indices[i] : a.n_cols;
            int cb = j < je ? b.col_indices[j] : b.n_cols;
            if (ca == cb) {
                c.col_indices.push_back(ca);
                c.values.push_back(alpha * a.values[i++] + beta * b.values[j++]);
            } else if (ca < cb) {
                c.col_indices.push_back(ca);
                c.values.push_back(alpha * a.values[i++]);
            } else {
                c.col_indices.push_back(cb);
                c.values.push_back(beta * b.values[j++]);
            }
        }
        c.row_offsets[r + 1] = static_cast<int>(c.col_indices.size());
    }
    return c;
}

CsrMatrix multiply(const CsrMatrix& a, const CsrMatrix& b) {
    if (a.n_cols != b.n_rows) throw StructuralError("multiply: inner dimension mismatch");
    CsrMatrix c;
    c.n_rows = a.n_rows;
    c.n_cols = b.n_cols;
    c.row_offsets.assign(static_cast<std::size_t>(c.n_rows) + 1, 0);
    std::vector<double> acc(b.n_cols, 0.0);
    std::vector<int> marker(b.n_cols, -1);
    std::vector<int> touched;
    for (int r = 0; r < a.n_rows; ++r) {
        touched.clear();
        for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) {
            int m = a.col_indices[k];
            double av = a.values[k];
            for (int l = b.row_offsets[m]; l < b.row_offsets[m + 1]; ++l) {
                int col = b.col_indices[l];
                if (marker[col] != r) {
                    marker[col] = r;
                    acc[col] = 0.0;
                    touched.push_back(col);
                }
                acc[col] += av * b.values[l];
            }
        }
        std::sort(touched.begin(), touched.end());
        for (int col : touched) {
            c.col_indices.push_back(col);
            c.values.push_back(acc[col]);
        }
        c.row_offsets[r + 1] = static_cast<int>(c.col_indices.size());
    }
    return c;
}

CsrMatrix submatrix(const CsrMatrix& a, const std::vector<int>& rows, const std::vector<int>& cols) {
    std::vector<int> col_map(a.n_cols, -1);
    for (std::size_t j = 0; j < cols.size(); ++j) {
        if (cols[j] < 0 || cols[j] >= a.n_cols) throw StructuralError("submatrix: column out of range");
        col_map[cols[j]] = static_cast<int>(j);
    }
    bool sorted_cols = std::is_sorted(cols.begin(), cols.end());
    CsrMatrix s;
    s.n_rows = static_cast<int>(rows.size());
    s.n_cols = static_cast<int>(cols.size());
    s.row_offsets.assign(rows.size() + 1, 0);
    std::vector<std::pair<int, double>> row_buf;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        int r = rows[i];
        if (r < 0 || r >= a.n_rows) throw StructuralError("submatrix: row out of range");
        row_buf.clear();
        for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) {
            int c = col_map[a.col_indices[k]];
            if (c >= 0) row_buf.emplace_back(c, a.values[k]);
        }
        if (!sorted_cols) std::sort(row_buf.begin(), row_buf.end());
        for (const auto& [c, v] : row_buf) {
            s.col_indices.push_back(c);
            s.values.push_back(v);
        }
        s.row_offsets[i + 1] = static_cast<int>(s.col_indices.size());
    }
    return s;
}

double max_abs(const CsrMatrix& a) {
    double m = 0.0;
    for (double v : a.values) m = std::max(m, std::abs(v));
    return m;
}

double frobenius_norm(const CsrMatrix& a) {
    double s = 0.0;
    for (double v : a.values) s += v * v;
    return std::sqrt(s);
}

double max_asymmetry(const CsrMatrix& a) {
    if (a.n_rows != a.n_cols) throw StructuralError("max_asymmetry: matrix not square");
    return max_abs(add(a, transpose(a), 1.0, -1.0));
}

Eigen::MatrixXd to_dense(const CsrMatrix& a) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(a.n_rows, a.n_cols);
    for (int r = 0; r < a.n_rows; ++r)
        for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k) d(r, a.col_indices[k]) = a.values[k];
    return d;
}

CsrMatrix from_dense(const Eigen::MatrixXd& a, double drop_tolerance) {
    std::vector<Triplet> t;
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c)
            if (std::abs(a(r, c)) > drop_tolerance) t.push_back({r, c, a(r, c)});
    return csr_from_triplets(static_cast<int>(a.rows()), static_cast<int>(a.cols()), t);
}

void write_matrix_market(const CsrMatrix& a, std::ostream& out) {
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << a.n_rows << " " << a.n_cols << " " << a.nnz() << "\n";
    out << std::setprecision(17);
    for (int r = 0; r < a.n_rows; ++r)
        for (int k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k)
            out << r + 1 << " " << a.col_indices[k] + 1 << " " << a.values[k] << "\n";
}

CsrMatrix read_matrix_market(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("%%MatrixMarket matrix coordinate real general", 0) != 0)
        throw FormatError("unsupported MatrixMarket header");
    while (std::getline(in, line) && !line.empty() && line[0] == '%') {
    }
    std::istringstream head(line);
    int nr = 0, nc = 0, nz = 0;
    if (!(head >> nr >> nc >> nz)) throw FormatError("bad MatrixMarket size line");
    std::vector<Triplet> t;
    t.reserve(nz);
    for (int k = 0; k < nz; ++k) {
        int r, c;
        double v;
        if (!(in >> r >> c >> v)) throw FormatError("truncated MatrixMarket body");
        t.push_back({r - 1, c - 1, v});
    }
    return csr_from_triplets(nr, nc, t);
}

BlockMatrix::BlockMatrix(std::vector<int> row_sizes, std::vector<int> col_sizes)
    : row_sizes_(std::move(row_sizes)), col_sizes_(std::move(col_sizes)) {
    row_offsets_.assign(row_sizes_.size() + 1, 0);
    col_offsets_.assign(col_sizes_.size() + 1, 0);
    for (std::size_t i = 0; i < row_sizes_.size(); ++i) row_offsets_[i + 1] = row_offsets_[i] + row_sizes_[i];
    for (std::size_t j = 0; j < col_sizes_.size(); ++j) col_offsets_[j + 1] = col_offsets_[j] + col_sizes_[j];
    blocks_.resize(row_sizes_.size() * col_sizes_.size());
}

void BlockMatrix::set(int bi, int bj, CsrMatrix block) {
    if (bi < 0 || bi >= block_rows() || bj < 0 || bj >= block_cols()) throw StructuralError("block index out of range");
    if (block.n_rows != row_sizes_[bi] || block.n_cols != col_sizes_[bj]) {
        std::ostringstream msg;
        msg << "block (" << bi << ", " << bj << ") is " << block.n_rows << "x" << block.n_cols << ", expected "
            << row_sizes_[bi] << "x" << col_sizes_[bj];
        throw StructuralError(msg.str());
    }
    blocks_[static_cast<std::size_t>(bi) * col_sizes_.size() + bj] = std::move(block);
}

const CsrMatrix* BlockMatrix::block(int bi, int bj) const {
    const auto& b = blocks_.at(static_cast<std::size_t>(bi) * col_sizes_.size() + bj);
    return b ? &*b : nullptr;
}

CsrMatrix BlockMatrix::flatten() const {
    CsrMatrix m;
    m.n_rows = rows();
    m.n_cols = cols();
    m.row_offsets.assign(static_cast<std::size_t>(m.n_rows) + 1, 0);
    std::size_t total = 0;
    for (const auto& b : blocks_)
        if (b) total += b->values.size();
    m.col_indices.reserve(total);
    m.values.reserve(total);
    int nbc = block_cols();
    for (int bi = 0; bi < block_rows(); ++bi) {
        for (int r = 0; r < row_sizes_[bi]; ++r) {
            for (int bj = 0; bj < nbc; ++bj) {
                const auto& b = blocks_[static_cast<std::size_t>(bi) * nbc + bj];
                if (!b) continue;
                int off = col_offsets_[bj];
                for (int k = b->row_offsets[r]; k < b->row_offsets[r + 1]; ++k) {
                    m.col_indices.push_back(b->col_indices[k] + off);
                    m.values.push_back(b->values[k]);
                }
            }
            m.row_offsets[row_offsets_[bi] + r + 1] = static_cast<int>(m.col_indices.size());
        }
    }
    return m;
}

} // namespace bifctl::sparse
