#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <vector>

namespace bifctl::sparse {

using Vector = Eigen::VectorXd;

struct Triplet {
    int row;
    int col;
    double value;
};

// Compressed sparse row storage. Column indices are strictly increasing
// within each row.
struct CsrMatrix {
    int n_rows = 0;
    int n_cols = 0;
    std::vector<int> row_offsets{0};
    std::vector<int> col_indices;
    std::vector<double> values;

    int nnz() const { return static_cast<int>(values.size()); }
    double coeff(int row, int col) const;
};

// Duplicate entries are summed. Throws StructuralError on out-of-range indices.
CsrMatrix csr_from_triplets(int n_rows, int n_cols, const std::vector<Triplet>& triplets);

CsrMatrix identity(int n);
CsrMatrix diagonal(const Vector& d);
CsrMatrix zeros(int n_rows, int n_cols);

// y = alpha * A x + beta * y
void spmv(const CsrMatrix& a, const Vector& x, Vector& y, double alpha = 1.0, double beta = 0.0);
Vector multiply(const CsrMatrix& a, const Vector& x);
Vector multiply_transposed(const CsrMatrix& a, const Vector& x);
Eigen::VectorXcd multiply(const CsrMatrix& a, const Eigen::VectorXcd& x);

CsrMatrix transpose(const CsrMatrix& a);
CsrMatrix scaled(const CsrMatrix& a, double factor);
// alpha * A + beta * B
CsrMatrix add(const CsrMatrix& a, const CsrMatrix& b, double alpha = 1.0, double beta = 1.0);
CsrMatrix multiply(const CsrMatrix& a, const CsrMatrix& b);

// Rows and columns picked by index lists; order of the lists is kept.
CsrMatrix submatrix(const CsrMatrix& a, const std::vector<int>& rows, const std::vector<int>& cols);

double max_abs(const CsrMatrix& a);
double frobenius_norm(const CsrMatrix& a);
double max_asymmetry(const CsrMatrix& a);

Eigen::MatrixXd to_dense(const CsrMatrix& a);
CsrMatrix from_dense(const Eigen::MatrixXd& a, double drop_tolerance = 0.0);

void write_matrix_market(const CsrMatrix& a, std::ostream& out);
CsrMatrix read_matrix_market(std::istream& in);

// Rectangular grid of sparse blocks; absent blocks are zero.
class BlockMatrix {
public:
    BlockMatrix(std::vector<int> row_sizes, std::vector<int> col_sizes);

    void set(int bi, int bj, CsrMatrix block);
    const CsrMatrix* block(int bi, int bj) const;

    int block_rows() const { return static_cast<int>(row_sizes_.size()); }
    int block_cols() const { return static_cast<int>(col_sizes_.size()); }
    int rows() const { return row_offsets_.back(); }
    int cols() const { return col_offsets_.back(); }
    int row_offset(int bi) const { return row_offsets_.at(bi); }
    int col_offset(int bj) const { return col_offsets_.at(bj); }

    CsrMatrix flatten() const;

private:
    std::vector<int> row_sizes_;
    std::vector<int> col_sizes_;
    std::vector<int> row_offsets_;
    std::vector<int> col_offsets_;
    std::vector<std::optional<CsrMatrix>> blocks_;
};

} // namespace bifctl::sparse
