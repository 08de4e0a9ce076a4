#pragma once

#include "bifctl/branch.hpp"
#include "bifctl/lu.hpp"
#include "bifctl/ocp.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace bifctl::rom {

using Matrix = Eigen::MatrixXd;
using ocp::Block;

struct PodResult {
    Matrix modes;                        // metric-orthonormal columns
    std::vector<double> singular_values; // all of them, non-increasing
    int rank = 0;                        // effective rank of the snapshot set
    bool rank_deficient = false;         // fewer than the requested modes returned
};

// Method of snapshots on the Gramian S^T M S.
PodResult pod(const Matrix& snapshots, const CsrMatrix& metric, int n, double rank_tolerance = 1e-12);

// Riesz representer of b(., s) in the velocity inner product:
//   (T s, phi)_V = b(phi, s).
// b does not depend on the viscosity here, so mu_bar only documents the call.
class SupremizerOperator {
public:
    SupremizerOperator(const CsrMatrix& velocity_metric, const CsrMatrix& divergence);
    Vector apply(const Vector& pressure) const;
    int velocity_size() const { return n_velocity_; }

private:
    sparse::LuFactorization metric_lu_;
    CsrMatrix divergence_t_;
    int n_velocity_;
};

Vector compute_supremizer(const SupremizerOperator& op, const Vector& pressure_mode, double mu_bar = 1.0);

// Inner products on the blocks of the optimality vector (free velocity dofs).
struct InnerProducts {
    CsrMatrix velocity;   // H1 seminorm + L2
    CsrMatrix pressure;   // L2
    CsrMatrix control;    // L2 on the control region
    CsrMatrix multiplier; // L2 trace on GammaD (Dirichlet only)
    const CsrMatrix& of(Block b) const;
};
InnerProducts rom_inner_products(const ocp::OptimalityProblem& problem);

struct SnapshotSet {
    std::string label;
    std::vector<double> mus;
    std::vector<Matrix> blocks; // indexed by Block, columns = snapshots
    int count() const { return static_cast<int>(mus.size()); }
    const Matrix& of(Block b) const { return blocks.at(static_cast<int>(b)); }
};

SnapshotSet collect_snapshots(const ocp::OptimalityProblem& problem, const branch::Branch& branch);
// manifest.json plus one little-endian float64 blob per snapshot
void write_snapshot_archive(const std::string& directory, const SnapshotSet& set);
SnapshotSet read_snapshot_archive(const std::string& directory);

// Aggregated block basis. Velocity columns are orthonormalized in the order
// v_k, T p_k, w_k, T q_k (k = 1..N) and pressure columns as p_k, q_k, so the
// basis for any N <= n is a prefix of each block.
struct ReducedBasis {
    Matrix velocity;   // shared by state and adjoint velocity, width <= 4n
    Matrix pressure;   // shared by state and adjoint pressure, width <= 2n
    Matrix control;    // width <= n
    Matrix state_multiplier, adjoint_multiplier;
    std::vector<int> velocity_prefix, pressure_prefix, control_prefix, multiplier_prefix[2]; // index N -> width
    std::vector<std::vector<double>> singular_values; // by Block
    int n = 0;
    bool supremizers = true;
    bool dirichlet = false;
    int dropped = 0; // dependent columns removed during orthonormalization

    const Matrix& of(Block b) const;
    int width(Block b, int N) const;
    int dimension(int N) const;
    int n_blocks() const { return dirichlet ? 7 : 5; }
};

struct BasisOptions {
    int n = 20;
    bool supremizers = true;
    double rank_tolerance = 1e-12;
};

ReducedBasis build_aggregated_basis(const ocp::OptimalityProblem& problem, const SnapshotSet& snapshots,
                                    const BasisOptions& options = {});

// Galerkin projection G_N(y; mu) = Z^T G(Z y; mu). The residual is affine in
// mu and at most quadratic in y, so
//   G_N(y) = g0 + mu g1 + (J0 + mu J1) y + 1/2 sum_j y_j H_j y
// holds exactly, with H_j = Z^T (J(z_j) - J(0)) Z.
class ReducedModel {
public:
    ReducedModel(const ocp::OptimalityProblem& problem, ReducedBasis basis);

    const ReducedBasis& basis() const { return basis_; }
    const ocp::OptimalityProblem& problem() const { return *problem_; }
    int n_max() const { return basis_.n; }
    int dimension(int N) const { return basis_.dimension(N); }

    Vector residual(const Vector& y, double mu, int N) const;
    Matrix jacobian(const Vector& y, double mu, int N) const;
    // affine parts at y = 0
    Matrix linear_part(double mu, int N) const;
    Vector constant_part(double mu, int N) const;
    // t[i, j, k]: coefficient of y_j y_k in row i of the residual, from the
    // quadratic term only
    double tensor(int i, int j, int k, int N) const;

    Vector lift(const Vector& y, int N) const;    // full optimality vector
    Vector project(const Vector& x, int N) const; // orthogonal projection coefficients
    // smallest singular value of the reduced constraint block
    double inf_sup(int N) const;

private:
    struct Term {
        int row_block, col_block;
        Matrix values; // full widths
    };
    std::vector<int> offsets(int N) const;
    std::vector<int> indices(int N) const;

    const ocp::OptimalityProblem* problem_;
    ReducedBasis basis_;
    InnerProducts ip_;
    std::vector<int> full_offsets_;
    Vector g0_, g1_;
    Matrix j0_, j1_;
    std::vector<std::vector<Term>> quadratic_; // by reduced index at full width
};

struct RomSolution {
    double mu = 0.0;
    int N = 0;
    Vector y;
    NewtonTrace trace;
    bool converged = false;
};

NewtonOptions rom_newton_defaults(); // tolerance 1e-10

RomSolution rom_solve(const ReducedModel& model, double mu, int N, const Vector& guess,
                      const NewtonOptions& options = rom_newton_defaults());

// Continuation over a parameter list; failures are recorded and the
// previous converged guess is kept.
std::vector<RomSolution> rom_sweep(const ReducedModel& model, const std::vector<double>& mus, int N,
                                   const Vector& guess, const NewtonOptions& options = rom_newton_defaults());

struct ErrorStudyOptions {
    std::vector<int> ns;        // empty -> 1..n_max
    // absolute error where the truth norm is below abs_fraction times its
    // largest value along the branch
    double abs_fraction = 1e-2;
};

struct AverageErrorRow {
    int N = 0;
    std::string var;
    double avg = 0.0;
};
struct MuErrorRow {
    double mu = 0.0;
    std::string var;
    double err = 0.0;
    std::string kind; // rel or abs
};

struct ErrorStudy {
    std::vector<AverageErrorRow> average; // by N, over converged reduced solves
    std::vector<MuErrorRow> by_mu;        // at the largest N
    int failures = 0;                     // reduced solves that did not converge
};

// Errors of the ROM against full-order solutions along a truth branch; the
// ROM sweeps start from the projection of the first truth entry.
ErrorStudy error_study(const ReducedModel& model, const branch::Branch& truth, const ErrorStudyOptions& options = {});

// mean error of one variable at one N
double average_error(const ErrorStudy& study, int N, const std::string& var);

// (N, var, avg_rel_err) and (mu, var, err, err_kind)
void write_average_errors_csv(const ErrorStudy& study, std::ostream& out);
void write_mu_errors_csv(const ErrorStudy& study, std::ostream& out);

} // namespace bifctl::rom
