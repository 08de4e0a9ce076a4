#include "bifctl/rom.hpp"

#include <json.hpp>

#include <Eigen/SVD>

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

namespace bifctl::rom {

namespace fs = std::filesystem;

namespace {

constexpr Block kBlocks[] = {Block::StateVelocity,   Block::StatePressure,   Block::Control,
                             Block::AdjointVelocity, Block::AdjointPressure, Block::StateMultiplier,
                             Block::AdjointMultiplier};

const char* block_name(Block b) {
    switch (b) {
    case Block::StateVelocity: return "v";
    case Block::StatePressure: return "p";
    case Block::Control: return "u";
    case Block::AdjointVelocity: return "w";
    case Block::AdjointPressure: return "q";
    case Block::StateMultiplier: return "ls";
    case Block::AdjointMultiplier: return "la";
    }
    return "?";
}

Matrix times(const CsrMatrix& a, const Matrix& x) {
    if (a.n_cols != x.rows()) throw StructuralError("sparse-dense product: size mismatch");
    Matrix y = Matrix::Zero(a.n_rows, x.cols());
    for (int i = 0; i < a.n_rows; ++i)
        for (int k = a.row_offsets[i]; k < a.row_offsets[i + 1]; ++k) y.row(i) += a.values[k] * x.row(a.col_indices[k]);
    return y;
}

double inner(const CsrMatrix& m, const Vector& a, const Vector& b) {
    return a.dot(sparse::multiply(m, b));
}

// Gram-Schmidt (two passes) of column c against the columns already in q.
// Returns the norm left after orthogonalization.
double orthogonalize(Matrix& q, int used, Vector& c, const CsrMatrix& m) {
    for (int pass = 0; pass < 2; ++pass) {
        if (used == 0) break;
        Vector mc = sparse::multiply(m, c);
        Vector h = q.leftCols(used).transpose() * mc;
        c -= q.leftCols(used) * h;
    }
    return std::sqrt(std::max(0.0, inner(m, c, c)));
}

// Orthonormalize candidates in order; columns whose remaining norm falls
// below tol times their original norm are dropped.
Matrix orthonormalize(const std::vector<Vector>& candidates, const CsrMatrix& m, std::vector<int>& kept, double tol,
                      int& dropped) {
    const int n = candidates.empty() ? m.n_rows : static_cast<int>(candidates[0].size());
    Matrix q(n, candidates.size());
    int used = 0;
    kept.clear();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        Vector c = candidates[i];
        double before = std::sqrt(std::max(0.0, inner(m, c, c)));
        if (before == 0.0) {
            ++dropped;
            continue;
        }
        double after = orthogonalize(q, used, c, m);
        if (after <= tol * before) {
            ++dropped;
            continue;
        }
        q.col(used++) = c / after;
        kept.push_back(static_cast<int>(i));
    }
    q.conservativeResize(n, used);
    return q;
}

} // namespace

PodResult pod(const Matrix& snapshots, const CsrMatrix& metric, int n, double rank_tolerance) {
    const int ns = static_cast<int>(snapshots.cols());
    if (n < 1 || n > ns) throw ParameterError("pod: need 1 <= N <= number of snapshots");
    if (metric.n_rows != snapshots.rows() || metric.n_cols != snapshots.rows())
        throw StructuralError("pod: metric does not match the snapshot length");
    // M-orthonormal QR, S = Q R, then SVD of the small factor
    Matrix q = Matrix::Zero(snapshots.rows(), ns);
    Matrix r = Matrix::Zero(ns, ns);
    const double scale = [&] {
        double s = 0.0;
        for (int j = 0; j < ns; ++j) s = std::max(s, std::sqrt(std::max(0.0, inner(metric, snapshots.col(j), snapshots.col(j)))));
        return s;
    }();
    for (int j = 0; j < ns; ++j) {
        Vector c = snapshots.col(j);
        for (int pass = 0; pass < 2; ++pass) {
            Vector h = q.leftCols(j).transpose() * sparse::multiply(metric, c);
            r.col(j).head(j) += h;
            c -= q.leftCols(j) * h;
        }
        double nc = std::sqrt(std::max(0.0, inner(metric, c, c)));
        if (nc > 1e-15 * scale && nc > 0.0) {
            r(j, j) = nc;
            q.col(j) = c / nc;
        }
    }
    Eigen::JacobiSVD<Matrix> svd(r, Eigen::ComputeFullU);
    PodResult out;
    const auto& sv = svd.singularValues();
    for (int i = 0; i < sv.size(); ++i) out.singular_values.push_back(sv[i]);
    const double s0 = sv.size() ? sv[0] : 0.0;
    out.rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv[i] > rank_tolerance * s0 && sv[i] > 0.0) ++out.rank;
    const int k = std::min(n, out.rank);
    out.rank_deficient = k < n;
    out.modes = q * svd.matrixU().leftCols(k);
    // polish orthonormality
    std::vector<Vector> cols;
    for (int i = 0; i < k; ++i) cols.push_back(out.modes.col(i));
    std::vector<int> kept;
    int dropped = 0;
    out.modes = orthonormalize(cols, metric, kept, 1e-8, dropped);
    return out;
}

SupremizerOperator::SupremizerOperator(const CsrMatrix& velocity_metric, const CsrMatrix& divergence)
    : metric_lu_(velocity_metric), divergence_t_(sparse::transpose(divergence)), n_velocity_(velocity_metric.n_rows) {
    if (divergence.n_cols != velocity_metric.n_rows) throw StructuralError("supremizer: divergence/metric mismatch");
}

Vector SupremizerOperator::apply(const Vector& pressure) const {
    if (pressure.size() != divergence_t_.n_cols) throw StructuralError("supremizer: pressure vector has wrong length");
    return metric_lu_.solve(sparse::multiply(divergence_t_, pressure));
}

Vector compute_supremizer(const SupremizerOperator& op, const Vector& pressure_mode, double mu_bar) {
    if (!(mu_bar > 0.0)) throw ParameterError("supremizer: viscosity must be positive");
    return op.apply(pressure_mode);
}

const CsrMatrix& InnerProducts::of(Block b) const {
    switch (b) {
    case Block::StateVelocity:
    case Block::AdjointVelocity: return velocity;
    case Block::StatePressure:
    case Block::AdjointPressure: return pressure;
    case Block::Control: return control;
    default: return multiplier;
    }
}

InnerProducts rom_inner_products(const ocp::OptimalityProblem& problem) {
    const auto& s = problem.space();
    fem::InnerProductSet full = fem::build_inner_products(s);
    InnerProducts ip;
    ip.velocity = sparse::submatrix(full.velocity_h1, problem.free_dofs(), problem.free_dofs());
    ip.pressure = full.pressure_mass;
    ip.control = problem.control_mass();
    if (problem.n_blocks() == 7) ip.multiplier = ocp::build_dirichlet_multiplier_blocks(s).trace_control;
    return ip;
}

SnapshotSet collect_snapshots(const ocp::OptimalityProblem& problem, const branch::Branch& branch) {
    SnapshotSet set;
    set.label = branch.label;
    std::vector<const branch::BranchEntry*> entries;
    for (const auto& e : branch.entries)
        if (e.converged) entries.push_back(&e);
    if (entries.empty()) throw ParameterError("snapshot branch has no converged entries");
    const int nb = problem.n_blocks();
    set.blocks.resize(nb);
    for (int b = 0; b < nb; ++b) set.blocks[b].resize(problem.block_size(kBlocks[b]), entries.size());
    for (std::size_t j = 0; j < entries.size(); ++j) {
        set.mus.push_back(entries[j]->mu);
        for (int b = 0; b < nb; ++b) set.blocks[b].col(j) = problem.block(entries[j]->x, kBlocks[b]);
    }
    return set;
}

void write_snapshot_archive(const std::string& directory, const SnapshotSet& set) {
    static_assert(std::endian::native == std::endian::little, "snapshot blobs are written little-endian");
    fs::path root(directory);
    fs::create_directories(root);
    nlohmann::ordered_json m;
    m["format"] = "snapshots v1";
    m["label"] = set.label;
    m["variables"] = nlohmann::ordered_json::array();
    m["dims"] = nlohmann::ordered_json::array();
    m["metric_ids"] = nlohmann::ordered_json::array();
    for (std::size_t b = 0; b < set.blocks.size(); ++b) {
        Block blk = kBlocks[b];
        m["variables"].push_back(block_name(blk));
        m["dims"].push_back(set.blocks[b].rows());
        bool vel = blk == Block::StateVelocity || blk == Block::AdjointVelocity;
        bool pre = blk == Block::StatePressure || blk == Block::AdjointPressure;
        m["metric_ids"].push_back(vel ? "velocity_h1" : pre ? "pressure_l2" : blk == Block::Control ? "control_l2" : "trace_l2");
    }
    m["mu_list"] = set.mus;
    m["files"] = nlohmann::ordered_json::array();
    for (int j = 0; j < set.count(); ++j) {
        std::ostringstream name;
        name << "snap_" << std::setw(3) << std::setfill('0') << j << ".bin";
        std::ofstream f(root / name.str(), std::ios::binary);
        if (!f) throw FormatError("cannot write " + (root / name.str()).string());
        for (const auto& blk : set.blocks) {
            Vector c = blk.col(j);
            f.write(reinterpret_cast<const char*>(c.data()), static_cast<std::streamsize>(c.size() * sizeof(double)));
        }
        m["files"].push_back(name.str());
    }
    std::ofstream(root / "manifest.json") << m.dump(2) << "\n";
}

SnapshotSet read_snapshot_archive(const std::string& directory) {
    fs::path root(directory);
    std::ifstream mf(root / "manifest.json");
    if (!mf) throw FormatError("missing manifest.json in " + directory);
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(mf);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("snapshot manifest: ") + e.what());
    }
    if (m.value("format", "") != "snapshots v1") throw FormatError("snapshot manifest: unknown format");
    SnapshotSet set;
    set.label = m.at("label").get<std::string>();
    set.mus = m.at("mu_list").get<std::vector<double>>();
    auto dims = m.at("dims").get<std::vector<long>>();
    auto files = m.at("files").get<std::vector<std::string>>();
    if (files.size() != set.mus.size()) throw FormatError("snapshot manifest: file count does not match mu_list");
    for (long d : dims) set.blocks.emplace_back(d, static_cast<long>(files.size()));
    for (std::size_t j = 0; j < files.size(); ++j) {
        std::ifstream f(root / files[j], std::ios::binary);
        if (!f) throw FormatError("missing snapshot blob " + files[j]);
        for (auto& blk : set.blocks) {
            Vector c(blk.rows());
            f.read(reinterpret_cast<char*>(c.data()), static_cast<std::streamsize>(c.size() * sizeof(double)));
            if (!f) throw FormatError("truncated snapshot blob " + files[j]);
            blk.col(j) = c;
        }
        if (f.peek() != std::char_traits<char>::eof()) throw FormatError("oversized snapshot blob " + files[j]);
    }
    return set;
}

const Matrix& ReducedBasis::of(Block b) const {
    switch (b) {
    case Block::StateVelocity:
    case Block::AdjointVelocity: return velocity;
    case Block::StatePressure:
    case Block::AdjointPressure: return pressure;
    case Block::Control: return control;
    case Block::StateMultiplier: return state_multiplier;
    case Block::AdjointMultiplier: return adjoint_multiplier;
    }
    return velocity;
}

int ReducedBasis::width(Block b, int N) const {
    if (N < 0 || N > n) throw ParameterError("reduced basis size out of range");
    switch (b) {
    case Block::StateVelocity:
    case Block::AdjointVelocity: return velocity_prefix[N];
    case Block::StatePressure:
    case Block::AdjointPressure: return pressure_prefix[N];
    case Block::Control: return control_prefix[N];
    case Block::StateMultiplier: return dirichlet ? multiplier_prefix[0][N] : 0;
    case Block::AdjointMultiplier: return dirichlet ? multiplier_prefix[1][N] : 0;
    }
    return 0;
}

int ReducedBasis::dimension(int N) const {
    int d = 0;
    for (int b = 0; b < n_blocks(); ++b) d += width(kBlocks[b], N);
    return d;
}

namespace {

// widths after each family index k, from the kept list of an interleaved
// orthonormalization with `per` candidates per k
std::vector<int> prefix_widths(const std::vector<int>& kept_candidate, const std::vector<int>& family_of_candidate,
                               int n) {
    std::vector<int> w(n + 1, 0);
    for (int N = 1; N <= n; ++N)
        for (int c : kept_candidate)
            if (family_of_candidate[c] < N) ++w[N];
    return w;
}

} // namespace

ReducedBasis build_aggregated_basis(const ocp::OptimalityProblem& problem, const SnapshotSet& snapshots,
                                    const BasisOptions& options) {
    const int n = options.n;
    if (n < 1) throw ParameterError("reduced basis size must be positive");
    if (snapshots.count() < n) throw ParameterError("fewer snapshots than requested basis functions");
    if (static_cast<int>(snapshots.blocks.size()) != problem.n_blocks())
        throw StructuralError("snapshot set does not match the optimality system");
    InnerProducts ip = rom_inner_products(problem);
    ReducedBasis basis;
    basis.n = n;
    basis.supremizers = options.supremizers;
    basis.dirichlet = problem.n_blocks() == 7;
    basis.singular_values.resize(problem.n_blocks());

    std::map<int, PodResult> pods;
    for (int b = 0; b < problem.n_blocks(); ++b) {
        pods[b] = pod(snapshots.blocks[b], ip.of(kBlocks[b]), n, options.rank_tolerance);
        basis.singular_values[b] = pods[b].singular_values;
    }
    auto mode = [&](Block b, int k) -> std::optional<Vector> {
        const Matrix& m = pods[static_cast<int>(b)].modes;
        if (k < m.cols()) return Vector(m.col(k));
        return std::nullopt;
    };

    CsrMatrix div_free = sparse::submatrix(fem::assemble_divergence(problem.space()),
                                           [&] {
                                               std::vector<int> r(problem.space().n_pressure());
                                               for (int i = 0; i < static_cast<int>(r.size()); ++i) r[i] = i;
                                               return r;
                                           }(),
                                           problem.free_dofs());
    std::optional<SupremizerOperator> sup;
    if (options.supremizers) sup.emplace(ip.velocity, div_free);

    const double tol = 1e-10;
    // velocity: v_k, T p_k, w_k, T q_k
    std::vector<Vector> cand;
    std::vector<int> family;
    for (int k = 0; k < n; ++k) {
        auto add = [&](std::optional<Vector> c) {
            if (!c) return;
            cand.push_back(std::move(*c));
            family.push_back(k);
        };
        add(mode(Block::StateVelocity, k));
        if (sup) {
            if (auto p = mode(Block::StatePressure, k)) add(compute_supremizer(*sup, *p));
        }
        add(mode(Block::AdjointVelocity, k));
        if (sup) {
            if (auto q = mode(Block::AdjointPressure, k)) add(compute_supremizer(*sup, *q));
        }
    }
    std::vector<int> kept;
    basis.velocity = orthonormalize(cand, ip.velocity, kept, tol, basis.dropped);
    basis.velocity_prefix = prefix_widths(kept, family, n);

    cand.clear();
    family.clear();
    for (int k = 0; k < n; ++k)
        for (Block b : {Block::StatePressure, Block::AdjointPressure})
            if (auto c = mode(b, k)) {
                cand.push_back(*c);
                family.push_back(k);
            }
    basis.pressure = orthonormalize(cand, ip.pressure, kept, tol, basis.dropped);
    basis.pressure_prefix = prefix_widths(kept, family, n);

    auto single = [&](Block b, Matrix& out, std::vector<int>& prefix) {
        cand.clear();
        family.clear();
        for (int k = 0; k < n; ++k)
            if (auto c = mode(b, k)) {
                cand.push_back(*c);
                family.push_back(k);
            }
        out = orthonormalize(cand, ip.of(b), kept, tol, basis.dropped);
        prefix = prefix_widths(kept, family, n);
    };
    single(Block::Control, basis.control, basis.control_prefix);
    if (basis.dirichlet) {
        single(Block::StateMultiplier, basis.state_multiplier, basis.multiplier_prefix[0]);
        single(Block::AdjointMultiplier, basis.adjoint_multiplier, basis.multiplier_prefix[1]);
    }
    return basis;
}

ReducedModel::ReducedModel(const ocp::OptimalityProblem& problem, ReducedBasis basis)
    : problem_(&problem), basis_(std::move(basis)), ip_(rom_inner_products(problem)) {
    const int nb = basis_.n_blocks();
    if (nb != problem.n_blocks()) throw StructuralError("reduced basis does not match the optimality system");
    for (int b = 0; b < nb; ++b)
        if (basis_.of(kBlocks[b]).rows() != problem.block_size(kBlocks[b]))
            throw StructuralError("reduced basis block has wrong length");
    full_offsets_ = offsets(basis_.n);
    const int dim = full_offsets_.back();

    auto project_vector = [&](const Vector& r) {
        Vector out(dim);
        for (int b = 0; b < nb; ++b)
            out.segment(full_offsets_[b], full_offsets_[b + 1] - full_offsets_[b]) =
                basis_.of(kBlocks[b]).transpose() * problem.block(r, kBlocks[b]);
        return out;
    };
    auto project_block = [&](const CsrMatrix& m, int bi, int bj) -> Matrix {
        return basis_.of(kBlocks[bi]).transpose() * times(m, basis_.of(kBlocks[bj]));
    };
    auto project_matrix = [&](const sparse::BlockMatrix& j) {
        Matrix out = Matrix::Zero(dim, dim);
        for (int bi = 0; bi < nb; ++bi)
            for (int bj = 0; bj < nb; ++bj)
                if (const CsrMatrix* m = j.block(bi, bj))
                    out.block(full_offsets_[bi], full_offsets_[bj], full_offsets_[bi + 1] - full_offsets_[bi],
                              full_offsets_[bj + 1] - full_offsets_[bj]) = project_block(*m, bi, bj);
        return out;
    };

    const Vector zero = problem.zero_guess();
    Vector r1 = project_vector(problem.residual(zero, 1.0));
    Vector r2 = project_vector(problem.residual(zero, 2.0));
    g1_ = r2 - r1;
    g0_ = r1 - g1_;
    sparse::BlockMatrix a1 = problem.jacobian_blocks(zero, 1.0);
    sparse::BlockMatrix a2 = problem.jacobian_blocks(zero, 2.0);
    Matrix m1 = project_matrix(a1), m2 = project_matrix(a2);
    j1_ = m2 - m1;
    j0_ = m1 - j1_;

    // the residual is quadratic only through the two velocity blocks
    quadratic_.resize(dim);
    for (Block dir : {Block::StateVelocity, Block::AdjointVelocity}) {
        const int b = static_cast<int>(dir);
        const Matrix& z = basis_.of(dir);
        for (int c = 0; c < z.cols(); ++c) {
            Vector x = zero;
            x.segment(problem.block_offset(dir), z.rows()) = z.col(c);
            sparse::BlockMatrix jz = problem.jacobian_blocks(x, 1.0);
            for (int bi = 0; bi < nb; ++bi)
                for (int bj = 0; bj < nb; ++bj) {
                    const CsrMatrix* p = jz.block(bi, bj);
                    const CsrMatrix* q = a1.block(bi, bj);
                    if (!p) continue;
                    CsrMatrix d = q ? sparse::add(*p, *q, 1.0, -1.0) : *p;
                    double scale = std::max(sparse::max_abs(*p), 1.0);
                    if (sparse::max_abs(d) <= 1e-14 * scale) continue;
                    quadratic_[full_offsets_[b] + c].push_back({bi, bj, project_block(d, bi, bj)});
                }
        }
    }
}

std::vector<int> ReducedModel::offsets(int N) const {
    std::vector<int> o = {0};
    for (int b = 0; b < basis_.n_blocks(); ++b) o.push_back(o.back() + basis_.width(kBlocks[b], N));
    return o;
}

std::vector<int> ReducedModel::indices(int N) const {
    std::vector<int> idx;
    for (int b = 0; b < basis_.n_blocks(); ++b)
        for (int i = 0; i < basis_.width(kBlocks[b], N); ++i) idx.push_back(full_offsets_[b] + i);
    return idx;
}

Vector ReducedModel::constant_part(double mu, int N) const {
    return Vector(g0_ + mu * g1_)(indices(N));
}

Matrix ReducedModel::linear_part(double mu, int N) const {
    auto idx = indices(N);
    return Matrix(j0_ + mu * j1_)(idx, idx);
}

Matrix ReducedModel::jacobian(const Vector& y, double mu, int N) const {
    if (y.size() != dimension(N)) throw StructuralError("reduced vector has wrong length");
    auto idx = indices(N);
    auto off = offsets(N);
    Matrix j = Matrix(j0_ + mu * j1_)(idx, idx);
    for (std::size_t a = 0; a < idx.size(); ++a) {
        if (y[a] == 0.0) continue;
        for (const Term& t : quadratic_[idx[a]]) {
            const int r = off[t.row_block + 1] - off[t.row_block], c = off[t.col_block + 1] - off[t.col_block];
            j.block(off[t.row_block], off[t.col_block], r, c) += y[a] * t.values.topLeftCorner(r, c);
        }
    }
    return j;
}

Vector ReducedModel::residual(const Vector& y, double mu, int N) const {
    if (y.size() != dimension(N)) throw StructuralError("reduced vector has wrong length");
    auto idx = indices(N);
    auto off = offsets(N);
    Vector r = Vector(g0_ + mu * g1_)(idx) + Matrix(j0_ + mu * j1_)(idx, idx) * y;
    for (std::size_t a = 0; a < idx.size(); ++a) {
        if (y[a] == 0.0) continue;
        for (const Term& t : quadratic_[idx[a]]) {
            const int rr = off[t.row_block + 1] - off[t.row_block], c = off[t.col_block + 1] - off[t.col_block];
            r.segment(off[t.row_block], rr) += 0.5 * y[a] * (t.values.topLeftCorner(rr, c) * y.segment(off[t.col_block], c));
        }
    }
    return r;
}

double ReducedModel::tensor(int i, int j, int k, int N) const {
    auto idx = indices(N);
    auto off = offsets(N);
    const int n = static_cast<int>(idx.size());
    if (i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n) throw ParameterError("tensor index out of range");
    auto block_of = [&](int a) {
        int b = 0;
        while (a >= off[b + 1]) ++b;
        return b;
    };
    const int bi = block_of(i), bk = block_of(k);
    double t = 0.0;
    for (const Term& term : quadratic_[idx[j]])
        if (term.row_block == bi && term.col_block == bk) t += 0.5 * term.values(i - off[bi], k - off[bk]);
    return t;
}

Vector ReducedModel::lift(const Vector& y, int N) const {
    if (y.size() != dimension(N)) throw StructuralError("reduced vector has wrong length");
    auto off = offsets(N);
    Vector x = problem_->zero_guess();
    for (int b = 0; b < basis_.n_blocks(); ++b) {
        const int w = off[b + 1] - off[b];
        x.segment(problem_->block_offset(kBlocks[b]), problem_->block_size(kBlocks[b])) =
            basis_.of(kBlocks[b]).leftCols(w) * y.segment(off[b], w);
    }
    return x;
}

Vector ReducedModel::project(const Vector& x, int N) const {
    auto off = offsets(N);
    Vector y(off.back());
    for (int b = 0; b < basis_.n_blocks(); ++b) {
        const int w = off[b + 1] - off[b];
        Vector mx = sparse::multiply(ip_.of(kBlocks[b]), problem_->block(x, kBlocks[b]));
        y.segment(off[b], w) = basis_.of(kBlocks[b]).leftCols(w).transpose() * mx;
    }
    return y;
}

double ReducedModel::inf_sup(int N) const {
    const int wv = basis_.width(Block::StateVelocity, N), wp = basis_.width(Block::StatePressure, N);
    if (wp == 0) return 0.0;
    // q-row, v-column block of the Jacobian is the divergence on free dofs
    const int bq = static_cast<int>(Block::AdjointPressure), bv = static_cast<int>(Block::StateVelocity);
    Matrix b = j0_.block(full_offsets_[bq], full_offsets_[bv], wp, wv);
    if (wv < wp) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(b);
    return svd.singularValues()[wp - 1];
}

namespace {

class ReducedProblem : public NonlinearProblem {
public:
    ReducedProblem(const ReducedModel& m, int n) : model_(m), n_(n) {}
    int size() const override { return model_.dimension(n_); }
    Vector residual(const Vector& y, double mu) const override { return model_.residual(y, mu, n_); }
    CsrMatrix jacobian(const Vector& y, double mu) const override {
        return sparse::from_dense(model_.jacobian(y, mu, n_));
    }

private:
    const ReducedModel& model_;
    int n_;
};

} // namespace

NewtonOptions rom_newton_defaults() {
    NewtonOptions o;
    o.tolerance = 1e-10;
    o.max_iterations = 30;
    return o;
}

RomSolution rom_solve(const ReducedModel& model, double mu, int N, const Vector& guess, const NewtonOptions& options) {
    if (N < 1 || N > model.n_max()) throw ParameterError("reduced basis size out of range");
    if (!(mu > 0.0)) throw ParameterError("viscosity must be positive");
    ReducedProblem p(model, N);
    if (guess.size() != p.size()) throw StructuralError("reduced guess has wrong length");
    NewtonResult r = newton_solve(p, guess, mu, options);
    RomSolution s;
    s.mu = mu;
    s.N = N;
    s.y = std::move(r.x);
    s.trace = std::move(r.trace);
    s.converged = true;
    return s;
}

std::vector<RomSolution> rom_sweep(const ReducedModel& model, const std::vector<double>& mus, int N,
                                   const Vector& guess, const NewtonOptions& options) {
    std::vector<RomSolution> out;
    Vector y = guess;
    for (double mu : mus) {
        try {
            out.push_back(rom_solve(model, mu, N, y, options));
            y = out.back().y;
        } catch (const ConvergenceError&) {
            RomSolution s;
            s.mu = mu;
            s.N = N;
            s.y = y;
            out.push_back(std::move(s));
        } catch (const SingularMatrixError&) {
            RomSolution s;
            s.mu = mu;
            s.N = N;
            s.y = y;
            out.push_back(std::move(s));
        }
    }
    return out;
}

ErrorStudy error_study(const ReducedModel& model, const branch::Branch& truth, const ErrorStudyOptions& options) {
    const ocp::OptimalityProblem& p = model.problem();
    std::vector<const branch::BranchEntry*> entries;
    for (const auto& e : truth.entries)
        if (e.converged) entries.push_back(&e);
    if (entries.empty()) throw ParameterError("error study needs converged truth solutions");
    std::vector<int> ns = options.ns;
    if (ns.empty())
        for (int n = 1; n <= model.n_max(); ++n) ns.push_back(n);
    std::vector<double> mus;
    for (auto* e : entries) mus.push_back(e->mu);

    fem::InnerProductSet full = fem::build_inner_products(p.space());
    struct Var {
        std::string name;
        std::function<Vector(const Vector&)> get;
        const CsrMatrix* metric;
    };
    std::vector<Var> vars = {
        {"v", [&](const Vector& x) { return p.state_velocity(x); }, &full.velocity_h1},
        {"p", [&](const Vector& x) { return p.block(x, Block::StatePressure); }, &full.pressure_mass},
        {"u", [&](const Vector& x) { return p.control(x); }, &p.control_mass()},
        {"w", [&](const Vector& x) { return p.adjoint_velocity(x); }, &full.velocity_h1},
        {"q", [&](const Vector& x) { return p.block(x, Block::AdjointPressure); }, &full.pressure_mass},
    };
    auto norm = [](const CsrMatrix& m, const Vector& a) { return std::sqrt(std::max(0.0, inner(m, a, a))); };

    std::map<std::string, double> scale;
    for (const Var& v : vars)
        for (auto* e : entries) scale[v.name] = std::max(scale[v.name], norm(*v.metric, v.get(e->x)));

    ErrorStudy study;
    const int n_last = *std::max_element(ns.begin(), ns.end());
    for (int N : ns) {
        auto sols = rom_sweep(model, mus, N, model.project(entries[0]->x, N));
        std::map<std::string, double> sum;
        int ok = 0;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (sols[i].converged)
                ++ok;
            else
                ++study.failures;
            Vector xr = model.lift(sols[i].y, N);
            for (const Var& v : vars) {
                Vector t = v.get(entries[i]->x);
                double nt = norm(*v.metric, t);
                double ne = norm(*v.metric, Vector(v.get(xr) - t));
                bool rel = nt > 0.0 && nt >= options.abs_fraction * scale[v.name];
                double err = sols[i].converged ? (rel ? ne / nt : ne) : std::numeric_limits<double>::quiet_NaN();
                if (sols[i].converged) sum[v.name] += err;
                if (N == n_last) study.by_mu.push_back({entries[i]->mu, v.name, err, rel ? "rel" : "abs"});
            }
        }
        // failed reduced solves are left out of the mean
        for (const Var& v : vars)
            study.average.push_back({N, v.name, ok ? sum[v.name] / ok : std::numeric_limits<double>::quiet_NaN()});
    }
    return study;
}

double average_error(const ErrorStudy& study, int N, const std::string& var) {
    for (const auto& r : study.average)
        if (r.N == N && r.var == var) return r.avg;
    throw ParameterError("no average error recorded for N = " + std::to_string(N) + ", " + var);
}

void write_average_errors_csv(const ErrorStudy& study, std::ostream& out) {
    out << "N,var,avg_rel_err\n" << std::setprecision(17);
    for (const auto& r : study.average) out << r.N << "," << r.var << "," << r.avg << "\n";
}

void write_mu_errors_csv(const ErrorStudy& study, std::ostream& out) {
    out << "mu,var,err,err_kind\n" << std::setprecision(17);
    for (const auto& r : study.by_mu) out << r.mu << "," << r.var << "," << r.err << "," << r.kind << "\n";
}

} // namespace bifctl::rom
