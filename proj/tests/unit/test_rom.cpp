#include <doctest.h>

#include "bifctl/rom.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

using namespace bifctl;
using namespace bifctl::rom;

namespace {

std::shared_ptr<const fem::TaylorHoodSpace> coarse() {
    static auto s =
        std::make_shared<const fem::TaylorHoodSpace>(mesh::build_channel_mesh(mesh::MeshSpec::preset("coarse")));
    return s;
}

const ns::StateProblem& state() {
    static ns::StateProblem p(coarse());
    return p;
}

const ocp::OptimalityProblem& neumann() {
    static ocp::OptimalityProblem p(coarse(), {fem::ControlKind::Neumann, 0.01},
                                    ns::make_target(state(), ns::TargetKind::Symmetric));
    return p;
}

const ocp::OptimalityProblem& dirichlet() {
    static ocp::OptimalityProblem p(coarse(), {fem::ControlKind::DirichletBC, 0.01},
                                    ns::make_target(state(), ns::TargetKind::Symmetric));
    return p;
}

branch::Branch run(const ocp::OptimalityProblem& p, double hi, double lo, int n) {
    branch::ContinuationPlan plan;
    plan.mus = branch::descending_grid(hi, lo, n);
    return branch::run_continuation(p, plan);
}

// 11 solutions on [1, 2]
const branch::Branch& truth() {
    static branch::Branch b = run(neumann(), 2.0, 1.0, 11);
    return b;
}

const ReducedModel& model() {
    static ReducedModel m = [] {
        BasisOptions o;
        o.n = 6;
        return ReducedModel(neumann(), build_aggregated_basis(neumann(), collect_snapshots(neumann(), truth()), o));
    }();
    return m;
}

CsrMatrix random_spd(int n, std::mt19937& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = u(rng);
    return sparse::from_dense(a * a.transpose() + n * Eigen::MatrixXd::Identity(n, n));
}

Eigen::MatrixXd random_matrix(int r, int c, std::mt19937& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd a(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) a(i, j) = u(rng);
    return a;
}

double metric_norm(const CsrMatrix& m, const Vector& v) { return std::sqrt(v.dot(sparse::multiply(m, v))); }

} // namespace

TEST_CASE("pod reproduces a full rank snapshot set") {
    std::mt19937 rng(7);
    CsrMatrix m = random_spd(40, rng);
    Eigen::MatrixXd s = random_matrix(40, 6, rng);
    PodResult r = pod(s, m, 6);
    REQUIRE(r.modes.cols() == 6);
    CHECK(r.rank == 6);
    CHECK_FALSE(r.rank_deficient);
    Eigen::MatrixXd mz = sparse::to_dense(m) * r.modes;
    CHECK((r.modes.transpose() * mz - Eigen::MatrixXd::Identity(6, 6)).norm() < 1e-10);
    Eigen::MatrixXd proj = r.modes * (mz.transpose() * s);
    CHECK((proj - s).norm() < 1e-10 * s.norm());
    CHECK_THROWS_AS(pod(s, m, 7), ParameterError);
    CHECK_THROWS_AS(pod(s, m, 0), ParameterError);
}

TEST_CASE("pod energies match the gramian") {
    std::mt19937 rng(11);
    CsrMatrix m = random_spd(30, rng);
    Eigen::MatrixXd s = random_matrix(30, 8, rng);
    PodResult r = pod(s, m, 3);
    Eigen::MatrixXd g = s.transpose() * sparse::to_dense(m) * s;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    REQUIRE(r.singular_values.size() == 8);
    for (int i = 0; i < 8; ++i)
        CHECK(r.singular_values[i] * r.singular_values[i] == doctest::Approx(es.eigenvalues()[7 - i]).epsilon(1e-10));
    // leading mode is the top eigenvector of the gramian mapped back
    Vector lead = s * es.eigenvectors().col(7);
    lead /= metric_norm(m, lead);
    double c = r.modes.col(0).dot(sparse::multiply(m, lead));
    CHECK(std::abs(c) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("pod of repeated snapshots has rank one") {
    std::mt19937 rng(3);
    CsrMatrix m = random_spd(20, rng);
    Vector v = random_matrix(20, 1, rng).col(0);
    Eigen::MatrixXd s(20, 4);
    for (int j = 0; j < 4; ++j) s.col(j) = (j + 1.0) * v;
    PodResult r = pod(s, m, 3);
    CHECK(r.rank == 1);
    CHECK(r.rank_deficient);
    REQUIRE(r.modes.cols() == 1);
    CHECK(std::abs(r.modes.col(0).dot(sparse::multiply(m, v))) == doctest::Approx(metric_norm(m, v)).epsilon(1e-12));
}

TEST_CASE("supremizer matches a dense solve") {
    std::mt19937 rng(5);
    CsrMatrix h = random_spd(12, rng);
    Eigen::MatrixXd d = random_matrix(4, 12, rng);
    SupremizerOperator op(h, sparse::from_dense(d));
    CHECK(op.velocity_size() == 12);
    Vector s = random_matrix(4, 1, rng).col(0);
    Vector t = compute_supremizer(op, s);
    Vector ref = sparse::to_dense(h).ldlt().solve(d.transpose() * s);
    CHECK((t - ref).norm() < 1e-12 * ref.norm());
    // defining property: (T s, phi)_H = b(phi, s)
    Vector phi = random_matrix(12, 1, rng).col(0);
    CHECK(phi.dot(sparse::multiply(h, t)) == doctest::Approx(phi.dot(d.transpose() * s)).epsilon(1e-12));
    CHECK(compute_supremizer(op, Vector::Zero(4)).norm() == 0.0);
    CHECK_THROWS_AS(op.apply(Vector::Zero(3)), StructuralError);
    CHECK_THROWS_AS(compute_supremizer(op, s, 0.0), ParameterError);
}

TEST_CASE("aggregated basis sizes and orthonormality") {
    const ReducedBasis& b = model().basis();
    CHECK(b.n == 6);
    CHECK(b.n_blocks() == 5);
    CHECK(b.dimension(1) == 13);
    CHECK(b.width(Block::StateVelocity, 1) == 4);
    CHECK(b.width(Block::StatePressure, 1) == 2);
    CHECK(b.width(Block::Control, 1) == 1);
    CHECK(b.dimension(6) == 2 * b.velocity.cols() + 2 * b.pressure.cols() + b.control.cols());
    CHECK(b.velocity.cols() + b.pressure.cols() + b.control.cols() + b.dropped == 7 * 6);
    for (int N = 1; N < 6; ++N) CHECK(b.dimension(N) <= b.dimension(N + 1));
    InnerProducts ip = rom_inner_products(neumann());
    for (Block blk : {Block::StateVelocity, Block::StatePressure, Block::Control}) {
        const Matrix& z = b.of(blk);
        Matrix g = z.transpose() * sparse::to_dense(ip.of(blk)) * z;
        CHECK((g - Matrix::Identity(z.cols(), z.cols())).cwiseAbs().maxCoeff() < 1e-10);
    }
    CHECK_THROWS_AS(b.width(Block::Control, 7), ParameterError);
}

TEST_CASE("dirichlet basis carries both multipliers") {
    branch::Branch t = run(dirichlet(), 2.0, 1.6, 3);
    BasisOptions o;
    o.n = 2;
    ReducedBasis b = build_aggregated_basis(dirichlet(), collect_snapshots(dirichlet(), t), o);
    CHECK(b.dirichlet);
    CHECK(b.n_blocks() == 7);
    CHECK(b.dimension(1) == 15);
    CHECK(b.width(Block::StateMultiplier, 1) == 1);
    CHECK(b.width(Block::AdjointMultiplier, 1) == 1);
    InnerProducts ip = rom_inner_products(dirichlet());
    Matrix g = b.state_multiplier.transpose() * sparse::to_dense(ip.multiplier) * b.state_multiplier;
    CHECK((g - Matrix::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("reduced residual is the galerkin projection") {
    const ReducedModel& m = model();
    const ocp::OptimalityProblem& p = neumann();
    const int N = 6;
    std::mt19937 rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        Vector y = 0.3 * random_matrix(m.dimension(N), 1, rng).col(0);
        double mu = 0.7 + 0.3 * trial;
        Vector x = m.lift(y, N);
        Vector full = p.residual(x, mu);
        Vector ref(m.dimension(N));
        int o = 0;
        for (int b = 0; b < 5; ++b) {
            Block blk = static_cast<Block>(b);
            int w = m.basis().width(blk, N);
            ref.segment(o, w) = m.basis().of(blk).leftCols(w).transpose() * p.block(full, blk);
            o += w;
        }
        Vector r = m.residual(y, mu, N);
        CHECK((r - ref).norm() <= 1e-9 * std::max(1.0, ref.norm()));
        // tensor form of the quadratic part
        Vector quad = r - m.constant_part(mu, N) - m.linear_part(mu, N) * y;
        const int n = m.dimension(N);
        Vector t = Vector::Zero(n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k) t[i] += m.tensor(i, j, k, N) * y[j] * y[k];
        CHECK((quad - t).norm() <= 1e-9 * std::max(1.0, quad.norm()));
        // jacobian is the projected full jacobian and symmetric
        Matrix j = m.jacobian(y, mu, N);
        CHECK((j - j.transpose()).cwiseAbs().maxCoeff() < 1e-9 * std::max(1.0, j.cwiseAbs().maxCoeff()));
        Vector dy = random_matrix(n, 1, rng).col(0);
        double h = 1e-6;
        Vector fd = (m.residual(y + h * dy, mu, N) - m.residual(y - h * dy, mu, N)) / (2 * h);
        CHECK((fd - j * dy).norm() < 1e-6 * std::max(1.0, fd.norm()));
    }
}

TEST_CASE("reduced model is affine in mu") {
    const ReducedModel& m = model();
    const int N = 3;
    Vector y = Vector::Constant(m.dimension(N), 0.1);
    Vector r1 = m.residual(y, 1.0, N), r2 = m.residual(y, 1.5, N), r3 = m.residual(y, 2.0, N);
    CHECK((r2 - 0.5 * (r1 + r3)).norm() < 1e-10 * std::max(1.0, r2.norm()));
    Matrix k1 = m.linear_part(1.0, N) - m.linear_part(0.0, N), k2 = m.linear_part(2.0, N) - m.linear_part(0.0, N);
    CHECK((k2 - 2.0 * k1).cwiseAbs().maxCoeff() < 1e-10 * k2.cwiseAbs().maxCoeff());
    CHECK_THROWS_AS(m.residual(Vector::Zero(2), 1.0, N), StructuralError);
}

TEST_CASE("full basis reproduces its snapshots") {
    branch::Branch t = run(neumann(), 2.0, 1.4, 4);
    BasisOptions o;
    o.n = 4;
    ReducedModel m(neumann(), build_aggregated_basis(neumann(), collect_snapshots(neumann(), t), o));
    for (const auto& e : t.entries) {
        Vector y0 = m.project(e.x, 4);
        CHECK((m.lift(y0, 4) - e.x).norm() < 1e-8 * e.x.norm());
        RomSolution s = rom_solve(m, e.mu, 4, y0);
        REQUIRE(s.converged);
        CHECK(s.trace.iterations <= 2);
        CHECK((m.lift(s.y, 4) - e.x).norm() < 1e-8 * e.x.norm());
    }
}

TEST_CASE("supremizers restore the reduced inf-sup constant") {
    double beta_h = fem::brezzi_inf_sup(*coarse());
    BasisOptions o;
    o.n = 4;
    o.supremizers = false;
    ReducedModel plain(neumann(), build_aggregated_basis(neumann(), collect_snapshots(neumann(), truth()), o));
    for (int N = 1; N <= 4; ++N) {
        CHECK(plain.inf_sup(N) < 1e-6);
        double beta = model().inf_sup(N);
        CHECK(beta > 1e-8);
        CHECK(beta >= 0.5 * beta_h);
    }
}

TEST_CASE("error study") {
    ErrorStudy s = error_study(model(), truth());
    CHECK(s.failures == 0);
    CHECK(s.average.size() == 6 * 5);
    CHECK(s.by_mu.size() == 11 * 5);
    for (std::string var : {"v", "p", "u", "w", "q"}) {
        CHECK(average_error(s, 6, var) < average_error(s, 1, var));
        int violations = 0;
        for (int N = 1; N < 6; ++N)
            if (average_error(s, N + 1, var) > average_error(s, N, var)) ++violations;
        CHECK(violations <= 2);
    }
    CHECK(average_error(s, 6, "v") < 1e-5);
    // near-zero controls at large mu are measured in absolute terms
    int abs_rows = 0;
    for (const auto& r : s.by_mu)
        if (r.kind == "abs") {
            ++abs_rows;
            CHECK(r.mu > 1.2);
        }
    CHECK(abs_rows > 0);
    CHECK_THROWS_AS(average_error(s, 7, "v"), ParameterError);
    std::ostringstream a, b;
    write_average_errors_csv(s, a);
    write_mu_errors_csv(s, b);
    CHECK(a.str().starts_with("N,var,avg_rel_err\n1,v,"));
    CHECK(b.str().starts_with("mu,var,err,err_kind\n2,v,"));
}

TEST_CASE("reduced sweep records failures") {
    const ReducedModel& m = model();
    NewtonOptions o = rom_newton_defaults();
    CHECK(o.tolerance == 1e-10);
    o.max_iterations = 1;
    o.damping = false;
    auto sols = rom_sweep(m, {2.0, 1.0}, 2, Vector::Zero(m.dimension(2)), o);
    REQUIRE(sols.size() == 2);
    CHECK_FALSE(sols[0].converged);
    CHECK_THROWS_AS(rom_solve(m, 1.0, 0, Vector::Zero(1)), ParameterError);
}

TEST_CASE("snapshot archive round trip") {
    SnapshotSet s = collect_snapshots(neumann(), truth());
    CHECK(s.count() == 11);
    auto dir = std::filesystem::temp_directory_path() / "bifctl_test_snapshots";
    std::filesystem::remove_all(dir);
    write_snapshot_archive(dir.string(), s);
    CHECK(std::filesystem::exists(dir / "manifest.json"));
    CHECK(std::filesystem::exists(dir / "snap_010.bin"));
    SnapshotSet r = read_snapshot_archive(dir.string());
    CHECK(r.label == s.label);
    CHECK(r.mus == s.mus);
    REQUIRE(r.blocks.size() == s.blocks.size());
    for (std::size_t b = 0; b < s.blocks.size(); ++b) CHECK(r.blocks[b] == s.blocks[b]);
    std::filesystem::resize_file(dir / "snap_003.bin", 16);
    CHECK_THROWS_AS(read_snapshot_archive(dir.string()), FormatError);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(read_snapshot_archive(dir.string()), FormatError);
}
