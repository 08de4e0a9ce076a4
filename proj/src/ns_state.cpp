#include "bifctl/ns_state.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>

namespace bifctl::ns {

double reynolds(double mu) {
    if (!(mu > 0.0)) throw ParameterError("viscosity must be positive");
    return 31.25 * 2.5 / mu;
}

StateProblem::StateProblem(std::shared_ptr<const TaylorHoodSpace> space, bool convection)
    : space_(std::move(space)), convection_(convection) {
    if (!space_) throw StructuralError("StateProblem: null space");
    free_ = space_->free_velocity_dofs();
    n_free_ = static_cast<int>(free_.size());
    n_pressure_ = space_->n_pressure();
    lift_ = fem::apply_inflow_lift(*space_).values;
    stiffness_ = fem::assemble_diffusion(*space_, 1.0);
    divergence_ = fem::assemble_divergence(*space_);
    std::vector<int> rows(n_pressure_);
    for (int i = 0; i < n_pressure_; ++i) rows[i] = i;
    div_free_ = sparse::submatrix(divergence_, rows, free_);
    div_free_t_ = sparse::transpose(div_free_);
}

Vector StateProblem::full_velocity(const Vector& x) const {
    if (x.size() != size()) throw StructuralError("state vector has wrong length");
    Vector v = lift_;
    for (int i = 0; i < n_free_; ++i) v[free_[i]] += x[i];
    return v;
}

Vector StateProblem::pressure(const Vector& x) const {
    if (x.size() != size()) throw StructuralError("state vector has wrong length");
    return x.tail(n_pressure_);
}

Vector StateProblem::pack(const Vector& full_velocity, const Vector& pressure) const {
    if (full_velocity.size() != space_->n_velocity() || pressure.size() != n_pressure_)
        throw StructuralError("pack: wrong block lengths");
    Vector x(size());
    for (int i = 0; i < n_free_; ++i) x[i] = full_velocity[free_[i]];
    x.tail(n_pressure_) = pressure;
    return x;
}

Vector StateProblem::residual(const Vector& x, double mu) const {
    Vector v = full_velocity(x);
    Vector p = x.tail(n_pressure_);
    Vector mom = mu * sparse::multiply(stiffness_, v) + sparse::multiply_transposed(divergence_, p);
    if (convection_) mom += fem::convection_residual(*space_, v);
    Vector r(size());
    for (int i = 0; i < n_free_; ++i) r[i] = mom[free_[i]];
    r.tail(n_pressure_) = sparse::multiply(divergence_, v);
    return r;
}

CsrMatrix StateProblem::jacobian(const Vector& x, double mu) const {
    return jacobian_at(full_velocity(x), mu);
}

CsrMatrix StateProblem::jacobian_at(const Vector& full_velocity, double mu) const {
    if (full_velocity.size() != space_->n_velocity()) throw StructuralError("jacobian_at: wrong velocity length");
    CsrMatrix a = sparse::scaled(stiffness_, mu);
    if (convection_)
        a = sparse::add(a, fem::assemble_convection(*space_, full_velocity, fem::ConvectionMode::Linearized));
    sparse::BlockMatrix j({n_free_, n_pressure_}, {n_free_, n_pressure_});
    j.set(0, 0, sparse::submatrix(a, free_, free_));
    j.set(0, 1, div_free_t_);
    j.set(1, 0, div_free_);
    return j.flatten();
}

double StateProblem::output(const Vector& x) const {
    return full_velocity(x)[space_->n_nodes() + space_->output_node()];
}

Vector StateProblem::mirror(const Vector& x) const {
    return pack(space_->mirror_velocity(full_velocity(x)), space_->mirror_pressure(pressure(x)));
}

Vector StateProblem::antisymmetric_direction() const {
    // curl of psi = -g(x1) h(x2), g = sin^2(pi (x1 - 10) / 40), h = sin^2(pi x2 / 7.5)
    const auto& nodes = space_->nodes();
    const int n = space_->n_nodes();
    const double pi = std::acos(-1.0);
    Vector full = Vector::Zero(space_->n_velocity());
    for (int i = 0; i < n; ++i) {
        double x1 = nodes[i].x1, x2 = nodes[i].x2;
        if (x1 < 10.0) continue;
        double a = pi * (x1 - 10.0) / 40.0, b = pi * x2 / 7.5;
        double g = std::sin(a) * std::sin(a), dg = pi / 40.0 * std::sin(2.0 * a);
        double h = std::sin(b) * std::sin(b), dh = pi / 7.5 * std::sin(2.0 * b);
        full[i] = -g * dh;
        full[n + i] = dg * h;
    }
    Vector x = Vector::Zero(size());
    for (int i = 0; i < n_free_; ++i) x[i] = full[free_[i]];
    return x / x.norm();
}

CsrMatrix StateProblem::state_metric(bool full_metric) const {
    CsrMatrix mv = sparse::submatrix(fem::assemble_velocity_mass(*space_), free_, free_);
    sparse::BlockMatrix m({n_free_, n_pressure_}, {n_free_, n_pressure_});
    m.set(0, 0, mv);
    if (full_metric) m.set(1, 1, fem::assemble_pressure_mass(*space_));
    return m.flatten();
}

SteadySolution solve_steady_ns(const StateProblem& problem, double mu, const Vector& guess,
                               const NewtonOptions& options) {
    if (!(mu > 0.0)) throw ParameterError("viscosity must be positive");
    NewtonResult r = newton_solve(problem, guess, mu, options);
    SteadySolution s;
    s.mu = mu;
    s.output = problem.output(r.x);
    s.x = std::move(r.x);
    s.trace = std::move(r.trace);
    return s;
}

double bifurcation_output(const StateProblem& problem, const Vector& x) {
    return problem.output(x);
}

std::string_view to_string(TargetKind kind) {
    return kind == TargetKind::Symmetric ? "symmetric" : "asymmetric";
}

TargetKind target_kind_from_string(std::string_view name) {
    if (name == "symmetric") return TargetKind::Symmetric;
    if (name == "asymmetric") return TargetKind::Asymmetric;
    throw ParameterError("unknown target kind '" + std::string(name) + "'");
}

Vector perturbed_guess(const StateProblem& problem, const Vector& x, double delta, int sign) {
    return x + (sign >= 0 ? 1.0 : -1.0) * delta * x.norm() * problem.antisymmetric_direction();
}

Vector make_target(const StateProblem& problem, TargetKind kind, const TargetOptions& options) {
    NewtonOptions polish;
    polish.extra_iterations = 2;
    if (kind == TargetKind::Symmetric) {
        StateProblem stokes(problem.space_ptr(), false);
        return stokes.full_velocity(solve_steady_ns(stokes, options.symmetric_mu, stokes.zero_guess(), polish).x);
    }
    const double mu_t = options.asymmetric_mu;
    if (!(mu_t > 0.0)) throw ParameterError("target viscosity must be positive");
    std::vector<double> grid;
    for (double mu = 2.0; mu > mu_t + 1e-12; mu -= 0.05) grid.push_back(mu);
    grid.push_back(mu_t);
    Vector x = problem.zero_guess();
    bool captured = false;
    for (double mu : grid) {
        Vector guess = x;
        if (!captured && mu <= options.capture_mu + 1e-12) {
            for (double delta : {1e-2, 3e-2, 1e-1, 3e-1}) {
                SteadySolution s = solve_steady_ns(problem, mu, perturbed_guess(problem, x, delta, options.branch_sign));
                if (s.output * options.branch_sign > 1e-3) {
                    guess = s.x;
                    captured = true;
                    break;
                }
            }
        }
        x = solve_steady_ns(problem, mu, guess).x;
    }
    x = solve_steady_ns(problem, mu_t, x, polish).x;
    if (!captured || problem.output(x) * options.branch_sign <= 0.0)
        throw ConvergenceError("could not capture the asymmetric branch", 0.0, 0);
    return problem.full_velocity(x);
}

void write_branch_csv(const std::vector<SteadySolution>& branch, std::ostream& out) {
    out << "mu,output,residual,iters\n" << std::setprecision(17);
    for (const auto& s : branch)
        out << s.mu << "," << s.output << "," << s.trace.final_residual() << "," << s.trace.iterations << "\n";
}

} // namespace bifctl::ns
