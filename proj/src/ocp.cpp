#include "bifctl/ocp.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace bifctl::ocp {

using mesh::FacetTag;

void ControlConfig::validate() const {
    if (!(alpha > 0.0) || alpha > 1.0) throw ParameterError("alpha must lie in (0, 1]");
}

std::string describe(const ControlConfig& config) {
    std::ostringstream s;
    s << fem::to_string(config.kind) << "/alpha=" << config.alpha << "/" << ns::to_string(config.target);
    return s.str();
}

DirichletBlocks build_dirichlet_multiplier_blocks(const TaylorHoodSpace& space) {
    DirichletBlocks b;
    b.multiplier_dofs = fem::control_dofs(space, ControlKind::DirichletBC);
    if (b.multiplier_dofs.empty()) throw StructuralError("no interior GammaD dofs for the trace multipliers");
    CsrMatrix m = fem::assemble_line_mass(space, FacetTag::GammaD);
    b.trace_velocity = sparse::submatrix(m, b.multiplier_dofs, space.free_velocity_dofs(true));
    b.trace_control = sparse::submatrix(m, b.multiplier_dofs, b.multiplier_dofs);
    return b;
}

namespace {

std::vector<int> iota(int n) {
    std::vector<int> v(n);
    for (int i = 0; i < n; ++i) v[i] = i;
    return v;
}

} // namespace

OptimalityProblem::OptimalityProblem(std::shared_ptr<const TaylorHoodSpace> space, ControlConfig config, Vector target)
    : space_(std::move(space)), config_(config), target_(std::move(target)) {
    if (!space_) throw StructuralError("OptimalityProblem: null space");
    config_.validate();
    const TaylorHoodSpace& s = *space_;
    if (target_.size() != s.n_velocity()) throw StructuralError("target must be a full velocity vector");
    dirichlet_ = config_.kind == ControlKind::DirichletBC;
    free_ = s.free_velocity_dofs(dirichlet_);
    control_ = fem::control_dofs(s, config_.kind);
    lift_ = fem::apply_inflow_lift(s).values;
    stiffness_ = fem::assemble_diffusion(s, 1.0);
    divergence_ = fem::assemble_divergence(s);
    div_free_ = sparse::submatrix(divergence_, iota(s.n_pressure()), free_);
    div_free_t_ = sparse::transpose(div_free_);
    obs_mass_ = fem::assemble_line_mass(s, FacetTag::GammaObs);
    obs_mass_free_ = sparse::submatrix(obs_mass_, free_, free_);
    CsrMatrix region = fem::control_region_mass(s, config_.kind);
    control_mass_ = sparse::submatrix(region, control_, control_);
    if (dirichlet_) {
        trace_ = build_dirichlet_multiplier_blocks(s);
        trace_full_ = sparse::submatrix(fem::assemble_line_mass(s, FacetTag::GammaD), trace_.multiplier_dofs,
                                        iota(s.n_velocity()));
    } else {
        coupling_free_ = sparse::submatrix(region, free_, control_);
        coupling_free_t_ = sparse::transpose(coupling_free_);
    }
    const int nf = static_cast<int>(free_.size()), np = s.n_pressure(), nu = static_cast<int>(control_.size());
    std::vector<int> sizes = {nf, np, nu, nf, np};
    if (dirichlet_) {
        const int nm = static_cast<int>(trace_.multiplier_dofs.size());
        sizes.push_back(nm);
        sizes.push_back(nm);
    }
    offsets_ = {0};
    for (int n : sizes) offsets_.push_back(offsets_.back() + n);
    state_ = std::make_unique<ns::StateProblem>(space_);

    if (!s.mirror_nodes().empty()) {
        std::vector<int> where(s.n_velocity(), -1);
        for (std::size_t j = 0; j < control_.size(); ++j) where[control_[j]] = static_cast<int>(j);
        const int n = s.n_nodes();
        for (int d : control_) {
            int k = d / n, i = d % n;
            mirror_control_.push_back(where[k * n + s.mirror_nodes()[i]]);
            mirror_control_sign_.push_back(k == 0 ? 1.0 : -1.0);
        }
    }
}

int OptimalityProblem::block_offset(Block b) const {
    int i = static_cast<int>(b);
    if (i >= n_blocks()) throw StructuralError("block not present for this control configuration");
    return offsets_[i];
}

int OptimalityProblem::block_size(Block b) const {
    int i = static_cast<int>(b);
    if (i >= n_blocks()) throw StructuralError("block not present for this control configuration");
    return offsets_[i + 1] - offsets_[i];
}

std::vector<int> OptimalityProblem::block_sizes() const {
    std::vector<int> out;
    for (int i = 0; i < n_blocks(); ++i) out.push_back(offsets_[i + 1] - offsets_[i]);
    return out;
}

Vector OptimalityProblem::block(const Vector& x, Block b) const {
    if (x.size() != size()) throw StructuralError("optimality vector has wrong length");
    return x.segment(block_offset(b), block_size(b));
}

Vector OptimalityProblem::scatter_free(const Vector& x, int offset) const {
    Vector full = Vector::Zero(space_->n_velocity());
    for (std::size_t i = 0; i < free_.size(); ++i) full[free_[i]] = x[offset + i];
    return full;
}

Vector OptimalityProblem::free_part(const Vector& full) const {
    Vector out(free_.size());
    for (std::size_t i = 0; i < free_.size(); ++i) out[i] = full[free_[i]];
    return out;
}

Vector OptimalityProblem::state_velocity(const Vector& x) const {
    if (x.size() != size()) throw StructuralError("optimality vector has wrong length");
    return lift_ + scatter_free(x, offsets_[0]);
}

Vector OptimalityProblem::adjoint_velocity(const Vector& x) const {
    if (x.size() != size()) throw StructuralError("optimality vector has wrong length");
    return scatter_free(x, offsets_[3]);
}

Vector OptimalityProblem::control(const Vector& x) const {
    return block(x, Block::Control);
}

Vector OptimalityProblem::control_field(const Vector& x) const {
    Vector u = control(x);
    Vector full = Vector::Zero(space_->n_velocity());
    for (std::size_t j = 0; j < control_.size(); ++j) full[control_[j]] = u[j];
    return full;
}

double OptimalityProblem::output(const Vector& x) const {
    return state_velocity(x)[space_->n_nodes() + space_->output_node()];
}

Vector OptimalityProblem::residual(const Vector& x, double mu) const {
    const TaylorHoodSpace& s = *space_;
    Vector v = state_velocity(x);
    Vector w = adjoint_velocity(x);
    Vector p = block(x, Block::StatePressure);
    Vector u = block(x, Block::Control);
    Vector q = block(x, Block::AdjointPressure);

    Vector r(size());
    Vector adj = sparse::multiply(obs_mass_, Vector(v - target_)) + mu * sparse::multiply(stiffness_, w) +
                 fem::convection_adjoint_action(s, v, w) + sparse::multiply_transposed(divergence_, q);
    Vector st = mu * sparse::multiply(stiffness_, v) + fem::convection_residual(s, v) +
                sparse::multiply_transposed(divergence_, p);
    Vector ru = config_.alpha * sparse::multiply(control_mass_, u);
    Vector rv = free_part(adj), rw = free_part(st);
    if (dirichlet_) {
        Vector ls = block(x, Block::StateMultiplier), la = block(x, Block::AdjointMultiplier);
        rv += sparse::multiply_transposed(trace_.trace_velocity, la);
        rw += sparse::multiply_transposed(trace_.trace_velocity, ls);
        ru -= sparse::multiply_transposed(trace_.trace_control, la);
    } else {
        rw -= sparse::multiply(coupling_free_, u);
        ru -= sparse::multiply(coupling_free_t_, free_part(w));
    }
    r.segment(offsets_[0], rv.size()) = rv;
    r.segment(offsets_[1], p.size()) = sparse::multiply(divergence_, w);
    r.segment(offsets_[2], u.size()) = ru;
    r.segment(offsets_[3], rw.size()) = rw;
    r.segment(offsets_[4], q.size()) = sparse::multiply(divergence_, v);
    if (dirichlet_) {
        r.segment(offsets_[5], block_size(Block::StateMultiplier)) = sparse::multiply(trace_full_, w);
        r.segment(offsets_[6], block_size(Block::AdjointMultiplier)) =
            sparse::multiply(trace_full_, v) - sparse::multiply(trace_.trace_control, u);
    }
    return r;
}

sparse::BlockMatrix OptimalityProblem::jacobian_blocks(const Vector& x, double mu) const {
    const TaylorHoodSpace& s = *space_;
    Vector v = state_velocity(x);
    Vector w = adjoint_velocity(x);
    CsrMatrix a = sparse::submatrix(
        sparse::add(sparse::scaled(stiffness_, mu), fem::assemble_convection(s, v, fem::ConvectionMode::Linearized)),
        free_, free_);
    CsrMatrix h = sparse::submatrix(fem::assemble_convection(s, w, fem::ConvectionMode::Hessian), free_, free_);
    std::vector<int> sizes = block_sizes();
    sparse::BlockMatrix j(sizes, sizes);
    j.set(0, 0, sparse::add(obs_mass_free_, h));
    j.set(0, 3, sparse::transpose(a));
    j.set(0, 4, div_free_t_);
    j.set(1, 3, div_free_);
    j.set(2, 2, sparse::scaled(control_mass_, config_.alpha));
    j.set(3, 0, a);
    j.set(3, 1, div_free_t_);
    j.set(4, 0, div_free_);
    if (dirichlet_) {
        CsrMatrix tv_t = sparse::transpose(trace_.trace_velocity);
        j.set(0, 6, tv_t);
        j.set(2, 6, sparse::scaled(sparse::transpose(trace_.trace_control), -1.0));
        j.set(3, 5, tv_t);
        j.set(5, 3, trace_.trace_velocity);
        j.set(6, 0, trace_.trace_velocity);
        j.set(6, 2, sparse::scaled(trace_.trace_control, -1.0));
    } else {
        j.set(2, 3, sparse::scaled(coupling_free_t_, -1.0));
        j.set(3, 2, sparse::scaled(coupling_free_, -1.0));
    }
    return j;
}

CsrMatrix OptimalityProblem::jacobian(const Vector& x, double mu) const {
    return jacobian_blocks(x, mu).flatten();
}

Vector OptimalityProblem::guess_from_state(const Vector& full_velocity, const Vector& pressure) const {
    if (full_velocity.size() != space_->n_velocity() || pressure.size() != space_->n_pressure())
        throw StructuralError("guess_from_state: wrong block lengths");
    Vector x = zero_guess();
    x.segment(offsets_[0], free_.size()) = free_part(full_velocity - lift_);
    x.segment(offsets_[1], pressure.size()) = pressure;
    return x;
}

Vector OptimalityProblem::mirror(const Vector& x) const {
    const TaylorHoodSpace& s = *space_;
    if (mirror_control_.empty()) throw GeometryError("mesh has no mirror symmetry");
    if (x.size() != size()) throw StructuralError("optimality vector has wrong length");
    Vector y(size());
    y.segment(offsets_[0], free_.size()) = free_part(s.mirror_velocity(scatter_free(x, offsets_[0])));
    y.segment(offsets_[1], s.n_pressure()) = s.mirror_pressure(block(x, Block::StatePressure));
    Vector u = control(x);
    for (std::size_t j = 0; j < control_.size(); ++j)
        y[offsets_[2] + mirror_control_[j]] = mirror_control_sign_[j] * u[j];
    y.segment(offsets_[3], free_.size()) = free_part(s.mirror_velocity(scatter_free(x, offsets_[3])));
    y.segment(offsets_[4], s.n_pressure()) = s.mirror_pressure(block(x, Block::AdjointPressure));
    if (dirichlet_) {
        // multipliers live on the control dofs
        for (int b : {5, 6})
            for (std::size_t j = 0; j < control_.size(); ++j)
                y[offsets_[b] + mirror_control_[j]] = mirror_control_sign_[j] * x[offsets_[b] + j];
    }
    return y;
}

Vector OptimalityProblem::perturbed_guess(const Vector& x, double delta, int sign) const {
    if (x.size() != size()) throw StructuralError("optimality vector has wrong length");
    const ns::StateProblem& st = *state_;
    Vector d = st.full_velocity(st.antisymmetric_direction()) - st.lift();
    Vector dv = free_part(d);
    dv /= dv.norm();
    Vector y = x;
    Vector v = block(x, Block::StateVelocity);
    double scale = std::max(v.norm(), free_part(lift_).norm() + 1.0);
    y.segment(offsets_[0], free_.size()) += (sign >= 0 ? 1.0 : -1.0) * delta * scale * dv;
    return y;
}

CostReport evaluate_cost(const OptimalityProblem& problem, const Vector& state_velocity, const Vector& control) {
    const TaylorHoodSpace& s = problem.space();
    if (state_velocity.size() != s.n_velocity()) throw StructuralError("evaluate_cost: wrong velocity length");
    if (control.size() != static_cast<int>(problem.control_dofs().size()))
        throw StructuralError("evaluate_cost: wrong control length");
    CostReport c;
    Vector e = state_velocity - problem.target();
    c.tracking = 0.5 * e.dot(sparse::multiply(problem.observation_mass(), e));
    c.penalty = 0.5 * problem.config().alpha * control.dot(sparse::multiply(problem.control_mass(), control));
    c.J = c.tracking + c.penalty;
    c.below_machine_epsilon = c.J < kMachineEpsilonCost;
    return c;
}

CostReport OptimalityProblem::cost(const Vector& x) const {
    return evaluate_cost(*this, state_velocity(x), control(x));
}

CsrMatrix OptimalityProblem::global_metric() const {
    CsrMatrix mv = sparse::submatrix(fem::assemble_velocity_mass(*space_), free_, free_);
    std::vector<int> sizes = block_sizes();
    sparse::BlockMatrix m(sizes, sizes);
    m.set(0, 0, mv);
    m.set(2, 2, control_mass_);
    m.set(3, 3, mv);
    return m.flatten();
}

OptimalitySolution solve_optimality(const OptimalityProblem& problem, double mu, const Vector& guess,
                                    const NewtonOptions& options) {
    if (!(mu > 0.0)) throw ParameterError("viscosity must be positive");
    NewtonResult r = newton_solve(problem, guess, mu, options);
    OptimalitySolution s;
    s.mu = mu;
    s.cost = problem.cost(r.x);
    s.output = problem.output(r.x);
    s.x = std::move(r.x);
    s.trace = std::move(r.trace);
    return s;
}

void write_solve_manifest(const OptimalityProblem& problem, const OptimalitySolution& sol,
                          const std::string& branch_label, std::ostream& out) {
    nlohmann::ordered_json j;
    j["mu"] = sol.mu;
    j["alpha"] = problem.config().alpha;
    j["kind"] = std::string(fem::to_string(problem.config().kind));
    j["target"] = std::string(ns::to_string(problem.config().target));
    j["J"] = sol.cost.J;
    j["tracking"] = sol.cost.tracking;
    j["penalty"] = sol.cost.penalty;
    j["below_machine_epsilon"] = sol.cost.below_machine_epsilon;
    j["output"] = sol.output;
    j["iters"] = sol.trace.iterations;
    j["converged"] = sol.trace.converged;
    j["branch_label"] = branch_label;
    out << j.dump(2) << "\n";
}

} // namespace bifctl::ocp
