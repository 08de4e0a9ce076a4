#pragma once

#include "bifctl/fem.hpp"
#include "bifctl/newton.hpp"
#include "bifctl/ns_state.hpp"

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace bifctl::ocp {

using fem::ControlKind;
using fem::TaylorHoodSpace;

struct ControlConfig {
    ControlKind kind = ControlKind::Neumann;
    double alpha = 1.0;
    ns::TargetKind target = ns::TargetKind::Symmetric;
    void validate() const; // alpha in (0, 1]
};

std::string describe(const ControlConfig& config);

// Weak trace coupling on GammaD: T_v = M[mult, free velocity], T_u = M[mult, control].
struct DirichletBlocks {
    std::vector<int> multiplier_dofs; // full velocity indices of the trace multipliers
    CsrMatrix trace_velocity;
    CsrMatrix trace_control;
};
DirichletBlocks build_dirichlet_multiplier_blocks(const TaylorHoodSpace& space);

struct CostReport {
    double J = 0.0;
    double tracking = 0.0; // 1/2 ||v - v_d||^2 on GammaObs
    double penalty = 0.0;  // alpha/2 ||u||^2 on the control region
    bool below_machine_epsilon = false;
};

constexpr double kMachineEpsilonCost = 1e-14;

// Blocks of the optimality vector, in order. The last two exist only for
// DirichletBC.
enum class Block { StateVelocity, StatePressure, Control, AdjointVelocity, AdjointPressure, StateMultiplier, AdjointMultiplier };

// First-order optimality system (state, adjoint, optimality) of
//   min 1/2 ||v - v_d||^2_obs + alpha/2 ||u||^2  s.t. steady Navier-Stokes,
// as a nonlinear problem in X = [v, p, u, w, q (, ls, la)]. The Jacobian is the
// Hessian of the Lagrangian and is symmetric.
class OptimalityProblem : public NonlinearProblem {
public:
    OptimalityProblem(std::shared_ptr<const TaylorHoodSpace> space, ControlConfig config, Vector target);

    int size() const override { return offsets_.back(); }
    Vector residual(const Vector& x, double mu) const override;
    CsrMatrix jacobian(const Vector& x, double mu) const override;
    sparse::BlockMatrix jacobian_blocks(const Vector& x, double mu) const;

    const TaylorHoodSpace& space() const { return *space_; }
    std::shared_ptr<const TaylorHoodSpace> space_ptr() const { return space_; }
    const ControlConfig& config() const { return config_; }
    const Vector& target() const { return target_; }
    const std::vector<int>& free_dofs() const { return free_; }
    const std::vector<int>& control_dofs() const { return control_; }
    const CsrMatrix& observation_mass() const { return obs_mass_; }
    const CsrMatrix& control_mass() const { return control_mass_; }

    int n_blocks() const { return static_cast<int>(offsets_.size()) - 1; }
    int block_offset(Block b) const;
    int block_size(Block b) const;
    std::vector<int> block_sizes() const;
    Vector block(const Vector& x, Block b) const;

    // full velocity vectors (lift included for the state)
    Vector state_velocity(const Vector& x) const;
    Vector adjoint_velocity(const Vector& x) const;
    Vector control(const Vector& x) const;
    // control values scattered to a full velocity vector
    Vector control_field(const Vector& x) const;
    double output(const Vector& x) const;

    Vector zero_guess() const { return Vector::Zero(size()); }
    // state blocks from an uncontrolled solution, everything else zero
    Vector guess_from_state(const Vector& full_velocity, const Vector& pressure) const;
    Vector mirror(const Vector& x) const;
    // state perturbation along the symmetry-breaking direction
    Vector perturbed_guess(const Vector& x, double delta, int sign) const;

    CostReport cost(const Vector& x) const;
    // L2 masses on v, u, w; zero on pressures and multipliers
    CsrMatrix global_metric() const;
    // uncontrolled state operator on the same mesh (all Dirichlet dofs fixed)
    const ns::StateProblem& state_problem() const { return *state_; }

private:
    Vector free_part(const Vector& full) const;
    Vector scatter_free(const Vector& x, int offset) const;

    std::shared_ptr<const TaylorHoodSpace> space_;
    ControlConfig config_;
    Vector target_;
    bool dirichlet_ = false;
    std::vector<int> free_;
    std::vector<int> control_;
    std::vector<int> offsets_;
    Vector lift_;
    CsrMatrix stiffness_, divergence_, div_free_, div_free_t_;
    CsrMatrix obs_mass_, obs_mass_free_;
    CsrMatrix control_mass_;   // control x control
    CsrMatrix coupling_free_;  // free velocity x control
    CsrMatrix coupling_free_t_;
    DirichletBlocks trace_;
    CsrMatrix trace_full_;     // multipliers x full velocity
    std::unique_ptr<ns::StateProblem> state_;
    std::vector<int> mirror_control_;
    std::vector<double> mirror_control_sign_;
};

CostReport evaluate_cost(const OptimalityProblem& problem, const Vector& state_velocity, const Vector& control);

struct OptimalitySolution {
    double mu = 0.0;
    Vector x;
    NewtonTrace trace;
    CostReport cost;
    double output = 0.0;
};

OptimalitySolution solve_optimality(const OptimalityProblem& problem, double mu, const Vector& guess,
                                    const NewtonOptions& options = {});

// one JSON object per solve
void write_solve_manifest(const OptimalityProblem& problem, const OptimalitySolution& sol,
                          const std::string& branch_label, std::ostream& out);

} // namespace bifctl::ocp
