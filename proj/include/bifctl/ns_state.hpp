#pragma once

#include "bifctl/fem.hpp"
#include "bifctl/newton.hpp"

#include <iosfwd>
#include <memory>
#include <string_view>
#include <vector>

namespace bifctl::ns {

using fem::TaylorHoodSpace;

double reynolds(double mu);

// Steady incompressible Navier-Stokes (or Stokes) for the unknown
// x = [free velocity dofs; pressure]. The inflow lift is added internally.
class StateProblem : public NonlinearProblem {
public:
    explicit StateProblem(std::shared_ptr<const TaylorHoodSpace> space, bool convection = true);

    int size() const override { return n_free_ + n_pressure_; }
    Vector residual(const Vector& x, double mu) const override;
    CsrMatrix jacobian(const Vector& x, double mu) const override;
    // Jacobian linearized at an arbitrary full velocity (e.g. a controlled state)
    CsrMatrix jacobian_at(const Vector& full_velocity, double mu) const;

    const TaylorHoodSpace& space() const { return *space_; }
    std::shared_ptr<const TaylorHoodSpace> space_ptr() const { return space_; }
    const std::vector<int>& free_dofs() const { return free_; }
    int n_free_velocity() const { return n_free_; }
    int n_pressure() const { return n_pressure_; }
    const Vector& lift() const { return lift_; }

    Vector full_velocity(const Vector& x) const;
    Vector pressure(const Vector& x) const;
    Vector pack(const Vector& full_velocity, const Vector& pressure) const;
    Vector zero_guess() const { return Vector::Zero(size()); }

    // v2 at the output node
    double output(const Vector& x) const;
    Vector mirror(const Vector& x) const;
    // divergence-free symmetry-breaking field on free dofs, unit 2-norm, positive output
    Vector antisymmetric_direction() const;

    // velocity L2 mass with a zero pressure block, on the unknown layout
    CsrMatrix state_metric(bool full_metric = false) const;

private:
    std::shared_ptr<const TaylorHoodSpace> space_;
    bool convection_;
    std::vector<int> free_;
    int n_free_ = 0;
    int n_pressure_ = 0;
    Vector lift_;
    CsrMatrix stiffness_;   // full velocity, unit viscosity
    CsrMatrix divergence_;  // full velocity columns
    CsrMatrix div_free_;    // free velocity columns
    CsrMatrix div_free_t_;
};

struct SteadySolution {
    double mu = 0.0;
    Vector x;
    NewtonTrace trace;
    double output = 0.0;
};

SteadySolution solve_steady_ns(const StateProblem& problem, double mu, const Vector& guess,
                               const NewtonOptions& options = {});

double bifurcation_output(const StateProblem& problem, const Vector& x);

enum class TargetKind { Symmetric, Asymmetric };
std::string_view to_string(TargetKind kind);
TargetKind target_kind_from_string(std::string_view name);

struct TargetOptions {
    double symmetric_mu = 1.0;  // Stokes solve
    double asymmetric_mu = 0.49; // stable Navier-Stokes branch
    double capture_mu = 0.9;     // where the asymmetric branch is seeded
    int branch_sign = 1;        // sign of the output on the captured branch
};

// Full velocity vector of the target field on the given space.
Vector make_target(const StateProblem& problem, TargetKind kind, const TargetOptions& options = {});

// Seed for the asymmetric branch: x + delta ||x|| * sign * antisymmetric direction.
Vector perturbed_guess(const StateProblem& problem, const Vector& x, double delta, int sign);

// mu, output, residual, iterations
void write_branch_csv(const std::vector<SteadySolution>& branch, std::ostream& out);

} // namespace bifctl::ns
