#pragma once

#include "bifctl/newton.hpp"
#include "bifctl/ns_state.hpp"
#include "bifctl/ocp.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bifctl::branch {

enum class GuessKind { Zero, Prior, PerturbedSymmetric, Stored };
enum class FailurePolicy { Truncate, Skip };

std::string_view to_string(GuessKind g);
GuessKind guess_kind_from_string(std::string_view s);
std::string_view to_string(FailurePolicy p);
FailurePolicy failure_policy_from_string(std::string_view s);

struct ContinuationPlan {
    std::vector<double> mus; // strictly monotone
    NewtonOptions newton;
    GuessKind guess = GuessKind::Zero;
    Vector initial_guess;    // Prior / Stored
    // PerturbedSymmetric: the continuation guess at the first mu <= seed_mu is
    // pushed along the symmetry-breaking direction
    double seed_mu = 0.9;
    double delta = 0.3;
    int sign = 1;
    FailurePolicy policy = FailurePolicy::Truncate;
    std::string label = "natural";

    void validate() const;
};

// n equispaced values from hi down to lo
std::vector<double> descending_grid(double hi, double lo, int n);

struct BranchEntry {
    double mu = 0.0;
    Vector x;
    double output = 0.0;
    std::optional<ocp::CostReport> cost;
    NewtonTrace trace;
    bool converged = false;
    std::string status; // ok, non-C., skipped
};

struct Branch {
    std::string label;
    std::vector<BranchEntry> entries;
    bool truncated = false;
    std::string stop_reason;

    const BranchEntry& at(double mu, double tol = 1e-9) const; // LookupError if absent
    std::vector<double> mus() const;
};

class LookupError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

Branch run_continuation(const ns::StateProblem& problem, const ContinuationPlan& plan);
Branch run_continuation(const ocp::OptimalityProblem& problem, const ContinuationPlan& plan);

// Restart from the branch solution at mu_near_star (optionally transformed,
// e.g. mirrored) and continue over the remaining grid points below it.
ContinuationPlan seed_non_natural(const Branch& branch, const ContinuationPlan& parent, double mu_near_star,
                                  const std::function<Vector(const Vector&)>& transform = {},
                                  const std::string& label = "non-natural");

struct CriticalPoint {
    bool found = false;
    double mu = 0.0;
    double lo = 0.0, hi = 0.0; // bracketing grid points
};

// zero crossing of the leading real eigenvalue, linear interpolation
CriticalPoint detect_critical_point(const std::vector<double>& mus, const std::vector<double>& leading);

// output-departure cross-check: first mu where |output| exceeds factor * noise floor
std::optional<double> output_departure(const Branch& branch, double noise_floor, double factor = 10.0);

// mu,output,J,branch_label
void write_bifurcation_csv(const std::vector<const Branch*>& branches, std::ostream& out);
// branch.json plus one field file per entry
void write_branch_archive(const std::string& directory, const Branch& branch, const ns::StateProblem& problem);
void write_branch_archive(const std::string& directory, const Branch& branch, const ocp::OptimalityProblem& problem);
Branch read_branch_archive(const std::string& directory);

} // namespace bifctl::branch
