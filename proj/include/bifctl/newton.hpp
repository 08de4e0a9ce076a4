#pragma once

#include "bifctl/errors.hpp"
#include "bifctl/sparse.hpp"

#include <vector>

namespace bifctl {

using sparse::CsrMatrix;
using sparse::Vector;

// F(x; mu) = 0 with a sparse Jacobian.
class NonlinearProblem {
public:
    virtual ~NonlinearProblem() = default;
    virtual int size() const = 0;
    virtual Vector residual(const Vector& x, double mu) const = 0;
    virtual CsrMatrix jacobian(const Vector& x, double mu) const = 0;
};

struct NewtonOptions {
    double tolerance = 1e-8; // absolute, Euclidean norm of the residual
    int max_iterations = 50;
    int max_halvings = 8;
    bool damping = true;
    int extra_iterations = 0; // polishing steps after convergence
};

struct NewtonTrace {
    std::vector<double> residuals; // entry 0 is the initial residual
    int iterations = 0;
    bool converged = false;
    double final_residual() const { return residuals.empty() ? 0.0 : residuals.back(); }
};

class DivergenceError : public ConvergenceError {
public:
    DivergenceError(const std::string& what, NewtonTrace trace)
        : ConvergenceError(what, trace.final_residual(), trace.iterations), trace_(std::move(trace)) {}
    const NewtonTrace& trace() const noexcept { return trace_; }

private:
    NewtonTrace trace_;
};

// Singular Jacobian during Newton, usually close to a bifurcation point.
class BifurcationProximityError : public SingularMatrixError {
public:
    BifurcationProximityError(const std::string& what, int pivot, double mu)
        : SingularMatrixError(what, pivot), mu_(mu) {}
    double mu() const noexcept { return mu_; }

private:
    double mu_;
};

struct NewtonResult {
    Vector x;
    NewtonTrace trace;
};

// Damped Newton: a step is halved (up to max_halvings times) while the
// residual norm does not decrease.
NewtonResult newton_solve(const NonlinearProblem& problem, Vector x0, double mu, const NewtonOptions& options = {});

} // namespace bifctl
