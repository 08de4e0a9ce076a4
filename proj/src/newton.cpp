#include "bifctl/newton.hpp"

#include "bifctl/lu.hpp"

#include <cmath>
#include <sstream>

namespace bifctl {

NewtonResult newton_solve(const NonlinearProblem& problem, Vector x0, double mu, const NewtonOptions& options) {
    if (x0.size() != problem.size()) throw StructuralError("newton: initial guess has wrong length");
    NewtonResult out;
    out.x = std::move(x0);
    Vector r = problem.residual(out.x, mu);
    double norm = r.norm();
    out.trace.residuals.push_back(norm);
    int polish = 0;
    for (int it = 0;; ++it) {
        if (!std::isfinite(norm)) break;
        if (norm <= options.tolerance) {
            out.trace.converged = true;
            if (polish >= options.extra_iterations) return out;
            ++polish;
        } else if (it >= options.max_iterations) {
            break;
        }
        Vector dx;
        try {
            sparse::LuFactorization lu(problem.jacobian(out.x, mu));
            dx = -lu.solve(r);
        } catch (const SingularMatrixError& e) {
            std::ostringstream msg;
            msg << "singular Jacobian at mu = " << mu << " (iteration " << it << "): " << e.what();
            throw BifurcationProximityError(msg.str(), e.pivot(), mu);
        }
        double step = 1.0;
        Vector x_try = out.x + dx;
        Vector r_try = problem.residual(x_try, mu);
        double n_try = r_try.norm();
        for (int h = 0; options.damping && h < options.max_halvings && !(n_try < norm) && !out.trace.converged; ++h) {
            step *= 0.5;
            x_try = out.x + step * dx;
            r_try = problem.residual(x_try, mu);
            n_try = r_try.norm();
        }
        if (out.trace.converged && !(n_try < norm)) return out; // polishing hit the rounding floor
        out.x = std::move(x_try);
        r = std::move(r_try);
        norm = n_try;
        out.trace.residuals.push_back(norm);
        out.trace.iterations = it + 1;
    }
    out.trace.converged = false;
    std::ostringstream msg;
    msg << "Newton did not converge at mu = " << mu << " after " << out.trace.iterations << " iterations (residual "
        << norm << ")";
    throw DivergenceError(msg.str(), out.trace);
}

} // namespace bifctl
