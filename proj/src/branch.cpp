#include "bifctl/branch.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace bifctl::branch {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string_view to_string(GuessKind g) {
    switch (g) {
    case GuessKind::Zero: return "zero";
    case GuessKind::Prior: return "prior";
    case GuessKind::PerturbedSymmetric: return "perturbed";
    case GuessKind::Stored: return "stored";
    }
    return "zero";
}

GuessKind guess_kind_from_string(std::string_view s) {
    for (GuessKind g : {GuessKind::Zero, GuessKind::Prior, GuessKind::PerturbedSymmetric, GuessKind::Stored})
        if (to_string(g) == s) return g;
    throw ParameterError("unknown initial guess '" + std::string(s) + "'");
}

std::string_view to_string(FailurePolicy p) {
    return p == FailurePolicy::Truncate ? "truncate" : "skip";
}

FailurePolicy failure_policy_from_string(std::string_view s) {
    if (s == "truncate") return FailurePolicy::Truncate;
    if (s == "skip") return FailurePolicy::Skip;
    throw ParameterError("unknown failure policy '" + std::string(s) + "'");
}

void ContinuationPlan::validate() const {
    if (mus.empty()) throw ParameterError("continuation plan has no parameter values");
    for (double mu : mus)
        if (!(mu > 0.0)) throw ParameterError("viscosity values must be positive");
    for (std::size_t i = 1; i < mus.size(); ++i)
        if (!((mus[i] - mus[i - 1]) * (mus[1] - mus[0]) > 0.0)) throw ParameterError("parameter list must be strictly monotone");
    if ((guess == GuessKind::Prior || guess == GuessKind::Stored) && initial_guess.size() == 0)
        throw ParameterError("plan needs an initial guess vector");
    if (!(delta >= 0.0)) throw ParameterError("perturbation size must be non-negative");
}

std::vector<double> descending_grid(double hi, double lo, int n) {
    if (n < 1 || (n > 1 && !(hi > lo))) throw ParameterError("descending_grid: need hi > lo and n >= 1");
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) g[i] = n == 1 ? hi : hi - (hi - lo) * i / (n - 1);
    return g;
}

const BranchEntry& Branch::at(double mu, double tol) const {
    for (const auto& e : entries)
        if (std::abs(e.mu - mu) <= tol) return e;
    std::ostringstream s;
    s << "branch '" << label << "' has no entry at mu = " << mu;
    throw LookupError(s.str());
}

std::vector<double> Branch::mus() const {
    std::vector<double> out;
    for (const auto& e : entries) out.push_back(e.mu);
    return out;
}

namespace {

struct SystemHooks {
    const NonlinearProblem& problem;
    std::function<double(const Vector&)> output;
    std::function<std::optional<ocp::CostReport>(const Vector&)> cost;
    std::function<Vector(const Vector&, double, int)> perturb;
};

Branch continuation(const SystemHooks& sys, const ContinuationPlan& plan) {
    plan.validate();
    Branch b;
    b.label = plan.label;
    Vector x = plan.guess == GuessKind::Prior || plan.guess == GuessKind::Stored ? plan.initial_guess
                                                                                : Vector::Zero(sys.problem.size());
    if (x.size() != sys.problem.size()) throw StructuralError("initial guess has wrong length");
    bool perturbed = plan.guess != GuessKind::PerturbedSymmetric;
    for (std::size_t j = 0; j < plan.mus.size(); ++j) {
        const double mu = plan.mus[j];
        Vector guess = x;
        if (!perturbed && mu <= plan.seed_mu + 1e-12) {
            guess = sys.perturb(x, plan.delta, plan.sign);
            perturbed = true;
        }
        BranchEntry e;
        e.mu = mu;
        try {
            NewtonResult r = newton_solve(sys.problem, guess, mu, plan.newton);
            e.x = std::move(r.x);
            e.trace = std::move(r.trace);
            e.converged = true;
            e.status = "ok";
            e.output = sys.output(e.x);
            e.cost = sys.cost(e.x);
            x = e.x;
            b.entries.push_back(std::move(e));
        } catch (const DivergenceError& err) {
            if (j == 0) throw;
            e.trace = err.trace();
            e.status = "non-C.";
            std::ostringstream s;
            s << "no convergence at mu = " << mu;
            if (plan.policy == FailurePolicy::Truncate) {
                b.entries.push_back(std::move(e));
                b.truncated = true;
                b.stop_reason = s.str();
                break;
            }
            e.status = "skipped";
            b.entries.push_back(std::move(e));
        } catch (const BifurcationProximityError& err) {
            if (j == 0) throw;
            e.status = "non-C.";
            if (plan.policy == FailurePolicy::Truncate) {
                b.entries.push_back(std::move(e));
                b.truncated = true;
                b.stop_reason = err.what();
                break;
            }
            e.status = "skipped";
            b.entries.push_back(std::move(e));
        }
    }
    return b;
}

} // namespace

Branch run_continuation(const ns::StateProblem& problem, const ContinuationPlan& plan) {
    SystemHooks h{problem, [&](const Vector& x) { return problem.output(x); },
                  [](const Vector&) { return std::optional<ocp::CostReport>(); },
                  [&](const Vector& x, double d, int s) { return ns::perturbed_guess(problem, x, d, s); }};
    return continuation(h, plan);
}

Branch run_continuation(const ocp::OptimalityProblem& problem, const ContinuationPlan& plan) {
    SystemHooks h{problem, [&](const Vector& x) { return problem.output(x); },
                  [&](const Vector& x) { return std::optional<ocp::CostReport>(problem.cost(x)); },
                  [&](const Vector& x, double d, int s) { return problem.perturbed_guess(x, d, s); }};
    return continuation(h, plan);
}

ContinuationPlan seed_non_natural(const Branch& branch, const ContinuationPlan& parent, double mu_near_star,
                                  const std::function<Vector(const Vector&)>& transform, const std::string& label) {
    const BranchEntry& e = branch.at(mu_near_star);
    if (!e.converged) throw LookupError("branch entry at the seed viscosity did not converge");
    ContinuationPlan p = parent;
    p.mus.clear();
    bool descending = parent.mus.size() < 2 || parent.mus[1] < parent.mus[0];
    for (double mu : parent.mus)
        if (descending ? mu <= mu_near_star + 1e-12 : mu >= mu_near_star - 1e-12) p.mus.push_back(mu);
    p.guess = GuessKind::Prior;
    p.initial_guess = transform ? transform(e.x) : e.x;
    p.label = label;
    return p;
}

CriticalPoint detect_critical_point(const std::vector<double>& mus, const std::vector<double>& leading) {
    if (mus.size() != leading.size()) throw StructuralError("detect_critical_point: length mismatch");
    CriticalPoint c;
    for (std::size_t i = 1; i < mus.size(); ++i) {
        double a = leading[i - 1], b = leading[i];
        if (!std::isfinite(a) || !std::isfinite(b)) continue;
        if (a == 0.0) {
            c = {true, mus[i - 1], mus[i - 1], mus[i - 1]};
            return c;
        }
        if ((a < 0.0) != (b < 0.0) || b == 0.0) {
            c.found = true;
            c.mu = mus[i - 1] + (mus[i] - mus[i - 1]) * a / (a - b);
            c.lo = std::min(mus[i - 1], mus[i]);
            c.hi = std::max(mus[i - 1], mus[i]);
            return c;
        }
    }
    return c;
}

std::optional<double> output_departure(const Branch& branch, double noise_floor, double factor) {
    for (const auto& e : branch.entries)
        if (e.converged && std::abs(e.output) > factor * noise_floor) return e.mu;
    return std::nullopt;
}

void write_bifurcation_csv(const std::vector<const Branch*>& branches, std::ostream& out) {
    out << "mu,output,J,branch_label\n" << std::setprecision(17);
    for (const Branch* b : branches)
        for (const auto& e : b->entries) {
            if (!e.converged) continue;
            out << e.mu << "," << e.output << ",";
            if (e.cost) out << e.cost->J;
            out << "," << b->label << "\n";
        }
}

namespace {

void write_vector(const Vector& v, const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path.string());
    f << "vector v1\ndofs " << v.size() << "\n" << std::setprecision(17);
    for (Eigen::Index i = 0; i < v.size(); ++i) f << v[i] << "\n";
}

Vector read_vector(const fs::path& path) {
    std::ifstream f(path);
    std::string line, key;
    if (!f || !std::getline(f, line) || line != "vector v1") throw FormatError("not a vector file: " + path.string());
    long n = 0;
    if (!(f >> key >> n) || key != "dofs" || n < 0) throw FormatError("bad dof count in " + path.string());
    Vector v(n);
    for (long i = 0; i < n; ++i)
        if (!(f >> v[i])) throw FormatError("truncated vector in " + path.string());
    return v;
}

void write_field_file(fem::FieldRole role, const Vector& values, const fs::path& path) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write " + path.string());
    fem::write_field({role, values}, f);
}

json entry_json(const BranchEntry& e, const std::string& dir) {
    json j;
    j["mu"] = e.mu;
    j["output"] = e.output;
    j["converged"] = e.converged;
    j["status"] = e.status;
    j["iters"] = e.trace.iterations;
    j["residual"] = e.trace.final_residual();
    if (e.cost) {
        j["J"] = e.cost->J;
        j["tracking"] = e.cost->tracking;
        j["penalty"] = e.cost->penalty;
        j["below_machine_epsilon"] = e.cost->below_machine_epsilon;
    }
    if (!dir.empty()) j["dir"] = dir;
    return j;
}

template <class Fields>
void archive(const std::string& directory, const Branch& branch, const std::string& system, Fields fields) {
    fs::path root(directory);
    fs::create_directories(root);
    json m;
    m["format"] = "branch v1";
    m["label"] = branch.label;
    m["system"] = system;
    m["truncated"] = branch.truncated;
    m["stop_reason"] = branch.stop_reason;
    m["entries"] = json::array();
    for (std::size_t i = 0; i < branch.entries.size(); ++i) {
        const BranchEntry& e = branch.entries[i];
        std::string dir;
        if (e.converged) {
            std::ostringstream name;
            name << "mu_" << std::setw(3) << std::setfill('0') << i;
            dir = name.str();
            fs::create_directories(root / dir);
            write_vector(e.x, root / dir / "x.vec");
            fields(e.x, root / dir);
        }
        m["entries"].push_back(entry_json(e, dir));
    }
    std::ofstream f(root / "branch.json");
    f << m.dump(2) << "\n";
}

} // namespace

void write_branch_archive(const std::string& directory, const Branch& branch, const ns::StateProblem& problem) {
    archive(directory, branch, "state", [&](const Vector& x, const fs::path& dir) {
        write_field_file(fem::FieldRole::Velocity, problem.full_velocity(x), dir / "velocity.field");
        write_field_file(fem::FieldRole::Pressure, problem.pressure(x), dir / "pressure.field");
    });
}

void write_branch_archive(const std::string& directory, const Branch& branch, const ocp::OptimalityProblem& problem) {
    using ocp::Block;
    archive(directory, branch, "ocp:" + ocp::describe(problem.config()), [&](const Vector& x, const fs::path& dir) {
        write_field_file(fem::FieldRole::Velocity, problem.state_velocity(x), dir / "velocity.field");
        write_field_file(fem::FieldRole::Pressure, problem.block(x, Block::StatePressure), dir / "pressure.field");
        write_field_file(fem::FieldRole::Control, problem.control_field(x), dir / "control.field");
        write_field_file(fem::FieldRole::Velocity, problem.adjoint_velocity(x), dir / "adjoint_velocity.field");
        write_field_file(fem::FieldRole::Pressure, problem.block(x, Block::AdjointPressure),
                         dir / "adjoint_pressure.field");
    });
}

Branch read_branch_archive(const std::string& directory) {
    fs::path root(directory);
    std::ifstream f(root / "branch.json");
    if (!f) throw FormatError("missing branch.json in " + directory);
    json m;
    try {
        m = json::parse(f);
    } catch (const json::exception& e) {
        throw FormatError(std::string("branch.json: ") + e.what());
    }
    if (m.value("format", "") != "branch v1") throw FormatError("branch.json: unknown format");
    Branch b;
    b.label = m.at("label").get<std::string>();
    b.truncated = m.value("truncated", false);
    b.stop_reason = m.value("stop_reason", "");
    for (const auto& j : m.at("entries")) {
        BranchEntry e;
        e.mu = j.at("mu").get<double>();
        e.output = j.at("output").get<double>();
        e.converged = j.at("converged").get<bool>();
        e.status = j.at("status").get<std::string>();
        e.trace.iterations = j.at("iters").get<int>();
        e.trace.converged = e.converged;
        e.trace.residuals = {j.at("residual").get<double>()};
        if (j.contains("J")) {
            ocp::CostReport c;
            c.J = j.at("J").get<double>();
            c.tracking = j.at("tracking").get<double>();
            c.penalty = j.at("penalty").get<double>();
            c.below_machine_epsilon = j.at("below_machine_epsilon").get<bool>();
            e.cost = c;
        }
        if (j.contains("dir")) e.x = read_vector(root / j.at("dir").get<std::string>() / "x.vec");
        b.entries.push_back(std::move(e));
    }
    return b;
}

} // namespace bifctl::branch
