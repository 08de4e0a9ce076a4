#include <doctest.h>

#include "bifctl/branch.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bifctl;
using namespace bifctl::branch;

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

ContinuationPlan plan(double hi, double lo, int n) {
    ContinuationPlan p;
    p.mus = descending_grid(hi, lo, n);
    return p;
}

// natural branch 2.0 -> 0.6, symmetric
const Branch& symmetric_branch() {
    static Branch b = run_continuation(state(), plan(2.0, 0.6, 15));
    return b;
}

// pushed off the symmetric branch at 0.9
const Branch& asymmetric_branch() {
    static Branch b = [] {
        ContinuationPlan p = plan(2.0, 0.6, 15);
        p.guess = GuessKind::PerturbedSymmetric;
        p.delta = 0.1;
        p.label = "asym";
        return run_continuation(state(), p);
    }();
    return b;
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("bifctl_test_" + name);
    std::filesystem::remove_all(d);
    return d;
}

} // namespace

TEST_CASE("descending grid") {
    auto g = descending_grid(2.0, 0.5, 31);
    REQUIRE(g.size() == 31);
    CHECK(g.front() == 2.0);
    CHECK(g.back() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g[10] == doctest::Approx(1.5));
    CHECK(descending_grid(1.3, 1.3, 1) == std::vector<double>{1.3});
    CHECK_THROWS_AS(descending_grid(0.5, 2.0, 4), ParameterError);
    CHECK_THROWS_AS(descending_grid(2.0, 0.5, 0), ParameterError);
}

TEST_CASE("plan validation and names") {
    ContinuationPlan p;
    CHECK_THROWS_AS(p.validate(), ParameterError);
    p.mus = {1.0, 0.9, 0.95};
    CHECK_THROWS_AS(p.validate(), ParameterError);
    p.mus = {1.0, 0.0};
    CHECK_THROWS_AS(p.validate(), ParameterError);
    p.mus = {1.0, 0.9};
    p.validate();
    p.guess = GuessKind::Prior;
    CHECK_THROWS_AS(p.validate(), ParameterError);
    p.mus = {0.8};
    p.guess = GuessKind::Zero;
    p.validate();
    for (GuessKind g : {GuessKind::Zero, GuessKind::Prior, GuessKind::PerturbedSymmetric, GuessKind::Stored})
        CHECK(guess_kind_from_string(to_string(g)) == g);
    CHECK(failure_policy_from_string("skip") == FailurePolicy::Skip);
    CHECK_THROWS_AS(guess_kind_from_string("random"), ParameterError);
    CHECK_THROWS_AS(failure_policy_from_string("abort"), ParameterError);
}

TEST_CASE("critical point from a synthetic eigenvalue") {
    // lambda(mu) = 1 - mu crosses zero at mu = 1
    std::vector<double> mus = descending_grid(2.0, 0.5, 16), lead;
    for (double mu : mus) lead.push_back(1.0 - mu);
    CriticalPoint c = detect_critical_point(mus, lead);
    REQUIRE(c.found);
    CHECK(c.mu == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(c.lo <= 1.0);
    CHECK(c.hi >= 1.0);
    // nonlinear: lambda = 0.7 - mu^2 / 2, crossing between grid points
    lead.clear();
    for (double mu : mus) lead.push_back(0.7 - mu * mu / 2.0);
    c = detect_critical_point(mus, lead);
    REQUIRE(c.found);
    CHECK(std::abs(c.mu - std::sqrt(1.4)) < 0.01);
    CHECK(c.hi - c.lo == doctest::Approx(0.1));
    // no crossing
    lead.assign(mus.size(), -1.0);
    CHECK_FALSE(detect_critical_point(mus, lead).found);
    CHECK_THROWS_AS(detect_critical_point(mus, {1.0}), StructuralError);
}

TEST_CASE("natural continuation stays symmetric") {
    const Branch& b = symmetric_branch();
    REQUIRE(b.entries.size() == 15);
    CHECK_FALSE(b.truncated);
    for (const auto& e : b.entries) {
        CHECK(e.converged);
        CHECK(e.status == "ok");
        CHECK(std::abs(e.output) < 1e-6);
        CHECK_FALSE(e.cost.has_value());
    }
    CHECK(b.mus() == descending_grid(2.0, 0.6, 15));
    CHECK_FALSE(output_departure(b, 1e-6).has_value());
    CHECK_THROWS_AS(b.at(0.65), LookupError);
    CHECK(b.at(1.0).mu == doctest::Approx(1.0));
}

TEST_CASE("warm start beats a cold start") {
    const Branch& b = symmetric_branch();
    for (double mu : {1.5, 1.0, 0.7}) {
        const BranchEntry& e = b.at(mu);
        ns::SteadySolution cold = ns::solve_steady_ns(state(), mu, state().zero_guess());
        CHECK(e.trace.iterations < cold.trace.iterations);
        CHECK(e.trace.iterations <= 4);
    }
}

TEST_CASE("perturbed seed leaves the symmetric branch") {
    const Branch& b = asymmetric_branch();
    REQUIRE(b.entries.size() == 15);
    for (const auto& e : b.entries) {
        REQUIRE(e.converged);
        if (e.mu > 0.9 + 1e-9)
            CHECK(std::abs(e.output) < 1e-6);
        else
            CHECK(e.output > 1.0);
    }
    auto dep = output_departure(b, 1e-6);
    REQUIRE(dep.has_value());
    CHECK(*dep == doctest::Approx(0.9));
    // the asymmetric output grows as mu decreases
    CHECK(b.at(0.6).output > b.at(0.9).output);
}

TEST_CASE("mirrored seed gives the reflected branch") {
    const Branch& a = asymmetric_branch();
    ContinuationPlan parent = plan(2.0, 0.6, 15);
    ContinuationPlan p = seed_non_natural(a, parent, 0.9, [](const Vector& x) { return state().mirror(x); }, "mirror");
    CHECK(p.guess == GuessKind::Prior);
    CHECK(p.mus.front() == doctest::Approx(0.9));
    CHECK(p.mus.size() == 4);
    Branch m = run_continuation(state(), p);
    REQUIRE(m.entries.size() == 4);
    CHECK(m.label == "mirror");
    for (const auto& e : m.entries) {
        REQUIRE(e.converged);
        double ref = a.at(e.mu).output;
        CHECK(std::abs(e.output + ref) < 1e-6 * std::abs(ref));
    }
    CHECK_THROWS_AS(seed_non_natural(a, parent, 0.93), LookupError);
}

TEST_CASE("single point plan") {
    ContinuationPlan p;
    p.mus = {1.2};
    Branch b = run_continuation(state(), p);
    REQUIRE(b.entries.size() == 1);
    CHECK(b.entries[0].converged);
    CHECK(b.entries[0].mu == 1.2);
}

TEST_CASE("failure policies") {
    ContinuationPlan p;
    p.mus = {2.0, 0.3, 0.29};
    p.newton.max_iterations = 2;
    p.newton.damping = false;
    // a failure at the first point propagates
    ContinuationPlan first = p;
    first.mus = {0.3, 0.29};
    CHECK_THROWS_AS(run_continuation(state(), first), DivergenceError);
    p.newton.max_iterations = 3;
    p.guess = GuessKind::Prior;
    p.initial_guess = symmetric_branch().at(2.0).x;
    Branch t = run_continuation(state(), p);
    REQUIRE(t.entries.size() == 2);
    CHECK(t.truncated);
    CHECK(t.entries[1].status == "non-C.");
    CHECK_FALSE(t.entries[1].converged);
    CHECK(t.stop_reason.find("0.3") != std::string::npos);
    p.policy = FailurePolicy::Skip;
    Branch s = run_continuation(state(), p);
    REQUIRE(s.entries.size() == 3);
    CHECK_FALSE(s.truncated);
    CHECK(s.entries[1].status == "skipped");
    CHECK(s.entries[2].status == "skipped");
}

TEST_CASE("continuation is deterministic") {
    ContinuationPlan p = plan(1.0, 0.8, 3);
    p.guess = GuessKind::PerturbedSymmetric;
    p.delta = 0.1;
    Branch a = run_continuation(state(), p);
    Branch b = run_continuation(state(), p);
    REQUIRE(a.entries.size() == b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].x == b.entries[i].x);
        CHECK(a.entries[i].trace.residuals == b.entries[i].trace.residuals);
    }
}

TEST_CASE("bifurcation csv") {
    std::ostringstream out;
    write_bifurcation_csv({&symmetric_branch(), &asymmetric_branch()}, out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "mu,output,J,branch_label");
    int rows = 0, asym = 0;
    while (std::getline(in, line)) {
        ++rows;
        if (line.ends_with(",asym")) ++asym;
    }
    CHECK(rows == 30);
    CHECK(asym == 15);
}

TEST_CASE("branch archive round trip") {
    auto dir = scratch_dir("state_archive");
    const Branch& b = asymmetric_branch();
    write_branch_archive(dir.string(), b, state());
    CHECK(std::filesystem::exists(dir / "mu_000" / "velocity.field"));
    CHECK(std::filesystem::exists(dir / "mu_014" / "pressure.field"));
    Branch r = read_branch_archive(dir.string());
    CHECK(r.label == b.label);
    REQUIRE(r.entries.size() == b.entries.size());
    for (std::size_t i = 0; i < b.entries.size(); ++i) {
        CHECK(r.entries[i].mu == b.entries[i].mu);
        CHECK(r.entries[i].output == b.entries[i].output);
        CHECK(r.entries[i].x == b.entries[i].x);
        CHECK(r.entries[i].trace.iterations == b.entries[i].trace.iterations);
    }
    // stored guess restarts the branch in one step
    ContinuationPlan p;
    p.mus = {0.6};
    p.guess = GuessKind::Stored;
    p.initial_guess = r.at(0.6).x;
    Branch again = run_continuation(state(), p);
    CHECK(again.entries[0].trace.iterations <= 1);
    CHECK(again.entries[0].output == doctest::Approx(b.at(0.6).output).epsilon(1e-10));
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(read_branch_archive(dir.string()), FormatError);
}

TEST_CASE("optimal control continuation records costs") {
    auto target = ns::make_target(state(), ns::TargetKind::Symmetric);
    ocp::OptimalityProblem p(coarse(), {fem::ControlKind::Neumann, 0.01}, target);
    ContinuationPlan pl = plan(2.0, 1.6, 3);
    Branch b = run_continuation(p, pl);
    REQUIRE(b.entries.size() == 3);
    for (const auto& e : b.entries) {
        REQUIRE(e.cost.has_value());
        CHECK(e.cost->J == doctest::Approx(e.cost->tracking + e.cost->penalty));
        CHECK(e.cost->J < 1e-3);
    }
    auto dir = scratch_dir("ocp_archive");
    write_branch_archive(dir.string(), b, p);
    CHECK(std::filesystem::exists(dir / "mu_002" / "control.field"));
    CHECK(std::filesystem::exists(dir / "mu_002" / "adjoint_velocity.field"));
    Branch r = read_branch_archive(dir.string());
    REQUIRE(r.entries[1].cost.has_value());
    CHECK(r.entries[1].cost->J == b.entries[1].cost->J);
    std::filesystem::remove_all(dir);
}
