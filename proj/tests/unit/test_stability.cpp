#include <doctest.h>

#include "bifctl/stability.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>

using namespace bifctl;
using namespace bifctl::stability;

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

// diag(mu - 1, -1 - 0.01 i, ...) on n unknowns, identity metric
CsrMatrix model_operator(double mu, int n) {
    Vector d(n);
    d[0] = mu - 1.0;
    for (int i = 1; i < n; ++i) d[i] = -1.0 - 0.01 * i;
    return sparse::diagonal(d);
}

SweepTable synthetic(const std::vector<double>& mus, const std::function<std::vector<double>(double)>& values) {
    SweepTable t;
    for (double mu : mus)
        for (double v : values(mu)) t.push_back({mu, v, 0.0, ProblemKind::Global, "natural"});
    return t;
}

} // namespace

TEST_CASE("model pencil crossing") {
    const int n = 100;
    std::vector<Spectrum> all;
    std::vector<double> mus, lead;
    for (double mu : branch::descending_grid(1.5, 0.5, 11)) {
        Spectrum s = spectrum(model_operator(mu, n), sparse::identity(n), mu, ProblemKind::State, {});
        REQUIRE(s.complete);
        REQUIRE(s.pairs.size() >= 2);
        CHECK(s.pairs[0].value.real() == doctest::Approx(std::max(mu - 1.0, -1.01)).epsilon(1e-10));
        for (std::size_t i = 1; i < s.pairs.size(); ++i) CHECK(s.pairs[i - 1].value.real() >= s.pairs[i].value.real());
        if (std::abs(mu - 1.0) > 1e-9) CHECK(is_stable(s) == (mu < 1.0));
        mus.push_back(mu);
        lead.push_back(leading_real(s));
        all.push_back(std::move(s));
    }
    // the shift sits on the eigenvalue at mu = 1 and is moved off
    CHECK(lead[5] == doctest::Approx(0.0).epsilon(1e-12));
    branch::CriticalPoint c = branch::detect_critical_point(mus, lead);
    REQUIRE(c.found);
    CHECK(c.mu == doctest::Approx(1.0));
    SweepTable t = filter_window(all, {-0.25, 0.25}, "model");
    CHECK(t.size() == 5);
    for (const auto& r : t) CHECK(r.branch_label == "model");
    CHECK(filter_window(all, {5.0, 6.0}, "model").empty());
}

TEST_CASE("saddle pencil has no spurious modes") {
    // A = [K B^T; B 0], M = [I 0; 0 0], B = e_0^T: finite spectrum is K restricted to x_0 = 0
    const int n = 80;
    std::vector<sparse::Triplet> a, m;
    for (int i = 0; i < n; ++i) {
        a.push_back({i, i, -0.5 - i});
        m.push_back({i, i, 1.0});
    }
    a.push_back({0, n, 1.0});
    a.push_back({n, 0, 1.0});
    SpectrumOptions o;
    o.k = 4;
    Spectrum s = spectrum(sparse::csr_from_triplets(n + 1, n + 1, a), sparse::csr_from_triplets(n + 1, n + 1, m), 1.0,
                          ProblemKind::State, o);
    REQUIRE(s.pairs.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(s.pairs[i].value.real() == doctest::Approx(-1.5 - i).epsilon(1e-10));
}

TEST_CASE("complex pairs and merged shifts") {
    // rotation blocks a +- i b
    const int n = 70;
    std::vector<sparse::Triplet> a;
    for (int k = 0; k < n / 2; ++k) {
        double re = -0.1 * k, im = 1.0 + k;
        a.push_back({2 * k, 2 * k, re});
        a.push_back({2 * k + 1, 2 * k + 1, re});
        a.push_back({2 * k, 2 * k + 1, im});
        a.push_back({2 * k + 1, 2 * k, -im});
    }
    SpectrumOptions o;
    o.k = 4;
    o.shifts = {0.0, -0.1, 0.0};
    Spectrum s = spectrum(sparse::csr_from_triplets(n, n, a), sparse::identity(n), 1.0, ProblemKind::Global, o);
    REQUIRE(s.pairs.size() >= 4);
    CHECK(s.pairs[0].value.real() == doctest::Approx(0.0));
    CHECK(s.pairs[1].value.real() == doctest::Approx(0.0));
    CHECK(std::abs(s.pairs[0].value.imag()) == doctest::Approx(1.0));
    CHECK(s.pairs[0].value.imag() == doctest::Approx(-s.pairs[1].value.imag()));
    CHECK(s.pairs[2].value.real() == doctest::Approx(-0.1));
    // no duplicates after merging the shifts
    for (std::size_t i = 0; i < s.pairs.size(); ++i)
        for (std::size_t j = i + 1; j < s.pairs.size(); ++j) CHECK(std::abs(s.pairs[i].value - s.pairs[j].value) > 1e-6);
    CHECK_THROWS_AS(spectrum(sparse::identity(n), sparse::identity(n), 1.0, ProblemKind::Global, {.shifts = {}}),
                    ParameterError);
}

TEST_CASE("shears on two parabolic traces") {
    // upper 1e-3 + (mu - 1.1)^2, lower its negative, plus a real value fixed at 0.5
    std::vector<double> mus = branch::descending_grid(1.5, 0.7, 17);
    SweepTable t = synthetic(mus, [](double mu) {
        double q = (mu - 1.1) * (mu - 1.1);
        return std::vector<double>{1e-3 + q, -1e-3 - q, 0.5, -3.0};
    });
    Diagnostics d = classify_shears(t);
    CHECK(d.shears);
    CHECK_FALSE(d.inconclusive);
    CHECK(d.min_gap == doctest::Approx(2e-3));
    REQUIRE(d.mu_star_star.has_value());
    CHECK(*d.mu_star_star == doctest::Approx(1.1).epsilon(1e-12));
    REQUIRE(d.cluster.has_value());
    CHECK(*d.cluster == doctest::Approx(0.5));
    CHECK_FALSE(d.mu_star.has_value());
    CHECK(d.crossings == 0);
    // an off-grid minimum is recovered by the parabola
    t = synthetic(mus, [](double mu) { return std::vector<double>{1e-3 + (mu - 1.07) * (mu - 1.07), -2e-3}; });
    d = classify_shears(t);
    REQUIRE(d.mu_star_star.has_value());
    CHECK(*d.mu_star_star == doctest::Approx(1.07).epsilon(1e-12));
}

TEST_CASE("no shears when the traces stay apart") {
    std::vector<double> mus = branch::descending_grid(1.5, 0.7, 9);
    SweepTable t = synthetic(mus, [](double mu) { return std::vector<double>{0.05 + mu, -0.05}; });
    Diagnostics d = classify_shears(t);
    CHECK_FALSE(d.shears);
    CHECK(d.min_gap > 5e-3);
    // minimum at the grid boundary is not a closest approach
    CHECK_FALSE(d.mu_star_star.has_value());
    // complex values are not part of the real traces
    t = synthetic(mus, [](double) { return std::vector<double>{1e-4, -1e-4}; });
    for (auto& r : t) r.im = 0.3;
    d = classify_shears(t);
    CHECK_FALSE(d.shears);
}

TEST_CASE("leading eigenvalue crossing") {
    std::vector<double> mus = branch::descending_grid(2.0, 0.5, 16);
    SweepTable t = synthetic(mus, [](double mu) { return std::vector<double>{1.0 - mu, -2.0}; });
    Diagnostics d = classify_shears(t);
    REQUIRE(d.mu_star.has_value());
    CHECK(*d.mu_star == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.crossings == 1);
}

TEST_CASE("sparse tables are inconclusive") {
    CHECK(classify_shears({}).inconclusive);
    SweepTable t = synthetic({1.0, 0.9}, [](double) { return std::vector<double>{1e-4, -1e-4}; });
    Diagnostics d = classify_shears(t);
    CHECK(d.inconclusive);
    CHECK_FALSE(d.shears);
}

TEST_CASE("csv and json output") {
    SweepTable t = {{1.0, -0.25, 0.5, ProblemKind::Global, "natural"}, {0.9, 0.1, 0.0, ProblemKind::State, "b"}};
    std::ostringstream out;
    write_sweep_csv(t, out);
    CHECK(out.str() == "mu,re,im,problem_kind,branch_label\n1,-0.25,0.5,global,natural\n0.90000000000000002,0.10000000000000001,0,state,b\n");
    Diagnostics d;
    d.mu_star = 0.96;
    std::ostringstream js;
    write_diagnostics_json(d, js);
    auto j = nlohmann::json::parse(js.str());
    CHECK(j["mu_star"].get<double>() == 0.96);
    CHECK(j["mu_star_star"].is_null());
    CHECK(j["cluster"].is_null());
    for (const char* key : {"shears", "inconclusive", "min_gap", "crossings"}) CHECK(j.contains(key));
}

TEST_CASE("state spectrum along the symmetric branch") {
    branch::ContinuationPlan p;
    p.mus = branch::descending_grid(1.1, 0.85, 6);
    branch::Branch b = branch::run_continuation(state(), p);
    std::vector<Spectrum> spectra;
    SweepTable t = spectral_sweep(state(), b, {-0.1, 0.1}, {}, &spectra);
    REQUIRE(spectra.size() == 6);
    std::vector<double> lead;
    for (const auto& s : spectra) {
        CHECK(s.complete);
        CHECK(s.kind == ProblemKind::State);
        lead.push_back(leading_real(s));
        // the leading mode is real
        CHECK(std::abs(s.pairs[0].value.imag()) < 1e-8);
    }
    CHECK(lead.front() < 0.0);
    CHECK(lead.back() > 0.0);
    branch::CriticalPoint c = branch::detect_critical_point(p.mus, lead);
    REQUIRE(c.found);
    // independent value from the mass-weighted generalized problem on this mesh
    CHECK(c.mu == doctest::Approx(0.977).epsilon(5e-3));
    Diagnostics d = classify_shears(t);
    REQUIRE(d.mu_star.has_value());
    CHECK(*d.mu_star == doctest::Approx(c.mu));
}

TEST_CASE("asymmetric state is stable, symmetric one is not") {
    const double mu = 0.8;
    Vector sym = state().zero_guess();
    for (double m = 2.0; m > mu - 1e-9; m -= 0.1) sym = ns::solve_steady_ns(state(), m, sym).x;
    Vector asym = ns::solve_steady_ns(state(), mu, ns::perturbed_guess(state(), sym, 0.1, 1)).x;
    REQUIRE(state().output(asym) > 1.0);
    Spectrum ss = state_eigs(state(), state().full_velocity(sym), mu);
    Spectrum sa = state_eigs(state(), state().full_velocity(asym), mu);
    CHECK_FALSE(is_stable(ss));
    CHECK(is_stable(sa));
    // the mirrored solution has the same spectrum; eigenvalues far from the
    // shift are less accurate, compare the ones near it
    Spectrum sm = state_eigs(state(), state().full_velocity(state().mirror(asym)), mu);
    REQUIRE(sm.pairs.size() == sa.pairs.size());
    for (std::size_t i = 0; i < sa.pairs.size(); ++i)
        if (std::abs(sa.pairs[i].value) < 1.0) CHECK(std::abs(sm.pairs[i].value - sa.pairs[i].value) < 1e-7);
    SpectrumOptions full;
    full.full_metric = true;
    CHECK(state_eigs(state(), state().full_velocity(sym), mu, full).metric.find("pressure") != std::string::npos);
}

TEST_CASE("global spectrum of the optimality system is real") {
    auto target = ns::make_target(state(), ns::TargetKind::Symmetric);
    ocp::OptimalityProblem p(coarse(), {fem::ControlKind::Neumann, 1.0}, target);
    ocp::OptimalitySolution sol = ocp::solve_optimality(p, 1.5, p.zero_guess());
    SpectrumOptions o;
    o.k = 6;
    Spectrum s = global_eigs(p, sol.x, 1.5, o);
    CHECK(s.kind == ProblemKind::Global);
    REQUIRE(s.pairs.size() >= 4);
    for (const auto& q : s.pairs) {
        CHECK(std::abs(q.value.imag()) < 1e-8 * std::max(1.0, std::abs(q.value)));
        CHECK(q.residual <= 1e-8);
    }
}
