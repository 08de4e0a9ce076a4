#include "bifctl/stability.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>

namespace bifctl::stability {

std::string_view to_string(ProblemKind kind) {
    return kind == ProblemKind::State ? "state" : "global";
}

Spectrum spectrum(const CsrMatrix& a, const CsrMatrix& m, double mu, ProblemKind kind, const SpectrumOptions& options) {
    if (options.shifts.empty()) throw ParameterError("spectrum: no shifts");
    Spectrum s;
    s.mu = mu;
    s.kind = kind;
    const int n = a.n_rows;
    const int k = std::min(options.k, n - 1);
    for (double shift : options.shifts) {
        sparse::EigsResult r;
        try {
            r = sparse::eigs_shift_invert(a, m, k, {shift, 0.0}, options.eigs);
        } catch (const ShiftError&) {
            // shift hits an eigenvalue: move it off slightly
            r = sparse::eigs_shift_invert(a, m, k, {shift + 1e-7 * std::max(1.0, std::abs(shift)), 0.0}, options.eigs);
        }
        if (!r.complete()) s.complete = false;
        for (auto& p : r.pairs) {
            Eigen::VectorXcd ax = sparse::multiply(a, p.vector);
            Eigen::VectorXcd mx = sparse::multiply(m, p.vector);
            p.residual = (ax - p.value * mx).norm() / p.vector.norm();
            if (!(p.residual <= options.eigs.tolerance)) {
                s.complete = false;
                continue;
            }
            bool dup = false;
            for (const auto& q : s.pairs)
                if (std::abs(q.value - p.value) <= options.dedup_tolerance * std::max(1.0, std::abs(p.value))) dup = true;
            if (!dup) s.pairs.push_back(std::move(p));
        }
    }
    std::stable_sort(s.pairs.begin(), s.pairs.end(), [](const auto& x, const auto& y) {
        if (x.value.real() != y.value.real()) return x.value.real() > y.value.real();
        return x.value.imag() > y.value.imag();
    });
    return s;
}

Spectrum state_eigs(const ns::StateProblem& problem, const Vector& full_velocity, double mu,
                    const SpectrumOptions& options) {
    CsrMatrix j = problem.jacobian_at(full_velocity, mu);
    if (options.negate_state) j = sparse::scaled(j, -1.0);
    Spectrum s = spectrum(j, problem.state_metric(options.full_metric), mu, ProblemKind::State, options);
    s.metric = options.full_metric ? "velocity L2 + pressure L2" : "velocity L2";
    return s;
}

Spectrum global_eigs(const ocp::OptimalityProblem& problem, const Vector& x, double mu, const SpectrumOptions& options) {
    Spectrum s = spectrum(problem.jacobian(x, mu), problem.global_metric(), mu, ProblemKind::Global, options);
    s.metric = "L2 on state, control and adjoint velocities";
    return s;
}

bool is_stable(const Spectrum& s) {
    return leading_real(s) < 0.0;
}

double leading_real(const Spectrum& s) {
    return s.pairs.empty() ? -std::numeric_limits<double>::infinity() : s.pairs.front().value.real();
}

SweepTable filter_window(const std::vector<Spectrum>& spectra, const Window& window, const std::string& label) {
    SweepTable t;
    for (const auto& s : spectra)
        for (const auto& p : s.pairs)
            if (p.value.real() >= window.lo && p.value.real() <= window.hi)
                t.push_back({s.mu, p.value.real(), p.value.imag(), s.kind, label});
    return t;
}

SweepTable spectral_sweep(const ns::StateProblem& problem, const branch::Branch& branch, const Window& window,
                          const SpectrumOptions& options, std::vector<Spectrum>* spectra) {
    std::vector<Spectrum> all;
    for (const auto& e : branch.entries)
        if (e.converged) all.push_back(state_eigs(problem, problem.full_velocity(e.x), e.mu, options));
    SweepTable t = filter_window(all, window, branch.label);
    if (spectra) *spectra = std::move(all);
    return t;
}

SweepTable spectral_sweep(const ocp::OptimalityProblem& problem, const branch::Branch& branch, ProblemKind kind,
                          const Window& window, const SpectrumOptions& options, std::vector<Spectrum>* spectra) {
    std::vector<Spectrum> all;
    for (const auto& e : branch.entries) {
        if (!e.converged) continue;
        if (kind == ProblemKind::State)
            all.push_back(state_eigs(problem.state_problem(), problem.state_velocity(e.x), e.mu, options));
        else
            all.push_back(global_eigs(problem, e.x, e.mu, options));
    }
    SweepTable t = filter_window(all, window, branch.label);
    if (spectra) *spectra = std::move(all);
    return t;
}

namespace {

// minimum of samples (x ascending) refined by a parabola through the neighbours
double parabolic_min(const std::vector<double>& x, const std::vector<double>& y, std::size_t i) {
    double x0 = x[i - 1], x1 = x[i], x2 = x[i + 1];
    double y0 = y[i - 1], y1 = y[i], y2 = y[i + 1];
    double d = (x0 - x1) * (x0 - x2) * (x1 - x2);
    double a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / d;
    double b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / d;
    if (!(a > 0.0)) return x1;
    return std::clamp(-b / (2.0 * a), x0, x2);
}

} // namespace

Diagnostics classify_shears(const SweepTable& table, const ShearsOptions& options) {
    Diagnostics d;
    std::map<double, std::vector<std::pair<double, double>>> by_mu;
    for (const auto& r : table) by_mu[r.mu].push_back({r.re, r.im});
    const std::size_t n = by_mu.size();
    if (n < 3) {
        d.inconclusive = true;
        return d;
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> mus, upper, lower, leading;
    std::vector<double> reals;
    for (const auto& [mu, vals] : by_mu) {
        double up = nan, lo = nan, lead = nan;
        for (auto [re, im] : vals) {
            if (std::isnan(lead) || re > lead) lead = re;
            if (std::abs(im) > options.imag_tolerance * std::max(1.0, std::abs(re))) continue;
            reals.push_back(re);
            if (re > 0.0 && (std::isnan(up) || re < up)) up = re;
            if (re < 0.0 && (std::isnan(lo) || re > lo)) lo = re;
        }
        mus.push_back(mu);
        upper.push_back(up);
        lower.push_back(lo);
        leading.push_back(lead);
    }

    for (std::size_t i = 1; i < n; ++i)
        if (!std::isnan(leading[i - 1]) && !std::isnan(leading[i]) && (leading[i - 1] < 0.0) != (leading[i] < 0.0))
            ++d.crossings;
    // mu_star from the high-viscosity end downwards
    std::vector<double> rm(mus.rbegin(), mus.rend()), rl(leading.rbegin(), leading.rend());
    branch::CriticalPoint c = branch::detect_critical_point(rm, rl);
    if (c.found) d.mu_star = c.mu;

    double best_gap = std::numeric_limits<double>::infinity();
    int both = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isnan(upper[i]) && !std::isnan(lower[i])) {
            ++both;
            best_gap = std::min(best_gap, upper[i] - lower[i]);
        }
    d.min_gap = both ? best_gap : std::numeric_limits<double>::infinity();
    d.shears = both >= 3 && d.min_gap <= options.gap_threshold;

    // closest approach of the upper trace, interior minimum only
    std::size_t arg = n;
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isnan(upper[i]) && (arg == n || upper[i] < upper[arg])) arg = i;
    if (arg != n && arg > 0 && arg + 1 < n && !std::isnan(upper[arg - 1]) && !std::isnan(upper[arg + 1]))
        d.mu_star_star = parabolic_min(mus, upper, arg);

    // densest group of positive real eigenvalues within a relative band
    std::vector<double> pos;
    for (double r : reals)
        if (r > 0.0) pos.push_back(r);
    std::sort(pos.begin(), pos.end());
    std::size_t best_lo = 0, best_count = 0;
    for (std::size_t i = 0, j = 0; i < pos.size(); ++i) {
        j = std::max(j, i);
        while (j < pos.size() && pos[j] <= pos[i] * (1.0 + options.cluster_width)) ++j;
        if (j - i > best_count) {
            best_count = j - i;
            best_lo = i;
        }
    }
    const std::size_t min_count = options.cluster_min_count > 0 ? options.cluster_min_count : n;
    if (best_count >= min_count && best_count >= 3) d.cluster = pos[best_lo + best_count / 2];
    return d;
}

void write_sweep_csv(const SweepTable& table, std::ostream& out) {
    out << "mu,re,im,problem_kind,branch_label\n" << std::setprecision(17);
    for (const auto& r : table)
        out << r.mu << "," << r.re << "," << r.im << "," << to_string(r.kind) << "," << r.branch_label << "\n";
}

void write_diagnostics_json(const Diagnostics& d, std::ostream& out) {
    nlohmann::ordered_json j;
    j["shears"] = d.shears;
    j["inconclusive"] = d.inconclusive;
    j["mu_star"] = d.mu_star ? nlohmann::ordered_json(*d.mu_star) : nlohmann::ordered_json(nullptr);
    j["mu_star_star"] = d.mu_star_star ? nlohmann::ordered_json(*d.mu_star_star) : nlohmann::ordered_json(nullptr);
    j["cluster"] = d.cluster ? nlohmann::ordered_json(*d.cluster) : nlohmann::ordered_json(nullptr);
    j["min_gap"] = std::isfinite(d.min_gap) ? nlohmann::ordered_json(d.min_gap) : nlohmann::ordered_json(nullptr);
    j["crossings"] = d.crossings;
    out << j.dump(2) << "\n";
}

} // namespace bifctl::stability
