#pragma once

#include "bifctl/branch.hpp"
#include "bifctl/eigs.hpp"
#include "bifctl/ns_state.hpp"
#include "bifctl/ocp.hpp"

#include <complex>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bifctl::stability {

enum class ProblemKind { State, Global };
std::string_view to_string(ProblemKind kind);

struct Spectrum {
    double mu = 0.0;
    ProblemKind kind = ProblemKind::State;
    std::vector<sparse::EigenPair> pairs; // real part descending
    std::string metric;
    bool complete = true; // every requested pair converged
};

struct SpectrumOptions {
    int k = 6;                        // pairs per shift
    std::vector<double> shifts = {0}; // merged, duplicates removed
    double dedup_tolerance = 1e-10;
    // state operator assembled as -D_y G so that stable means Re < 0
    bool negate_state = true;
    // full scalar-product metric instead of velocity mass only
    bool full_metric = false;
    sparse::EigsOptions eigs;
};

// Generalized eigenpairs near the shifts, residuals re-verified by multiplication.
Spectrum spectrum(const CsrMatrix& a, const CsrMatrix& m, double mu, ProblemKind kind, const SpectrumOptions& options);

// Linearized state operator at the given full velocity (controlled or not);
// all Dirichlet dofs are eliminated.
Spectrum state_eigs(const ns::StateProblem& problem, const Vector& full_velocity, double mu,
                    const SpectrumOptions& options = {});
Spectrum global_eigs(const ocp::OptimalityProblem& problem, const Vector& x, double mu,
                     const SpectrumOptions& options = {});

bool is_stable(const Spectrum& s);
// largest real part, -inf for an empty spectrum
double leading_real(const Spectrum& s);

struct SweepRow {
    double mu = 0.0;
    double re = 0.0;
    double im = 0.0;
    ProblemKind kind = ProblemKind::State;
    std::string branch_label;
};
using SweepTable = std::vector<SweepRow>;

// Spectra along the converged entries of a branch, filtered to re in [lo, hi].
struct Window {
    double lo = -0.01;
    double hi = 0.01;
};
SweepTable spectral_sweep(const ns::StateProblem& problem, const branch::Branch& branch, const Window& window,
                          const SpectrumOptions& options = {}, std::vector<Spectrum>* spectra = nullptr);
SweepTable spectral_sweep(const ocp::OptimalityProblem& problem, const branch::Branch& branch, ProblemKind kind,
                          const Window& window, const SpectrumOptions& options = {},
                          std::vector<Spectrum>* spectra = nullptr);
SweepTable filter_window(const std::vector<Spectrum>& spectra, const Window& window, const std::string& label);

struct Diagnostics {
    bool shears = false;
    bool inconclusive = false;
    std::optional<double> mu_star;      // crossing of the leading real eigenvalue
    std::optional<double> mu_star_star; // closest approach of the upper trace to zero
    std::optional<double> cluster;      // accumulation point of real eigenvalues
    double min_gap = 0.0;
    int crossings = 0;                  // sign changes of the leading real part
};

struct ShearsOptions {
    double gap_threshold = 5e-3;
    double imag_tolerance = 1e-8;  // treat as real below this
    double cluster_width = 0.1;    // relative
    int cluster_min_count = 0;     // 0 -> number of mu values
};

Diagnostics classify_shears(const SweepTable& table, const ShearsOptions& options = {});

// mu,re,im,problem_kind,branch_label
void write_sweep_csv(const SweepTable& table, std::ostream& out);
void write_diagnostics_json(const Diagnostics& d, std::ostream& out);

} // namespace bifctl::stability
