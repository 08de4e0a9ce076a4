#pragma once

#include "bifctl/branch.hpp"
#include "bifctl/rom.hpp"
#include "bifctl/stability.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bifctl::runner {

using json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "bifctl 0.1.0";

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& what, int line = 0) : std::runtime_error(what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

class InventoryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GridSpec {
    double hi = 2.0;
    double lo = 0.5;
    int n = 31;
    std::vector<double> values; // explicit list, overrides hi/lo/n

    std::vector<double> mus() const;
};

// One continuation run. guess: zero, perturbed, mirror (of another branch,
// restarted at seed_mu) or restart (same, without mirroring).
struct BranchSpec {
    std::string label = "symmetric";
    std::string guess = "zero";
    double seed_mu = 0.9;
    std::vector<double> deltas = {0.1, 0.3}; // tried in order until the output departs
    int sign = 1;
    std::string from;
};

struct EigsSpec {
    bool enabled = false;
    std::string problem = "state"; // state, global or both
    int k = 6;
    std::vector<double> shifts = {0.0};
    double window_lo = -0.01, window_hi = 0.01;
    std::string metric = "mass"; // mass or full
    std::string sign = "negate"; // negate (stable = Re < 0) or raw
    GridSpec grid;               // empty values and n = 0 -> branch grid
    std::vector<std::string> branches; // empty -> all
};

struct RomSpec {
    bool enabled = false;
    std::string branch = "symmetric";
    std::optional<double> alpha; // default: first alpha
    int n_max = 51;
    int n_bar = 20;
    int online = 151;
    double abs_fraction = 1e-2;
    bool supremizers = true;
};

struct RunConfig {
    std::string preset = "custom";
    std::string mesh = "coarse";
    std::string system = "ocp"; // state or ocp
    std::string control = "neumann";
    std::vector<double> alphas = {0.01};
    std::string target = "symmetric";
    double target_mu = 0.49;
    GridSpec grid;
    std::vector<BranchSpec> branches = {BranchSpec{}};
    std::string policy = "skip";
    bool uncontrolled_costs = false;  // add uncontrolled rows to costs.csv
    std::vector<double> table_mus;    // costs.csv rows; empty -> every grid point
    double solve_mu = 1.0;            // solve-state
    std::vector<double> slice_x1 = {10.0, 45.0, 47.0};
    std::vector<double> slice_mus = {2.0, 1.0, 0.95, 0.5}; // export-slices
    EigsSpec eigs;
    RomSpec rom;

    json raw; // as given, stored in the manifest

    void validate() const;
};

// Presets: uncontrolled, neumann, distributed-sym, distributed-asym, channel,
// dirichlet, table-neumann.
std::vector<std::string> preset_names();
json preset_json(const std::string& name);

// Parse a config document. A "preset" key pulls in the preset first and the
// remaining keys override it. Errors carry the line of the offending key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
RunConfig config_from_preset(const std::string& name);

// every field, defaults included
json resolved_json(const RunConfig& config);
std::string config_hash(const RunConfig& config);
// 64-bit FNV-1a of a byte string, as 16 hex digits
std::string fnv1a_hex(const std::string& bytes);

struct RunOptions {
    std::string out = "out";
    int threads = 1;
    bool deterministic = false;
    bool quiet = false;
};

enum class Stage { Mesh, SolveState, Branch, Ocp, Eigs, RomOffline, RomOnline, Run, ExportSlices };
Stage stage_from_string(const std::string& name);

struct RunSummary {
    int exit_code = 0;
    std::vector<std::string> files; // relative to the output directory
    json results;                   // summary values also stored in the manifest
};

RunSummary run(const RunConfig& config, Stage stage, const RunOptions& options);

struct Check {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Offline re-check of a run directory. Throws InventoryError when the
// manifest or a listed file is missing.
std::vector<Check> verify(const std::string& directory);
void print_checks(const std::vector<Check>& checks, std::ostream& out);

} // namespace bifctl::runner
