#include "bifctl/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <atomic>
#include <cctype>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace bifctl::runner {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

std::vector<double> GridSpec::mus() const {
    if (n == 0) return values;
    return branch::descending_grid(hi, lo, n);
}

namespace {

int line_of(const std::string& text, const std::string& key) {
    if (text.empty() || key.empty()) return 0;
    auto pos = text.find("\"" + key + "\"");
    if (pos == std::string::npos) return 0;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

int line_of_byte(const std::string& text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n'));
}

bool on_grid(const std::vector<double>& mus, double mu) {
    return std::any_of(mus.begin(), mus.end(), [&](double m) { return std::abs(m - mu) <= 1e-9; });
}

// key error: thrown during conversion/validation, mapped to a line later
struct KeyError {
    std::string key;
    std::string message;
};

[[noreturn]] void fail(const std::string& key, const std::string& message) { throw KeyError{key, message}; }

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) fail(where, where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) fail(it.key(), "unknown key '" + it.key() + "' in " + where);
    }
}

template <class T> T get(const json& j, const char* key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        fail(key, std::string("key '") + key + "' has the wrong type");
    }
}

std::vector<double> number_list(const json& j, const char* key, const std::vector<double>& fallback) {
    if (!j.contains(key)) return fallback;
    if (j.at(key).is_number()) return {j.at(key).get<double>()};
    return get<std::vector<double>>(j, key, fallback);
}

GridSpec grid_from(const json& j, const GridSpec& fallback) {
    check_keys(j, {"hi", "lo", "n", "values"}, "grid");
    GridSpec g = fallback;
    if (j.contains("values")) {
        g.values = get<std::vector<double>>(j, "values", {});
        g.n = 0;
    } else {
        g.values.clear();
        g.hi = get(j, "hi", fallback.hi);
        g.lo = get(j, "lo", fallback.lo);
        g.n = get(j, "n", fallback.n == 0 ? 31 : fallback.n);
    }
    return g;
}

json grid_to(const GridSpec& g) {
    if (g.n == 0) return json{{"values", g.values}};
    return json{{"hi", g.hi}, {"lo", g.lo}, {"n", g.n}};
}

RunConfig from_json(const json& j) {
    check_keys(j, {"preset", "mesh", "system", "control", "alphas", "target", "target_mu", "grid", "branches", "policy",
                   "uncontrolled_costs", "table_mus", "solve_mu", "slice_x1", "slice_mus", "eigs", "rom"},
               "config");
    RunConfig c;
    c.preset = get<std::string>(j, "preset", c.preset);
    c.mesh = get<std::string>(j, "mesh", c.mesh);
    c.system = get<std::string>(j, "system", c.system);
    c.control = get<std::string>(j, "control", c.control);
    c.alphas = number_list(j, "alphas", c.alphas);
    c.target = get<std::string>(j, "target", c.target);
    c.target_mu = get(j, "target_mu", c.target_mu);
    if (j.contains("grid")) c.grid = grid_from(j.at("grid"), c.grid);
    if (j.contains("branches")) {
        if (!j.at("branches").is_array()) fail("branches", "branches must be an array");
        c.branches.clear();
        for (const json& b : j.at("branches")) {
            check_keys(b, {"label", "guess", "seed_mu", "delta", "deltas", "sign", "from"}, "branch");
            BranchSpec s;
            s.label = get<std::string>(b, "label", s.label);
            s.guess = get<std::string>(b, "guess", s.guess);
            s.seed_mu = get(b, "seed_mu", s.seed_mu);
            s.deltas = number_list(b, "deltas", number_list(b, "delta", s.deltas));
            s.sign = get(b, "sign", s.sign);
            s.from = get<std::string>(b, "from", s.from);
            c.branches.push_back(s);
        }
    }
    c.policy = get<std::string>(j, "policy", c.policy);
    c.uncontrolled_costs = get(j, "uncontrolled_costs", c.uncontrolled_costs);
    c.table_mus = number_list(j, "table_mus", c.table_mus);
    c.solve_mu = get(j, "solve_mu", c.solve_mu);
    c.slice_x1 = number_list(j, "slice_x1", c.slice_x1);
    c.slice_mus = number_list(j, "slice_mus", c.slice_mus);
    if (j.contains("eigs")) {
        const json& e = j.at("eigs");
        check_keys(e, {"enabled", "problem", "k", "shifts", "window", "metric", "sign", "grid", "branches"}, "eigs");
        EigsSpec& s = c.eigs;
        s.enabled = get(e, "enabled", true);
        s.problem = get<std::string>(e, "problem", s.problem);
        s.k = get(e, "k", s.k);
        s.shifts = number_list(e, "shifts", s.shifts);
        if (e.contains("window")) {
            auto w = get<std::vector<double>>(e, "window", {});
            if (w.size() != 2) fail("window", "window needs two numbers [lo, hi]");
            s.window_lo = w[0];
            s.window_hi = w[1];
        }
        s.metric = get<std::string>(e, "metric", s.metric);
        s.sign = get<std::string>(e, "sign", s.sign);
        if (e.contains("grid")) s.grid = grid_from(e.at("grid"), GridSpec{2.0, 0.5, 0, {}});
        s.branches = get<std::vector<std::string>>(e, "branches", s.branches);
    }
    if (j.contains("rom")) {
        const json& r = j.at("rom");
        check_keys(r, {"enabled", "branch", "alpha", "n_max", "n_bar", "online", "abs_fraction", "supremizers"}, "rom");
        RomSpec& s = c.rom;
        s.enabled = get(r, "enabled", true);
        s.branch = get<std::string>(r, "branch", s.branch);
        if (r.contains("alpha")) s.alpha = get(r, "alpha", 0.0);
        s.n_max = get(r, "n_max", s.n_max);
        s.n_bar = get(r, "n_bar", s.n_bar);
        s.online = get(r, "online", s.online);
        s.abs_fraction = get(r, "abs_fraction", s.abs_fraction);
        s.supremizers = get(r, "supremizers", s.supremizers);
    }
    return c;
}

json to_json(const RunConfig& c) {
    json j;
    j["preset"] = c.preset;
    j["mesh"] = c.mesh;
    j["system"] = c.system;
    j["control"] = c.control;
    j["alphas"] = c.alphas;
    j["target"] = c.target;
    j["target_mu"] = c.target_mu;
    j["grid"] = grid_to(c.grid);
    j["branches"] = json::array();
    for (const auto& b : c.branches)
        j["branches"].push_back({{"label", b.label},
                                 {"guess", b.guess},
                                 {"seed_mu", b.seed_mu},
                                 {"deltas", b.deltas},
                                 {"sign", b.sign},
                                 {"from", b.from}});
    j["policy"] = c.policy;
    j["uncontrolled_costs"] = c.uncontrolled_costs;
    j["table_mus"] = c.table_mus;
    j["solve_mu"] = c.solve_mu;
    j["slice_x1"] = c.slice_x1;
    j["slice_mus"] = c.slice_mus;
    const EigsSpec& e = c.eigs;
    j["eigs"] = {{"enabled", e.enabled}, {"problem", e.problem}, {"k", e.k},
                 {"shifts", e.shifts},   {"window", {e.window_lo, e.window_hi}},
                 {"metric", e.metric},   {"sign", e.sign},
                 {"branches", e.branches}};
    if (e.grid.n != 0 || !e.grid.values.empty()) j["eigs"]["grid"] = grid_to(e.grid);
    const RomSpec& r = c.rom;
    j["rom"] = {{"enabled", r.enabled}, {"branch", r.branch},   {"n_max", r.n_max},
                {"n_bar", r.n_bar},     {"online", r.online},   {"abs_fraction", r.abs_fraction},
                {"supremizers", r.supremizers}};
    if (r.alpha) j["rom"]["alpha"] = *r.alpha;
    return j;
}

const BranchSpec* find_branch(const RunConfig& c, const std::string& label) {
    for (const auto& b : c.branches)
        if (b.label == label) return &b;
    return nullptr;
}

void validate_config(const RunConfig& c) {
    if (c.mesh != "coarse" && c.mesh != "medium" && c.mesh != "paper")
        fail("mesh", "mesh must be coarse, medium or paper");
    if (c.system != "state" && c.system != "ocp") fail("system", "system must be state or ocp");
    try {
        fem::control_kind_from_string(c.control);
    } catch (const std::exception&) {
        fail("control", "unknown control kind '" + c.control + "'");
    }
    try {
        ns::target_kind_from_string(c.target);
    } catch (const std::exception&) {
        fail("target", "unknown target '" + c.target + "'");
    }
    if (!(c.target_mu > 0.0)) fail("target_mu", "target_mu must be positive");
    if (c.alphas.empty()) fail("alphas", "alphas must not be empty");
    for (double a : c.alphas)
        if (!(a > 0.0)) fail("alphas", "alphas must be positive");
    if (c.grid.n < 0) fail("n", "grid size must be positive");
    std::vector<double> mus;
    try {
        mus = c.grid.mus();
    } catch (const std::exception& e) {
        fail("grid", std::string("invalid grid: ") + e.what());
    }
    if (mus.empty()) fail("grid", "the mu grid is empty");
    for (std::size_t i = 0; i < mus.size(); ++i) {
        if (!(mus[i] > 0.0)) fail("grid", "grid values must be positive");
        if (i && !(mus[i] < mus[i - 1])) fail("grid", "grid values must be strictly decreasing");
    }
    try {
        branch::failure_policy_from_string(c.policy);
    } catch (const std::exception&) {
        fail("policy", "policy must be truncate or skip");
    }
    if (c.branches.empty()) fail("branches", "at least one branch is required");
    std::set<std::string> seen;
    for (const auto& b : c.branches) {
        if (b.label.empty()) fail("label", "branch label must not be empty");
        if (!seen.insert(b.label).second) fail("label", "duplicate branch label '" + b.label + "'");
        if (b.guess != "zero" && b.guess != "perturbed" && b.guess != "mirror" && b.guess != "restart")
            fail("guess", "guess must be zero, perturbed, mirror or restart");
        if (!(b.seed_mu > 0.0)) fail("seed_mu", "seed_mu must be positive");
        if (b.guess == "perturbed") {
            if (b.deltas.empty()) fail("deltas", "perturbed branch needs at least one delta");
            for (double d : b.deltas)
                if (!(d > 0.0)) fail("deltas", "deltas must be positive");
        }
        if (b.guess == "mirror" || b.guess == "restart") {
            if (b.from.empty() || !seen.count(b.from) || b.from == b.label)
                fail("from", "branch '" + b.label + "' must start from an earlier branch");
            if (!on_grid(mus, b.seed_mu)) fail("seed_mu", "seed_mu of '" + b.label + "' is not a grid point");
        }
    }
    for (double m : c.table_mus)
        if (!on_grid(mus, m)) fail("table_mus", "table_mus entries must be grid points");
    if (!(c.solve_mu > 0.0)) fail("solve_mu", "solve_mu must be positive");
    const EigsSpec& e = c.eigs;
    if (e.problem != "state" && e.problem != "global" && e.problem != "both")
        fail("problem", "eigs.problem must be state, global or both");
    if (e.problem != "state" && c.system != "ocp") fail("problem", "global spectra need system = ocp");
    if (e.k < 1) fail("k", "eigs.k must be at least 1");
    if (e.shifts.empty()) fail("shifts", "eigs.shifts must not be empty");
    if (!(e.window_lo < e.window_hi)) fail("window", "eigs window needs lo < hi");
    if (e.metric != "mass" && e.metric != "full") fail("metric", "eigs.metric must be mass or full");
    if (e.sign != "negate" && e.sign != "raw") fail("sign", "eigs.sign must be negate or raw");
    for (const auto& l : e.branches)
        if (!find_branch(c, l)) fail("branches", "eigs refers to unknown branch '" + l + "'");
    const RomSpec& r = c.rom;
    if (r.enabled && c.system != "ocp") fail("rom", "the reduced model needs system = ocp");
    if (!find_branch(c, r.branch) && r.enabled) fail("branch", "rom.branch '" + r.branch + "' is not a branch");
    if (r.n_bar < 1 || r.n_max < 1 || r.online < 1) fail("n_bar", "rom sizes must be positive");
    if (r.n_bar > r.n_max) fail("n_bar", "rom.n_bar must not exceed rom.n_max");
    if (r.alpha && !(*r.alpha > 0.0)) fail("alpha", "rom.alpha must be positive");
    if (!(r.abs_fraction >= 0.0)) fail("abs_fraction", "rom.abs_fraction must be non-negative");
}

json base_ocp(const std::string& control, std::vector<double> alphas, const std::string& target) {
    return json{{"mesh", "coarse"},
                {"system", "ocp"},
                {"control", control},
                {"alphas", alphas},
                {"target", target},
                {"target_mu", 0.5},
                {"grid", {{"hi", 2.0}, {"lo", 0.5}, {"n", 31}}},
                {"policy", "skip"}};
}

} // namespace

void RunConfig::validate() const {
    try {
        validate_config(*this);
    } catch (const KeyError& e) {
        throw ConfigError(e.message);
    }
}

std::vector<std::string> preset_names() {
    return {"uncontrolled", "neumann", "distributed-sym", "distributed-asym", "channel", "dirichlet", "table-neumann"};
}

json preset_json(const std::string& name) {
    const json sym = {{"label", "symmetric"}, {"guess", "zero"}};
    const json asym = {{"label", "asymmetric"}, {"guess", "perturbed"}, {"seed_mu", 0.9}, {"deltas", {0.1, 0.3}}};
    json j;
    if (name == "uncontrolled") {
        j = {{"mesh", "paper"},
             {"system", "state"},
             {"grid", {{"hi", 2.0}, {"lo", 0.5}, {"n", 31}}},
             {"policy", "skip"},
             {"branches",
              {sym, asym, {{"label", "mirrored"}, {"guess", "mirror"}, {"from", "asymmetric"}, {"seed_mu", 0.9}}}},
             {"eigs",
              {{"enabled", true}, {"problem", "state"}, {"k", 6}, {"shifts", {0.0}}, {"window", {-1.0, 1.0}}}}};
    } else if (name == "neumann") {
        j = base_ocp("neumann", {1.0, 0.1, 0.01, 0.001}, "symmetric");
        j["branches"] = {sym, asym};
        j["eigs"] = {{"enabled", true}, {"problem", "global"}, {"k", 8}, {"shifts", {0.0}},
                     {"window", {-0.01, 0.01}}, {"branches", {"symmetric"}}};
        j["rom"] = {{"enabled", false}, {"branch", "symmetric"}, {"alpha", 0.01}, {"n_bar", 20}};
    } else if (name == "distributed-sym") {
        j = base_ocp("distributed", {1.0, 0.1, 0.01, 0.001}, "symmetric");
        j["branches"] = {sym};
        j["eigs"] = {{"enabled", true}, {"problem", "global"}, {"k", 8}, {"shifts", {0.0}}, {"window", {-0.01, 0.01}}};
    } else if (name == "distributed-asym") {
        j = base_ocp("distributed", {1.0, 0.1, 0.01, 0.001}, "asymmetric");
        j["branches"] = {sym};
        j["eigs"] = {{"enabled", true}, {"problem", "global"}, {"k", 8}, {"shifts", {0.0}}, {"window", {-0.05, 0.05}}};
    } else if (name == "channel") {
        j = base_ocp("channel", {1.0, 0.1, 0.01, 0.001}, "symmetric");
        j["branches"] = {sym};
        j["eigs"] = {{"enabled", true}, {"problem", "global"}, {"k", 8}, {"shifts", {0.0}}, {"window", {-0.01, 0.01}}};
        j["rom"] = {{"enabled", false}, {"branch", "symmetric"}, {"alpha", 0.01}, {"n_bar", 20}};
    } else if (name == "dirichlet") {
        j = base_ocp("dirichlet", {0.001}, "symmetric");
        j["grid"] = {{"hi", 2.0}, {"lo", 0.5}, {"n", 151}};
        j["branches"] = {sym};
        j["eigs"] = {{"enabled", true}, {"problem", "both"}, {"k", 8}, {"shifts", {0.0}}, {"window", {-0.01, 0.01}},
                     {"grid", {{"hi", 2.0}, {"lo", 0.5}, {"n", 31}}}};
        j["rom"] = {{"enabled", false}, {"branch", "symmetric"}, {"n_bar", 12}};
    } else if (name == "table-neumann") {
        j = base_ocp("neumann", {1.0, 0.1, 0.01, 0.001}, "symmetric");
        j["branches"] = {sym, asym};
        j["uncontrolled_costs"] = true;
        j["table_mus"] = {2.0, 1.5, 1.0, 0.9, 0.8, 0.7, 0.6, 0.5};
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    j["preset"] = name;
    return j;
}

RunConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what(), line_of_byte(text, e.byte));
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object", 1);
    try {
        json merged = doc;
        if (doc.contains("preset") && doc.at("preset") != "custom") {
            if (!doc.at("preset").is_string()) fail("preset", "preset must be a string");
            merged = preset_json(doc.at("preset").get<std::string>());
            merged.merge_patch(doc);
        }
        RunConfig c = from_json(merged);
        validate_config(c);
        c.raw = doc;
        return c;
    } catch (const KeyError& e) {
        throw ConfigError(e.message, line_of(text, e.key));
    } catch (const ConfigError& e) {
        throw ConfigError(e.what(), line_of(text, "preset"));
    }
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    std::stringstream s;
    s << f.rdbuf();
    return parse_config(s.str());
}

RunConfig config_from_preset(const std::string& name) {
    return parse_config(json{{"preset", name}}.dump());
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << h;
    return s.str();
}

json resolved_json(const RunConfig& config) { return to_json(config); }

std::string config_hash(const RunConfig& config) { return fnv1a_hex(to_json(config).dump()); }

Stage stage_from_string(const std::string& name) {
    static const std::map<std::string, Stage> m = {
        {"mesh", Stage::Mesh},           {"solve-state", Stage::SolveState}, {"branch", Stage::Branch},
        {"ocp", Stage::Ocp},             {"eigs", Stage::Eigs},              {"rom-offline", Stage::RomOffline},
        {"rom-online", Stage::RomOnline}, {"run", Stage::Run},               {"export-slices", Stage::ExportSlices}};
    auto it = m.find(name);
    if (it == m.end()) throw ConfigError("unknown subcommand '" + name + "'");
    return it->second;
}

// ---------------------------------------------------------------- pipeline

namespace {

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

std::string short_fmt(double v) {
    std::ostringstream s;
    s << v;
    return s.str();
}

std::string file_hash(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return fnv1a_hex(s.str());
}

class Context {
public:
    Context(const RunConfig& c, const RunOptions& o) : config(c), options(o) {}

    const RunConfig& config;
    const RunOptions& options;

    std::shared_ptr<const fem::TaylorHoodSpace> space() {
        std::call_once(space_once_, [&] {
            space_ = std::make_shared<const fem::TaylorHoodSpace>(
                mesh::build_channel_mesh(mesh::MeshSpec::preset(config.mesh)));
        });
        return space_;
    }
    const ns::StateProblem& state() {
        std::call_once(state_once_, [&] { state_ = std::make_unique<ns::StateProblem>(space()); });
        return *state_;
    }
    const Vector& target() {
        std::call_once(target_once_, [&] {
            ns::TargetOptions t;
            t.asymmetric_mu = config.target_mu;
            target_ = ns::make_target(state(), ns::target_kind_from_string(config.target), t);
        });
        return target_;
    }
    std::unique_ptr<ocp::OptimalityProblem> ocp_problem(double alpha) {
        return std::make_unique<ocp::OptimalityProblem>(
            space(),
            ocp::ControlConfig{fem::control_kind_from_string(config.control), alpha, ns::target_kind_from_string(config.target)},
            target());
    }

    void log(const std::string& msg) {
        if (options.quiet) return;
        std::lock_guard<std::mutex> g(log_mutex_);
        std::cerr << "[bifctl] " << msg << "\n";
    }

    // files written, relative paths
    std::vector<std::string> files;
    fs::path out;

    void write_text(const std::string& rel, const std::string& content) {
        fs::path p = out / rel;
        fs::create_directories(p.parent_path());
        std::ofstream f(p, std::ios::binary);
        if (!f) throw FormatError("cannot write " + p.string());
        f << content;
        files.push_back(rel);
    }
    void add_tree(const std::string& rel) {
        std::vector<std::string> found;
        for (const auto& e : fs::recursive_directory_iterator(out / rel))
            if (e.is_regular_file()) found.push_back(fs::relative(e.path(), out).generic_string());
        std::sort(found.begin(), found.end());
        files.insert(files.end(), found.begin(), found.end());
    }

private:
    std::once_flag space_once_, state_once_, target_once_;
    std::shared_ptr<const fem::TaylorHoodSpace> space_;
    std::unique_ptr<ns::StateProblem> state_;
    Vector target_;
    std::mutex log_mutex_;
};

// output departs from the symmetric noise level at the seed point
bool departs(const branch::Branch& b, double seed_mu, int sign) {
    for (const auto& e : b.entries)
        if (e.mu <= seed_mu + 1e-12) return e.converged && e.output * sign > 1e-3;
    return false;
}

template <class Problem>
std::vector<branch::Branch> compute_branches(const Problem& problem, const RunConfig& c, const std::vector<double>& mus,
                                             const std::vector<std::string>& wanted, Context& ctx,
                                             const std::string& tag) {
    std::vector<branch::Branch> out;
    std::map<std::string, std::size_t> index;
    // labels needed, including parents of mirrored / restarted branches
    std::set<std::string> need(wanted.begin(), wanted.end());
    for (auto it = c.branches.rbegin(); it != c.branches.rend(); ++it)
        if (need.count(it->label) && !it->from.empty()) need.insert(it->from);
    for (const auto& spec : c.branches) {
        if (!wanted.empty() && !need.count(spec.label)) continue;
        branch::ContinuationPlan plan;
        plan.mus = mus;
        plan.policy = branch::failure_policy_from_string(c.policy);
        plan.label = spec.label;
        branch::Branch b;
        if (spec.guess == "zero") {
            b = branch::run_continuation(problem, plan);
        } else if (spec.guess == "perturbed") {
            plan.guess = branch::GuessKind::PerturbedSymmetric;
            plan.seed_mu = spec.seed_mu;
            plan.sign = spec.sign;
            for (double d : spec.deltas) {
                plan.delta = d;
                b = branch::run_continuation(problem, plan);
                if (departs(b, spec.seed_mu, spec.sign)) break;
                ctx.log(tag + spec.label + ": delta " + short_fmt(d) + " returned to the symmetric branch");
            }
        } else {
            const branch::Branch& parent = out.at(index.at(spec.from));
            std::function<Vector(const Vector&)> t;
            if (spec.guess == "mirror") t = [&](const Vector& x) { return problem.mirror(x); };
            plan = branch::seed_non_natural(parent, plan, spec.seed_mu, t, spec.label);
            b = branch::run_continuation(problem, plan);
        }
        ctx.log(tag + spec.label + ": " + std::to_string(b.entries.size()) + " points");
        index[spec.label] = out.size();
        out.push_back(std::move(b));
    }
    return out;
}

struct Cell {
    double alpha = 0.0; // 0 for the uncontrolled system
    std::unique_ptr<ocp::OptimalityProblem> problem;
    std::vector<branch::Branch> branches;
};

std::string cell_label(const RunConfig& c, const Cell& cell, const std::string& label) {
    if (c.system == "state" || c.alphas.size() == 1) return label;
    return label + "@alpha=" + short_fmt(cell.alpha);
}

std::string dir_name(const std::string& label) {
    std::string s;
    for (char ch : label) s += std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' ? ch : '_';
    return s;
}

template <class F> void parallel_for(int n, int threads, F&& f) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(threads, n); ++t)
        pool.emplace_back([&] {
            for (int i; (i = next++) < n;) {
                try {
                    f(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

stability::SpectrumOptions spectrum_options(const EigsSpec& e) {
    stability::SpectrumOptions o;
    o.k = e.k;
    o.shifts = e.shifts;
    o.negate_state = e.sign == "negate";
    o.full_metric = e.metric == "full";
    return o;
}

branch::Branch restrict_branch(const branch::Branch& b, const std::vector<double>& mus) {
    if (mus.empty()) return b;
    branch::Branch r;
    r.label = b.label;
    for (const auto& e : b.entries)
        if (on_grid(mus, e.mu)) r.entries.push_back(e);
    return r;
}

json diagnostics_json(const stability::Diagnostics& d) {
    json j;
    j["shears"] = d.shears;
    j["inconclusive"] = d.inconclusive;
    j["mu_star"] = d.mu_star ? json(*d.mu_star) : json(nullptr);
    j["mu_star_star"] = d.mu_star_star ? json(*d.mu_star_star) : json(nullptr);
    j["cluster"] = d.cluster ? json(*d.cluster) : json(nullptr);
    j["min_gap"] = d.min_gap;
    j["crossings"] = d.crossings;
    return j;
}

class Pipeline {
public:
    Pipeline(const RunConfig& c, const RunOptions& o) : c_(c), ctx_(c, o) { ctx_.out = o.out; }

    RunSummary execute(Stage stage) {
        fs::create_directories(ctx_.out);
        switch (stage) {
        case Stage::Mesh: mesh(); break;
        case Stage::SolveState: solve_state(); break;
        case Stage::Branch: branches(); break;
        case Stage::Ocp:
            if (c_.system != "ocp") throw ConfigError("the ocp subcommand needs system = ocp");
            branches();
            break;
        case Stage::Eigs:
            branches();
            eigs();
            break;
        case Stage::RomOffline: rom(false); break;
        case Stage::RomOnline: rom(true); break;
        case Stage::Run:
            branches();
            if (c_.eigs.enabled) eigs();
            if (c_.rom.enabled) rom(true);
            break;
        case Stage::ExportSlices:
            branches();
            slices();
            break;
        }
        manifest(stage);
        RunSummary s;
        s.files = ctx_.files;
        s.results = results_;
        s.exit_code = exit_code_;
        return s;
    }

private:
    void mesh() {
        auto s = ctx_.space();
        std::ostringstream m;
        mesh::write_mesh(s->mesh(), m);
        ctx_.write_text("mesh.txt", m.str());
        ns::StateProblem st(s);
        results_["mesh"] = {{"preset", c_.mesh},
                            {"cells", s->n_cells()},
                            {"vertices", s->mesh().n_vertices()},
                            {"velocity_dofs", s->n_velocity()},
                            {"pressure_dofs", s->n_pressure()},
                            {"state_unknowns", st.size()}};
    }

    void solve_state() {
        const auto& st = ctx_.state();
        std::vector<double> mus;
        for (double m : c_.grid.mus())
            if (m > c_.solve_mu + 1e-12) mus.push_back(m);
        mus.push_back(c_.solve_mu);
        branch::ContinuationPlan plan;
        plan.mus = mus;
        plan.label = "solve";
        branch::Branch b = branch::run_continuation(st, plan);
        const auto& e = b.entries.back();
        std::ostringstream v, p;
        fem::write_field({fem::FieldRole::Velocity, st.full_velocity(e.x)}, v);
        fem::write_field({fem::FieldRole::Pressure, st.pressure(e.x)}, p);
        ctx_.write_text("state/velocity.field", v.str());
        ctx_.write_text("state/pressure.field", p.str());
        for (double x1 : c_.slice_x1) {
            std::ostringstream s;
            fem::write_slice_csv(st.space(), st.full_velocity(e.x), x1, 101, s);
            ctx_.write_text("state/slice_x" + short_fmt(x1) + ".csv", s.str());
        }
        results_["solve_state"] = {{"mu", e.mu},
                                   {"output", e.output},
                                   {"iterations", e.trace.iterations},
                                   {"residual", e.trace.residuals.empty() ? 0.0 : e.trace.residuals.back()}};
    }

    void branches() {
        if (computed_) return;
        computed_ = true;
        const auto mus = c_.grid.mus();
        if (c_.system == "state") {
            Cell cell;
            cell.branches = compute_branches(ctx_.state(), c_, mus, {}, ctx_, "");
            cells_.push_back(std::move(cell));
        } else {
            cells_.resize(c_.alphas.size());
            ctx_.target();
            parallel_for(static_cast<int>(c_.alphas.size()), ctx_.options.threads, [&](int i) {
                cells_[i].alpha = c_.alphas[i];
                cells_[i].problem = ctx_.ocp_problem(c_.alphas[i]);
                cells_[i].branches = compute_branches(*cells_[i].problem, c_, mus, {}, ctx_,
                                                      "alpha " + short_fmt(c_.alphas[i]) + " ");
            });
            if (c_.uncontrolled_costs) {
                uncontrolled_ = compute_branches(ctx_.state(), c_, mus, {}, ctx_, "uncontrolled ");
            }
        }
        // bifurcation.csv
        std::vector<branch::Branch> labelled;
        for (const auto& cell : cells_)
            for (const auto& b : cell.branches) {
                branch::Branch l = b;
                l.label = cell_label(c_, cell, b.label);
                labelled.push_back(std::move(l));
            }
        std::vector<const branch::Branch*> ptrs;
        for (const auto& b : labelled) ptrs.push_back(&b);
        std::ostringstream bif;
        branch::write_bifurcation_csv(ptrs, bif);
        ctx_.write_text("bifurcation.csv", bif.str());

        bool any = false;
        json archives = json::array();
        for (auto& cell : cells_)
            for (const auto& b : cell.branches) {
                any = any || std::any_of(b.entries.begin(), b.entries.end(), [](const auto& e) { return e.converged; });
                std::string rel = "branches/" + dir_name(cell_label(c_, cell, b.label));
                if (c_.system == "state")
                    branch::write_branch_archive((ctx_.out / rel).string(), b, ctx_.state());
                else
                    branch::write_branch_archive((ctx_.out / rel).string(), b, *cell.problem);
                ctx_.add_tree(rel);
                archives.push_back({{"dir", rel}, {"label", b.label}, {"alpha", cell.alpha}, {"system", c_.system}});
            }
        results_["archives"] = archives;
        if (!any) exit_code_ = 3;
        if (c_.system == "ocp") costs();
    }

    void costs() {
        std::ostringstream out;
        out << "alpha,mu,branch_label,J,tracking,penalty,below_machine_eps\n" << std::setprecision(17);
        auto wanted = [&](double mu) { return c_.table_mus.empty() || on_grid(c_.table_mus, mu); };
        if (c_.uncontrolled_costs) {
            const auto& st = ctx_.state();
            for (const auto& b : uncontrolled_)
                for (const auto& e : b.entries) {
                    if (!e.converged || !wanted(e.mu)) continue;
                    Vector zero = Vector::Zero(static_cast<int>(cells_.front().problem->control_dofs().size()));
                    ocp::CostReport r = ocp::evaluate_cost(*cells_.front().problem, st.full_velocity(e.x), zero);
                    out << 0 << "," << e.mu << ",uncontrolled-" << b.label << "," << r.J << "," << r.tracking << ","
                        << r.penalty << "," << (r.below_machine_epsilon ? 1 : 0) << "\n";
                }
        }
        for (const auto& cell : cells_)
            for (const auto& b : cell.branches)
                for (const auto& e : b.entries) {
                    if (!e.converged || !e.cost || !wanted(e.mu)) continue;
                    const auto& r = *e.cost;
                    out << cell.alpha << "," << e.mu << "," << b.label << "," << r.J << "," << r.tracking << ","
                        << r.penalty << "," << (r.below_machine_epsilon ? 1 : 0) << "\n";
                }
        ctx_.write_text("costs.csv", out.str());
    }

    void eigs() {
        const EigsSpec& e = c_.eigs;
        auto opts = spectrum_options(e);
        std::vector<double> mus;
        if (e.grid.n != 0 || !e.grid.values.empty()) mus = e.grid.mus();
        stability::SweepTable all;
        json diag = json::array();
        stability::Window window{e.window_lo, e.window_hi};
        stability::Window everything{-1e300, 1e300};
        double worst = 0.0;
        for (auto& cell : cells_)
            for (const auto& b : cell.branches) {
                if (!e.branches.empty() && std::find(e.branches.begin(), e.branches.end(), b.label) == e.branches.end())
                    continue;
                branch::Branch sub = restrict_branch(b, mus);
                sub.label = cell_label(c_, cell, b.label);
                std::vector<stability::ProblemKind> kinds;
                if (e.problem != "global") kinds.push_back(stability::ProblemKind::State);
                if (e.problem != "state") kinds.push_back(stability::ProblemKind::Global);
                for (auto kind : kinds) {
                    std::vector<stability::Spectrum> spectra;
                    stability::SweepTable t =
                        c_.system == "state"
                            ? stability::spectral_sweep(ctx_.state(), sub, window, opts, &spectra)
                            : stability::spectral_sweep(*cell.problem, sub, kind, window, opts, &spectra);
                    all.insert(all.end(), t.begin(), t.end());
                    for (const auto& s : spectra)
                        for (const auto& p : s.pairs) worst = std::max(worst, p.residual);
                    stability::Diagnostics d =
                        stability::classify_shears(stability::filter_window(spectra, everything, sub.label));
                    std::vector<double> ms, lead;
                    for (const auto& s : spectra) {
                        ms.push_back(s.mu);
                        lead.push_back(stability::leading_real(s));
                    }
                    json dj = diagnostics_json(d);
                    if (ms.size() >= 2) {
                        auto cp = branch::detect_critical_point(ms, lead);
                        dj["leading_crossing"] = cp.found ? json(cp.mu) : json(nullptr);
                    }
                    dj["branch_label"] = sub.label;
                    dj["alpha"] = cell.alpha;
                    dj["problem_kind"] = std::string(stability::to_string(kind));
                    ctx_.log("spectra " + sub.label + " " + std::string(stability::to_string(kind)) + ": " +
                             std::to_string(spectra.size()) + " values of mu");
                    diag.push_back(dj);
                }
            }
        std::ostringstream s;
        stability::write_sweep_csv(all, s);
        ctx_.write_text("spectra.csv", s.str());
        json dj = {{"max_residual", worst}, {"sweeps", diag}};
        ctx_.write_text("diagnostics.json", dj.dump(2) + "\n");
        results_["eigs"] = dj;
    }

    void rom(bool online) {
        const RomSpec& r = c_.rom;
        if (c_.system != "ocp") throw ConfigError("the reduced model needs system = ocp");
        if (!find_branch(c_, r.branch)) throw ConfigError("rom.branch '" + r.branch + "' is not a branch");
        const double alpha = r.alpha.value_or(c_.alphas.front());
        auto problem = ctx_.ocp_problem(alpha);
        const std::string tag = "rom alpha " + short_fmt(alpha) + " ";
        auto pick = [&](std::vector<branch::Branch>& v) -> branch::Branch& {
            for (auto& b : v)
                if (b.label == r.branch) return b;
            throw ConfigError("rom branch not computed");
        };
        auto offline = compute_branches(*problem, c_, branch::descending_grid(c_.grid.hi, c_.grid.lo, r.n_max),
                                        {r.branch}, ctx_, tag + "offline ");
        rom::SnapshotSet snaps = rom::collect_snapshots(*problem, pick(offline));
        if (snaps.count() < r.n_bar) throw ConfigError("fewer converged snapshots than rom.n_bar");
        rom::write_snapshot_archive((ctx_.out / "snapshots").string(), snaps);
        ctx_.add_tree("snapshots");
        rom::BasisOptions bo;
        bo.n = r.n_bar;
        bo.supremizers = r.supremizers;
        rom::ReducedBasis basis = rom::build_aggregated_basis(*problem, snaps, bo);
        std::ostringstream sv;
        sv << "var,index,sigma\n" << std::setprecision(17);
        const char* names[] = {"v", "p", "u", "w", "q", "ls", "la"};
        for (std::size_t b = 0; b < basis.singular_values.size(); ++b)
            for (std::size_t i = 0; i < basis.singular_values[b].size(); ++i)
                sv << names[b] << "," << i + 1 << "," << basis.singular_values[b][i] << "\n";
        ctx_.write_text("rom_singular_values.csv", sv.str());
        json rj = {{"alpha", alpha},
                   {"branch", r.branch},
                   {"snapshots", snaps.count()},
                   {"n_bar", r.n_bar},
                   {"dimension", basis.dimension(r.n_bar)},
                   {"dropped", basis.dropped}};
        if (!online) {
            results_["rom"] = rj;
            return;
        }
        rom::ReducedModel model(*problem, basis);
        bo.supremizers = false;
        rom::ReducedModel plain(*problem, rom::build_aggregated_basis(*problem, snaps, bo));
        std::ostringstream is;
        is << "N,inf_sup,inf_sup_no_supremizers\n" << std::setprecision(17);
        double min_beta = INFINITY, min_plain = INFINITY;
        for (int N = 1; N <= r.n_bar; ++N) {
            double a = model.inf_sup(N), b = plain.inf_sup(N);
            min_beta = std::min(min_beta, a);
            min_plain = std::min(min_plain, b);
            is << N << "," << a << "," << b << "\n";
        }
        ctx_.write_text("rom_infsup.csv", is.str());
        auto truth_set = compute_branches(*problem, c_, branch::descending_grid(c_.grid.hi, c_.grid.lo, r.online),
                                          {r.branch}, ctx_, tag + "online truth ");
        const branch::Branch& truth = pick(truth_set);
        rom::ErrorStudyOptions eo;
        eo.abs_fraction = r.abs_fraction;
        rom::ErrorStudy study = rom::error_study(model, truth, eo);
        std::ostringstream avg, bymu, onl;
        rom::write_average_errors_csv(study, avg);
        rom::write_mu_errors_csv(study, bymu);
        ctx_.write_text("rom_errors.csv", avg.str());
        ctx_.write_text("rom_errors_mu.csv", bymu.str());
        // online sweep at n_bar
        std::vector<double> mus;
        for (const auto& e : truth.entries)
            if (e.converged) mus.push_back(e.mu);
        auto sols = rom::rom_sweep(model, mus, r.n_bar, model.project(truth.entries.front().x, r.n_bar));
        onl << "mu,output,J,converged\n" << std::setprecision(17);
        for (const auto& s : sols) {
            Vector x = model.lift(s.y, r.n_bar);
            onl << s.mu << "," << problem->output(x) << "," << problem->cost(x).J << "," << (s.converged ? 1 : 0)
                << "\n";
        }
        ctx_.write_text("rom_online.csv", onl.str());
        rj["failures"] = study.failures;
        rj["min_inf_sup"] = min_beta;
        rj["min_inf_sup_no_supremizers"] = min_plain;
        for (const char* v : {"v", "p", "u", "w", "q"}) rj["avg_error_n_bar"][v] = rom::average_error(study, r.n_bar, v);
        results_["rom"] = rj;
    }

    void slices() {
        const auto& st = ctx_.state();
        for (const auto& cell : cells_)
            for (const auto& b : cell.branches)
                for (const auto& e : b.entries) {
                    if (!e.converged || !on_grid(c_.slice_mus, e.mu)) continue;
                    Vector v = c_.system == "state" ? st.full_velocity(e.x) : cell.problem->state_velocity(e.x);
                    std::string base = "slices/" + dir_name(cell_label(c_, cell, b.label)) + "_mu" + short_fmt(e.mu);
                    for (double x1 : c_.slice_x1) {
                        std::ostringstream s;
                        fem::write_slice_csv(st.space(), v, x1, 101, s);
                        ctx_.write_text(base + "_x" + short_fmt(x1) + ".csv", s.str());
                        if (c_.system == "ocp") {
                            std::ostringstream u;
                            fem::write_slice_csv(st.space(), cell.problem->control_field(e.x), x1, 101, u);
                            ctx_.write_text(base + "_control_x" + short_fmt(x1) + ".csv", u.str());
                        }
                    }
                }
    }

    void manifest(Stage stage) {
        static const char* names[] = {"mesh", "solve-state", "branch", "ocp", "eigs", "rom-offline", "rom-online",
                                      "run", "export-slices"};
        json m;
        m["version"] = kVersion;
        m["stage"] = names[static_cast<int>(stage)];
        m["config_hash"] = config_hash(c_);
        m["deterministic"] = ctx_.options.deterministic;
        m["threads"] = ctx_.options.threads;
        m["config"] = c_.raw.is_null() ? to_json(c_) : c_.raw;
        m["resolved"] = to_json(c_);
        m["results"] = results_;
        json files = json::object();
        std::vector<std::string> sorted = ctx_.files;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        for (const auto& f : sorted) files[f] = file_hash(ctx_.out / f);
        m["files"] = files;
        std::ofstream(ctx_.out / "manifest.json") << m.dump(2) << "\n";
    }

    const RunConfig& c_;
    Context ctx_;
    json results_ = json::object();
    bool computed_ = false;
    std::vector<Cell> cells_;
    std::vector<branch::Branch> uncontrolled_;
    int exit_code_ = 0;
};

} // namespace

RunSummary run(const RunConfig& config, Stage stage, const RunOptions& options) {
    config.validate();
    RunOptions o = options;
    if (o.deterministic) o.threads = 1;
    if (o.threads < 1) throw ConfigError("threads must be at least 1");
    Pipeline p(config, o);
    return p.execute(stage);
}

// ---------------------------------------------------------------- verify

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& p, std::string& header) {
    std::ifstream f(p);
    std::vector<std::vector<std::string>> rows;
    std::getline(f, header);
    std::string line;
    while (std::getline(f, line)) {
        std::vector<std::string> cols;
        std::stringstream s(line);
        std::string c;
        while (std::getline(s, c, ',')) cols.push_back(c);
        rows.push_back(cols);
    }
    return rows;
}

const std::map<std::string, std::string>& schemas() {
    static const std::map<std::string, std::string> m = {
        {"bifurcation.csv", "mu,output,J,branch_label"},
        {"costs.csv", "alpha,mu,branch_label,J,tracking,penalty,below_machine_eps"},
        {"spectra.csv", "mu,re,im,problem_kind,branch_label"},
        {"rom_errors.csv", "N,var,avg_rel_err"},
        {"rom_errors_mu.csv", "mu,var,err,err_kind"},
        {"rom_infsup.csv", "N,inf_sup,inf_sup_no_supremizers"},
        {"rom_online.csv", "mu,output,J,converged"},
        {"rom_singular_values.csv", "var,index,sigma"}};
    return m;
}

} // namespace

std::vector<Check> verify(const std::string& directory) {
    fs::path root(directory);
    std::ifstream mf(root / "manifest.json");
    if (!mf) throw InventoryError("missing " + (root / "manifest.json").string());
    json m;
    try {
        m = json::parse(mf);
    } catch (const json::exception& e) {
        throw InventoryError(std::string("manifest.json is not valid JSON: ") + e.what());
    }
    std::vector<Check> checks;
    for (auto it = m.at("files").begin(); it != m.at("files").end(); ++it)
        if (!fs::exists(root / it.key())) throw InventoryError("missing file " + (root / it.key()).string());
    bool all_ok = true;
    for (auto it = m.at("files").begin(); it != m.at("files").end(); ++it) {
        std::string h = file_hash(root / it.key());
        if (h != it.value().get<std::string>()) {
            checks.push_back({"checksum", false, it.key() + " does not match the manifest"});
            all_ok = false;
        }
    }
    if (all_ok) checks.push_back({"checksum", true, std::to_string(m.at("files").size()) + " files"});

    for (const auto& [name, header] : schemas()) {
        if (!m.at("files").contains(name)) continue;
        std::string h;
        read_csv(root / name, h);
        checks.push_back({"header " + name, h == header, h});
    }

    RunConfig c = parse_config(m.at("resolved").dump());
    Context ctx(c, RunOptions{directory, 1, true, true});
    ctx.out = root;

    // costs: identity and recomputation from the archived fields
    std::map<std::string, double> stored;
    if (m.at("files").contains("costs.csv")) {
        std::string h;
        auto rows = read_csv(root / "costs.csv", h);
        bool ok = true;
        std::string detail = std::to_string(rows.size()) + " rows";
        for (const auto& r : rows) {
            if (r.size() != 7) {
                ok = false;
                detail = "malformed row";
                break;
            }
            double J = std::stod(r[3]), t = std::stod(r[4]), p = std::stod(r[5]);
            if (J < t - 1e-15 * std::abs(t) || std::abs(J - t - p) > 1e-12 * std::max(1e-300, std::abs(J))) {
                ok = false;
                detail = "J inconsistent with tracking + penalty at alpha " + r[0] + ", mu " + r[1] + ", " + r[2];
            }
            stored[r[0] + "|" + r[1] + "|" + r[2]] = J;
        }
        checks.push_back({"costs identity", ok, detail});
    }
    if (m.contains("results") && m.at("results").contains("archives")) {
        double worst_res = 0.0, worst_cost = 0.0;
        int n = 0;
        std::string where;
        for (const auto& a : m.at("results").at("archives")) {
            branch::Branch b = branch::read_branch_archive((root / a.at("dir").get<std::string>()).string());
            const double alpha = a.at("alpha").get<double>();
            std::unique_ptr<ocp::OptimalityProblem> p;
            if (c.system == "ocp") p = ctx.ocp_problem(alpha);
            for (const auto& e : b.entries) {
                if (!e.converged) continue;
                ++n;
                double r = c.system == "ocp" ? p->residual(e.x, e.mu).norm() : ctx.state().residual(e.x, e.mu).norm();
                if (r > worst_res) {
                    worst_res = r;
                    where = a.at("dir").get<std::string>();
                }
                if (p) {
                    std::ostringstream a_s, mu_s;
                    a_s << std::setprecision(17) << alpha;
                    mu_s << std::setprecision(17) << e.mu;
                    auto it = stored.find(a_s.str() + "|" + mu_s.str() + "|" + b.label);
                    if (it != stored.end()) {
                        double J = p->cost(e.x).J;
                        worst_cost = std::max(worst_cost, std::abs(J - it->second) / std::max(std::abs(J), 1e-300));
                    }
                }
            }
        }
        checks.push_back({"residual norms", worst_res <= 1e-8,
                          std::to_string(n) + " solutions, max " + fmt(worst_res) + (where.empty() ? "" : " in " + where)});
        if (!stored.empty())
            checks.push_back({"costs recomputed from fields", worst_cost <= 1e-10, "max rel diff " + fmt(worst_cost)});
    }
    // mirror symmetry from the bifurcation table
    if (m.at("files").contains("bifurcation.csv")) {
        std::string h;
        auto rows = read_csv(root / "bifurcation.csv", h);
        std::map<std::string, std::map<std::string, double>> out;
        for (const auto& r : rows)
            if (r.size() == 4 && !r[1].empty()) out[r[3]][r[0]] = std::stod(r[1]);
        for (const auto& b : c.branches) {
            if (b.guess != "mirror") continue;
            for (const auto& [label, values] : out) {
                if (label.rfind(b.label, 0) != 0) continue;
                std::string parent = b.from + label.substr(b.label.size());
                double worst = 0.0;
                int pairs = 0;
                for (const auto& [mu, o] : values) {
                    auto it = out[parent].find(mu);
                    if (it == out[parent].end()) continue;
                    ++pairs;
                    worst = std::max(worst, std::abs(o + it->second) / std::max(std::abs(it->second), 1e-12));
                }
                checks.push_back({"mirror symmetry " + label, pairs > 0 && worst <= 1e-6,
                                  std::to_string(pairs) + " pairs, max rel " + fmt(worst)});
            }
        }
    }
    // reduced basis orthonormality rebuilt from the stored snapshots
    if (fs::exists(root / "snapshots" / "manifest.json") && c.system == "ocp") {
        rom::SnapshotSet s = rom::read_snapshot_archive((root / "snapshots").string());
        auto p = ctx.ocp_problem(c.rom.alpha.value_or(c.alphas.front()));
        rom::BasisOptions bo;
        bo.n = std::min(c.rom.n_bar, s.count());
        rom::ReducedBasis basis = rom::build_aggregated_basis(*p, s, bo);
        rom::InnerProducts ip = rom::rom_inner_products(*p);
        double worst = 0.0;
        for (ocp::Block blk : {ocp::Block::StateVelocity, ocp::Block::StatePressure, ocp::Block::Control}) {
            const rom::Matrix& z = basis.of(blk);
            rom::Matrix mz(z.rows(), z.cols());
            for (int j = 0; j < z.cols(); ++j) mz.col(j) = sparse::multiply(ip.of(blk), Vector(z.col(j)));
            rom::Matrix g = z.transpose() * mz - rom::Matrix::Identity(z.cols(), z.cols());
            worst = std::max(worst, g.cwiseAbs().maxCoeff());
        }
        checks.push_back({"basis orthonormality", worst <= 1e-10, "max deviation " + fmt(worst)});
    }
    return checks;
}

void print_checks(const std::vector<Check>& checks, std::ostream& out) {
    for (const auto& c : checks) out << (c.pass ? "PASS  " : "FAIL  ") << c.name << "  (" << c.detail << ")\n";
}

} // namespace bifctl::runner
