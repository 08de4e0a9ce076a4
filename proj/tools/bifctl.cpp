// bifctl: command line front end for the bifurcation / optimal control pipeline.

#include "bifctl/errors.hpp"
#include "bifctl/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace rn = bifctl::runner;

namespace {

struct Common {
    std::string config;
    std::string preset;
    std::string out = "out";
    int threads = 1;
    bool deterministic = false;
    bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON config file");
    app->add_option("--preset", c.preset, "named preset")->check(CLI::IsMember(rn::preset_names()));
    app->add_option("--out", c.out, "output directory");
    app->add_option("--threads", c.threads, "worker threads over alpha values")->check(CLI::PositiveNumber);
    app->add_flag("--deterministic", c.deterministic, "single thread, fixed ordering");
    app->add_flag("-q,--quiet", c.quiet, "no progress messages");
}

int execute(const std::string& stage, const Common& c) {
    rn::RunConfig config;
    if (!c.config.empty() && !c.preset.empty()) throw rn::ConfigError("give either --config or --preset, not both");
    if (!c.config.empty())
        config = rn::load_config(c.config);
    else if (!c.preset.empty())
        config = rn::config_from_preset(c.preset);
    else
        config = rn::parse_config("{}");
    rn::RunSummary s = rn::run(config, rn::stage_from_string(stage), {c.out, c.threads, c.deterministic, c.quiet});
    if (!c.quiet) std::cerr << "[bifctl] wrote " << s.files.size() << " files to " << c.out << "\n";
    if (s.exit_code != 0) std::cerr << "bifctl: no converged solution\n";
    return s.exit_code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bifurcation analysis and optimal flow control in a channel"};
    app.set_version_flag("--version", rn::kVersion);
    app.require_subcommand(1);

    const std::vector<std::pair<std::string, std::string>> stages = {
        {"mesh", "build the mesh and report sizes"},
        {"solve-state", "steady Navier-Stokes solve at solve_mu"},
        {"branch", "continuation of every configured branch"},
        {"ocp", "optimal control branches and costs"},
        {"eigs", "branches plus spectra and diagnostics"},
        {"rom-offline", "snapshots, POD and reduced basis"},
        {"rom-online", "reduced model sweeps and error study"},
        {"run", "everything enabled in the config"},
        {"export-slices", "branches plus velocity and control slices"}};
    Common common;
    std::string chosen;
    for (const auto& [name, help] : stages) {
        CLI::App* sub = app.add_subcommand(name, help);
        add_common(sub, common);
        sub->callback([&chosen, n = name] { chosen = n; });
    }
    std::string dir;
    CLI::App* verify = app.add_subcommand("verify", "re-check a run directory");
    verify->add_option("dir", dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed()) {
            auto checks = rn::verify(dir);
            rn::print_checks(checks, std::cout);
            for (const auto& c : checks)
                if (!c.pass) return 1;
            return 0;
        }
        return execute(chosen, common);
    } catch (const rn::ConfigError& e) {
        std::cerr << "bifctl: config error";
        if (e.line() > 0) std::cerr << " at line " << e.line();
        std::cerr << ": " << e.what() << "\n";
        return 2;
    } catch (const rn::InventoryError& e) {
        std::cerr << "bifctl: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "bifctl: " << e.what() << "\n";
        return 5;
    }
}
