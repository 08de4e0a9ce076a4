// Python bindings: sparse helpers, POD, single solves and the pipeline runner.

#include "bifctl/errors.hpp"
#include "bifctl/lu.hpp"
#include "bifctl/mesh.hpp"
#include "bifctl/ns_state.hpp"
#include "bifctl/rom.hpp"
#include "bifctl/runner.hpp"
#include "bifctl/stability.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace bifctl;

namespace {

// (data, indices, indptr) in CSR order, as scipy.sparse.csr_matrix stores them
CsrMatrix csr_from_arrays(const std::vector<double>& data, const std::vector<int>& indices,
                          const std::vector<int>& indptr, std::pair<int, int> shape) {
    auto [rows, cols] = shape;
    if (static_cast<int>(indptr.size()) != rows + 1 || data.size() != indices.size() ||
        indptr.back() != static_cast<int>(data.size()))
        throw StructuralError("csr arrays do not match the shape");
    std::vector<sparse::Triplet> t;
    t.reserve(data.size());
    for (int r = 0; r < rows; ++r)
        for (int k = indptr[r]; k < indptr[r + 1]; ++k) t.push_back({r, indices[k], data[k]});
    return sparse::csr_from_triplets(rows, cols, t);
}

py::object to_python(const runner::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Bifurcation and optimal flow control in a channel";
    m.attr("__version__") = runner::kVersion;

    py::register_exception<StructuralError>(m, "StructuralError", PyExc_ValueError);
    py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
    py::register_exception<SingularMatrixError>(m, "SingularMatrixError", PyExc_ArithmeticError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
    static py::exception<runner::ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const runner::ConfigError& e) {
            std::string msg = e.line() > 0 ? "line " + std::to_string(e.line()) + ": " + e.what() : e.what();
            py::set_error(config_error, msg.c_str());
        }
    });
    py::register_exception<runner::InventoryError>(m, "InventoryError", PyExc_FileNotFoundError);

    m.def(
        "lu_solve",
        [](const std::vector<double>& data, const std::vector<int>& indices, const std::vector<int>& indptr,
           std::pair<int, int> shape, const Vector& b) { return sparse::lu_solve(csr_from_arrays(data, indices, indptr, shape), b); },
        py::arg("data"), py::arg("indices"), py::arg("indptr"), py::arg("shape"), py::arg("b"),
        "Solve A x = b for a square CSR matrix given as scipy-style arrays.");

    m.def(
        "pod",
        [](const Eigen::MatrixXd& snapshots, int n, std::optional<Eigen::VectorXd> weights, double tol) {
            CsrMatrix metric = weights ? sparse::diagonal(*weights) : sparse::identity(static_cast<int>(snapshots.rows()));
            rom::PodResult r = rom::pod(snapshots, metric, n, tol);
            return py::make_tuple(r.modes, r.singular_values, r.rank);
        },
        py::arg("snapshots"), py::arg("n"), py::arg("weights") = py::none(), py::arg("rank_tolerance") = 1e-12,
        "POD of snapshot columns in a diagonal metric; returns (modes, singular_values, rank).");

    m.def(
        "mesh_info",
        [](const std::string& preset) {
            auto mesh = mesh::build_channel_mesh(mesh::MeshSpec::preset(preset));
            auto space = std::make_shared<const fem::TaylorHoodSpace>(mesh);
            ns::StateProblem st(space);
            py::dict d;
            d["cells"] = space->n_cells();
            d["vertices"] = mesh.n_vertices();
            d["velocity_dofs"] = space->n_velocity();
            d["pressure_dofs"] = space->n_pressure();
            d["state_unknowns"] = st.size();
            d["area"] = mesh.area();
            return d;
        },
        py::arg("preset") = "coarse");

    m.def(
        "solve_state",
        [](double mu, const std::string& preset, double start) {
            auto space = std::make_shared<const fem::TaylorHoodSpace>(
                mesh::build_channel_mesh(mesh::MeshSpec::preset(preset)));
            ns::StateProblem st(space);
            Vector x = st.zero_guess();
            ns::SteadySolution s;
            // continuation in steps of at most 0.1 from the start viscosity
            int steps = std::max(1, static_cast<int>(std::ceil((start - mu) / 0.1 - 1e-9)));
            for (int i = 0; i <= steps; ++i) {
                double m = start + (mu - start) * i / steps;
                s = ns::solve_steady_ns(st, m, x);
                x = s.x;
            }
            auto eig = stability::state_eigs(st, st.full_velocity(x), mu);
            py::dict d;
            d["mu"] = mu;
            d["output"] = s.output;
            d["iterations"] = s.trace.iterations;
            d["converged"] = s.trace.converged;
            d["velocity"] = st.full_velocity(x);
            d["pressure"] = st.pressure(x);
            d["leading_eigenvalue"] = stability::leading_real(eig);
            return d;
        },
        py::arg("mu"), py::arg("preset") = "coarse", py::arg("start") = 2.0,
        "Symmetric steady state at mu by continuation from start.");

    m.def("preset_names", &runner::preset_names);
    m.def(
        "resolve_config", [](const std::string& text) { return to_python(runner::resolved_json(runner::parse_config(text))); },
        py::arg("text"), "Config with the preset merged and defaults filled in.");
    m.def("config_hash", [](const std::string& text) { return runner::config_hash(runner::parse_config(text)); },
          py::arg("text"));
    m.def("fnv1a_hex", [](const py::bytes& b) { return runner::fnv1a_hex(std::string(b)); }, py::arg("data"));

    m.def(
        "run",
        [](const std::string& text, const std::string& stage, const std::string& out, int threads, bool deterministic) {
            runner::RunConfig c = runner::parse_config(text);
            runner::RunSummary s;
            {
                py::gil_scoped_release release;
                s = runner::run(c, runner::stage_from_string(stage), {out, threads, deterministic, true});
            }
            py::dict d;
            d["exit_code"] = s.exit_code;
            d["files"] = s.files;
            d["results"] = to_python(s.results);
            return d;
        },
        py::arg("config"), py::arg("stage") = "run", py::arg("out") = "out", py::arg("threads") = 1,
        py::arg("deterministic") = false, "Run a pipeline stage from a JSON config string.");

    m.def(
        "verify",
        [](const std::string& dir) {
            std::vector<std::tuple<std::string, bool, std::string>> out;
            for (const auto& c : runner::verify(dir)) out.emplace_back(c.name, c.pass, c.detail);
            return out;
        },
        py::arg("directory"), "Re-check a run directory; list of (name, passed, detail).");
}
