#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "bdre/commands.hpp"
#include "bdre/config.hpp"
#include "bdre/convergence.hpp"
#include "bdre/error.hpp"
#include "bdre/stats.hpp"

namespace py = pybind11;
using namespace bdre;

namespace {

InvariantMeasureJump jump_measure(const RunConfig& cfg, std::optional<std::size_t> n_max) {
    return invariant_measure_jump(cfg.build_model(), cfg.build_jump_env(), n_max.value_or(cfg.analysis.n_max));
}

}  // namespace

PYBIND11_MODULE(_bdre, m) {
    m.attr("__version__") = std::string(kVersion);

    py::register_exception<Error>(m, "BdreError");

    py::class_<RunConfig>(m, "Config")
        .def_property_readonly("model", [](const RunConfig& c) { return c.model_name; })
        .def_property_readonly("is_jump", &RunConfig::is_jump)
        .def_property_readonly("seed", [](const RunConfig& c) { return c.sim.seed; })
        .def_property_readonly("n_max", [](const RunConfig& c) { return c.analysis.n_max; })
        .def_property_readonly("source", [](const RunConfig& c) { return c.source_text; });

    m.def("parse_config", &parse_config, py::arg("text"));
    m.def("load_config", &load_config, py::arg("path"));

    py::class_<CheckLine>(m, "Check")
        .def_readonly("name", &CheckLine::name)
        .def_readonly("passed", &CheckLine::passed)
        .def_readonly("detail", &CheckLine::detail);

    py::class_<CommandResult>(m, "CommandResult")
        .def_readonly("command", &CommandResult::command)
        .def_readonly("out_dir", &CommandResult::out_dir)
        .def_readonly("seed", &CommandResult::seed)
        .def_readonly("checks", &CommandResult::checks)
        .def_readonly("notes", &CommandResult::notes)
        .def_readonly("files", &CommandResult::files)
        .def_property_readonly("passed", &CommandResult::passed);

    m.def(
        "run_command",
        [](const std::string& command, const RunConfig& cfg, std::optional<std::filesystem::path> out,
           std::optional<std::uint64_t> seed, std::size_t threads) {
            CommandOptions opt;
            opt.out_dir = std::move(out);
            opt.seed = seed;
            opt.threads = threads;
            py::gil_scoped_release release;
            return run_command(command, cfg, opt);
        },
        py::arg("command"), py::arg("config"), py::arg("out") = py::none(), py::arg("seed") = py::none(),
        py::arg("threads") = 1);
    m.def("command_names", &command_names);

    // pi(n, z) as nested lists indexed [n][z]
    m.def(
        "invariant_jump",
        [](const RunConfig& cfg, std::optional<std::size_t> n_max) {
            const InvariantMeasureJump pi = jump_measure(cfg, n_max);
            std::vector<std::vector<double>> rows(pi.n_max + 1, std::vector<double>(pi.env_size));
            for (std::size_t n = 0; n <= pi.n_max; ++n)
                for (std::size_t z = 0; z < pi.env_size; ++z) rows[n][z] = pi.pi(n, z);
            return py::dict(py::arg("pi") = rows, py::arg("xi") = pi.xi(),
                            py::arg("v") = std::vector<double>(pi.v.begin(), pi.v.end()),
                            py::arg("truncation_residual") = pi.truncation_residual);
        },
        py::arg("config"), py::arg("n_max") = py::none());
    m.def(
        "balance_residual",
        [](const RunConfig& cfg, std::optional<std::size_t> n_max) {
            const std::size_t top = n_max.value_or(cfg.analysis.n_max);
            return verify_balance(build_joint_generator(cfg.build_model(), cfg.build_jump_env(), top),
                                  jump_measure(cfg, top));
        },
        py::arg("config"), py::arg("n_max") = py::none());
    m.def(
        "xi_diffusive",
        [](const RunConfig& cfg) {
            const DiffusiveExample ex = cfg.build_diffusive();
            return compute_xi_diffusive(cfg.build_model(), ex.law).xi;
        },
        py::arg("config"));

    m.def("xi_rbm_arrival_closed_form", &xi_rbm_arrival_closed_form, py::arg("c"), py::arg("sigma"), py::arg("mu"));
    m.def("g", &g_pgf, py::arg("s"), py::arg("p_bar"));
    m.def("G", &G_mgf, py::arg("u"), py::arg("p_bar"), py::arg("q_bar"));
    m.def("theta", &theta, py::arg("alpha"), py::arg("beta"), py::arg("gamma"), py::arg("a"));
    m.def("u_star", [](double p, double q) { return u_star(p, q).u_star; }, py::arg("p_bar"), py::arg("q_bar"));
    m.def("busy_period_mgf_series", &busy_period_mgf_series, py::arg("lambda_bar"), py::arg("mu_bar"), py::arg("u"));
    m.def(
        "tv_distance",
        [](const std::vector<double>& p, const std::vector<double>& q) { return tv_distance(p, q); }, py::arg("p"),
        py::arg("q"));
}
