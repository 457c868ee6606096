#include "rdms/bench.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace rdms;

namespace {

bench::ExperimentConfig config_from_json(const std::string& text) {
  return bench::parse_config(nlohmann::json::parse(text));
}

/// Thin owner of a prepared problem so Python can step through schemes.
class PyProblem {
 public:
  explicit PyProblem(const std::string& config_json)
      : cfg_(config_from_json(config_json)), problem_(bench::build_problem(cfg_)) {}

  std::size_t cell_count() const { return problem_.grid.cell_count(); }
  std::size_t inclusion_cells() const { return problem_.subdomains.count(grid::Label::inclusion); }
  std::pair<std::size_t, std::size_t> shape() const { return {problem_.grid.nx(), problem_.grid.ny()}; }

  std::vector<int> labels() const {
    std::vector<int> out;
    for (auto l : problem_.subdomains.labels) out.push_back(static_cast<int>(l));
    return out;
  }
  linalg::Vector volumes() const { return problem_.ops.volumes; }

  std::vector<linalg::Vector> initial() const { return problem_.initial_state(cfg_.initial).u; }

  std::vector<linalg::Vector> step(const std::string& scheme, std::vector<linalg::Vector> u) const {
    fvm::SpeciesState state{std::move(u)};
    state.validate(problem_.grid.cell_count());
    switch (bench::parse_scheme(scheme)) {
      case bench::SchemeKind::si:
        return stepping::step_si(state, problem_.ops, problem_.coeff, cfg_.stepping).u;
      case bench::SchemeKind::fi:
        return stepping::step_fi(state, problem_.ops, problem_.coeff, cfg_.stepping).state.u;
      case bench::SchemeKind::ms: break;
    }
    throw std::invalid_argument("step: use solve() for the multiscale scheme");
  }

  py::dict solve(const std::string& scheme) const {
    bench::ExperimentConfig cfg = cfg_;
    cfg.scheme = bench::parse_scheme(scheme);
    const auto report = bench::run_scheme(problem_, cfg);
    return summary(report);
  }

  std::pair<std::optional<double>, std::optional<double>> averages(const linalg::Vector& u) const {
    const auto a = bench::compute_averages(u, problem_.grid, problem_.subdomains);
    return {a.background, a.inclusion};
  }

  double relative_l2(const linalg::Vector& u, const linalg::Vector& ref) const {
    return bench::compute_relative_l2(u, ref, problem_.grid);
  }

  static py::dict summary(const bench::ExperimentReport& r) {
    py::dict d;
    d["scheme"] = bench::to_string(r.scheme);
    d["basis_count"] = r.basis_count;
    d["dof"] = r.dof;
    d["tau"] = r.tau;
    d["steps"] = r.steps;
    d["newton_iterations"] = r.newton_iterations;
    d["linear_iterations"] = r.linear_iterations;
    d["offline_time"] = r.offline_time;
    d["online_time"] = r.online_time;
    d["final_state"] = r.final_state.u;
    if (r.errors) d["errors"] = *r.errors;
    py::list rows;
    for (const auto& row : r.averages) {
      py::list species;
      for (const auto& a : row.species) species.append(py::make_tuple(a.background, a.inclusion));
      rows.append(py::make_tuple(row.step, row.time, species));
    }
    d["averages"] = rows;
    return d;
  }

 private:
  bench::ExperimentConfig cfg_;
  bench::Problem problem_;
};

py::list preset(const std::string& name) {
  py::list out;
  for (const auto& s : bench::preset_species(name)) {
    py::dict d;
    d["eps"] = py::make_tuple(s.diffusion.background, s.diffusion.inclusion);
    d["r"] = py::make_tuple(s.growth.background, s.growth.inclusion);
    py::list alpha;
    for (const auto& a : s.competition) alpha.append(py::make_tuple(a.background, a.inclusion));
    d["alpha"] = alpha;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_rdms, m) {
  m.doc() = "Reaction-diffusion competition solvers: TPFA finite volumes, FI/SI time stepping, GMsFEM";

  py::register_exception<linalg::SolveError>(m, "SolveError", PyExc_RuntimeError);

  m.def("harmonic_average", &fvm::harmonic_average, py::arg("a"), py::arg("b"));
  m.def(
      "reaction",
      [](std::vector<double> u, std::vector<double> growth, std::vector<double> competition) {
        fvm::LocalReaction rc{u.size(), std::move(growth), std::move(competition)};
        if (rc.growth.size() != rc.species || rc.competition.size() != rc.species * rc.species) {
          throw std::invalid_argument("reaction: need L growth rates and an L*L competition matrix");
        }
        std::vector<double> out;
        for (std::size_t k = 0; k < rc.species; ++k) out.push_back(fvm::eval_reaction(u, rc, k));
        return out;
      },
      py::arg("u"), py::arg("growth"), py::arg("competition"),
      "R^k at one point; `competition` is row-major alpha^{kl}.");
  m.def(
      "ode_reference",
      [](std::vector<double> growth, std::vector<double> competition, std::vector<double> u0,
         double t_max, int n_steps) {
        fvm::LocalReaction rc{u0.size(), std::move(growth), std::move(competition)};
        return stepping::solve_ode_reference(rc, u0, t_max, n_steps);
      },
      py::arg("growth"), py::arg("competition"), py::arg("u0"), py::arg("t_max"), py::arg("n_steps"));
  m.def("preset", &preset, py::arg("name"));
  m.def(
      "structured_grid_faces",
      [](std::size_t nx, std::size_t ny, double lx, double ly) {
        return grid::build_structured_grid(nx, ny, lx, ly).faces().size();
      },
      py::arg("nx"), py::arg("ny"), py::arg("lx") = 1.0, py::arg("ly") = 1.0);
  m.def(
      "_run",
      [](const std::string& config_json) {
        return PyProblem::summary(bench::run_experiment(config_from_json(config_json)));
      },
      py::arg("config_json"));

  py::class_<PyProblem>(m, "_Problem")
      .def(py::init<const std::string&>(), py::arg("config_json"))
      .def_property_readonly("cell_count", &PyProblem::cell_count)
      .def_property_readonly("inclusion_cells", &PyProblem::inclusion_cells)
      .def_property_readonly("shape", &PyProblem::shape)
      .def_property_readonly("labels", &PyProblem::labels)
      .def_property_readonly("volumes", &PyProblem::volumes)
      .def("initial", &PyProblem::initial)
      .def("step", &PyProblem::step, py::arg("scheme"), py::arg("u"))
      .def("solve", &PyProblem::solve, py::arg("scheme"))
      .def("averages", &PyProblem::averages, py::arg("u"))
      .def("relative_l2", &PyProblem::relative_l2, py::arg("u"), py::arg("reference"));
}
