#include "rdms/bench.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace rdms::bench {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

fvm::RegionValues region(double background, double inclusion) { return {background, inclusion}; }

/// Runs `fn`, prefixing any exception with the stage name.
template <class F>
auto staged(const char* stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("stage '") + stage + "': " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.is_relative() && !base.empty()) return base / p;
  return p;
}

fvm::RegionValues parse_region(const json& j, const char* key) {
  if (j.is_number()) {
    const double v = j.get<double>();
    return {v, v};
  }
  if (!j.is_array() || j.size() != 2) {
    throw std::invalid_argument(std::string("config: '") + key +
                                "' must be a number or a [background, inclusion] pair");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

template <class T>
std::pair<T, T> parse_pair(const json& j, const char* key) {
  if (!j.is_array() || j.size() != 2) {
    throw std::invalid_argument(std::string("config: '") + key + "' must be a two-element array");
  }
  return {j[0].get<T>(), j[1].get<T>()};
}

linalg::LinearSolveSpec parse_solver(const json& j, linalg::LinearSolveSpec spec) {
  if (j.contains("method")) {
    const auto m = j["method"].get<std::string>();
    if (m == "krylov") spec.method = linalg::Method::krylov;
    else if (m == "direct") spec.method = linalg::Method::direct;
    else throw std::invalid_argument("config: unknown solver method '" + m + "'");
  }
  if (j.contains("preconditioner")) {
    const auto p = j["preconditioner"].get<std::string>();
    if (p == "none") spec.preconditioner = linalg::Preconditioner::none;
    else if (p == "jacobi") spec.preconditioner = linalg::Preconditioner::jacobi;
    else if (p == "incomplete") spec.preconditioner = linalg::Preconditioner::incomplete;
    else if (p == "frozen") spec.preconditioner = linalg::Preconditioner::frozen;
    else throw std::invalid_argument("config: unknown preconditioner '" + p + "'");
  }
  if (j.contains("rel_tol")) spec.rel_tol = j["rel_tol"].get<double>();
  if (j.contains("max_iters")) spec.max_iters = j["max_iters"].get<int>();
  if (j.contains("restart")) spec.gmres_restart = j["restart"].get<int>();
  spec.validate();
  return spec;
}

std::string format_optional(const std::optional<double>& v) {
  if (!v) return "";
  return fmt::format("{:.17g}", *v);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

AverageRow average_row(int step, double time, const fvm::SpeciesState& state, const Problem& problem) {
  AverageRow row{step, time, {}};
  for (const auto& u : state.u) row.species.push_back(compute_averages(u, problem.grid, problem.subdomains));
  return row;
}

std::vector<double> errors_against(const fvm::SpeciesState& state, const fvm::SpeciesState& ref,
                                   const grid::FineGrid& grid) {
  if (ref.species_count() != state.species_count()) {
    throw std::invalid_argument("reference has " + std::to_string(ref.species_count()) +
                                " species, run has " + std::to_string(state.species_count()));
  }
  std::vector<double> e;
  for (std::size_t k = 0; k < state.species_count(); ++k) {
    e.push_back(compute_relative_l2(state.u[k], ref.u[k], grid));
  }
  return e;
}

std::string errors_header(std::size_t species) {
  std::string h = "scheme,M,tau";
  for (std::size_t k = 1; k <= species; ++k) h += fmt::format(",e_{}_pct", k);
  h += ",DOF,newton_iterations,linear_iterations,offline_time,online_time\n";
  return h;
}

std::string errors_line(const ExperimentReport& r, std::size_t species) {
  std::string line = fmt::format("{},{},{:.17g}", to_string(r.scheme),
                                 r.scheme == SchemeKind::ms ? std::to_string(r.basis_count) : "",
                                 r.tau);
  for (std::size_t k = 0; k < species; ++k) {
    line += ",";
    if (r.errors) line += fmt::format("{:.17g}", 100.0 * (*r.errors)[k]);
  }
  std::size_t dof = 0;
  for (auto d : r.dof) dof += d;
  if (r.scheme == SchemeKind::fi && !r.dof.empty()) dof = r.dof.front();
  line += fmt::format(",{},{},{},{:.6f},{:.6f}\n", dof, r.newton_iterations, r.linear_iterations,
                      r.offline_time, r.online_time);
  return line;
}

std::string averages_csv(const ExperimentReport& r) {
  const std::size_t species = r.final_state.species_count();
  std::string text = "step,time";
  for (std::size_t k = 1; k <= species; ++k) text += fmt::format(",u{}_m,u{}_c", k, k);
  text += "\n";
  for (const auto& row : r.averages) {
    text += fmt::format("{},{:.17g}", row.step, row.time);
    for (const auto& a : row.species) {
      text += "," + format_optional(a.background) + "," + format_optional(a.inclusion);
    }
    text += "\n";
  }
  return text;
}

fvm::SpeciesState state_from_json(const json& fields) {
  fvm::SpeciesState state;
  for (const auto& f : fields) {
    const auto values = f.get<std::vector<double>>();
    state.u.emplace_back(Eigen::Map<const linalg::Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
  }
  return state;
}

}  // namespace

std::vector<grid::Circle> GeometryConfig::resolve_circles() const {
  if (circles) return *circles;
  return grid::random_inclusions(seed, lx, ly, layout);
}

std::string to_string(SchemeKind scheme) {
  switch (scheme) {
    case SchemeKind::fi: return "FI";
    case SchemeKind::si: return "SI";
    case SchemeKind::ms: return "MS";
  }
  return "?";
}

SchemeKind parse_scheme(const std::string& name) {
  std::string upper = name;
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  if (upper == "FI") return SchemeKind::fi;
  if (upper == "SI") return SchemeKind::si;
  if (upper == "MS") return SchemeKind::ms;
  throw std::invalid_argument("unknown scheme '" + name + "' (expected FI, SI or MS)");
}

std::vector<fvm::SpeciesCoefficients> preset_species(const std::string& preset) {
  if (preset.size() != 2 || (preset[0] != '1' && preset[0] != '2') ||
      (preset[1] != 'a' && preset[1] != 'b')) {
    throw std::invalid_argument("unknown preset '" + preset + "' (expected 1a, 1b, 2a or 2b)");
  }
  const bool small = preset[1] == 'a';
  const bool test1 = preset[0] == '1';
  std::vector<fvm::SpeciesCoefficients> s(2);
  s[0].diffusion = small ? region(1e-4, 1e-2) : region(1e-3, 1e-1);
  s[1].diffusion = small ? region(1e-2, 1e-4) : region(1e-1, 1e-3);
  s[0].growth = region(0.15, 0.1);
  s[1].growth = region(0.1, 0.15);
  s[0].competition = {region(0.0, 0.0), test1 ? region(0.055, 0.05) : region(0.15, 0.01)};
  s[1].competition = {test1 ? region(0.05, 0.055) : region(0.01, 0.075), region(0.0, 0.0)};
  return s;
}

double preset_t_max(const std::string& preset) {
  preset_species(preset);
  return preset[0] == '1' ? 50.0 : 150.0;
}

void ExperimentConfig::finalize() {
  if (n_steps < 0) throw std::invalid_argument("config: n_steps must be >= 0");
  if (tau_multiplier < 1) throw std::invalid_argument("config: tau_multiplier must be >= 1");
  if (n_steps % tau_multiplier != 0) {
    throw std::invalid_argument("config: n_steps must be divisible by tau_multiplier");
  }
  if (!(t_max > 0.0)) throw std::invalid_argument("config: t_max must be positive");
  if (species.empty()) throw std::invalid_argument("config: no species (give a preset or 'species')");
  if (initial.empty()) initial.assign(species.size(), 0.5);
  if (initial.size() != species.size()) {
    throw std::invalid_argument("config: 'initial' needs one value per species");
  }
  if (scheme == SchemeKind::ms && basis_count == 0) {
    throw std::invalid_argument("config: basis count must be >= 1");
  }
  stepping.tau = tau();
  stepping.n_steps = steps();
  stepping.validate();
  for (int s : snapshot_steps) {
    if (s < 0 || s > steps()) {
      throw std::invalid_argument("config: snapshot step " + std::to_string(s) + " outside [0, " +
                                  std::to_string(steps()) + "]");
    }
  }
}

ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  static const std::vector<std::string> known = {
      "domain", "fine",      "coarse",  "circles",  "seed",      "inclusions",     "preset",
      "species", "scheme",   "basis",   "t_max",    "n_steps",   "tau_multiplier", "initial",
      "newton", "solver",    "output",  "snapshots", "reference", "offline_artifact"};
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }

  ExperimentConfig cfg;
  auto& g = cfg.geometry;
  if (j.contains("domain")) std::tie(g.lx, g.ly) = parse_pair<double>(j["domain"], "domain");
  if (j.contains("fine")) std::tie(g.nx, g.ny) = parse_pair<std::size_t>(j["fine"], "fine");
  if (j.contains("coarse")) std::tie(g.kx, g.ky) = parse_pair<std::size_t>(j["coarse"], "coarse");
  if (j.contains("seed")) g.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("circles")) {
    std::vector<grid::Circle> circles;
    for (const auto& c : j["circles"]) {
      if (!c.is_array() || c.size() != 3) throw std::invalid_argument("config: circles are [cx, cy, r]");
      circles.push_back({{c[0].get<double>(), c[1].get<double>()}, c[2].get<double>()});
    }
    g.circles = std::move(circles);
  }
  if (j.contains("inclusions")) {
    const auto& inc = j["inclusions"];
    g.layout.count = inc.value("count", g.layout.count);
    g.layout.r_min = inc.value("r_min", g.layout.r_min);
    g.layout.r_max = inc.value("r_max", g.layout.r_max);
    g.layout.min_gap = inc.value("min_gap", g.layout.min_gap);
  }

  if (j.contains("preset")) {
    cfg.preset = j["preset"].get<std::string>();
    cfg.species = preset_species(cfg.preset);
    cfg.t_max = preset_t_max(cfg.preset);
  }
  if (j.contains("species")) {
    const auto& list = j["species"];
    if (!list.is_array()) throw std::invalid_argument("config: 'species' must be an array");
    if (cfg.species.empty()) {
      cfg.species.resize(list.size());
      for (auto& s : cfg.species) s.competition.assign(list.size(), region(0.0, 0.0));
    }
    if (list.size() != cfg.species.size()) {
      throw std::invalid_argument("config: 'species' length differs from the preset species count");
    }
    for (std::size_t k = 0; k < list.size(); ++k) {
      const auto& s = list[k];
      auto& target = cfg.species[k];
      if (s.contains("eps")) target.diffusion = parse_region(s["eps"], "eps");
      if (s.contains("r")) target.growth = parse_region(s["r"], "r");
      if (s.contains("alpha")) {
        const auto& a = s["alpha"];
        if (!a.is_array() || a.size() != list.size()) {
          throw std::invalid_argument("config: 'alpha' needs one entry per species");
        }
        for (std::size_t l = 0; l < a.size(); ++l) {
          if (!a[l].is_null()) target.competition[l] = parse_region(a[l], "alpha");
        }
      }
    }
  }
  if (j.contains("scheme")) cfg.scheme = parse_scheme(j["scheme"].get<std::string>());
  if (j.contains("basis")) cfg.basis_count = j["basis"].get<std::size_t>();
  if (j.contains("t_max")) cfg.t_max = j["t_max"].get<double>();
  if (j.contains("n_steps")) cfg.n_steps = j["n_steps"].get<int>();
  if (j.contains("tau_multiplier")) cfg.tau_multiplier = j["tau_multiplier"].get<int>();
  if (j.contains("initial")) {
    const auto& init = j["initial"];
    cfg.initial = init.is_number() ? std::vector<double>(cfg.species.size(), init.get<double>())
                                   : init.get<std::vector<double>>();
  }
  if (j.contains("newton")) {
    cfg.stepping.newton_tol = j["newton"].value("tol", cfg.stepping.newton_tol);
    cfg.stepping.newton_max_iters = j["newton"].value("max_iters", cfg.stepping.newton_max_iters);
  }
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    // A flat object configures the per-species solves; nested keys target one system.
    bool nested = false;
    for (const char* key : {"linear", "coupled", "coarse"}) {
      if (s.contains(key)) nested = true;
    }
    if (nested) {
      if (s.contains("linear")) cfg.stepping.linear = parse_solver(s["linear"], cfg.stepping.linear);
      if (s.contains("coupled")) cfg.stepping.coupled = parse_solver(s["coupled"], cfg.stepping.coupled);
      if (s.contains("coarse")) cfg.stepping.coarse = parse_solver(s["coarse"], cfg.stepping.coarse);
    } else {
      cfg.stepping.linear = parse_solver(s, cfg.stepping.linear);
    }
  }
  if (j.contains("output")) cfg.output_dir = resolve(j["output"].get<std::string>(), base_dir);
  if (j.contains("snapshots")) cfg.snapshot_steps = j["snapshots"].get<std::vector<int>>();
  if (j.contains("offline_artifact")) {
    cfg.offline_artifact = resolve(j["offline_artifact"].get<std::string>(), base_dir);
  }
  if (j.contains("reference")) {
    const auto& r = j["reference"];
    ReferenceSpec ref;
    if (r.is_string() && r.get<std::string>() == "auto") {
      // MS is compared against fine SI at the same step; time schemes against FI at the base step.
      ref.scheme = cfg.scheme == SchemeKind::ms ? SchemeKind::si : SchemeKind::fi;
      ref.n_steps = cfg.scheme == SchemeKind::ms ? cfg.n_steps / std::max(cfg.tau_multiplier, 1)
                                                 : cfg.n_steps;
    } else if (r.is_object() && r.contains("report")) {
      ref.report = resolve(r["report"].get<std::string>(), base_dir);
    } else if (r.is_object()) {
      ref.scheme = parse_scheme(r.value("scheme", std::string("FI")));
      if (ref.scheme == SchemeKind::ms) throw std::invalid_argument("config: reference must be FI or SI");
      ref.n_steps = r.value("n_steps", cfg.n_steps);
      if (ref.n_steps <= 0) throw std::invalid_argument("config: reference n_steps must be positive");
    } else if (!r.is_null()) {
      throw std::invalid_argument("config: 'reference' must be \"auto\", {scheme, n_steps} or {report}");
    }
    if (!r.is_null()) cfg.reference = ref;
  }
  cfg.finalize();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("config " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

std::uint64_t Problem::fingerprint() const {
  return gmsfem::offline_fingerprint(grid, coarse, coeff);
}

fvm::SpeciesState Problem::initial_state(const std::vector<double>& values) const {
  if (values.size() != coeff.species_count()) {
    throw std::invalid_argument("initial_state: one value per species required");
  }
  fvm::SpeciesState s;
  for (double v : values) s.u.push_back(linalg::Vector::Constant(static_cast<Eigen::Index>(grid.cell_count()), v));
  return s;
}

Problem build_problem(const ExperimentConfig& cfg) {
  const auto& g = cfg.geometry;
  auto fine = grid::build_structured_grid(g.nx, g.ny, g.lx, g.ly);
  const auto circles = g.resolve_circles();
  auto subdomains = grid::mark_inclusions(fine, circles);
  auto coarse = grid::build_coarse_grid(fine, g.kx, g.ky);
  auto pou = grid::build_partition_of_unity(coarse, fine);
  fvm::CoefficientField coeff(cfg.species, subdomains.labels);
  auto ops = fvm::assemble_fine_operators(fine, coeff);
  return Problem{std::move(fine), std::move(subdomains), std::move(coarse),
                 std::move(pou),  std::move(coeff),      std::move(ops)};
}

SubdomainAverages compute_averages(const linalg::Vector& u, const grid::FineGrid& grid,
                                   const grid::SubdomainMap& subdomains) {
  if (static_cast<std::size_t>(u.size()) != grid.cell_count() ||
      subdomains.labels.size() != grid.cell_count()) {
    throw std::invalid_argument("compute_averages: field, grid and labels differ in size");
  }
  double sum[2] = {0.0, 0.0};
  double vol[2] = {0.0, 0.0};
  for (std::size_t c = 0; c < grid.cell_count(); ++c) {
    const int s = subdomains.labels[c] == grid::Label::inclusion ? 1 : 0;
    sum[s] += grid.volume(c) * u[static_cast<Eigen::Index>(c)];
    vol[s] += grid.volume(c);
  }
  SubdomainAverages out;
  if (vol[0] > 0.0) out.background = sum[0] / vol[0];
  if (vol[1] > 0.0) out.inclusion = sum[1] / vol[1];
  return out;
}

double compute_relative_l2(const linalg::Vector& u, const linalg::Vector& u_ref,
                           const grid::FineGrid& grid) {
  if (u.size() != u_ref.size() || static_cast<std::size_t>(u.size()) != grid.cell_count()) {
    throw std::invalid_argument("compute_relative_l2: fields and grid differ in size");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t c = 0; c < grid.cell_count(); ++c) {
    const auto i = static_cast<Eigen::Index>(c);
    const double d = u_ref[i] - u[i];
    num += grid.volume(c) * d * d;
    den += grid.volume(c) * u_ref[i] * u_ref[i];
  }
  if (!(den > 0.0)) throw std::domain_error("compute_relative_l2: reference field has zero norm");
  return std::sqrt(num / den);
}

ExperimentReport run_scheme(const Problem& problem, const ExperimentConfig& cfg,
                            const gmsfem::OfflineSpace* offline) {
  ExperimentReport report;
  report.scheme = cfg.scheme;
  report.tau = cfg.stepping.tau;
  report.steps = cfg.stepping.n_steps;
  const auto initial = problem.initial_state(cfg.initial);
  const std::size_t n = problem.grid.cell_count();

  auto observer = [&](int step, double time, const fvm::SpeciesState& state) {
    report.averages.push_back(average_row(step, time, state, problem));
    if (std::find(cfg.snapshot_steps.begin(), cfg.snapshot_steps.end(), step) != cfg.snapshot_steps.end()) {
      report.snapshots.emplace_back(step, state);
    }
  };

  if (cfg.scheme == SchemeKind::ms) {
    gmsfem::OfflineSpace built;
    const gmsfem::OfflineSpace* space = offline;
    if (space == nullptr) {
      const auto start = Clock::now();
      built = staged("offline", [&] {
        return gmsfem::build_offline(problem.grid, problem.coarse, problem.pou, problem.ops,
                                     problem.fingerprint(), cfg.basis_count);
      });
      report.offline_time = std::chrono::duration<double>(Clock::now() - start).count();
      space = &built;
    }
    if (space->basis_count != cfg.basis_count) {
      throw std::invalid_argument("offline space has basis count " + std::to_string(space->basis_count) +
                                  ", config asks for " + std::to_string(cfg.basis_count));
    }
    report.basis_count = cfg.basis_count;
    for (std::size_t k = 0; k < space->species.size(); ++k) report.dof.push_back(space->dof(k));
    auto result = staged("online", [&] {
      return gmsfem::solve_multiscale(*space, initial, problem.ops, problem.coeff, cfg.stepping, observer);
    });
    for (const auto& s : result.steps) report.linear_iterations += s.linear_iterations;
    report.online_time = result.wall_time;
    report.final_state = std::move(result.final_state);
  } else {
    const auto scheme = cfg.scheme == SchemeKind::fi ? stepping::Scheme::fi : stepping::Scheme::si;
    if (cfg.scheme == SchemeKind::fi) {
      report.dof = {n * problem.coeff.species_count()};
    } else {
      report.dof.assign(problem.coeff.species_count(), n);
    }
    auto result = staged("solve", [&] {
      return stepping::solve_transient(scheme, initial, problem.ops, problem.coeff, cfg.stepping, observer);
    });
    report.newton_iterations = result.total_newton_iterations();
    report.linear_iterations = result.total_linear_iterations();
    report.online_time = result.wall_time;
    report.final_state = std::move(result.final_state);
  }
  return report;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  staged("config", [&] { cfg.finalize(); });
  const Problem problem = staged("setup", [&] { return build_problem(cfg); });
  spdlog::info("{} cells, {} inclusion cells, scheme {}, tau {}, {} steps", problem.grid.cell_count(),
               problem.subdomains.count(grid::Label::inclusion), to_string(cfg.scheme), cfg.tau(),
               cfg.steps());

  std::optional<fvm::SpeciesState> reference;
  if (cfg.reference) {
    reference = staged("reference", [&] {
      if (cfg.reference->report) return load_report_state(*cfg.reference->report);
      ExperimentConfig rc = cfg;
      rc.scheme = cfg.reference->scheme;
      rc.n_steps = cfg.reference->n_steps;
      rc.tau_multiplier = 1;
      rc.snapshot_steps.clear();
      rc.finalize();
      return run_scheme(problem, rc, nullptr).final_state;
    });
  }

  std::optional<gmsfem::OfflineSpace> loaded;
  if (cfg.scheme == SchemeKind::ms && cfg.offline_artifact) {
    loaded = staged("offline", [&] {
      auto space = gmsfem::load_offline(*cfg.offline_artifact, problem.fingerprint());
      if (space.basis_count < cfg.basis_count) {
        throw std::invalid_argument("artifact holds " + std::to_string(space.basis_count) +
                                    " basis functions per node, config asks for " +
                                    std::to_string(cfg.basis_count));
      }
      if (space.basis_count > cfg.basis_count) space = gmsfem::truncate_offline(space, problem.ops, cfg.basis_count);
      return space;
    });
  }

  ExperimentReport report = run_scheme(problem, cfg, loaded ? &*loaded : nullptr);
  if (reference) {
    report.errors = staged("errors", [&] { return errors_against(report.final_state, *reference, problem.grid); });
  }
  if (cfg.output_dir) {
    staged("output", [&] { write_outputs(report, problem.grid, problem.subdomains, *cfg.output_dir); });
  }
  return report;
}

void write_vtk(const std::filesystem::path& path, const grid::FineGrid& grid,
               const std::vector<std::pair<std::string, linalg::Vector>>& fields) {
  std::string text = "# vtk DataFile Version 3.0\nrdms cell data\nASCII\nDATASET STRUCTURED_POINTS\n";
  text += fmt::format("DIMENSIONS {} {} 2\n", grid.nx() + 1, grid.ny() + 1);
  text += "ORIGIN 0 0 0\n";
  text += fmt::format("SPACING {:.17g} {:.17g} {:.17g}\n", grid.hx(), grid.hy(), std::min(grid.hx(), grid.hy()));
  text += fmt::format("CELL_DATA {}\n", grid.cell_count());
  for (const auto& [name, values] : fields) {
    if (static_cast<std::size_t>(values.size()) != grid.cell_count()) {
      throw std::invalid_argument("write_vtk: field '" + name + "' has wrong length");
    }
    text += fmt::format("SCALARS {} double 1\nLOOKUP_TABLE default\n", name);
    for (Eigen::Index i = 0; i < values.size(); ++i) text += fmt::format("{:.17g}\n", values[i]);
  }
  write_text(path, text);
}

json report_to_json(const ExperimentReport& r) {
  json j;
  j["scheme"] = to_string(r.scheme);
  if (r.scheme == SchemeKind::ms) j["basis_count"] = r.basis_count;
  j["dof"] = r.dof;
  j["tau"] = r.tau;
  j["steps"] = r.steps;
  j["newton_iterations"] = r.newton_iterations;
  j["linear_iterations"] = r.linear_iterations;
  j["offline_time"] = r.offline_time;
  j["online_time"] = r.online_time;
  if (r.errors) j["errors"] = *r.errors;
  json finals = json::array();
  if (!r.averages.empty()) {
    for (const auto& a : r.averages.back().species) {
      finals.push_back({{"background", a.background ? json(*a.background) : json(nullptr)},
                        {"inclusion", a.inclusion ? json(*a.inclusion) : json(nullptr)}});
    }
  }
  j["final_averages"] = finals;
  json fields = json::array();
  for (const auto& u : r.final_state.u) fields.push_back(std::vector<double>(u.data(), u.data() + u.size()));
  j["final_fields"] = fields;
  return j;
}

fvm::SpeciesState load_report_state(const std::filesystem::path& path_in) {
  const auto path = std::filesystem::is_directory(path_in) ? path_in / "report.json" : path_in;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report " + path.string());
  json j;
  try {
    in >> j;
    if (!j.contains("final_fields")) throw std::runtime_error("no 'final_fields' entry");
    auto state = state_from_json(j["final_fields"]);
    if (state.u.empty()) throw std::runtime_error("no fields stored");
    state.validate(static_cast<std::size_t>(state.u.front().size()));
    return state;
  } catch (const std::exception& e) {
    throw std::runtime_error("report " + path.string() + ": " + e.what());
  }
}

std::vector<std::filesystem::path> write_outputs(const ExperimentReport& report,
                                                 const grid::FineGrid& grid,
                                                 const grid::SubdomainMap& subdomains,
                                                 const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  try {
    std::filesystem::create_directories(dir);
    const std::size_t species = report.final_state.species_count();

    written.push_back(dir / "averages.csv");
    write_text(written.back(), averages_csv(report));

    written.push_back(dir / "errors.csv");
    write_text(written.back(), errors_header(species) + errors_line(report, species));

    written.push_back(dir / "report.json");
    write_text(written.back(), report_to_json(report).dump(1) + "\n");

    linalg::Vector labels(static_cast<Eigen::Index>(grid.cell_count()));
    for (std::size_t c = 0; c < grid.cell_count(); ++c) {
      labels[static_cast<Eigen::Index>(c)] = subdomains.labels[c] == grid::Label::inclusion ? 1.0 : 0.0;
    }
    for (const auto& [step, state] : report.snapshots) {
      std::vector<std::pair<std::string, linalg::Vector>> fields;
      for (std::size_t k = 0; k < state.species_count(); ++k) {
        fields.emplace_back(fmt::format("u{}", k + 1), state.u[k]);
      }
      fields.emplace_back("inclusion", labels);
      written.push_back(dir / fmt::format("u_step{:04d}.vtk", step));
      write_vtk(written.back(), grid, fields);
    }
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) std::filesystem::remove(p, ec);
    throw;
  }
  return written;
}

SweepResult run_sweep(const ExperimentConfig& cfg_in, const std::vector<std::size_t>& basis_counts,
                      const std::optional<std::filesystem::path>& artifact) {
  if (basis_counts.empty()) throw std::invalid_argument("run_sweep: no basis counts given");
  ExperimentConfig cfg = cfg_in;
  cfg.scheme = SchemeKind::ms;
  cfg.finalize();
  const Problem problem = staged("setup", [&] { return build_problem(cfg); });
  const std::size_t max_m = *std::max_element(basis_counts.begin(), basis_counts.end());

  SweepResult out;
  out.reference = staged("reference", [&] {
    ExperimentConfig rc = cfg;
    rc.scheme = SchemeKind::si;
    rc.snapshot_steps.clear();
    return run_scheme(problem, rc, nullptr);
  });

  gmsfem::OfflineSpace full = staged("offline", [&] {
    const auto start = Clock::now();
    gmsfem::OfflineSpace space;
    if (artifact) {
      space = gmsfem::load_offline(*artifact, problem.fingerprint());
      if (space.basis_count < max_m) {
        throw std::invalid_argument("artifact holds " + std::to_string(space.basis_count) +
                                    " basis functions per node, sweep needs " + std::to_string(max_m));
      }
    } else {
      space = gmsfem::build_offline(problem.grid, problem.coarse, problem.pou, problem.ops,
                                    problem.fingerprint(), max_m);
    }
    out.offline_time = std::chrono::duration<double>(Clock::now() - start).count();
    return space;
  });

  for (std::size_t m : basis_counts) {
    ExperimentConfig mc = cfg;
    mc.basis_count = m;
    const auto start = Clock::now();
    const auto space = m == full.basis_count ? full : gmsfem::truncate_offline(full, problem.ops, m);
    const double truncate_time = std::chrono::duration<double>(Clock::now() - start).count();
    auto run = run_scheme(problem, mc, &space);
    run.offline_time = out.offline_time + truncate_time;
    run.errors = errors_against(run.final_state, out.reference.final_state, problem.grid);
    out.runs.push_back(std::move(run));
  }

  if (cfg.output_dir) {
    staged("output", [&] {
      std::filesystem::create_directories(*cfg.output_dir);
      const std::size_t species = cfg.species.size();
      std::string text = errors_header(species) + errors_line(out.reference, species);
      for (const auto& r : out.runs) text += errors_line(r, species);
      write_text(*cfg.output_dir / "errors.csv", text);
      write_text(*cfg.output_dir / "averages_reference.csv", averages_csv(out.reference));
      for (const auto& r : out.runs) {
        write_text(*cfg.output_dir / fmt::format("averages_M{}.csv", r.basis_count), averages_csv(r));
      }
    });
  }
  return out;
}

std::vector<double> compare_reports(const std::filesystem::path& a, const std::filesystem::path& b) {
  const auto ref = load_report_state(a);
  const auto other = load_report_state(b);
  if (ref.species_count() != other.species_count()) {
    throw std::invalid_argument("reports hold different species counts");
  }
  std::vector<double> e;
  for (std::size_t k = 0; k < ref.species_count(); ++k) {
    if (ref.u[k].size() != other.u[k].size()) throw std::invalid_argument("reports use different grids");
    const double den = ref.u[k].squaredNorm();
    if (!(den > 0.0)) throw std::domain_error("compare: reference field has zero norm");
    // Uniform cells: the volume weights cancel in the ratio.
    e.push_back(std::sqrt((ref.u[k] - other.u[k]).squaredNorm() / den));
  }
  return e;
}

}  // namespace rdms::bench
