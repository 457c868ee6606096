#include "oracles.hpp"
#include "rdms/bench.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace rdms;
using nlohmann::json;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rdms_bench_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

// Small but heterogeneous problem that runs in well under a second.
json small_config() {
  return json{{"fine", {24, 24}},
              {"coarse", {4, 4}},
              {"circles", {{0.3, 0.6, 0.12}, {0.7, 0.3, 0.15}}},
              {"preset", "1a"},
              {"t_max", 5.0},
              {"n_steps", 10}};
}

bench::ExperimentConfig small(json extra = json::object()) {
  json j = small_config();
  j.update(extra);
  auto cfg = bench::parse_config(j);
  cfg.finalize();
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("compute_averages") {
  const auto g = grid::build_structured_grid(4, 4, 1.0, 1.0);
  const std::vector<grid::Circle> c{{{0.5, 0.5}, 0.2}};
  const auto sub = grid::mark_inclusions(g, c);
  SUBCASE("constant field") {
    const auto a = bench::compute_averages(linalg::Vector::Constant(16, 0.7), g, sub);
    CHECK(*a.background == doctest::Approx(0.7));
    CHECK(*a.inclusion == doctest::Approx(0.7));
  }
  SUBCASE("indicator of the inclusions") {
    linalg::Vector u(16);
    for (std::size_t i = 0; i < 16; ++i) u[static_cast<Eigen::Index>(i)] = sub.labels[i] == grid::Label::inclusion;
    const auto a = bench::compute_averages(u, g, sub);
    CHECK(*a.background == 0.0);
    CHECK(*a.inclusion == 1.0);
  }
  SUBCASE("volume weighting on an uneven two-cell grid") {
    const grid::FineGrid two(2, 1, 1.0, 1.0, {0.25, 0.75}, {{0.125, 0.5}, {0.625, 0.5}},
                             {{0, 1, 1.0, 0.5}});
    grid::SubdomainMap bg{{grid::Label::background, grid::Label::background}, {}};
    linalg::Vector u(2);
    u << 1.0, 3.0;
    const auto a = bench::compute_averages(u, two, bg);
    CHECK(*a.background == doctest::Approx((0.25 * 1.0 + 0.75 * 3.0) / 1.0));
    CHECK(*a.background == doctest::Approx(2.5));
    CHECK_FALSE(a.inclusion.has_value());
  }
  SUBCASE("size mismatch throws") {
    CHECK_THROWS_AS(bench::compute_averages(linalg::Vector::Zero(3), g, sub), std::invalid_argument);
  }
}

TEST_CASE("compute_relative_l2") {
  const auto g = grid::build_structured_grid(5, 5, 1.0, 1.0);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  linalg::Vector ref(25);
  for (auto& x : ref) x = u(rng);
  CHECK(bench::compute_relative_l2(ref, ref, g) == 0.0);
  CHECK(bench::compute_relative_l2(1.1 * ref, ref, g) == doctest::Approx(0.1));
  linalg::Vector other(25);
  for (auto& x : other) x = u(rng);
  // Scaling both fields leaves the relative error unchanged.
  CHECK(bench::compute_relative_l2(3.0 * other, 3.0 * ref, g) ==
        doctest::Approx(bench::compute_relative_l2(other, ref, g)));
  // Independent evaluation of the definition.
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < 25; ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    num += g.volume(i) * std::pow(ref[e] - other[e], 2);
    den += g.volume(i) * ref[e] * ref[e];
  }
  CHECK(bench::compute_relative_l2(other, ref, g) == doctest::Approx(std::sqrt(num / den)));
  CHECK_THROWS_AS(bench::compute_relative_l2(other, linalg::Vector::Zero(25), g), std::domain_error);
}

TEST_CASE("presets carry the published coefficients") {
  const auto a = bench::preset_species("1a");
  REQUIRE(a.size() == 2);
  CHECK(a[0].diffusion.background == 1e-4);
  CHECK(a[0].diffusion.inclusion == 1e-2);
  CHECK(a[1].diffusion.background == 1e-2);
  CHECK(a[1].diffusion.inclusion == 1e-4);
  CHECK(a[0].growth.background == 0.15);
  CHECK(a[0].growth.inclusion == 0.1);
  CHECK(a[1].growth.background == 0.1);
  CHECK(a[1].growth.inclusion == 0.15);
  CHECK(a[0].competition[1].background == 0.055);
  CHECK(a[0].competition[1].inclusion == 0.05);
  CHECK(a[1].competition[0].background == 0.05);
  CHECK(a[1].competition[0].inclusion == 0.055);
  const auto b = bench::preset_species("1b");
  CHECK(b[0].diffusion.background == 1e-3);
  CHECK(b[0].diffusion.inclusion == 1e-1);
  const auto c = bench::preset_species("2a");
  CHECK(c[0].diffusion.background == 1e-4);
  CHECK(c[0].growth.background == 0.15);
  CHECK(c[0].growth.inclusion == 0.1);
  CHECK(c[0].competition[1].background == 0.15);
  CHECK(c[0].competition[1].inclusion == 0.01);
  CHECK(c[1].competition[0].background == 0.01);
  CHECK(c[1].competition[0].inclusion == 0.075);
  CHECK(bench::preset_species("2b")[1].diffusion.background == 1e-1);
  CHECK(bench::preset_t_max("1a") == 50.0);
  CHECK(bench::preset_t_max("2b") == 150.0);
  CHECK_THROWS_AS(bench::preset_species("3a"), std::invalid_argument);
}

TEST_CASE("parse_config") {
  SUBCASE("preset defaults") {
    auto cfg = bench::parse_config(json{{"preset", "2a"}});
    cfg.finalize();
    CHECK(cfg.t_max == 150.0);
    CHECK(cfg.geometry.nx == 160);
    CHECK(cfg.basis_count == 6);
    CHECK(cfg.initial == std::vector<double>{0.5, 0.5});
    CHECK(cfg.tau() == doctest::Approx(1.5));
  }
  SUBCASE("species overrides replace single entries") {
    const auto cfg = bench::parse_config(
        json{{"preset", "1a"}, {"species", {{{"eps", {0.2, 0.3}}}, {{"r", 0.4}, {"alpha", {0.01, nullptr}}}}}});
    CHECK(cfg.species[0].diffusion.background == 0.2);
    CHECK(cfg.species[0].diffusion.inclusion == 0.3);
    CHECK(cfg.species[0].growth.background == 0.15);
    CHECK(cfg.species[1].growth.background == 0.4);
    CHECK(cfg.species[1].growth.inclusion == 0.4);
    CHECK(cfg.species[1].competition[0].background == 0.01);
  }
  SUBCASE("tau multiplier") {
    auto cfg = small({{"tau_multiplier", 2}});
    CHECK(cfg.tau() == doctest::Approx(1.0));
    CHECK(cfg.steps() == 5);
    CHECK_THROWS_AS(small({{"tau_multiplier", 3}}), std::invalid_argument);
  }
  SUBCASE("automatic reference") {
    CHECK(small({{"scheme", "ms"}, {"reference", "auto"}}).reference->scheme == bench::SchemeKind::si);
    const auto fi = small({{"scheme", "SI"}, {"tau_multiplier", 2}, {"reference", "auto"}});
    CHECK(fi.reference->scheme == bench::SchemeKind::fi);
    CHECK(fi.reference->n_steps == 10);
  }
  SUBCASE("bad input is rejected") {
    CHECK_THROWS_AS(bench::parse_config(json{{"preset", "1a"}, {"tmax", 3}}), std::invalid_argument);
    CHECK_THROWS_AS(bench::parse_config(json{{"preset", "9z"}}), std::invalid_argument);
    CHECK_THROWS_AS(bench::parse_config(json{{"preset", "1a"}, {"scheme", "RK4"}}), std::invalid_argument);
    CHECK_THROWS_AS(small({{"snapshots", {11}}}), std::invalid_argument);
    CHECK_THROWS_AS(bench::parse_config(json::array()), std::invalid_argument);
  }
}

TEST_CASE("outputs: CSV shape, VTK snapshots and determinism") {
  const auto dir = scratch("out");
  auto cfg = small({{"scheme", "SI"}});
  cfg.output_dir = dir;

  SUBCASE("no snapshots writes no VTK files") {
    bench::run_experiment(cfg);
    const auto rows = oracle::read_csv(dir / "averages.csv");
    CHECK(rows.size() == 1 + 11);
    CHECK(rows.front() == std::vector<std::string>{"step", "time", "u1_m", "u1_c", "u2_m", "u2_c"});
    CHECK(std::stod(rows.back()[1]) == doctest::Approx(5.0));
    for (const auto& e : std::filesystem::directory_iterator(dir)) CHECK(e.path().extension() != ".vtk");
    const auto err = oracle::read_csv(dir / "errors.csv");
    CHECK(err.size() == 2);
    CHECK(err[0][0] == "scheme");
  }
  SUBCASE("snapshots read back exactly") {
    cfg.snapshot_steps = {0, 10};
    const auto report = bench::run_experiment(cfg);
    const auto vtk = oracle::read_vtk(dir / "u_step0010.vtk");
    CHECK(vtk.nx == 24);
    CHECK(vtk.ny == 24);
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& field = vtk.scalars.at("u" + std::to_string(k + 1));
      REQUIRE(field.size() == 576);
      for (std::size_t i = 0; i < 576; ++i) CHECK(field[i] == report.final_state.u[k][static_cast<Eigen::Index>(i)]);
    }
    const auto start = oracle::read_vtk(dir / "u_step0000.vtk");
    for (double v : start.scalars.at("u1")) CHECK(v == 0.5);
  }
  SUBCASE("repeated runs give identical averages and errors") {
    cfg.reference = bench::ReferenceSpec{bench::SchemeKind::fi, 10, std::nullopt};
    bench::run_experiment(cfg);
    const auto a1 = slurp(dir / "averages.csv");
    const auto e1 = oracle::read_csv(dir / "errors.csv");
    bench::run_experiment(cfg);
    CHECK(slurp(dir / "averages.csv") == a1);
    const auto e2 = oracle::read_csv(dir / "errors.csv");
    REQUIRE(e1.size() == e2.size());
    // Wall-clock columns are the last two.
    for (std::size_t r = 0; r < e1.size(); ++r) {
      for (std::size_t c = 0; c + 2 < e1[r].size(); ++c) CHECK(e1[r][c] == e2[r][c]);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("outputs: a failing write removes partial files and names the stage") {
  const auto dir = scratch("partial");
  std::filesystem::create_directories(dir / "report.json");  // blocks the third file
  auto cfg = small();
  cfg.output_dir = dir;
  try {
    bench::run_experiment(cfg);
    FAIL("expected failure");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("stage 'output'") != std::string::npos);
  }
  CHECK_FALSE(std::filesystem::exists(dir / "averages.csv"));
  CHECK_FALSE(std::filesystem::exists(dir / "errors.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("errors against a reference report") {
  const auto dir = scratch("ref");
  auto cfg = small({{"scheme", "SI"}});
  cfg.output_dir = dir;
  const auto first = bench::run_experiment(cfg);
  CHECK_FALSE(first.errors.has_value());

  auto again = small({{"scheme", "SI"}});
  again.reference = bench::ReferenceSpec{bench::SchemeKind::fi, 10, dir / "report.json"};
  const auto second = bench::run_experiment(again);
  REQUIRE(second.errors.has_value());
  for (double e : *second.errors) CHECK(e == 0.0);
  const auto diff = bench::compare_reports(dir, dir / "report.json");
  for (double e : diff) CHECK(e == 0.0);

  auto fi = small({{"scheme", "FI"}});
  fi.reference = bench::ReferenceSpec{bench::SchemeKind::fi, 10, dir};
  const auto third = bench::run_experiment(fi);
  const auto problem = bench::build_problem(fi);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK((*third.errors)[k] == doctest::Approx(bench::compute_relative_l2(
                                    third.final_state.u[k], first.final_state.u[k], problem.grid)));
    CHECK((*third.errors)[k] > 0.0);
  }

  auto bad = small({{"scheme", "SI"}});
  bad.reference = bench::ReferenceSpec{bench::SchemeKind::fi, 10, dir / "nothing.json"};
  try {
    bench::run_experiment(bad);
    FAIL("expected failure");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("stage 'reference'") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("scheme reports: DOF and iteration bookkeeping") {
  auto cfg = small({{"scheme", "FI"}});
  const auto problem = bench::build_problem(cfg);
  const auto fi = bench::run_scheme(problem, cfg);
  CHECK(fi.dof == std::vector<std::size_t>{2 * 576});
  CHECK(fi.newton_iterations >= 10);
  cfg.scheme = bench::SchemeKind::si;
  const auto si = bench::run_scheme(problem, cfg);
  CHECK(si.dof == std::vector<std::size_t>{576, 576});
  CHECK(si.newton_iterations == 0);
  CHECK(si.averages.size() == 11);
  cfg.scheme = bench::SchemeKind::ms;
  cfg.basis_count = 2;
  const auto ms = bench::run_scheme(problem, cfg);
  CHECK(ms.dof == std::vector<std::size_t>{2 * 25, 2 * 25});
  CHECK(ms.offline_time > 0.0);
}

TEST_CASE("sweep: monotone errors, DOF and artifact reuse") {
  const auto dir = scratch("sweep");
  auto cfg = small({{"scheme", "MS"}});
  cfg.output_dir = dir / "out";
  const auto sweep = bench::run_sweep(cfg, {1, 2, 4});
  REQUIRE(sweep.runs.size() == 3);
  CHECK(sweep.runs[0].dof[0] == 25);
  CHECK(sweep.runs[2].dof[0] == 100);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK((*sweep.runs[2].errors)[k] < (*sweep.runs[0].errors)[k]);
  }
  CHECK(oracle::read_csv(dir / "out" / "errors.csv").size() == 1 + 1 + 3);
  CHECK(std::filesystem::exists(dir / "out" / "averages_M4.csv"));

  const auto problem = bench::build_problem(cfg);
  const auto space = gmsfem::build_offline(problem.grid, problem.coarse, problem.pou, problem.ops,
                                           problem.fingerprint(), 4);
  gmsfem::save_offline(space, dir / "space.bin");
  auto cfg2 = cfg;
  cfg2.output_dir.reset();
  const auto reused = bench::run_sweep(cfg2, {1, 2, 4}, dir / "space.bin");
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK((reused.runs[i].final_state.u[k] - sweep.runs[i].final_state.u[k]).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  CHECK_THROWS_AS(bench::run_sweep(cfg2, {8}, dir / "space.bin"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
