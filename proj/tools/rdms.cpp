// rdms: experiment runner for the reaction-diffusion competition solvers.
#include "rdms/bench.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

namespace {

using namespace rdms;

std::vector<std::size_t> parse_basis_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t used = 0;
    const long value = std::stol(item, &used);
    if (used != item.size() || value <= 0) throw std::invalid_argument("bad basis count '" + item + "'");
    out.push_back(static_cast<std::size_t>(value));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

void print_report(const bench::ExperimentReport& r) {
  std::cout << fmt::format("scheme {}  tau {}  steps {}  online {:.3f} s", bench::to_string(r.scheme), r.tau,
                           r.steps, r.online_time);
  if (r.scheme == bench::SchemeKind::ms) {
    std::cout << fmt::format("  offline {:.3f} s  M {}  DOF_H {}", r.offline_time, r.basis_count,
                             fmt::join(r.dof, "/"));
  }
  if (r.scheme == bench::SchemeKind::fi) std::cout << fmt::format("  newton {}", r.newton_iterations);
  std::cout << "\n";
  if (!r.averages.empty()) {
    const auto& last = r.averages.back();
    for (std::size_t k = 0; k < last.species.size(); ++k) {
      const auto& a = last.species[k];
      std::cout << fmt::format("  u{}: mean background {}  mean inclusions {}\n", k + 1,
                               a.background ? fmt::format("{:.6f}", *a.background) : "n/a",
                               a.inclusion ? fmt::format("{:.6f}", *a.inclusion) : "n/a");
    }
  }
  if (r.errors) {
    for (std::size_t k = 0; k < r.errors->size(); ++k) {
      std::cout << fmt::format("  e_{} = {:.4f} %\n", k + 1, 100.0 * (*r.errors)[k]);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reaction-diffusion competition solvers (FI, SI, GMsFEM)"};
  app.require_subcommand(1);
  std::string level = "warn";
  app.add_option("--log-level", level, "trace, debug, info, warn, error");

  std::string config;
  std::string out;
  std::string basis = "1,2,4,6,8";
  std::string artifact;
  std::string report_a;
  std::string report_b;

  auto* run = app.add_subcommand("run", "run one experiment from a JSON config");
  run->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);

  auto* offline = app.add_subcommand("basis", "build and save the offline multiscale space");
  offline->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
  offline->add_option("--out", out, "artifact path")->required();

  auto* sweep = app.add_subcommand("sweep", "multiscale basis-count sweep against a fine SI reference");
  sweep->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--basis", basis, "comma-separated basis counts");
  sweep->add_option("--artifact", artifact, "load the offline space instead of building it")
      ->check(CLI::ExistingFile);

  auto* compare = app.add_subcommand("compare", "relative L2 difference of final fields (a is the reference)");
  compare->add_option("--a", report_a, "reference report.json or output directory")->required();
  compare->add_option("--b", report_b, "report.json or output directory")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(level));

  try {
    if (*run) {
      print_report(bench::run_experiment(bench::load_config(config)));
    } else if (*offline) {
      auto cfg = bench::load_config(config);
      const auto problem = bench::build_problem(cfg);
      const auto space = gmsfem::build_offline(problem.grid, problem.coarse, problem.pou, problem.ops,
                                               problem.fingerprint(), cfg.basis_count);
      gmsfem::save_offline(space, out);
      std::cout << fmt::format("wrote {} (M = {}, DOF_H = {})\n", out, space.basis_count,
                               space.species.empty() ? 0 : space.dof(0));
    } else if (*sweep) {
      const auto cfg = bench::load_config(config);
      const auto result = bench::run_sweep(
          cfg, parse_basis_list(basis),
          artifact.empty() ? std::nullopt : std::optional<std::filesystem::path>(artifact));
      std::cout << fmt::format("reference SI: online {:.3f} s\n", result.reference.online_time);
      std::cout << fmt::format("offline {:.3f} s\n", result.offline_time);
      std::cout << fmt::format("{:>3} {:>12} {:>12} {:>12} {:>10}\n", "M", "DOF_H", "e_1 %", "e_2 %", "online s");
      for (const auto& r : result.runs) {
        std::cout << fmt::format("{:>3} {:>12} {:>12.4f} {:>12.4f} {:>10.3f}\n", r.basis_count,
                                 fmt::join(r.dof, "/"), 100.0 * r.errors->at(0),
                                 100.0 * r.errors->at(r.errors->size() > 1 ? 1 : 0), r.online_time);
      }
    } else if (*compare) {
      const auto e = bench::compare_reports(report_a, report_b);
      for (std::size_t k = 0; k < e.size(); ++k) {
        std::cout << fmt::format("e_{} = {:.6e} ({:.4f} %)\n", k + 1, e[k], 100.0 * e[k]);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "rdms: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
