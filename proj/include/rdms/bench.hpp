#pragma once

#include "rdms/fvm.hpp"
#include "rdms/gmsfem.hpp"
#include "rdms/grid.hpp"
#include "rdms/stepping.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rdms::bench {

struct GeometryConfig {
  double lx = 1.0;
  double ly = 1.0;
  std::size_t nx = 160;
  std::size_t ny = 160;
  std::size_t kx = 10;
  std::size_t ky = 10;
  /// Explicit circles; when absent a seeded layout is generated.
  std::optional<std::vector<grid::Circle>> circles;
  std::uint64_t seed = 2021;
  grid::InclusionLayout layout{};

  std::vector<grid::Circle> resolve_circles() const;
};

enum class SchemeKind { fi, si, ms };

std::string to_string(SchemeKind scheme);
SchemeKind parse_scheme(const std::string& name);

/// Coefficient presets "1a", "1b", "2a", "2b" (test number, diffusion variant).
std::vector<fvm::SpeciesCoefficients> preset_species(const std::string& preset);
double preset_t_max(const std::string& preset);

struct ReferenceSpec {
  /// Either run a fine reference in-process...
  SchemeKind scheme = SchemeKind::fi;
  int n_steps = 100;
  /// ...or load the final fields of an earlier report.
  std::optional<std::filesystem::path> report;
};

struct ExperimentConfig {
  GeometryConfig geometry;
  std::string preset;
  std::vector<fvm::SpeciesCoefficients> species;
  SchemeKind scheme = SchemeKind::si;
  std::size_t basis_count = 6;
  double t_max = 50.0;
  int n_steps = 100;  // N_t; tau = tau_multiplier * t_max / n_steps
  int tau_multiplier = 1;
  std::vector<double> initial;  // per species, spatially uniform
  stepping::TimeSteppingConfig stepping;
  std::optional<std::filesystem::path> output_dir;
  std::vector<int> snapshot_steps;
  std::optional<ReferenceSpec> reference;
  std::optional<std::filesystem::path> offline_artifact;

  double tau() const { return tau_multiplier * t_max / n_steps; }
  int steps() const { return n_steps / tau_multiplier; }
  /// Copies tau/steps into `stepping` and checks invariants.
  void finalize();
};

/// Parses the JSON config schema documented in the README. Relative paths
/// are resolved against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Grid, subdomains, coarse overlay and fine operators for one configuration.
struct Problem {
  grid::FineGrid grid;
  grid::SubdomainMap subdomains;
  grid::CoarseGrid coarse;
  grid::PartitionOfUnity pou;
  fvm::CoefficientField coeff;
  fvm::FineOperators ops;

  std::uint64_t fingerprint() const;
  fvm::SpeciesState initial_state(const std::vector<double>& values) const;
};

Problem build_problem(const ExperimentConfig& cfg);

/// Volume-weighted subdomain means; empty subdomains yield std::nullopt.
struct SubdomainAverages {
  std::optional<double> background;
  std::optional<double> inclusion;
};

SubdomainAverages compute_averages(const linalg::Vector& u, const grid::FineGrid& grid,
                                   const grid::SubdomainMap& subdomains);

/// (sum |K| (u_ref - u)^2 / sum |K| u_ref^2)^{1/2}; throws std::domain_error for a zero reference.
double compute_relative_l2(const linalg::Vector& u, const linalg::Vector& u_ref,
                           const grid::FineGrid& grid);

struct AverageRow {
  int step = 0;
  double time = 0.0;
  std::vector<SubdomainAverages> species;
};

struct ExperimentReport {
  SchemeKind scheme = SchemeKind::si;
  std::size_t basis_count = 0;  // MS only
  std::vector<std::size_t> dof;  // per species system size (L*N once for FI)
  double tau = 0.0;
  int steps = 0;
  std::vector<AverageRow> averages;
  std::optional<std::vector<double>> errors;  // fractions, per species
  int newton_iterations = 0;
  int linear_iterations = 0;
  double offline_time = 0.0;
  double online_time = 0.0;
  fvm::SpeciesState final_state;
  std::vector<std::pair<int, fvm::SpeciesState>> snapshots;
};

/// Runs one scheme on a prepared problem without touching the filesystem.
/// For MS, `offline` is used when given, otherwise a space is built.
ExperimentReport run_scheme(const Problem& problem, const ExperimentConfig& cfg,
                            const gmsfem::OfflineSpace* offline = nullptr);

/// Full pipeline: build, optional reference, solve, errors, outputs.
/// On failure, files written by this call are removed and the error names the stage.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

/// averages.csv, errors.csv, report.json and VTK snapshots; returns written paths.
std::vector<std::filesystem::path> write_outputs(const ExperimentReport& report,
                                                 const grid::FineGrid& grid,
                                                 const grid::SubdomainMap& subdomains,
                                                 const std::filesystem::path& dir);

/// Legacy ASCII VTK STRUCTURED_POINTS file with one cell scalar per field.
void write_vtk(const std::filesystem::path& path, const grid::FineGrid& grid,
               const std::vector<std::pair<std::string, linalg::Vector>>& fields);

nlohmann::json report_to_json(const ExperimentReport& report);
/// Final fields stored in a report.json (or a directory containing one).
fvm::SpeciesState load_report_state(const std::filesystem::path& path);

struct SweepResult {
  ExperimentReport reference;
  std::vector<ExperimentReport> runs;  // one per basis count, errors vs reference
  double offline_time = 0.0;
};

/// Fine SI reference plus one multiscale run per basis count. The local
/// spectral problems are solved once for max(basis_counts) and truncated.
SweepResult run_sweep(const ExperimentConfig& cfg, const std::vector<std::size_t>& basis_counts,
                      const std::optional<std::filesystem::path>& artifact = std::nullopt);

/// Relative L2 differences between the final fields of two reports (a is the reference).
std::vector<double> compare_reports(const std::filesystem::path& a, const std::filesystem::path& b);

}  // namespace rdms::bench
