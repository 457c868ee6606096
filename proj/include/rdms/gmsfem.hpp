#pragma once

#include "rdms/fvm.hpp"
#include "rdms/grid.hpp"
#include "rdms/linalg.hpp"
#include "rdms/stepping.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace rdms::gmsfem {

/// TPFA stencil restricted to `local_cells` (ascending global indices); faces
/// leaving the local domain are dropped, giving zero flux on its boundary.
linalg::SparseMatrix assemble_local_diffusion(const grid::FineGrid& grid,
                                              std::span<const double> trans,
                                              std::span<const std::size_t> local_cells);

struct LocalSpectralResult {
  std::size_t domain = 0;
  linalg::Vector eigenvalues;        // ascending
  linalg::DenseMatrix eigenvectors;  // unit columns, largest-magnitude entry positive
};

/// The `count` smallest eigenpairs of a local diffusion operator.
LocalSpectralResult solve_local_spectral(const linalg::SparseMatrix& local, std::size_t count,
                                         std::size_t domain = 0);

struct BasisIndex {
  std::size_t node = 0;
  std::size_t basis = 0;
};

/// P^k, DOF_H x N. Row (node i, basis l) is chi^i * psi^i_l on omega_i.
struct ProjectionMatrix {
  linalg::SparseMatrix matrix;
  std::vector<BasisIndex> rows;

  std::size_t dof() const { return rows.size(); }
};

/// Uses M_i = min(basis_count, available eigenpairs of omega_i) per node;
/// rows are ordered node-major, basis-minor.
ProjectionMatrix build_projection(std::span<const LocalSpectralResult> spectra,
                                  const grid::CoarseGrid& coarse,
                                  const grid::PartitionOfUnity& pou, std::size_t basis_count);

/// Keeps only rows with basis index < basis_count.
ProjectionMatrix truncate_projection(const ProjectionMatrix& p, std::size_t basis_count);

struct CoarseSystem {
  linalg::SparseMatrix stiffness;  // A_H = P A P^T
  linalg::SparseMatrix mass;       // M_H = P M P^T
};

CoarseSystem assemble_coarse(const ProjectionMatrix& p, const linalg::SparseMatrix& stiffness,
                             const linalg::SparseMatrix& mass);

/// Mass-weighted projection: solves M_H u_H = P M u0.
linalg::Vector project_initial(const linalg::Vector& u0, const ProjectionMatrix& p,
                               const linalg::SparseMatrix& mass,
                               const linalg::SparseMatrix& coarse_mass,
                               const linalg::LinearSolveSpec& spec = {linalg::Method::direct});

/// u_ms = P^T u_H.
linalg::Vector reconstruct_fine(const linalg::Vector& coarse_values, const ProjectionMatrix& p);

struct SpeciesSpace {
  std::vector<LocalSpectralResult> spectra;  // eigenvectors are empty when loaded from disk
  ProjectionMatrix projection;
  CoarseSystem coarse;
};

/// Everything the online stage needs; independent of reaction rates and tau.
struct OfflineSpace {
  std::uint64_t fingerprint = 0;
  std::size_t basis_count = 0;
  std::size_t fine_cells = 0;
  std::vector<SpeciesSpace> species;

  std::size_t dof(std::size_t k) const { return species[k].projection.dof(); }
};

/// Hash of everything the basis depends on: grid shape and extent, coarse
/// layout, subdomain labels and diffusion coefficients.
std::uint64_t offline_fingerprint(const grid::FineGrid& grid, const grid::CoarseGrid& coarse,
                                  const fvm::CoefficientField& coeff);

OfflineSpace build_offline(const grid::FineGrid& grid, const grid::CoarseGrid& coarse,
                           const grid::PartitionOfUnity& pou, const fvm::FineOperators& ops,
                           std::uint64_t fingerprint, std::size_t basis_count);

/// Restricts a space built with a larger basis count to `basis_count`.
OfflineSpace truncate_offline(const OfflineSpace& space, const fvm::FineOperators& ops,
                              std::size_t basis_count);

void save_offline(const OfflineSpace& space, const std::filesystem::path& path);

/// Throws std::runtime_error if the file is malformed or its fingerprint differs.
OfflineSpace load_offline(const std::filesystem::path& path, std::uint64_t expected_fingerprint);

/// Online stage of the semi-implicit multiscale solver.
class MultiscaleStepper {
 public:
  MultiscaleStepper(const OfflineSpace& space, const fvm::FineOperators& ops,
                    const fvm::CoefficientField& coeff, const stepping::TimeSteppingConfig& cfg);

  std::vector<linalg::Vector> project(const fvm::SpeciesState& fine) const;
  fvm::SpeciesState reconstruct(const std::vector<linalg::Vector>& coarse) const;

  /// Reconstruct all species, evaluate the fine reaction, project it, then
  /// solve (M_H/tau + A_H) u_H = M_H u_H_prev/tau + P R for every species.
  stepping::StepReport step(std::vector<linalg::Vector>& coarse) const;

  /// P R^k |K| for every species, evaluated block by block from the coarse state.
  std::vector<linalg::Vector> projected_reaction(const std::vector<linalg::Vector>& coarse) const;

 private:
  // Fine cells covered by the same set of local domains, with the dense
  // restriction of each P^k to those cells and the rows it touches.
  struct Block {
    std::vector<std::size_t> cells;
    std::vector<std::vector<Eigen::Index>> rows;
    std::vector<linalg::DenseMatrix> basis;  // cells x rows
  };

  const OfflineSpace& space_;
  const fvm::FineOperators& ops_;
  const fvm::CoefficientField& coeff_;
  stepping::TimeSteppingConfig cfg_;
  std::vector<linalg::LinearSolver> solvers_;
  std::vector<Block> blocks_;
};

std::vector<linalg::Vector> step_ms(const std::vector<linalg::Vector>& coarse,
                                    const OfflineSpace& space, const fvm::FineOperators& ops,
                                    const fvm::CoefficientField& coeff,
                                    const stepping::TimeSteppingConfig& cfg);

struct MultiscaleResult {
  std::vector<linalg::Vector> final_coarse;
  fvm::SpeciesState final_state;  // reconstructed
  std::vector<stepping::StepReport> steps;
  double wall_time = 0.0;  // online loop only
};

/// Projects `initial`, runs n_steps multiscale steps and reconstructs; the
/// observer sees reconstructed fields.
MultiscaleResult solve_multiscale(const OfflineSpace& space, const fvm::SpeciesState& initial,
                                  const fvm::FineOperators& ops, const fvm::CoefficientField& coeff,
                                  const stepping::TimeSteppingConfig& cfg,
                                  const stepping::StepObserver& observer = {});

}  // namespace rdms::gmsfem
