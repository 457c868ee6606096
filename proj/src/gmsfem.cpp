#include "rdms/gmsfem.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <stdexcept>
#include <string>

namespace rdms::gmsfem {

namespace {

using Clock = std::chrono::steady_clock;

linalg::SparseMatrix symmetrized(const linalg::SparseMatrix& x) {
  linalg::SparseMatrix t = x.transpose();
  linalg::SparseMatrix s = 0.5 * (x + t);
  s.makeCompressed();
  return s;
}

}  // namespace

linalg::SparseMatrix assemble_local_diffusion(const grid::FineGrid& grid,
                                              std::span<const double> trans,
                                              std::span<const std::size_t> local_cells) {
  if (local_cells.empty()) throw std::invalid_argument("assemble_local_diffusion: empty local domain");
  const auto faces = grid.faces();
  if (trans.size() != faces.size()) {
    throw std::invalid_argument("assemble_local_diffusion: one transmissibility per face required");
  }
  std::vector<int> local_index(grid.cell_count(), -1);
  for (std::size_t p = 0; p < local_cells.size(); ++p) {
    local_index.at(local_cells[p]) = static_cast<int>(p);
  }
  const auto n = static_cast<int>(local_cells.size());
  std::vector<double> diagonal(local_cells.size(), 0.0);
  std::vector<linalg::Triplet> triplets;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const int i = local_index[faces[f].i];
    const int j = local_index[faces[f].j];
    if (i < 0 || j < 0) continue;
    triplets.emplace_back(i, j, -trans[f]);
    triplets.emplace_back(j, i, -trans[f]);
    diagonal[static_cast<std::size_t>(i)] += trans[f];
    diagonal[static_cast<std::size_t>(j)] += trans[f];
  }
  for (int i = 0; i < n; ++i) triplets.emplace_back(i, i, diagonal[static_cast<std::size_t>(i)]);
  linalg::SparseMatrix a(n, n);
  a.setFromTriplets(triplets.begin(), triplets.end());
  a.makeCompressed();
  return a;
}

LocalSpectralResult solve_local_spectral(const linalg::SparseMatrix& local, std::size_t count,
                                         std::size_t domain) {
  if (count > static_cast<std::size_t>(local.rows())) {
    throw std::invalid_argument("solve_local_spectral: domain " + std::to_string(domain) +
                                " has dimension " + std::to_string(local.rows()) + " < " +
                                std::to_string(count) + " requested eigenpairs");
  }
  LocalSpectralResult out;
  out.domain = domain;
  try {
    auto pairs = linalg::eig_sym_smallest(linalg::DenseMatrix(local), static_cast<Eigen::Index>(count));
    out.eigenvalues = std::move(pairs.values);
    out.eigenvectors = std::move(pairs.vectors);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("local spectral problem on domain " + std::to_string(domain) + ": " +
                             e.what());
  }
  return out;
}

ProjectionMatrix build_projection(std::span<const LocalSpectralResult> spectra,
                                  const grid::CoarseGrid& coarse,
                                  const grid::PartitionOfUnity& pou, std::size_t basis_count) {
  if (spectra.size() != coarse.node_count()) {
    throw std::invalid_argument("build_projection: one spectral result per coarse node required");
  }
  std::size_t fine_cells = coarse.coarse_cell_of.size();
  ProjectionMatrix p;
  std::vector<linalg::Triplet> triplets;
  for (std::size_t node = 0; node < coarse.node_count(); ++node) {
    const auto& spec = spectra[node];
    const auto& cells = coarse.local_cells[node];
    const auto& chi = pou.weights[node];
    const auto available = static_cast<std::size_t>(spec.eigenvectors.cols());
    const std::size_t m = std::min(basis_count, available);
    if (static_cast<std::size_t>(spec.eigenvectors.rows()) != cells.size()) {
      throw std::invalid_argument("build_projection: eigenvector length does not match omega_" +
                                  std::to_string(node));
    }
    for (std::size_t l = 0; l < m; ++l) {
      const auto row = static_cast<int>(p.rows.size());
      p.rows.push_back({node, l});
      for (std::size_t c = 0; c < cells.size(); ++c) {
        triplets.emplace_back(row, static_cast<int>(cells[c]),
                              chi[c] * spec.eigenvectors(static_cast<Eigen::Index>(c),
                                                         static_cast<Eigen::Index>(l)));
      }
    }
  }
  p.matrix.resize(static_cast<Eigen::Index>(p.rows.size()), static_cast<Eigen::Index>(fine_cells));
  p.matrix.setFromTriplets(triplets.begin(), triplets.end());
  p.matrix.makeCompressed();
  return p;
}

ProjectionMatrix truncate_projection(const ProjectionMatrix& p, std::size_t basis_count) {
  ProjectionMatrix out;
  std::vector<linalg::Triplet> triplets;
  for (std::size_t r = 0; r < p.rows.size(); ++r) {
    if (p.rows[r].basis >= basis_count) continue;
    const auto row = static_cast<int>(out.rows.size());
    out.rows.push_back(p.rows[r]);
    for (linalg::SparseMatrix::InnerIterator it(p.matrix, static_cast<Eigen::Index>(r)); it; ++it) {
      triplets.emplace_back(row, static_cast<int>(it.col()), it.value());
    }
  }
  out.matrix.resize(static_cast<Eigen::Index>(out.rows.size()), p.matrix.cols());
  out.matrix.setFromTriplets(triplets.begin(), triplets.end());
  out.matrix.makeCompressed();
  return out;
}

CoarseSystem assemble_coarse(const ProjectionMatrix& p, const linalg::SparseMatrix& stiffness,
                             const linalg::SparseMatrix& mass) {
  if (p.matrix.cols() != stiffness.rows() || p.matrix.cols() != mass.rows()) {
    throw std::invalid_argument("assemble_coarse: projection and fine operators disagree in size");
  }
  const linalg::SparseMatrix pt = p.matrix.transpose();
  CoarseSystem out;
  out.stiffness = symmetrized(linalg::SparseMatrix(p.matrix * stiffness) * pt);
  out.mass = symmetrized(linalg::SparseMatrix(p.matrix * mass) * pt);
  return out;
}

linalg::Vector project_initial(const linalg::Vector& u0, const ProjectionMatrix& p,
                               const linalg::SparseMatrix& mass,
                               const linalg::SparseMatrix& coarse_mass,
                               const linalg::LinearSolveSpec& spec) {
  const linalg::Vector rhs = p.matrix * (mass * u0);
  return linalg::solve_linear(coarse_mass, rhs, spec).x;
}

linalg::Vector reconstruct_fine(const linalg::Vector& coarse_values, const ProjectionMatrix& p) {
  if (coarse_values.size() != p.matrix.rows()) {
    throw std::invalid_argument("reconstruct_fine: coarse vector has wrong length");
  }
  return p.matrix.transpose() * coarse_values;
}

OfflineSpace build_offline(const grid::FineGrid& grid, const grid::CoarseGrid& coarse,
                           const grid::PartitionOfUnity& pou, const fvm::FineOperators& ops,
                           std::uint64_t fingerprint, std::size_t basis_count) {
  if (basis_count == 0) throw std::invalid_argument("build_offline: basis count must be >= 1");
  OfflineSpace space;
  space.fingerprint = fingerprint;
  space.basis_count = basis_count;
  space.fine_cells = grid.cell_count();
  for (std::size_t k = 0; k < ops.diffusion.size(); ++k) {
    SpeciesSpace s;
    s.spectra.reserve(coarse.node_count());
    for (std::size_t node = 0; node < coarse.node_count(); ++node) {
      const auto& cells = coarse.local_cells[node];
      const auto local = assemble_local_diffusion(grid, ops.transmissibilities[k], cells);
      s.spectra.push_back(solve_local_spectral(local, std::min(basis_count, cells.size()), node));
    }
    s.projection = build_projection(s.spectra, coarse, pou, basis_count);
    s.coarse = assemble_coarse(s.projection, ops.diffusion[k], ops.mass);
    space.species.push_back(std::move(s));
  }
  return space;
}

OfflineSpace truncate_offline(const OfflineSpace& space, const fvm::FineOperators& ops,
                              std::size_t basis_count) {
  if (basis_count == 0 || basis_count > space.basis_count) {
    throw std::invalid_argument("truncate_offline: basis count must be in [1, " +
                                std::to_string(space.basis_count) + "]");
  }
  OfflineSpace out;
  out.fingerprint = space.fingerprint;
  out.basis_count = basis_count;
  out.fine_cells = space.fine_cells;
  for (std::size_t k = 0; k < space.species.size(); ++k) {
    const SpeciesSpace& src = space.species[k];
    SpeciesSpace s;
    for (const auto& spec : src.spectra) {
      LocalSpectralResult t;
      t.domain = spec.domain;
      const auto m = std::min<Eigen::Index>(static_cast<Eigen::Index>(basis_count), spec.eigenvalues.size());
      t.eigenvalues = spec.eigenvalues.head(m);
      if (spec.eigenvectors.cols() > 0) t.eigenvectors = spec.eigenvectors.leftCols(m);
      s.spectra.push_back(std::move(t));
    }
    s.projection = truncate_projection(src.projection, basis_count);
    s.coarse = assemble_coarse(s.projection, ops.diffusion[k], ops.mass);
    out.species.push_back(std::move(s));
  }
  return out;
}

MultiscaleStepper::MultiscaleStepper(const OfflineSpace& space, const fvm::FineOperators& ops,
                                     const fvm::CoefficientField& coeff,
                                     const stepping::TimeSteppingConfig& cfg)
    : space_(space), ops_(ops), coeff_(coeff), cfg_(cfg) {
  cfg_.validate();
  if (space_.species.size() != coeff_.species_count()) {
    throw std::invalid_argument("MultiscaleStepper: offline space has wrong species count");
  }
  if (space_.fine_cells != static_cast<std::size_t>(ops_.volumes.size())) {
    throw std::invalid_argument("MultiscaleStepper: offline space built for another grid");
  }
  for (const auto& s : space_.species) {
    linalg::SparseMatrix system = s.coarse.mass / cfg_.tau + s.coarse.stiffness;
    system.makeCompressed();
    solvers_.emplace_back(system, cfg_.coarse);
  }

  // Group fine cells by the local domains whose basis functions reach them;
  // for a structured overlay these are the coarse cells.
  const std::size_t n = space_.fine_cells;
  const std::size_t nspecies = space_.species.size();
  std::vector<std::vector<std::size_t>> nodes_of(n);
  for (const auto& s : space_.species) {
    for (std::size_t r = 0; r < s.projection.dof(); ++r) {
      for (linalg::SparseMatrix::InnerIterator it(s.projection.matrix, static_cast<Eigen::Index>(r)); it; ++it) {
        nodes_of[static_cast<std::size_t>(it.col())].push_back(s.projection.rows[r].node);
      }
    }
  }
  std::map<std::vector<std::size_t>, std::size_t> group;
  for (std::size_t c = 0; c < n; ++c) {
    auto& key = nodes_of[c];
    std::sort(key.begin(), key.end());
    key.erase(std::unique(key.begin(), key.end()), key.end());
    const auto [it, inserted] = group.try_emplace(key, blocks_.size());
    if (inserted) blocks_.emplace_back();
    blocks_[it->second].cells.push_back(c);
  }
  std::vector<std::size_t> block_of(n);
  std::vector<Eigen::Index> position(n);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    for (std::size_t p = 0; p < blocks_[b].cells.size(); ++p) {
      block_of[blocks_[b].cells[p]] = b;
      position[blocks_[b].cells[p]] = static_cast<Eigen::Index>(p);
    }
  }
  for (auto& block : blocks_) {
    block.rows.resize(nspecies);
    block.basis.resize(nspecies);
  }
  for (std::size_t k = 0; k < nspecies; ++k) {
    const auto& p = space_.species[k].projection.matrix;
    std::vector<Eigen::Index> column(blocks_.size());
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      for (linalg::SparseMatrix::InnerIterator it(p, r); it; ++it) {
        auto& rows = blocks_[block_of[static_cast<std::size_t>(it.col())]].rows[k];
        if (rows.empty() || rows.back() != r) rows.push_back(r);
      }
    }
    for (auto& block : blocks_) {
      block.basis[k] = linalg::DenseMatrix::Zero(static_cast<Eigen::Index>(block.cells.size()),
                                                 static_cast<Eigen::Index>(block.rows[k].size()));
    }
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      for (linalg::SparseMatrix::InnerIterator it(p, r); it; ++it) {
        const auto c = static_cast<std::size_t>(it.col());
        Block& block = blocks_[block_of[c]];
        const auto col = std::lower_bound(block.rows[k].begin(), block.rows[k].end(), r) - block.rows[k].begin();
        block.basis[k](position[c], col) = it.value();
      }
    }
  }
}

std::vector<linalg::Vector> MultiscaleStepper::projected_reaction(
    const std::vector<linalg::Vector>& coarse) const {
  const std::size_t nspecies = space_.species.size();
  std::vector<linalg::Vector> load;
  for (std::size_t k = 0; k < nspecies; ++k) load.push_back(linalg::Vector::Zero(coarse[k].size()));
  std::vector<linalg::Vector> u(nspecies);
  std::vector<linalg::Vector> r(nspecies);
  for (const Block& block : blocks_) {
    const auto m = static_cast<Eigen::Index>(block.cells.size());
    for (std::size_t k = 0; k < nspecies; ++k) {
      u[k].noalias() = block.basis[k] * coarse[k](block.rows[k]);
      r[k].resize(m);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      const std::size_t cell = block.cells[static_cast<std::size_t>(j)];
      const auto& rx = coeff_.reaction(cell);
      const double volume = ops_.volumes[static_cast<Eigen::Index>(cell)];
      for (std::size_t k = 0; k < nspecies; ++k) {
        const double uk = u[k][j];
        double competition = 0.0;
        for (std::size_t l = 0; l < nspecies; ++l) {
          if (l != k) competition += rx.alpha(k, l) * u[l][j];
        }
        r[k][j] = volume * (rx.growth[k] * uk * (1.0 - uk) - competition * uk);
      }
    }
    for (std::size_t k = 0; k < nspecies; ++k) {
      load[k](block.rows[k]) += block.basis[k].transpose() * r[k];
    }
  }
  return load;
}

std::vector<linalg::Vector> MultiscaleStepper::project(const fvm::SpeciesState& fine) const {
  std::vector<linalg::Vector> coarse;
  for (std::size_t k = 0; k < space_.species.size(); ++k) {
    const auto& s = space_.species[k];
    coarse.push_back(project_initial(fine.u[k], s.projection, ops_.mass, s.coarse.mass, cfg_.coarse));
  }
  return coarse;
}

fvm::SpeciesState MultiscaleStepper::reconstruct(const std::vector<linalg::Vector>& coarse) const {
  fvm::SpeciesState fine;
  for (std::size_t k = 0; k < space_.species.size(); ++k) {
    fine.u.push_back(reconstruct_fine(coarse[k], space_.species[k].projection));
  }
  return fine;
}

stepping::StepReport MultiscaleStepper::step(std::vector<linalg::Vector>& coarse) const {
  const auto start = Clock::now();
  // Every species' reaction load is formed before any coarse state is updated.
  const std::vector<linalg::Vector> load = projected_reaction(coarse);
  stepping::StepReport report;
  for (std::size_t k = 0; k < space_.species.size(); ++k) {
    const auto& s = space_.species[k];
    const linalg::Vector rhs = s.coarse.mass * coarse[k] / cfg_.tau + load[k];
    try {
      const auto r = solvers_[k].solve(rhs, coarse[k]);
      report.linear_iterations += r.iterations;
      report.residual_norm = std::max(report.residual_norm, r.relative_residual);
    } catch (const linalg::SolveError& e) {
      throw linalg::SolveError("coarse solve for species " + std::to_string(k) + ": " + e.what(),
                               e.residual());
    }
    if (!coarse[k].allFinite()) {
      throw std::runtime_error("coarse state of species " + std::to_string(k) + " is not finite");
    }
  }
  report.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

std::vector<linalg::Vector> step_ms(const std::vector<linalg::Vector>& coarse,
                                    const OfflineSpace& space, const fvm::FineOperators& ops,
                                    const fvm::CoefficientField& coeff,
                                    const stepping::TimeSteppingConfig& cfg) {
  std::vector<linalg::Vector> next = coarse;
  MultiscaleStepper(space, ops, coeff, cfg).step(next);
  return next;
}

MultiscaleResult solve_multiscale(const OfflineSpace& space, const fvm::SpeciesState& initial,
                                  const fvm::FineOperators& ops, const fvm::CoefficientField& coeff,
                                  const stepping::TimeSteppingConfig& cfg,
                                  const stepping::StepObserver& observer) {
  initial.validate(static_cast<std::size_t>(ops.volumes.size()));
  const MultiscaleStepper stepper(space, ops, coeff, cfg);
  MultiscaleResult result;
  result.final_coarse = stepper.project(initial);
  if (observer) observer(0, 0.0, stepper.reconstruct(result.final_coarse));

  double online = 0.0;
  for (int step = 1; step <= cfg.n_steps; ++step) {
    try {
      result.steps.push_back(stepper.step(result.final_coarse));
    } catch (const std::exception& e) {
      throw std::runtime_error("multiscale step " + std::to_string(step) + ": " + e.what());
    }
    online += result.steps.back().wall_time;
    if (observer) observer(step, step * cfg.tau, stepper.reconstruct(result.final_coarse));
  }
  result.wall_time = online;
  result.final_state = stepper.reconstruct(result.final_coarse);
  return result;
}

}  // namespace rdms::gmsfem
