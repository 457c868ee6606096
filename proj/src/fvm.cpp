#include "rdms/fvm.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <stdexcept>
#include <string>

namespace rdms::fvm {

namespace {

LocalReaction freeze(const std::vector<SpeciesCoefficients>& species, grid::Label label) {
  const std::size_t n = species.size();
  LocalReaction out;
  out.species = n;
  out.growth.resize(n);
  out.competition.assign(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    out.growth[k] = species[k].growth.at(label);
    for (std::size_t l = 0; l < n; ++l) {
      if (l != k) out.competition[k * n + l] = species[k].competition[l].at(label);
    }
  }
  return out;
}

}  // namespace

CoefficientField::CoefficientField(std::vector<SpeciesCoefficients> species,
                                   std::vector<grid::Label> labels)
    : species_(std::move(species)), labels_(std::move(labels)) {
  if (species_.empty()) throw std::invalid_argument("CoefficientField: no species");
  const std::size_t n = species_.size();
  bool negative = false;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = species_[k];
    if (!(s.diffusion.background > 0.0) || !(s.diffusion.inclusion > 0.0)) {
      throw std::invalid_argument("CoefficientField: diffusion of species " + std::to_string(k) +
                                  " must be strictly positive");
    }
    if (s.competition.size() != n) {
      throw std::invalid_argument("CoefficientField: species " + std::to_string(k) + " has " +
                                  std::to_string(s.competition.size()) +
                                  " competition entries, expected " + std::to_string(n));
    }
    auto check = [&](const RegionValues& v) {
      if (!std::isfinite(v.background) || !std::isfinite(v.inclusion)) {
        throw std::invalid_argument("CoefficientField: non-finite reaction coefficient");
      }
      negative = negative || v.background < 0.0 || v.inclusion < 0.0;
    };
    check(s.growth);
    for (std::size_t l = 0; l < n; ++l) {
      if (l != k) check(s.competition[l]);
    }
  }
  if (negative) spdlog::warn("coefficient field contains negative growth or competition rates");
  background_reaction_ = freeze(species_, grid::Label::background);
  inclusion_reaction_ = freeze(species_, grid::Label::inclusion);
}

void SpeciesState::validate(std::size_t cells) const {
  for (std::size_t k = 0; k < u.size(); ++k) {
    if (static_cast<std::size_t>(u[k].size()) != cells) {
      throw std::runtime_error("species " + std::to_string(k) + " has " +
                               std::to_string(u[k].size()) + " values, expected " +
                               std::to_string(cells));
    }
    if (!u[k].allFinite()) {
      Eigen::Index bad = 0;
      while (bad < u[k].size() && std::isfinite(u[k][bad])) ++bad;
      throw std::runtime_error("species " + std::to_string(k) + " has a non-finite value at cell " +
                               std::to_string(bad));
    }
  }
}

SpeciesState uniform_state(std::size_t species, std::size_t cells, double value) {
  SpeciesState s;
  s.u.assign(species, linalg::Vector::Constant(static_cast<Eigen::Index>(cells), value));
  return s;
}

double harmonic_average(double eps_i, double eps_j) {
  if (!(eps_i > 0.0) || !(eps_j > 0.0)) {
    throw std::invalid_argument("harmonic_average: arguments must be positive");
  }
  return 2.0 / (1.0 / eps_i + 1.0 / eps_j);
}

std::vector<double> assemble_transmissibilities(const grid::FineGrid& grid,
                                                const CoefficientField& coeff,
                                                std::size_t species) {
  if (coeff.cell_count() != grid.cell_count()) {
    throw std::invalid_argument("assemble_transmissibilities: coefficient field and grid differ");
  }
  const auto faces = grid.faces();
  std::vector<double> trans(faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const grid::Face& face = faces[f];
    const double eps =
        harmonic_average(coeff.diffusion(species, face.i), coeff.diffusion(species, face.j));
    trans[f] = eps * face.length / face.distance;
  }
  return trans;
}

linalg::SparseMatrix assemble_diffusion(const grid::FineGrid& grid,
                                        std::span<const double> trans) {
  const auto faces = grid.faces();
  if (trans.size() != faces.size()) {
    throw std::invalid_argument("assemble_diffusion: one transmissibility per face required");
  }
  const auto n = static_cast<int>(grid.cell_count());
  std::vector<double> diagonal(grid.cell_count(), 0.0);
  std::vector<linalg::Triplet> triplets;
  triplets.reserve(grid.cell_count() + 2 * faces.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto i = static_cast<int>(faces[f].i);
    const auto j = static_cast<int>(faces[f].j);
    triplets.emplace_back(i, j, -trans[f]);
    triplets.emplace_back(j, i, -trans[f]);
    diagonal[faces[f].i] += trans[f];
    diagonal[faces[f].j] += trans[f];
  }
  for (int i = 0; i < n; ++i) triplets.emplace_back(i, i, diagonal[static_cast<std::size_t>(i)]);
  linalg::SparseMatrix a(n, n);
  a.setFromTriplets(triplets.begin(), triplets.end());
  a.makeCompressed();
  return a;
}

linalg::SparseMatrix assemble_mass(const grid::FineGrid& grid) {
  const auto n = static_cast<int>(grid.cell_count());
  std::vector<linalg::Triplet> triplets;
  triplets.reserve(grid.cell_count());
  for (int i = 0; i < n; ++i) triplets.emplace_back(i, i, grid.volume(static_cast<std::size_t>(i)));
  linalg::SparseMatrix m(n, n);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

double eval_reaction(std::span<const double> u, const LocalReaction& coeff, std::size_t k) {
  double competition = 0.0;
  for (std::size_t l = 0; l < coeff.species; ++l) {
    if (l != k) competition += coeff.alpha(k, l) * u[l];
  }
  return coeff.growth[k] * u[k] * (1.0 - u[k]) - competition * u[k];
}

std::vector<double> eval_reaction_jacobian(std::span<const double> u, const LocalReaction& coeff,
                                           std::size_t k) {
  std::vector<double> row(coeff.species, 0.0);
  double competition = 0.0;
  for (std::size_t l = 0; l < coeff.species; ++l) {
    if (l == k) continue;
    competition += coeff.alpha(k, l) * u[l];
    row[l] = -coeff.alpha(k, l) * u[k];
  }
  row[k] = coeff.growth[k] * (1.0 - 2.0 * u[k]) - competition;
  return row;
}

namespace {

std::vector<double> gather(const SpeciesState& state, std::size_t cell) {
  std::vector<double> values(state.species_count());
  for (std::size_t k = 0; k < values.size(); ++k) values[k] = state.u[k][static_cast<Eigen::Index>(cell)];
  return values;
}

}  // namespace

double eval_reaction(const SpeciesState& state, const CoefficientField& coeff, std::size_t cell,
                     std::size_t species) {
  return eval_reaction(gather(state, cell), coeff.reaction(cell), species);
}

std::vector<double> eval_reaction_jacobian(const SpeciesState& state,
                                           const CoefficientField& coeff, std::size_t cell,
                                           std::size_t species) {
  return eval_reaction_jacobian(gather(state, cell), coeff.reaction(cell), species);
}

linalg::Vector reaction_load(const SpeciesState& state, const CoefficientField& coeff,
                             std::span<const double> volumes, std::size_t species) {
  const std::size_t n = volumes.size();
  const std::size_t nspecies = state.species_count();
  linalg::Vector load(static_cast<Eigen::Index>(n));
  std::vector<double> local(nspecies);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < nspecies; ++l) local[l] = state.u[l][static_cast<Eigen::Index>(i)];
    load[static_cast<Eigen::Index>(i)] = eval_reaction(local, coeff.reaction(i), species) * volumes[i];
  }
  return load;
}

FineOperators assemble_fine_operators(const grid::FineGrid& grid, const CoefficientField& coeff) {
  FineOperators ops;
  ops.mass = assemble_mass(grid);
  ops.volumes = Eigen::Map<const linalg::Vector>(grid.volumes().data(),
                                                 static_cast<Eigen::Index>(grid.cell_count()));
  for (std::size_t k = 0; k < coeff.species_count(); ++k) {
    ops.transmissibilities.push_back(assemble_transmissibilities(grid, coeff, k));
    ops.diffusion.push_back(assemble_diffusion(grid, ops.transmissibilities.back()));
  }
  return ops;
}

}  // namespace rdms::fvm
