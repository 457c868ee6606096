#pragma once

#include "rdms/grid.hpp"
#include "rdms/linalg.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace rdms::fvm {

/// A coefficient that is constant on the background and on the inclusions.
struct RegionValues {
  double background = 0.0;
  double inclusion = 0.0;

  double at(grid::Label label) const {
    return label == grid::Label::inclusion ? inclusion : background;
  }
};

struct SpeciesCoefficients {
  RegionValues diffusion;  // eps^k
  RegionValues growth;     // r^k
  /// competition[l] = alpha^{kl}; the entry l == k is ignored.
  std::vector<RegionValues> competition;
};

/// Reaction coefficients r^k and alpha^{kl} frozen at one subdomain label.
struct LocalReaction {
  std::size_t species = 0;
  std::vector<double> growth;       // r^k
  std::vector<double> competition;  // alpha^{kl}, row-major L x L, diagonal zero

  double alpha(std::size_t k, std::size_t l) const { return competition[k * species + l]; }
};

/// Per-species piecewise-constant eps, r, alpha resolved per cell through subdomain labels.
class CoefficientField {
 public:
  CoefficientField(std::vector<SpeciesCoefficients> species, std::vector<grid::Label> labels);

  std::size_t species_count() const { return species_.size(); }
  std::size_t cell_count() const { return labels_.size(); }
  const std::vector<SpeciesCoefficients>& species() const { return species_; }
  std::span<const grid::Label> labels() const { return labels_; }

  double diffusion(std::size_t k, std::size_t cell) const {
    return species_[k].diffusion.at(labels_[cell]);
  }
  double growth(std::size_t k, std::size_t cell) const {
    return species_[k].growth.at(labels_[cell]);
  }
  double competition(std::size_t k, std::size_t l, std::size_t cell) const {
    return k == l ? 0.0 : species_[k].competition[l].at(labels_[cell]);
  }

  const LocalReaction& reaction_at(grid::Label label) const {
    return label == grid::Label::inclusion ? inclusion_reaction_ : background_reaction_;
  }
  const LocalReaction& reaction(std::size_t cell) const { return reaction_at(labels_[cell]); }

 private:
  std::vector<SpeciesCoefficients> species_;
  std::vector<grid::Label> labels_;
  LocalReaction background_reaction_;
  LocalReaction inclusion_reaction_;
};

/// Fine-grid cell averages u[k][i] for every species.
struct SpeciesState {
  std::vector<linalg::Vector> u;

  std::size_t species_count() const { return u.size(); }
  /// Throws std::runtime_error on wrong lengths or non-finite values.
  void validate(std::size_t cells) const;
};

SpeciesState uniform_state(std::size_t species, std::size_t cells, double value);

/// 2 / (1/a + 1/b); throws std::invalid_argument unless both are positive.
double harmonic_average(double eps_i, double eps_j);

/// T_ij = eps_ij |e_ij| / d_ij, one value per interior face in grid order.
std::vector<double> assemble_transmissibilities(const grid::FineGrid& grid,
                                                const CoefficientField& coeff, std::size_t species);

/// TPFA diffusion operator: diagonal sum_j T_ij, off-diagonal -T_ij.
linalg::SparseMatrix assemble_diffusion(const grid::FineGrid& grid, std::span<const double> trans);

/// Diagonal mass operator diag(|K_i|).
linalg::SparseMatrix assemble_mass(const grid::FineGrid& grid);

/// R^k = r^k u^k (1 - u^k) - sum_{l != k} alpha^{kl} u^k u^l at one point.
double eval_reaction(std::span<const double> u, const LocalReaction& coeff, std::size_t species);

/// Row k of the reaction Jacobian: dR^k/du^j for j = 0..L-1.
std::vector<double> eval_reaction_jacobian(std::span<const double> u, const LocalReaction& coeff,
                                           std::size_t species);

/// Cell-level convenience forms of the above, gathering u^1..u^L at `cell`.
double eval_reaction(const SpeciesState& state, const CoefficientField& coeff, std::size_t cell,
                     std::size_t species);
std::vector<double> eval_reaction_jacobian(const SpeciesState& state,
                                           const CoefficientField& coeff, std::size_t cell,
                                           std::size_t species);

/// Vector with entries R^k_i(u_i) |K_i| for one species (the volume factor is applied once).
linalg::Vector reaction_load(const SpeciesState& state, const CoefficientField& coeff,
                             std::span<const double> volumes, std::size_t species);

/// Mass matrix and per-species diffusion operators on the fine grid.
struct FineOperators {
  linalg::SparseMatrix mass;
  linalg::Vector volumes;
  std::vector<std::vector<double>> transmissibilities;
  std::vector<linalg::SparseMatrix> diffusion;
};

FineOperators assemble_fine_operators(const grid::FineGrid& grid, const CoefficientField& coeff);

}  // namespace rdms::fvm
