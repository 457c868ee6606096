#pragma once

#include "rdms/fvm.hpp"
#include "rdms/linalg.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace rdms::stepping {

struct TimeSteppingConfig {
  double tau = 0.5;
  int n_steps = 100;
  /// Newton stops once max_k ||du^k||_{L2} (volume weighted) drops below this.
  double newton_tol = 1e-8;
  int newton_max_iters = 20;
  /// Per-species SI systems; the matrix is fixed, so one factorization serves every step.
  linalg::LinearSolveSpec linear{linalg::Method::direct, linalg::Preconditioner::none,
                                 linalg::MatrixKind::spd, 1e-10, 2000, 60};
  /// Coupled Newton systems of the fully implicit scheme. `frozen` preconditions
  /// GMRES with blockdiag(M/tau + A^k), factored once per stepper.
  linalg::LinearSolveSpec coupled{linalg::Method::krylov, linalg::Preconditioner::frozen,
                                  linalg::MatrixKind::general, 1e-10, 2000, 60};
  /// Multiscale coarse systems; these never change, so they are factored once.
  linalg::LinearSolveSpec coarse{linalg::Method::direct, linalg::Preconditioner::none,
                                 linalg::MatrixKind::spd, 1e-10, 2000, 60};

  void validate() const;
};

struct StepReport {
  int newton_iterations = 0;
  int linear_iterations = 0;
  double residual_norm = 0.0;  // last ||du|| for FI, last relative linear residual for SI
  double wall_time = 0.0;
};

class NewtonError : public std::runtime_error {
 public:
  NewtonError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Volume-weighted L2 norm (sum_i |K_i| v_i^2)^{1/2}.
double weighted_l2(const linalg::Vector& v, const linalg::Vector& volumes);

/// Semi-implicit scheme: implicit diffusion, reaction from the previous level.
/// (M/tau + A^k) u^k = M u_prev^k / tau + R^k(u_prev) |K|, one decoupled
/// system per species whose matrix is factored once at construction.
class SemiImplicitStepper {
 public:
  SemiImplicitStepper(const fvm::FineOperators& ops, const fvm::CoefficientField& coeff,
                      const TimeSteppingConfig& cfg);

  StepReport step(fvm::SpeciesState& state) const;

 private:
  const fvm::FineOperators& ops_;
  const fvm::CoefficientField& coeff_;
  TimeSteppingConfig cfg_;
  std::vector<linalg::LinearSolver> solvers_;
};

/// Fully implicit backward Euler solved by Newton on the coupled L*N system.
/// Unknowns are interleaved per cell (index = cell*L + k) so each cell's
/// reaction Jacobian is a dense L x L diagonal block.
class FullyImplicitStepper {
 public:
  FullyImplicitStepper(const fvm::FineOperators& ops, const fvm::CoefficientField& coeff,
                       const TimeSteppingConfig& cfg);

  StepReport step(fvm::SpeciesState& state) const;

  /// Newton correction norms from the most recent step, one per iteration.
  const std::vector<double>& last_corrections() const { return corrections_; }

 private:
  const fvm::FineOperators& ops_;
  const fvm::CoefficientField& coeff_;
  TimeSteppingConfig cfg_;
  std::size_t cells_;
  std::size_t species_;
  linalg::SparseMatrix base_;              // blockdiag(M/tau + A^k), interleaved, with zero L x L blocks
  std::unique_ptr<linalg::LinearSolver> frozen_;  // factorization of base_ for the frozen preconditioner
  std::vector<int> block_offsets_;         // value index of entry (cell*L+k, cell*L+l)
  mutable std::vector<double> corrections_;
};

fvm::SpeciesState step_si(const fvm::SpeciesState& state, const fvm::FineOperators& ops,
                          const fvm::CoefficientField& coeff, const TimeSteppingConfig& cfg);

struct StepResult {
  fvm::SpeciesState state;
  StepReport report;
};

StepResult step_fi(const fvm::SpeciesState& state, const fvm::FineOperators& ops,
                   const fvm::CoefficientField& coeff, const TimeSteppingConfig& cfg);

enum class Scheme { fi, si };

struct TransientResult {
  fvm::SpeciesState final_state;
  std::vector<StepReport> steps;
  double wall_time = 0.0;  // solve loop only

  int total_newton_iterations() const;
  int total_linear_iterations() const;
};

/// Called with (step index, time, state) at step 0 and after every step.
using StepObserver = std::function<void(int, double, const fvm::SpeciesState&)>;

TransientResult solve_transient(Scheme scheme, const fvm::SpeciesState& initial,
                                const fvm::FineOperators& ops, const fvm::CoefficientField& coeff,
                                const TimeSteppingConfig& cfg, const StepObserver& observer = {});

/// Classical RK4 for du/dt = R(u) with coefficients of one subdomain.
/// Returns n_steps + 1 states (including u0), each of length L.
std::vector<std::vector<double>> solve_ode_reference(const fvm::LocalReaction& coeff,
                                                     std::span<const double> u0, double t_max,
                                                     int n_steps);

}  // namespace rdms::stepping
