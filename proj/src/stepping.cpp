#include "rdms/stepping.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace rdms::stepping {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

linalg::SparseMatrix shifted_operator(const linalg::SparseMatrix& mass,
                                      const linalg::SparseMatrix& diffusion, double tau) {
  linalg::SparseMatrix out = mass / tau + diffusion;
  out.makeCompressed();
  return out;
}

int value_index(const linalg::SparseMatrix& a, int row, int col) {
  const int* begin = a.innerIndexPtr() + a.outerIndexPtr()[row];
  const int* end = a.innerIndexPtr() + a.outerIndexPtr()[row + 1];
  const int* it = std::lower_bound(begin, end, col);
  if (it == end || *it != col) throw std::logic_error("missing entry in coupled sparsity pattern");
  return static_cast<int>(it - a.innerIndexPtr());
}

}  // namespace

void TimeSteppingConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("TimeSteppingConfig: tau must be positive");
  if (n_steps < 0) throw std::invalid_argument("TimeSteppingConfig: n_steps must be >= 0");
  if (!(newton_tol > 0.0)) throw std::invalid_argument("TimeSteppingConfig: newton_tol must be positive");
  if (newton_max_iters < 1) throw std::invalid_argument("TimeSteppingConfig: newton_max_iters must be >= 1");
  linear.validate();
  coupled.validate();
  coarse.validate();
}

double weighted_l2(const linalg::Vector& v, const linalg::Vector& volumes) {
  return std::sqrt((v.array().square() * volumes.array()).sum());
}

SemiImplicitStepper::SemiImplicitStepper(const fvm::FineOperators& ops,
                                         const fvm::CoefficientField& coeff,
                                         const TimeSteppingConfig& cfg)
    : ops_(ops), coeff_(coeff), cfg_(cfg) {
  cfg_.validate();
  for (const auto& a : ops_.diffusion) {
    solvers_.emplace_back(shifted_operator(ops_.mass, a, cfg_.tau), cfg_.linear);
  }
}

StepReport SemiImplicitStepper::step(fvm::SpeciesState& state) const {
  const auto start = Clock::now();
  const std::size_t nspecies = solvers_.size();
  const std::span<const double> volumes(ops_.volumes.data(),
                                        static_cast<std::size_t>(ops_.volumes.size()));

  // Every reaction load uses the previous level only, so the species decouple.
  std::vector<linalg::Vector> rhs(nspecies);
  for (std::size_t k = 0; k < nspecies; ++k) {
    rhs[k] = ops_.volumes.cwiseProduct(state.u[k]) / cfg_.tau +
             fvm::reaction_load(state, coeff_, volumes, k);
  }
  StepReport report;
  for (std::size_t k = 0; k < nspecies; ++k) {
    try {
      const auto r = solvers_[k].solve(rhs[k], state.u[k]);
      report.linear_iterations += r.iterations;
      report.residual_norm = std::max(report.residual_norm, r.relative_residual);
    } catch (const linalg::SolveError& e) {
      throw linalg::SolveError("SI solve for species " + std::to_string(k) + ": " + e.what(),
                               e.residual());
    }
  }
  state.validate(static_cast<std::size_t>(ops_.volumes.size()));
  report.wall_time = seconds_since(start);
  return report;
}

FullyImplicitStepper::FullyImplicitStepper(const fvm::FineOperators& ops,
                                           const fvm::CoefficientField& coeff,
                                           const TimeSteppingConfig& cfg)
    : ops_(ops), coeff_(coeff), cfg_(cfg), cells_(static_cast<std::size_t>(ops.volumes.size())),
      species_(ops.diffusion.size()) {
  cfg_.validate();
  const auto L = static_cast<int>(species_);
  const auto n = static_cast<int>(cells_);
  std::vector<linalg::Triplet> triplets;
  for (int k = 0; k < L; ++k) {
    const linalg::SparseMatrix shifted = shifted_operator(ops_.mass, ops_.diffusion[static_cast<std::size_t>(k)], cfg_.tau);
    for (int row = 0; row < n; ++row) {
      for (linalg::SparseMatrix::InnerIterator it(shifted, row); it; ++it) {
        triplets.emplace_back(row * L + k, static_cast<int>(it.col()) * L + k, it.value());
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < L; ++k) {
      for (int l = 0; l < L; ++l) triplets.emplace_back(i * L + k, i * L + l, 0.0);
    }
  }
  base_.resize(n * L, n * L);
  base_.setFromTriplets(triplets.begin(), triplets.end());
  base_.makeCompressed();

  block_offsets_.resize(cells_ * species_ * species_);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < L; ++k) {
      for (int l = 0; l < L; ++l) {
        block_offsets_[static_cast<std::size_t>((i * L + k) * L + l)] = value_index(base_, i * L + k, i * L + l);
      }
    }
  }
  if (cfg_.coupled.method == linalg::Method::krylov &&
      cfg_.coupled.preconditioner == linalg::Preconditioner::frozen) {
    frozen_ = std::make_unique<linalg::LinearSolver>(
        base_, linalg::LinearSolveSpec{linalg::Method::direct, linalg::Preconditioner::none,
                                       linalg::MatrixKind::spd, cfg_.coupled.rel_tol, 1, 1});
  }
}

StepReport FullyImplicitStepper::step(fvm::SpeciesState& state) const {
  const auto start = Clock::now();
  const std::size_t L = species_;
  const std::size_t n = cells_;
  const auto dim = static_cast<Eigen::Index>(n * L);
  const fvm::SpeciesState previous = state;
  corrections_.clear();

  StepReport report;
  linalg::SparseMatrix jacobian = base_;
  linalg::Vector residual(dim);
  linalg::Vector delta = linalg::Vector::Zero(dim);
  std::vector<double> local(L);

  for (int iter = 1; iter <= cfg_.newton_max_iters; ++iter) {
    // F^k = M (u^k - u_prev^k)/tau + A^k u^k - R^k(u) |K|
    std::vector<linalg::Vector> diffusion_term(L);
    for (std::size_t k = 0; k < L; ++k) diffusion_term[k] = ops_.diffusion[k] * state.u[k];

    std::copy_n(base_.valuePtr(), base_.nonZeros(), jacobian.valuePtr());
    double* values = jacobian.valuePtr();
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      for (std::size_t l = 0; l < L; ++l) local[l] = state.u[l][ii];
      const fvm::LocalReaction& rc = coeff_.reaction(i);
      const double vol = ops_.volumes[ii];
      for (std::size_t k = 0; k < L; ++k) {
        residual[static_cast<Eigen::Index>(i * L + k)] =
            vol * (state.u[k][ii] - previous.u[k][ii]) / cfg_.tau + diffusion_term[k][ii] -
            vol * fvm::eval_reaction(local, rc, k);
        const auto jac = fvm::eval_reaction_jacobian(local, rc, k);
        for (std::size_t l = 0; l < L; ++l) {
          values[block_offsets_[(i * L + k) * L + l]] -= vol * jac[l];
        }
      }
    }

    linalg::SolveReport lin;
    try {
      delta.setZero();
      if (frozen_) {
        const linalg::ApproximateInverse apply = [this](const linalg::Vector& v) {
          linalg::Vector y = linalg::Vector::Zero(v.size());
          frozen_->solve(v, y);
          return y;
        };
        lin = linalg::solve_gmres(jacobian, -residual, delta, apply, cfg_.coupled);
      } else {
        linalg::LinearSolver solver(jacobian, cfg_.coupled);
        lin = solver.solve(-residual, delta);
      }
    } catch (const linalg::SolveError& e) {
      throw linalg::SolveError("FI Newton iteration " + std::to_string(iter) + ": " + e.what(),
                               e.residual());
    }
    report.linear_iterations += lin.iterations;
    report.newton_iterations = iter;

    double correction = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
      linalg::Vector dk(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        dk[static_cast<Eigen::Index>(i)] = delta[static_cast<Eigen::Index>(i * L + k)];
      }
      state.u[k] += dk;
      correction = std::max(correction, weighted_l2(dk, ops_.volumes));
    }
    corrections_.push_back(correction);
    report.residual_norm = correction;
    state.validate(n);
    if (correction < cfg_.newton_tol) {
      report.wall_time = seconds_since(start);
      return report;
    }
  }
  throw NewtonError("Newton did not converge in " + std::to_string(cfg_.newton_max_iters) +
                        " iterations; last correction " + std::to_string(report.residual_norm),
                    report.residual_norm);
}

fvm::SpeciesState step_si(const fvm::SpeciesState& state, const fvm::FineOperators& ops,
                          const fvm::CoefficientField& coeff, const TimeSteppingConfig& cfg) {
  fvm::SpeciesState next = state;
  SemiImplicitStepper(ops, coeff, cfg).step(next);
  return next;
}

StepResult step_fi(const fvm::SpeciesState& state, const fvm::FineOperators& ops,
                   const fvm::CoefficientField& coeff, const TimeSteppingConfig& cfg) {
  StepResult out{state, {}};
  out.report = FullyImplicitStepper(ops, coeff, cfg).step(out.state);
  return out;
}

int TransientResult::total_newton_iterations() const {
  return std::accumulate(steps.begin(), steps.end(), 0,
                         [](int acc, const StepReport& r) { return acc + r.newton_iterations; });
}

int TransientResult::total_linear_iterations() const {
  return std::accumulate(steps.begin(), steps.end(), 0,
                         [](int acc, const StepReport& r) { return acc + r.linear_iterations; });
}

TransientResult solve_transient(Scheme scheme, const fvm::SpeciesState& initial,
                                const fvm::FineOperators& ops, const fvm::CoefficientField& coeff,
                                const TimeSteppingConfig& cfg, const StepObserver& observer) {
  cfg.validate();
  initial.validate(static_cast<std::size_t>(ops.volumes.size()));
  TransientResult result;
  result.final_state = initial;
  if (observer) observer(0, 0.0, result.final_state);
  if (cfg.n_steps == 0) return result;

  const auto start = Clock::now();
  double observer_time = 0.0;
  auto run = [&](const auto& stepper) {
    for (int step = 1; step <= cfg.n_steps; ++step) {
      try {
        result.steps.push_back(stepper.step(result.final_state));
      } catch (const std::exception& e) {
        throw std::runtime_error("time step " + std::to_string(step) + ": " + e.what());
      }
      if (observer) {
        const auto obs_start = Clock::now();
        observer(step, step * cfg.tau, result.final_state);
        observer_time += seconds_since(obs_start);
      }
    }
  };
  if (scheme == Scheme::si) {
    run(SemiImplicitStepper(ops, coeff, cfg));
  } else {
    run(FullyImplicitStepper(ops, coeff, cfg));
  }
  result.wall_time = seconds_since(start) - observer_time;
  return result;
}

std::vector<std::vector<double>> solve_ode_reference(const fvm::LocalReaction& coeff,
                                                     std::span<const double> u0, double t_max,
                                                     int n_steps) {
  if (u0.size() != coeff.species) {
    throw std::invalid_argument("solve_ode_reference: initial state has wrong species count");
  }
  if (n_steps < 1 || !(t_max > 0.0)) {
    throw std::invalid_argument("solve_ode_reference: need t_max > 0 and n_steps >= 1");
  }
  const std::size_t L = coeff.species;
  const double h = t_max / n_steps;
  auto rhs = [&](const std::vector<double>& u) {
    std::vector<double> du(L);
    for (std::size_t k = 0; k < L; ++k) du[k] = fvm::eval_reaction(u, coeff, k);
    return du;
  };
  auto axpy = [&](const std::vector<double>& u, double a, const std::vector<double>& d) {
    std::vector<double> out(L);
    for (std::size_t k = 0; k < L; ++k) out[k] = u[k] + a * d[k];
    return out;
  };

  std::vector<std::vector<double>> trajectory;
  trajectory.reserve(static_cast<std::size_t>(n_steps) + 1);
  trajectory.emplace_back(u0.begin(), u0.end());
  for (int s = 0; s < n_steps; ++s) {
    const auto& u = trajectory.back();
    const auto k1 = rhs(u);
    const auto k2 = rhs(axpy(u, 0.5 * h, k1));
    const auto k3 = rhs(axpy(u, 0.5 * h, k2));
    const auto k4 = rhs(axpy(u, h, k3));
    std::vector<double> next(L);
    for (std::size_t k = 0; k < L; ++k) {
      next[k] = u[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
    }
    trajectory.push_back(std::move(next));
  }
  return trajectory;
}

}  // namespace rdms::stepping
