#include "rdms/linalg.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <unsupported/Eigen/IterativeSolvers>

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <variant>

namespace rdms::linalg {

void LinearSolveSpec::validate() const {
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) {
    throw std::invalid_argument("LinearSolveSpec: rel_tol must lie in (0, 1)");
  }
  if (max_iters < 1) throw std::invalid_argument("LinearSolveSpec: max_iters must be >= 1");
  if (gmres_restart < 1) throw std::invalid_argument("LinearSolveSpec: gmres_restart must be >= 1");
}

Vector spmv(const SparseMatrix& a, const Vector& x) {
  if (a.cols() != x.size()) {
    throw std::invalid_argument("spmv: matrix has " + std::to_string(a.cols()) +
                                " columns but vector has " + std::to_string(x.size()) +
                                " entries");
  }
  Vector y = Vector::Zero(a.rows());
  const int* outer = a.outerIndexPtr();
  const int* inner = a.innerIndexPtr();
  const double* values = a.valuePtr();
  for (Eigen::Index row = 0; row < a.rows(); ++row) {
    double sum = 0.0;
    for (int k = outer[row]; k < outer[row + 1]; ++k) sum += values[k] * x[inner[k]];
    y[row] = sum;
  }
  return y;
}

double norm_inf(const SparseMatrix& a) {
  double best = 0.0;
  for (Eigen::Index row = 0; row < a.outerSize(); ++row) {
    double sum = 0.0;
    for (SparseMatrix::InnerIterator it(a, row); it; ++it) sum += std::abs(it.value());
    best = std::max(best, sum);
  }
  return best;
}

namespace {

using ColMajor = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
constexpr int kSym = Eigen::Lower | Eigen::Upper;

using CgPlain = Eigen::ConjugateGradient<SparseMatrix, kSym, Eigen::IdentityPreconditioner>;
using CgJacobi = Eigen::ConjugateGradient<SparseMatrix, kSym, Eigen::DiagonalPreconditioner<double>>;
using CgIncomplete = Eigen::ConjugateGradient<
    SparseMatrix, kSym, Eigen::IncompleteCholesky<double, Eigen::Lower, Eigen::AMDOrdering<int>>>;
using GmresPlain = Eigen::GMRES<SparseMatrix, Eigen::IdentityPreconditioner>;
using GmresJacobi = Eigen::GMRES<SparseMatrix, Eigen::DiagonalPreconditioner<double>>;
using GmresIncomplete = Eigen::GMRES<SparseMatrix, Eigen::IncompleteLUT<double, int>>;
using Ldlt = Eigen::SimplicialLDLT<ColMajor, Eigen::Lower, Eigen::AMDOrdering<int>>;
using Lu = Eigen::SparseLU<ColMajor, Eigen::COLAMDOrdering<int>>;

template <class S>
using Owned = std::unique_ptr<S>;

constexpr const char* kFrozenMessage =
    "LinearSolver: the frozen preconditioner needs an operator; use solve_gmres";

/// Adapts an ApproximateInverse to Eigen's preconditioner interface.
class FunctionPreconditioner {
 public:
  using StorageIndex = int;
  enum { ColsAtCompileTime = Eigen::Dynamic, MaxColsAtCompileTime = Eigen::Dynamic };

  FunctionPreconditioner() = default;
  template <class M>
  explicit FunctionPreconditioner(const M&) {}
  template <class M>
  FunctionPreconditioner& analyzePattern(const M&) { return *this; }
  template <class M>
  FunctionPreconditioner& factorize(const M&) { return *this; }
  template <class M>
  FunctionPreconditioner& compute(const M&) { return *this; }

  void set(const ApproximateInverse* apply) { apply_ = apply; }
  template <class Rhs>
  Vector solve(const Rhs& b) const { return (*apply_)(Vector(b)); }
  Eigen::ComputationInfo info() const { return Eigen::Success; }

 private:
  const ApproximateInverse* apply_ = nullptr;
};

}  // namespace

struct LinearSolver::Backend {
  SparseMatrix matrix;  // kept for residual checks; iterative solvers reference it
  std::variant<Owned<CgPlain>, Owned<CgJacobi>, Owned<CgIncomplete>, Owned<GmresPlain>,
               Owned<GmresJacobi>, Owned<GmresIncomplete>, Owned<Ldlt>, Owned<Lu>>
      solver;
};

LinearSolver::LinearSolver(LinearSolveSpec spec) : spec_(spec) { spec_.validate(); }

LinearSolver::LinearSolver(const SparseMatrix& a, LinearSolveSpec spec) : LinearSolver(spec) {
  compute(a);
}

LinearSolver::~LinearSolver() = default;
LinearSolver::LinearSolver(LinearSolver&&) noexcept = default;
LinearSolver& LinearSolver::operator=(LinearSolver&&) noexcept = default;

Eigen::Index LinearSolver::rows() const { return backend_ ? backend_->matrix.rows() : 0; }

namespace {

template <class S>
Owned<S> make_iterative(const SparseMatrix& a, const LinearSolveSpec& spec) {
  auto s = std::make_unique<S>();
  s->setTolerance(spec.rel_tol);
  s->setMaxIterations(spec.max_iters);
  if constexpr (std::is_same_v<S, GmresPlain> || std::is_same_v<S, GmresJacobi> ||
                std::is_same_v<S, GmresIncomplete>) {
    s->set_restart(spec.gmres_restart);
  }
  s->compute(a);
  if (s->info() != Eigen::Success) {
    throw SolveError("LinearSolver: preconditioner setup failed", 0.0);
  }
  return s;
}

}  // namespace

void LinearSolver::compute(const SparseMatrix& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("LinearSolver: matrix must be square");
  auto backend = std::make_unique<Backend>();
  backend->matrix = a;
  const SparseMatrix& m = backend->matrix;

  if (spec_.method == Method::direct) {
    ColMajor cm = m;
    if (spec_.kind == MatrixKind::spd) {
      auto s = std::make_unique<Ldlt>();
      s->compute(cm);
      if (s->info() != Eigen::Success) throw SolveError("LinearSolver: LDL^T factorization failed", 0.0);
      backend->solver = std::move(s);
    } else {
      auto s = std::make_unique<Lu>();
      s->compute(cm);
      if (s->info() != Eigen::Success) throw SolveError("LinearSolver: LU factorization failed", 0.0);
      backend->solver = std::move(s);
    }
  } else if (spec_.kind == MatrixKind::spd) {
    switch (spec_.preconditioner) {
      case Preconditioner::frozen: throw std::invalid_argument(kFrozenMessage);
      case Preconditioner::none: backend->solver = make_iterative<CgPlain>(m, spec_); break;
      case Preconditioner::jacobi: backend->solver = make_iterative<CgJacobi>(m, spec_); break;
      case Preconditioner::incomplete: backend->solver = make_iterative<CgIncomplete>(m, spec_); break;
    }
  } else {
    switch (spec_.preconditioner) {
      case Preconditioner::frozen: throw std::invalid_argument(kFrozenMessage);
      case Preconditioner::none: backend->solver = make_iterative<GmresPlain>(m, spec_); break;
      case Preconditioner::jacobi: backend->solver = make_iterative<GmresJacobi>(m, spec_); break;
      case Preconditioner::incomplete: backend->solver = make_iterative<GmresIncomplete>(m, spec_); break;
    }
  }
  backend_ = std::move(backend);
}

SolveReport LinearSolver::solve(const Vector& b, Vector& x) const {
  if (!backend_) throw std::logic_error("LinearSolver::solve called before compute");
  const SparseMatrix& a = backend_->matrix;
  if (b.size() != a.rows()) throw std::invalid_argument("LinearSolver: right-hand side size mismatch");
  if (x.size() != a.cols()) x = Vector::Zero(a.cols());

  SolveReport report;
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    x.setZero();
    return report;
  }
  auto true_residual = [&] { return (b - a * x).norm() / bnorm; };

  // Recursive Krylov residuals can drift from the true residual, so restart
  // from the current iterate until the recomputed residual meets the bound.
  constexpr int kMaxRestarts = 4;
  bool converged = false;
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(*s)>;
        if constexpr (std::is_same_v<S, Ldlt> || std::is_same_v<S, Lu>) {
          x = s->solve(b);
          report.iterations = 1;
          report.relative_residual = true_residual();
          converged = s->info() == Eigen::Success;
          for (int refine = 0; converged && refine < kMaxRestarts &&
                               report.relative_residual > spec_.rel_tol;
               ++refine) {
            x += s->solve(Vector(b - a * x));
            report.relative_residual = true_residual();
          }
          converged = converged && report.relative_residual <= spec_.rel_tol;
        } else {
          for (int pass = 0; pass <= kMaxRestarts; ++pass) {
            x = s->solveWithGuess(b, x);
            report.iterations += static_cast<int>(s->iterations());
            report.relative_residual = true_residual();
            if (report.relative_residual <= spec_.rel_tol) {
              converged = true;
              break;
            }
            if (report.iterations >= spec_.max_iters) break;
          }
        }
      },
      backend_->solver);

  if (!converged || !std::isfinite(report.relative_residual)) {
    throw SolveError("linear solve did not converge: relative residual " +
                         std::to_string(report.relative_residual) + " after " +
                         std::to_string(report.iterations) + " iterations",
                     report.relative_residual);
  }
  return report;
}

SolveReport solve_gmres(const SparseMatrix& a, const Vector& b, Vector& x,
                        const ApproximateInverse& apply, const LinearSolveSpec& spec) {
  spec.validate();
  if (a.rows() != a.cols() || b.size() != a.rows()) {
    throw std::invalid_argument("solve_gmres: dimension mismatch");
  }
  if (!apply) throw std::invalid_argument("solve_gmres: no preconditioner given");
  if (x.size() != a.cols()) x = Vector::Zero(a.cols());
  SolveReport report;
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    x.setZero();
    return report;
  }
  Eigen::GMRES<SparseMatrix, FunctionPreconditioner> gmres;
  gmres.setTolerance(spec.rel_tol);
  gmres.setMaxIterations(spec.max_iters);
  gmres.set_restart(spec.gmres_restart);
  gmres.preconditioner().set(&apply);
  gmres.compute(a);
  constexpr int kMaxRestarts = 4;
  for (int pass = 0; pass <= kMaxRestarts; ++pass) {
    x = gmres.solveWithGuess(b, x);
    report.iterations += static_cast<int>(gmres.iterations());
    report.relative_residual = (b - a * x).norm() / bnorm;
    if (report.relative_residual <= spec.rel_tol) return report;
    if (report.iterations >= spec.max_iters) break;
  }
  throw SolveError("GMRES did not converge: relative residual " +
                       std::to_string(report.relative_residual) + " after " +
                       std::to_string(report.iterations) + " iterations",
                   report.relative_residual);
}

LinearSolution solve_linear(const SparseMatrix& a, const Vector& b, const LinearSolveSpec& spec) {
  LinearSolver solver(a, spec);
  LinearSolution out;
  out.x = Vector::Zero(a.cols());
  out.report = solver.solve(b, out.x);
  return out;
}

EigenPairs eig_sym_smallest(const DenseMatrix& a, Eigen::Index m) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("eig_sym_smallest: matrix must be square");
  if (m < 0 || m > n) {
    throw std::invalid_argument("eig_sym_smallest: requested " + std::to_string(m) +
                                " eigenpairs of a " + std::to_string(n) + "x" +
                                std::to_string(n) + " matrix");
  }
  const double scale = n > 0 ? a.cwiseAbs().maxCoeff() : 0.0;
  if (n > 0 && (a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(scale, 1e-300)) {
    throw std::invalid_argument("eig_sym_smallest: matrix is not symmetric");
  }
  EigenPairs out;
  out.values.resize(m);
  out.vectors.resize(n, m);
  if (m == 0) return out;

  DenseMatrix work = a;
  Vector w(n);
  std::vector<lapack_int> support(2 * static_cast<std::size_t>(m));
  lapack_int found = 0;
  const lapack_int info = LAPACKE_dsyevr(
      LAPACK_COL_MAJOR, 'V', 'I', 'L', static_cast<lapack_int>(n), work.data(),
      static_cast<lapack_int>(n), 0.0, 0.0, 1, static_cast<lapack_int>(m), LAPACKE_dlamch('S'),
      &found, w.data(), out.vectors.data(), static_cast<lapack_int>(n), support.data());
  if (info != 0 || found != m) {
    throw std::runtime_error("eig_sym_smallest: LAPACK dsyevr failed (info=" +
                             std::to_string(info) + ")");
  }
  out.values = w.head(m);

  // Sign convention: largest-magnitude entry positive (first such index on ties).
  for (Eigen::Index col = 0; col < m; ++col) {
    Eigen::Index arg = 0;
    out.vectors.col(col).cwiseAbs().maxCoeff(&arg);
    if (out.vectors(arg, col) < 0.0) out.vectors.col(col) *= -1.0;
  }
  // Exact ties are ordered lexicographically by the normalized vectors.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index p, Eigen::Index q) {
    if (out.values[p] != out.values[q]) return out.values[p] < out.values[q];
    const auto vp = out.vectors.col(p);
    const auto vq = out.vectors.col(q);
    return std::lexicographical_compare(vp.begin(), vp.end(), vq.begin(), vq.end());
  });
  EigenPairs sorted;
  sorted.values.resize(m);
  sorted.vectors.resize(n, m);
  for (Eigen::Index col = 0; col < m; ++col) {
    sorted.values[col] = out.values[order[static_cast<std::size_t>(col)]];
    sorted.vectors.col(col) = out.vectors.col(order[static_cast<std::size_t>(col)]);
  }
  return sorted;
}

}  // namespace rdms::linalg
