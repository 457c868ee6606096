#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>

namespace rdms::linalg {

/// Compressed-row sparse matrix with sorted column indices.
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;
using Triplet = Eigen::Triplet<double, int>;
using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;

enum class Method { krylov, direct };
/// `frozen` applies a fixed approximate inverse supplied by the caller (see
/// solve_gmres); LinearSolver rejects it.
enum class Preconditioner { none, jacobi, incomplete, frozen };
/// `spd` selects conjugate gradients / LDL^T, `general` selects GMRES / LU.
enum class MatrixKind { spd, general };

struct LinearSolveSpec {
  Method method = Method::krylov;
  Preconditioner preconditioner = Preconditioner::jacobi;
  MatrixKind kind = MatrixKind::spd;
  double rel_tol = 1e-10;
  int max_iters = 2000;
  int gmres_restart = 60;

  void validate() const;
};

struct SolveReport {
  int iterations = 0;
  double relative_residual = 0.0;  // recomputed ||b - Ax|| / ||b||
};

class SolveError : public std::runtime_error {
 public:
  SolveError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// y = A x. Throws std::invalid_argument on dimension mismatch.
Vector spmv(const SparseMatrix& a, const Vector& x);

/// Linear solver bound to one matrix. Preconditioners and factorizations are
/// computed once in `compute` and reused by every `solve`.
class LinearSolver {
 public:
  explicit LinearSolver(LinearSolveSpec spec = {});
  LinearSolver(const SparseMatrix& a, LinearSolveSpec spec);
  ~LinearSolver();
  LinearSolver(LinearSolver&&) noexcept;
  LinearSolver& operator=(LinearSolver&&) noexcept;

  void compute(const SparseMatrix& a);

  /// Solves A x = b using `x` as the initial guess for Krylov methods.
  /// Throws SolveError when the relative residual exceeds `rel_tol`.
  SolveReport solve(const Vector& b, Vector& x) const;

  const LinearSolveSpec& spec() const { return spec_; }
  Eigen::Index rows() const;

 private:
  struct Backend;
  LinearSolveSpec spec_;
  std::unique_ptr<Backend> backend_;
};

struct LinearSolution {
  Vector x;
  SolveReport report;
};

LinearSolution solve_linear(const SparseMatrix& a, const Vector& b, const LinearSolveSpec& spec);

/// Approximate inverse applied as a preconditioner, e.g. the solve of a
/// factored nearby operator.
using ApproximateInverse = std::function<Vector(const Vector&)>;

/// Restarted GMRES on A x = b preconditioned by `apply`, starting from `x`.
/// Throws SolveError when the relative residual exceeds `spec.rel_tol`.
SolveReport solve_gmres(const SparseMatrix& a, const Vector& b, Vector& x,
                        const ApproximateInverse& apply, const LinearSolveSpec& spec);

struct EigenPairs {
  Vector values;        // ascending
  DenseMatrix vectors;  // orthonormal columns
};

/// The m smallest eigenpairs of a dense symmetric matrix.
EigenPairs eig_sym_smallest(const DenseMatrix& a, Eigen::Index m);

/// Largest absolute row sum (the infinity norm), used as the scale for residual bounds.
double norm_inf(const SparseMatrix& a);

}  // namespace rdms::linalg
