#pragma once

// Damped Newton iteration on symmetric sparse systems with backtracking line search and
// diagonal regularization.

#include "bhem/common.hpp"

#include <Eigen/SparseCholesky>

#include <functional>
#include <memory>
#include <vector>

namespace bhem {

struct LineSearchConfig {
  double armijo = 1e-4;
  double shrink_min = 0.1;  // bounds on the interpolated step relative to the previous one
  double shrink_max = 0.5;
  double min_step = 1e-8;
};

enum class MeritKind {
  Potential,  // a scalar whose gradient is the residual
  Residual,   // 1/2 |R|^2
};

struct NewtonOptions {
  double tol = 1e-10;  // absolute bound on |R|
  int max_iters = 50;
  LineSearchConfig line_search;
  double regularization_init = 1e-8;  // times the mean |diagonal|
  double regularization_growth = 10.0;
  double regularization_cap = 1e4;
  MeritKind merit = MeritKind::Potential;
  /// Roundoff floor: a residual at or below this bound is accepted as converged when no
  /// descent step exists at the regularization cap, or when an iteration fails to halve it.
  double stall_tol = 0.0;
};

struct NewtonProblem {
  /// Residual at x; returns the potential when merit is Potential (ignored otherwise).
  std::function<double(const VecX& x, VecX& r)> residual;
  /// Potential only (used by line-search trials); optional, falls back to residual().
  std::function<double(const VecX& x)> potential;
  /// Symmetric Jacobian at x. The sparsity pattern must not change between calls.
  std::function<void(const VecX& x, SparseMat& J)> jacobian;
};

struct NewtonStats {
  int iterations = 0;
  double residual = 0.0;
  int regularizations = 0;
  bool converged = false;
  bool stalled = false;
  std::vector<double> merit_history;
};

/// Sparse symmetric factorization with the symbolic analysis cached across calls of the
/// same pattern: supernodal Cholesky (CHOLMOD, when built with it) for SPD requests,
/// LDL^T otherwise.
class SymmetricSolver {
 public:
  SymmetricSolver();
  ~SymmetricSolver();
  SymmetricSolver(const SymmetricSolver&) = delete;
  SymmetricSolver& operator=(const SymmetricSolver&) = delete;

  /// Factorizes J + shift I. Returns false if the factorization failed or produced a
  /// non-positive pivot (any vanishing pivot when require_spd is false).
  bool factorize(const SparseMat& J, double shift, bool require_spd = true);
  VecX solve(const VecX& b) const;

 private:
  struct Cholesky;
  std::unique_ptr<Cholesky> llt_;
  Eigen::SimplicialLDLT<SparseMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  long rows_ = -1, nnz_ = -1;         // pattern analysed by ldlt_
  long llt_rows_ = -1, llt_nnz_ = -1;  // pattern analysed by llt_
  bool use_llt_ = false;
  SparseMat shifted_;
};

/// Solves R(x) = 0 starting from x (updated in place). Throws SolveError when the
/// iteration cap is reached or no acceptable step exists at the regularization cap.
NewtonStats newton_solve(const NewtonProblem& problem, VecX& x, const NewtonOptions& opt,
                         SymmetricSolver* solver = nullptr);

}  // namespace bhem
