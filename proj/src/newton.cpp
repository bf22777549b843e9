#include "bhem/newton.hpp"

#ifdef BHEM_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

#include <algorithm>
#include <cmath>
#include <limits>

namespace bhem {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double mean_abs_diagonal(const SparseMat& J) {
  double s = 0.0;
  for (int j = 0; j < J.outerSize(); ++j)
    for (SparseMat::InnerIterator it(J, j); it; ++it)
      if (it.row() == j) s += std::abs(it.value());
  return J.rows() > 0 && s > 0.0 ? s / J.rows() : 1.0;
}

// Minimizer of the cubic through (0, f0, g0), (a1, f1), (a2, f2).
double cubic_step(double f0, double g0, double a1, double f1, double a2, double f2) {
  const double r1 = f1 - f0 - g0 * a1;
  const double r2 = f2 - f0 - g0 * a2;
  const double den = a1 * a1 * a2 * a2 * (a2 - a1);
  const double a = (a1 * a1 * r2 - a2 * a2 * r1) / den;
  const double b = (-a1 * a1 * a1 * r2 + a2 * a2 * a2 * r1) / den;
  if (a == 0.0) return -g0 / (2.0 * b);
  const double disc = b * b - 3.0 * a * g0;
  if (disc < 0.0) return kInf;
  return (-b + std::sqrt(disc)) / (3.0 * a);
}

}  // namespace

#ifdef BHEM_HAVE_CHOLMOD
struct SymmetricSolver::Cholesky {
  Eigen::CholmodSupernodalLLT<SparseMat, Eigen::Lower> f;
  Cholesky() { f.cholmod().print = 0; }
};
#else
struct SymmetricSolver::Cholesky {};
#endif

SymmetricSolver::SymmetricSolver() = default;
SymmetricSolver::~SymmetricSolver() = default;

bool SymmetricSolver::factorize(const SparseMat& J, double shift, bool require_spd) {
  shifted_ = J;
  if (shift != 0.0) {
    for (int j = 0; j < shifted_.outerSize(); ++j)
      for (SparseMat::InnerIterator it(shifted_, j); it; ++it)
        if (it.row() == j) it.valueRef() += shift;
  }
#ifdef BHEM_HAVE_CHOLMOD
  use_llt_ = require_spd && shifted_.rows() > 0;
  if (use_llt_) {
    if (!llt_) llt_ = std::make_unique<Cholesky>();
    if (shifted_.rows() != llt_rows_ || shifted_.nonZeros() != llt_nnz_) {
      llt_->f.analyzePattern(shifted_);
      llt_rows_ = shifted_.rows();
      llt_nnz_ = shifted_.nonZeros();
    }
    llt_->f.factorize(shifted_);
    return llt_->f.info() == Eigen::Success;
  }
#endif
  if (shifted_.rows() != rows_ || shifted_.nonZeros() != nnz_) {
    ldlt_.analyzePattern(shifted_);
    rows_ = shifted_.rows();
    nnz_ = shifted_.nonZeros();
  }
  ldlt_.factorize(shifted_);
  if (ldlt_.info() != Eigen::Success) return false;
  if (rows_ == 0) return true;
  const VecX d = ldlt_.vectorD();
  if (!d.allFinite()) return false;
  if (require_spd) return d.minCoeff() > 0.0;
  return d.cwiseAbs().minCoeff() > 1e-14 * d.cwiseAbs().maxCoeff();
}

VecX SymmetricSolver::solve(const VecX& b) const {
  if (b.size() == 0) return b;
#ifdef BHEM_HAVE_CHOLMOD
  if (use_llt_) return llt_->f.solve(b);
#endif
  return ldlt_.solve(b);
}

NewtonStats newton_solve(const NewtonProblem& pb, VecX& x, const NewtonOptions& opt,
                         SymmetricSolver* external) {
  SymmetricSolver local;
  SymmetricSolver& solver = external ? *external : local;
  const bool residual_merit = opt.merit == MeritKind::Residual;
  const auto& ls = opt.line_search;

  NewtonStats st;
  VecX r;
  double phi = pb.residual(x, r);
  if (residual_merit) phi = 0.5 * r.squaredNorm();
  st.residual = r.norm();
  st.merit_history.push_back(phi);

  auto trial_merit = [&](const VecX& xt, VecX* rt) -> double {
    try {
      if (residual_merit || !pb.potential || rt) {
        VecX tmp;
        VecX& rr = rt ? *rt : tmp;
        const double p = pb.residual(xt, rr);
        const double m = residual_merit ? 0.5 * rr.squaredNorm() : p;
        return std::isfinite(m) && rr.allFinite() ? m : kInf;
      }
      const double p = pb.potential(xt);
      return std::isfinite(p) ? p : kInf;
    } catch (const SingularFrameError&) {
      return kInf;
    }
  };

  SparseMat J;
  for (;;) {
    if (!std::isfinite(st.residual)) throw SolveError("newton: non-finite residual", st.residual, st.iterations);
    if (st.residual <= opt.tol) {
      st.converged = true;
      return st;
    }
    if (st.iterations >= opt.max_iters) {
      throw SolveError("newton: iteration cap reached", st.residual, st.iterations);
    }
    pb.jacobian(x, J);
    const double mean_diag = mean_abs_diagonal(J);
    double shift = 0.0;
    bool accepted = false;
    while (!accepted) {
      if (solver.factorize(J, shift, !residual_merit)) {
        const VecX d = solver.solve(-r);
        const double slope = residual_merit ? (J * r).dot(d) : r.dot(d);
        if (d.allFinite() && slope < 0.0) {
          double s = 1.0, s_prev = 0.0, phi_prev = 0.0;
          for (int k = 0;; ++k) {
            const VecX xt = x + s * d;
            const double pt = trial_merit(xt, nullptr);
            bool ok = pt <= phi + ls.armijo * s * slope;
            VecX rt;
            double pr = pt;
            if (!ok && std::isfinite(pt) &&
                std::abs(s * slope) <= 1e-10 * std::max(std::abs(phi), std::abs(pt))) {
              // predicted decrease is below roundoff of the merit: use residual decrease
              pr = trial_merit(xt, &rt);
              ok = std::isfinite(pr) && rt.norm() < st.residual;
            }
            if (ok) {
              x = xt;
              if (rt.size() == 0) {
                const double p = pb.residual(x, r);
                phi = residual_merit ? 0.5 * r.squaredNorm() : p;
              } else {
                r = rt;
                phi = pr;
              }
              accepted = true;
              break;
            }
            double s_new;
            if (!std::isfinite(pt)) {
              s_new = ls.shrink_max * s;
            } else if (k == 0) {
              s_new = -slope * s * s / (2.0 * (pt - phi - slope * s));
            } else {
              s_new = cubic_step(phi, slope, s_prev, phi_prev, s, pt);
            }
            if (!std::isfinite(s_new)) s_new = ls.shrink_max * s;
            s_new = std::clamp(s_new, ls.shrink_min * s, ls.shrink_max * s);
            s_prev = s;
            phi_prev = pt;
            s = s_new;
            if (s < ls.min_step) break;
          }
        }
      }
      if (accepted) break;
      shift = shift == 0.0 ? opt.regularization_init * mean_diag : shift * opt.regularization_growth;
      ++st.regularizations;
      if (shift > opt.regularization_cap * mean_diag) {
        if (st.residual <= opt.stall_tol) {
          st.converged = true;
          st.stalled = true;
          return st;
        }
        throw SolveError("newton: no acceptable step at the regularization cap", st.residual,
                         st.iterations);
      }
    }
    ++st.iterations;
    const double prev = st.residual;
    st.residual = r.norm();
    st.merit_history.push_back(phi);
    if (st.residual > opt.tol && st.residual <= opt.stall_tol && st.residual > 0.5 * prev) {
      st.converged = true;
      st.stalled = true;
      return st;
    }
  }
}

}  // namespace bhem
