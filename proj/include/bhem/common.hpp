#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SparseCore>

#include <stdexcept>
#include <string>

namespace bhem {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using SparseMat = Eigen::SparseMatrix<double>;

/// Parameter or argument outside the admissible domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Tangent vectors are (numerically) parallel; no normal can be formed.
class SingularFrameError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Conflicting or malformed constraint prescriptions.
class ConstraintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Nonlinear solve failed to reach tolerance.
class SolveError : public std::runtime_error {
 public:
  SolveError(const std::string& what, double residual, int iterations)
      : std::runtime_error(what), residual_(residual), iterations_(iterations) {}
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

/// A time step could not be completed; carries the step index and last residual.
class StepFailure : public SolveError {
 public:
  StepFailure(const std::string& what, double residual, int iterations, long step = -1)
      : SolveError(what, residual, iterations), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

inline Mat3 cross_matrix(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

}  // namespace bhem
