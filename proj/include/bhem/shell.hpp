#pragma once

// Kirchhoff-Love continuum quantities: fundamental forms, strains, St. Venant-Kirchhoff
// energy density, quadrature, mass matrix and external loads.

#include "bhem/grid.hpp"
#include "bhem/system_matrix.hpp"

#include <array>
#include <vector>

namespace bhem {

struct Material {
  double Y = 1e6;
  double nu = 0.3;
  double h = 1e-3;
  double rho = 1000.0;

  /// Validates Y > 0, 0 <= nu <= 0.5, h > 0, rho >= 0; throws DomainError.
  static Material make(double Y, double nu, double h, double rho);

  double lambda() const { return Y * nu / (1.0 - nu * nu); }
  double mu() const { return Y / (2.0 * (1.0 + nu)); }
  /// Plate bending stiffness Y h^3 / (12 (1 - nu^2)).
  double bending_stiffness() const { return Y * h * h * h / (12.0 * (1.0 - nu * nu)); }
};

struct FundamentalForms {
  Mat2 a = Mat2::Identity();
  Mat2 b = Mat2::Zero();
  Mat2 c = Mat2::Zero();
  double sqrt_a = 1.0;
  Mat2 a_inv = Mat2::Identity();
};

/// Throws SingularFrameError if the metric is not positive definite.
FundamentalForms fundamental_forms(const SurfaceFrame& frame);

struct StrainState {
  Mat2 A = Mat2::Zero();
  Mat2 B = Mat2::Zero();
  Mat2 C = Mat2::Zero();
};

StrainState strain(const FundamentalForms& cur, const FundamentalForms& ref);

/// Voigt matrix built from the reference contravariant metric.
Mat3 voigt_H(const Mat2& a_inv_ref, const Material& m);

/// (A11, A22, 2 A12)
Vec3 alpha_v(const Mat2& A);
/// 2 (B11, B22, 2 B12)
Vec3 beta_v(const Mat2& B);

/// Hbar^{abcd} = lambda/2 a^ab a^cd + mu a^bc a^ad, reference contravariant metric.
double hbar(const Mat2& a_inv_ref, const Material& m, int a, int b, int c, int d);

/// (A A h + 1/3 B B h^3) Hbar contracted over all indices.
double energy_density(const StrainState& s, const Mat2& a_inv_ref, const Material& m);
/// Same density through the Voigt form: h/2 a^T H a + h^3/24 b^T H b.
double energy_density_voigt(const StrainState& s, const Mat3& Hm, const Material& m);

struct QuadratureRule {
  std::array<Vec2, 16> points;
  std::array<double, 16> weights;
};

/// 4x4 tensor Gauss-Legendre rule on a rect.
QuadratureRule gauss_legendre_16(const ParamRect& rect);

struct QuadPoint {
  ShapeEval shape;
  FundamentalForms ref;
  Mat3 Hm;
  double weight = 0.0;   // rule weight in parameter area
  double dA = 0.0;       // weight * sqrt(abar): reference area element
};

/// Reference-configuration data at every quadrature point of every patch.
class ReferenceCache {
 public:
  ReferenceCache() = default;
  ReferenceCache(const PatchGrid& grid, const VecX& q_ref, const Material& m);

  const QuadPoint& point(int patch, int k) const { return points_[16 * patch + k]; }
  int num_patches() const { return static_cast<int>(points_.size() / 16); }
  double total_area() const { return area_; }

 private:
  std::vector<QuadPoint> points_;
  double area_ = 0.0;
};

SparseMat mass_matrix(const PatchGrid& grid, const Material& m, const ReferenceCache& ref,
                      const BlockPattern& pattern);

struct PointForce {
  double xi1 = 0.0, xi2 = 0.0;  // global grid parameters
  Vec3 force = Vec3::Zero();
};

struct Loads {
  Vec3 gravity = Vec3::Zero();
  /// Pressure along the current normal, per unit reference area.
  double pressure = 0.0;
  std::vector<PointForce> point_forces;

  bool empty() const { return gravity.isZero(0.0) && pressure == 0.0 && point_forces.empty(); }
};

/// Generalized external force at configuration q (q enters only through the pressure normal).
VecX external_forces(const PatchGrid& grid, const VecX& q, const Material& m,
                     const ReferenceCache& ref, const Loads& loads);

}  // namespace bhem
