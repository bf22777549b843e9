#pragma once

// Bicubic Hermite patches: cubic basis, evaluation, and differential frames.

#include "bhem/common.hpp"

#include <array>

namespace bhem {

enum class BasisKind { F, G, dF, dG };

/// Cubic Hermite basis on the unit interval:
///   f(t) = 2t^3 - 3t^2 + 1,  g(t) = t^3 - 2t^2 + t, and their derivatives.
/// Throws DomainError when theta is outside [0, 1].
double basis(BasisKind kind, double theta);

/// Axis-aligned rectangle in parameter space.
struct ParamRect {
  double xi1_min = 0.0;
  double xi1_max = 1.0;
  double xi2_min = 0.0;
  double xi2_max = 1.0;

  /// Validating constructor; throws DomainError unless max > min on both axes.
  static ParamRect make(double xi1_min, double xi1_max, double xi2_min, double xi2_max);

  double d_xi1() const { return xi1_max - xi1_min; }
  double d_xi2() const { return xi2_max - xi2_min; }
  double area() const { return d_xi1() * d_xi2(); }
  Vec2 center() const { return {0.5 * (xi1_min + xi1_max), 0.5 * (xi2_min + xi2_max)}; }
  bool contains(double xi1, double xi2, double tol = 0.0) const {
    return xi1 >= xi1_min - tol && xi1 <= xi1_max + tol && xi2 >= xi2_min - tol &&
           xi2 <= xi2_max + tol;
  }
  /// Local (unit-square) coordinates of a parameter point.
  Vec2 to_local(double xi1, double xi2) const {
    return {(xi1 - xi1_min) / d_xi1(), (xi2 - xi2_min) / d_xi2()};
  }
  Vec2 from_local(double u, double v) const {
    return {xi1_min + u * d_xi1(), xi2_min + v * d_xi2()};
  }
  bool operator==(const ParamRect&) const = default;
};

/// Which of the four stored vectors of a node: x, dx/dxi1, dx/dxi2, d2x/dxi1dxi2.
enum class DofKind : int { Value = 0, D1 = 1, D2 = 2, D12 = 3 };

inline constexpr int kDofKinds = 4;

/// Generalized coordinates stored at one node. Derivatives are taken with respect
/// to the global parameters xi, not the unit-interval theta.
struct NodeDofs {
  Vec3 value = Vec3::Zero();
  Vec3 d1 = Vec3::Zero();
  Vec3 d2 = Vec3::Zero();
  Vec3 d12 = Vec3::Zero();

  Vec3& operator[](DofKind k);
  const Vec3& operator[](DofKind k) const;
  bool finite() const;
};

/// One rectangular element. Node (p, q) sits at parameter corner
/// (p ? xi1_max : xi1_min, q ? xi2_max : xi2_min) and is stored at index p + 2q.
struct HermitePatch {
  std::array<NodeDofs, 4> nodes;
  ParamRect rect;

  NodeDofs& node(int p, int q) { return nodes[p + 2 * q]; }
  const NodeDofs& node(int p, int q) const { return nodes[p + 2 * q]; }
};

/// Interpolation weights along one parameter direction, indexed [p][r] with
/// p the end (0 = min, 1 = max) and r the derivative order of the stored DoF.
/// Derivative-order weights carry the extra factor delta so the stored
/// derivatives are with respect to xi. dw and ddw are xi-derivatives.
struct HermiteWeights1D {
  double w[2][2];
  double dw[2][2];
  double ddw[2][2];
};

HermiteWeights1D hermite_weights(double theta, double delta);

/// Point and derivative data of the surface at one parameter location.
struct SurfaceFrame {
  Vec3 x;
  Vec3 a1, a2;    // first parametric derivatives
  Vec3 a3;        // unit normal a1 x a2 / |a1 x a2|
  Vec3 a11, a12, a22;
  double area_density = 0.0;  // |a1 x a2|
};

/// Relative tolerance below which |a1 x a2| is treated as zero.
inline constexpr double kSingularFrameTol = 1e-12;

Vec3 eval_point(const HermitePatch& patch, double xi1, double xi2);

/// Throws SingularFrameError when |a1 x a2| < 1e-12 |a1||a2|.
SurfaceFrame eval_frame(const HermitePatch& patch, double xi1, double xi2);

/// Completes a frame from x and its five derivatives (shared by all evaluators).
SurfaceFrame make_frame(const Vec3& x, const Vec3& a1, const Vec3& a2, const Vec3& a11,
                        const Vec3& a12, const Vec3& a22);

}  // namespace bhem
