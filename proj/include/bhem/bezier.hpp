#pragma once

// Bicubic Bernstein form of a patch, de Casteljau subdivision and hull boxes.

#include "bhem/hermite.hpp"

#include <array>
#include <limits>
#include <optional>
#include <vector>

namespace bhem {

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void expand(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void expand(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  bool contains(const Vec3& p, double tol = 0.0) const {
    return (p.array() >= lo.array() - tol).all() && (p.array() <= hi.array() + tol).all();
  }
  bool contains(const Aabb& b, double tol = 0.0) const {
    return contains(b.lo, tol) && contains(b.hi, tol);
  }
  bool overlaps(const Aabb& b) const {
    return (lo.array() <= b.hi.array()).all() && (b.lo.array() <= hi.array()).all();
  }
  double diagonal() const { return (hi - lo).norm(); }
};

/// 16 control points p[4 i + j], i along xi1 and j along xi2.
struct BezierPatch {
  std::array<Vec3, 16> p;
  ParamRect rect;

  Vec3& at(int i, int j) { return p[4 * i + j]; }
  const Vec3& at(int i, int j) const { return p[4 * i + j]; }

  Aabb hull() const;

  /// Evaluate at local coordinates (u, v) in [0,1]^2.
  Vec3 eval_local(double u, double v) const;
  /// Evaluate at global parameters inside rect.
  Vec3 eval(double xi1, double xi2) const;
  /// Position and first partials with respect to xi.
  void eval_d(double xi1, double xi2, Vec3& x, Vec3& x1, Vec3& x2) const;
};

/// Cubic Bernstein values B_0..B_3 and their derivatives at u.
void bernstein3(double u, double b[4], double db[4] = nullptr);

BezierPatch to_bezier(const HermitePatch& patch);

/// Sub-patch covering local sub-rectangle [u0,u1]x[v0,v1] of the parent.
BezierPatch sub_patch(const BezierPatch& bez, double u0, double u1, double v0, double v1);

/// Split at local (u, v) into four children ordered
/// (lo-lo, hi-lo, lo-hi, hi-hi) by (xi1, xi2). Throws DomainError unless 0 < u, v < 1.
std::array<BezierPatch, 4> decasteljau_split(const BezierPatch& bez, double u, double v);

/// Removes the box |xi - center| < radius (clamped to rect, global parameters) and
/// tiles the rest with up to four rectangles in pinwheel order. Returns an empty set
/// when the box covers the rect.
std::vector<BezierPatch> split_excluding_neighborhood(const BezierPatch& bez, const Vec2& center,
                                                      double radius);

/// Rectangle tiling used by split_excluding_neighborhood.
std::vector<ParamRect> pinwheel_rects(const ParamRect& rect, const Vec2& center, double radius);

}  // namespace bhem
