#pragma once

// Ray and moving-point queries against Bezier patches: best-first subdivision on
// control-point boxes, optionally guided by Newton iterations.

#include "bhem/bezier.hpp"

#include <optional>
#include <vector>

namespace bhem {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 dir = Vec3::UnitZ();

  static Ray make(const Vec3& origin, const Vec3& dir);
  Vec3 at(double tau) const { return origin + tau * dir; }
};

struct Interval {
  double lo = 0.0, hi = 0.0;
  bool contains(double t, double tol = 0.0) const { return t >= lo - tol && t <= hi + tol; }
  double width() const { return hi - lo; }
};

/// Sorted, disjoint closed intervals.
class IntervalSet {
 public:
  IntervalSet() = default;
  explicit IntervalSet(std::vector<Interval> parts);  // normalizes (sorts, merges)

  const std::vector<Interval>& parts() const { return parts_; }
  bool empty() const { return parts_.empty(); }
  double earliest() const { return parts_.front().lo; }
  bool contains(double t, double tol = 0.0) const;

  IntervalSet intersect(const IntervalSet& o) const;
  IntervalSet unite(const IntervalSet& o) const;

 private:
  std::vector<Interval> parts_;
};

/// Range of tau in [tau_floor, tau_max] for which the ray lies inside the box.
std::optional<Interval> ray_aabb_interval(const Ray& ray, const Aabb& box, double tau_floor = 1e-12,
                                          double tau_max = std::numeric_limits<double>::infinity());
std::optional<Interval> ray_aabb_interval(const Ray& ray, const BezierPatch& bez,
                                          double tau_floor = 1e-12);

/// Control points moving with constant velocity over [0, dt].
struct MovingBezierPatch {
  BezierPatch p;
  BezierPatch p_dot;  // same rect as p
  double dt = 0.0;

  BezierPatch at_time(double t) const;
};

struct MovingPoint {
  Vec3 x0 = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 at(double t) const { return x0 + t * v; }
};

/// Times in [0, dt] at which the point is inside the moving control-point box.
IntervalSet moving_point_interval(const MovingPoint& pt, const MovingBezierPatch& mbez);

struct ParamHit {
  int patch = -1;  // index into the queried patch list
  double xi1 = 0.0, xi2 = 0.0;
  double tau = 0.0;  // ray parameter, or collision time for moving queries
  double residual = 0.0;
};

struct IntersectOptions {
  double eps_param = 1e-6;
  /// Newton iterations tried at each subdivision candidate; 0 means midpoint splits only.
  int max_newton_iters = 8;
  /// Residual bound for accepting a hit; <= 0 selects 1e-9 times the scene diameter.
  double hit_tol = 0.0;
  double tau_floor = 1e-12;
  /// Moving queries: stop subdividing once the time set of a candidate is narrower than
  /// this and its parameters are below eps_param.
  double eps_t = 1e-9;
  long max_expansions = 10'000'000;
};

struct IntersectStats {
  long expansions = 0;       // candidates popped and subdivided
  long pushes = 0;
  long newton_hits = 0;      // converged Newton solves at subdivision candidates
  long leaves = 0;
};

struct NewtonRefineResult {
  bool converged = false;
  double xi1 = 0.0, xi2 = 0.0, tau = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

/// Solves x(xi) = ray(tau) from the given guess. Converged iff the residual reaches hit_tol
/// within max_iters with xi inside `domain` and tau >= tau_floor.
NewtonRefineResult newton_refine(const BezierPatch& bez, const Ray& ray, const Vec3& guess,
                                 const ParamRect& domain, int max_iters, double hit_tol,
                                 double tau_floor = 1e-12);
/// Moving variant: solves x(xi, t) = x_p(t), t in [0, dt].
NewtonRefineResult newton_refine(const MovingBezierPatch& mbez, const MovingPoint& pt,
                                 const Vec3& guess, const ParamRect& domain, int max_iters,
                                 double hit_tol);

/// Nearest hit with tau > tau_floor over all patches, or none.
std::optional<ParamHit> static_intersect(const Ray& ray, const std::vector<BezierPatch>& patches,
                                         const IntersectOptions& opt = {},
                                         IntersectStats* stats = nullptr);

/// Earliest time in [0, dt] at which the point meets any of the moving patches.
std::optional<ParamHit> ccd_point_patches(const MovingPoint& pt,
                                          const std::vector<MovingBezierPatch>& patches,
                                          const IntersectOptions& opt = {},
                                          IntersectStats* stats = nullptr);
std::optional<ParamHit> ccd_point_patch(const MovingPoint& pt, const MovingBezierPatch& mbez,
                                        const IntersectOptions& opt = {},
                                        IntersectStats* stats = nullptr);

}  // namespace bhem
