#include "bhem/intersection.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <queue>

namespace bhem {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

Ray Ray::make(const Vec3& origin, const Vec3& dir) {
  if (!origin.allFinite() || !dir.allFinite()) throw DomainError("ray: non-finite data");
  if (!(dir.norm() > 0.0)) throw DomainError("ray: zero direction");
  return Ray{origin, dir};
}

IntervalSet::IntervalSet(std::vector<Interval> parts) {
  std::sort(parts.begin(), parts.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  for (const Interval& iv : parts) {
    if (!(iv.hi >= iv.lo)) continue;
    if (!parts_.empty() && iv.lo <= parts_.back().hi) {
      parts_.back().hi = std::max(parts_.back().hi, iv.hi);
    } else {
      parts_.push_back(iv);
    }
  }
}

bool IntervalSet::contains(double t, double tol) const {
  return std::any_of(parts_.begin(), parts_.end(), [&](const Interval& iv) { return iv.contains(t, tol); });
}

IntervalSet IntervalSet::intersect(const IntervalSet& o) const {
  std::vector<Interval> out;
  size_t i = 0, j = 0;
  while (i < parts_.size() && j < o.parts_.size()) {
    const double lo = std::max(parts_[i].lo, o.parts_[j].lo);
    const double hi = std::min(parts_[i].hi, o.parts_[j].hi);
    if (lo <= hi) out.push_back({lo, hi});
    if (parts_[i].hi < o.parts_[j].hi) ++i;
    else ++j;
  }
  IntervalSet s;
  s.parts_ = std::move(out);
  return s;
}

IntervalSet IntervalSet::unite(const IntervalSet& o) const {
  std::vector<Interval> all = parts_;
  all.insert(all.end(), o.parts_.begin(), o.parts_.end());
  return IntervalSet(std::move(all));
}

std::optional<Interval> ray_aabb_interval(const Ray& ray, const Aabb& box, double tau_floor,
                                          double tau_max) {
  double lo = tau_floor, hi = tau_max;
  for (int k = 0; k < 3; ++k) {
    const double o = ray.origin[k], d = ray.dir[k];
    if (d == 0.0) {
      if (o < box.lo[k] || o > box.hi[k]) return std::nullopt;
      continue;
    }
    double t1 = (box.lo[k] - o) / d, t2 = (box.hi[k] - o) / d;
    if (t1 > t2) std::swap(t1, t2);
    lo = std::max(lo, t1);
    hi = std::min(hi, t2);
    if (lo > hi) return std::nullopt;
  }
  return Interval{lo, hi};
}

std::optional<Interval> ray_aabb_interval(const Ray& ray, const BezierPatch& bez, double tau_floor) {
  return ray_aabb_interval(ray, bez.hull(), tau_floor);
}

BezierPatch MovingBezierPatch::at_time(double t) const {
  BezierPatch b = p;
  for (int k = 0; k < 16; ++k) b.p[k] += t * p_dot.p[k];
  return b;
}

IntervalSet moving_point_interval(const MovingPoint& pt, const MovingBezierPatch& mb) {
  const double dt = mb.dt;
  IntervalSet result({{0.0, dt}});
  // a + b t <= 0 on [0, dt]
  auto half_line = [dt](double a, double b) -> std::optional<Interval> {
    if (b == 0.0) {
      if (a <= 0.0) return Interval{0.0, dt};
      return std::nullopt;
    }
    const double r = -a / b;
    Interval iv = b > 0.0 ? Interval{0.0, std::min(r, dt)} : Interval{std::max(r, 0.0), dt};
    if (iv.lo > iv.hi) return std::nullopt;
    return iv;
  };
  for (int k = 0; k < 3; ++k) {
    std::vector<Interval> below, above;
    for (int c = 0; c < 16; ++c) {
      const double a = mb.p.p[c][k] - pt.x0[k];
      const double b = mb.p_dot.p[c][k] - pt.v[k];
      if (auto iv = half_line(a, b)) below.push_back(*iv);   // control point below the point
      if (auto iv = half_line(-a, -b)) above.push_back(*iv);  // control point above the point
    }
    result = result.intersect(IntervalSet(std::move(below))).intersect(IntervalSet(std::move(above)));
    if (result.empty()) break;
  }
  return result;
}

namespace {

bool inside(const ParamRect& r, double u, double v) {
  const double tu = 1e-12 * std::max(1.0, r.d_xi1()), tv = 1e-12 * std::max(1.0, r.d_xi2());
  return u >= r.xi1_min - tu && u <= r.xi1_max + tu && v >= r.xi2_min - tv && v <= r.xi2_max + tv;
}

// Generic 3x3 Newton on (xi1, xi2, s) with a callback giving residual and Jacobian.
template <class Eval>
NewtonRefineResult newton3(Eval&& eval, Vec3 z, const ParamRect& domain, int max_iters,
                           double hit_tol, double s_lo, double s_hi) {
  NewtonRefineResult res;
  const double span_u = domain.d_xi1(), span_v = domain.d_xi2();
  for (int it = 0;; ++it) {
    Vec3 F;
    Mat3 J;
    eval(z, F, J);
    res.residual = F.norm();
    res.iterations = it;
    res.xi1 = z[0];
    res.xi2 = z[1];
    res.tau = z[2];
    if (!std::isfinite(res.residual)) return res;
    if (res.residual <= hit_tol) {
      res.converged = inside(domain, z[0], z[1]) && z[2] >= s_lo && z[2] <= s_hi;
      return res;
    }
    if (it >= max_iters) return res;
    const Eigen::PartialPivLU<Mat3> lu(J);
    if (!(std::abs(lu.determinant()) > 0.0)) return res;
    const Vec3 step = lu.solve(-F);
    if (!step.allFinite()) return res;
    z += step;
    // far outside the domain: give up early
    if (z[0] < domain.xi1_min - span_u || z[0] > domain.xi1_max + span_u ||
        z[1] < domain.xi2_min - span_v || z[1] > domain.xi2_max + span_v) {
      res.xi1 = z[0];
      res.xi2 = z[1];
      res.tau = z[2];
      res.iterations = it + 1;
      return res;
    }
  }
}

}  // namespace

NewtonRefineResult newton_refine(const BezierPatch& bez, const Ray& ray, const Vec3& guess,
                                 const ParamRect& domain, int max_iters, double hit_tol,
                                 double tau_floor) {
  const ParamRect& full = bez.rect;
  auto eval = [&](const Vec3& z, Vec3& F, Mat3& J) {
    // Bezier evaluation only within its own rect; clamp keeps the polynomial defined
    const double u = std::clamp(z[0], full.xi1_min, full.xi1_max);
    const double v = std::clamp(z[1], full.xi2_min, full.xi2_max);
    Vec3 x, x1, x2;
    bez.eval_d(u, v, x, x1, x2);
    x += (z[0] - u) * x1 + (z[1] - v) * x2;
    F = x - ray.at(z[2]);
    J.col(0) = x1;
    J.col(1) = x2;
    J.col(2) = -ray.dir;
  };
  return newton3(eval, guess, domain, max_iters, hit_tol, tau_floor, kInf);
}

NewtonRefineResult newton_refine(const MovingBezierPatch& mb, const MovingPoint& pt,
                                 const Vec3& guess, const ParamRect& domain, int max_iters,
                                 double hit_tol) {
  const ParamRect& full = mb.p.rect;
  auto eval = [&](const Vec3& z, Vec3& F, Mat3& J) {
    const double u = std::clamp(z[0], full.xi1_min, full.xi1_max);
    const double v = std::clamp(z[1], full.xi2_min, full.xi2_max);
    const BezierPatch b = mb.at_time(z[2]);
    Vec3 x, x1, x2;
    b.eval_d(u, v, x, x1, x2);
    x += (z[0] - u) * x1 + (z[1] - v) * x2;
    F = x - pt.at(z[2]);
    J.col(0) = x1;
    J.col(1) = x2;
    J.col(2) = mb.p_dot.eval(u, v) - pt.v;
  };
  return newton3(eval, guess, domain, max_iters, hit_tol, 0.0, mb.dt);
}

namespace {

// A candidate sub-patch; `vel` is only used by moving queries.
struct Cand {
  int patch;
  BezierPatch pos;
  BezierPatch vel;
  double key;
};

struct HeapEntry {
  double key;
  long seq;
  size_t idx;
  bool operator>(const HeapEntry& o) const { return key != o.key ? key > o.key : seq > o.seq; }
};

std::vector<ParamRect> midpoint_rects(const ParamRect& r) {
  const Vec2 c = r.center();
  return {ParamRect{r.xi1_min, c.x(), r.xi2_min, c.y()}, ParamRect{c.x(), r.xi1_max, r.xi2_min, c.y()},
          ParamRect{r.xi1_min, c.x(), c.y(), r.xi2_max}, ParamRect{c.x(), r.xi1_max, c.y(), r.xi2_max}};
}

BezierPatch restrict_to(const BezierPatch& bez, const ParamRect& sub) {
  const Vec2 lo = bez.rect.to_local(sub.xi1_min, sub.xi2_min);
  const Vec2 hi = bez.rect.to_local(sub.xi1_max, sub.xi2_max);
  BezierPatch c = sub_patch(bez, std::clamp(lo.x(), 0.0, 1.0), std::clamp(hi.x(), 0.0, 1.0),
                            std::clamp(lo.y(), 0.0, 1.0), std::clamp(hi.y(), 0.0, 1.0));
  c.rect = sub;
  return c;
}

// Exclusion box around a Newton root: the center is pulled strictly inside the rect.
std::vector<ParamRect> exclusion_rects(const ParamRect& r, double u, double v, double radius) {
  const double gu = std::min(1e-3 * r.d_xi1(), 0.5 * radius);
  const double gv = std::min(1e-3 * r.d_xi2(), 0.5 * radius);
  const double cu = std::clamp(u, r.xi1_min + gu, r.xi1_max - gu);
  const double cv = std::clamp(v, r.xi2_min + gv, r.xi2_max - gv);
  return pinwheel_rects(r, Vec2(cu, cv), radius);
}

/// Best-first search shared by the ray and moving-point queries. Q supplies:
///   std::optional<std::pair<double,double>> bounds(const Cand&)   key range or pruned
///   NewtonRefineResult guide(const Cand&, int iters)               Newton from the rect center
///   std::optional<ParamHit> leaf(const Cand&, double lo, double hi)   polished leaf hit
template <class Q>
std::optional<ParamHit> best_first(Q& q, std::vector<Cand> roots, const IntersectOptions& opt,
                                   IntersectStats* stats) {
  IntersectStats local;
  IntersectStats& st = stats ? *stats : local;
  std::vector<Cand> store;
  std::priority_queue<HeapEntry, std::vector<HeapEntry>, std::greater<HeapEntry>> heap;
  long seq = 0;
  auto push = [&](Cand c) {
    const auto b = q.bounds(c);
    if (!b) return;
    c.key = b->first;
    store.push_back(std::move(c));
    heap.push(HeapEntry{store.back().key, seq++, store.size() - 1});
    ++st.pushes;
  };
  for (auto& c : roots) push(std::move(c));

  std::optional<ParamHit> best;
  const double radius = 4.0 * opt.eps_param;
  while (!heap.empty()) {
    const HeapEntry top = heap.top();
    heap.pop();
    if (best && top.key > best->tau) break;
    const Cand c = store[top.idx];
    const ParamRect& r = c.pos.rect;

    if (r.d_xi1() < opt.eps_param && r.d_xi2() < opt.eps_param) {
      ++st.leaves;
      if (auto h = q.leaf(c)) {
        if (!best || h->tau < best->tau) best = h;
        return best;
      }
      continue;
    }
    if (st.expansions >= opt.max_expansions) break;
    ++st.expansions;

    std::vector<ParamRect> kids;
    if (opt.max_newton_iters > 0) {
      const NewtonRefineResult nr = q.guide(c, opt.max_newton_iters);
      if (nr.converged) {
        ++st.newton_hits;
        if (!best || nr.tau < best->tau) best = ParamHit{c.patch, nr.xi1, nr.xi2, nr.tau, nr.residual};
        kids = exclusion_rects(r, nr.xi1, nr.xi2, radius);
      }
    }
    if (kids.empty()) kids = midpoint_rects(r);
    for (const ParamRect& k : kids) {
      Cand child{c.patch, restrict_to(c.pos, k), q.moving ? restrict_to(c.vel, k) : c.vel, 0.0};
      push(std::move(child));
    }
  }
  return best;
}

struct RayQuery {
  static constexpr bool moving = false;
  const Ray& ray;
  const IntersectOptions& opt;
  double hit_tol;
  const std::vector<BezierPatch>& roots;

  std::optional<std::pair<double, double>> bounds(const Cand& c) const {
    const auto iv = ray_aabb_interval(ray, c.pos.hull(), opt.tau_floor);
    if (!iv) return std::nullopt;
    return std::make_pair(iv->lo, iv->hi);
  }
  Vec3 guess(const Cand& c) const {
    const Vec2 m = c.pos.rect.center();
    const Vec3 x = c.pos.eval(m.x(), m.y());
    return Vec3(m.x(), m.y(), (x - ray.origin).dot(ray.dir) / ray.dir.squaredNorm());
  }
  NewtonRefineResult guide(const Cand& c, int iters) const {
    return newton_refine(roots[c.patch], ray, guess(c), c.pos.rect, iters, hit_tol, opt.tau_floor);
  }
  std::optional<ParamHit> leaf(const Cand& c) const {
    const ParamRect& r = c.pos.rect;
    const ParamRect grown{std::max(r.xi1_min - r.d_xi1(), roots[c.patch].rect.xi1_min),
                          std::min(r.xi1_max + r.d_xi1(), roots[c.patch].rect.xi1_max),
                          std::max(r.xi2_min - r.d_xi2(), roots[c.patch].rect.xi2_min),
                          std::min(r.xi2_max + r.d_xi2(), roots[c.patch].rect.xi2_max)};
    const NewtonRefineResult nr =
        newton_refine(roots[c.patch], ray, guess(c), grown, 20, hit_tol, opt.tau_floor);
    if (!nr.converged) return std::nullopt;
    return ParamHit{c.patch, nr.xi1, nr.xi2, nr.tau, nr.residual};
  }
};

struct PointQuery {
  static constexpr bool moving = true;
  const MovingPoint& pt;
  const IntersectOptions& opt;
  double hit_tol;
  const std::vector<MovingBezierPatch>& roots;

  MovingBezierPatch view(const Cand& c) const {
    return MovingBezierPatch{c.pos, c.vel, roots[c.patch].dt};
  }
  std::optional<std::pair<double, double>> bounds(const Cand& c) const {
    const IntervalSet s = moving_point_interval(pt, view(c));
    if (s.empty()) return std::nullopt;
    return std::make_pair(s.earliest(), s.parts().back().hi);
  }
  Vec3 guess(const Cand& c) const {
    const Vec2 m = c.pos.rect.center();
    const IntervalSet s = moving_point_interval(pt, view(c));
    return Vec3(m.x(), m.y(), s.empty() ? 0.0 : s.earliest());
  }
  NewtonRefineResult guide(const Cand& c, int iters) const {
    return newton_refine(roots[c.patch], pt, guess(c), c.pos.rect, iters, hit_tol);
  }
  std::optional<ParamHit> leaf(const Cand& c) const {
    const ParamRect& r = c.pos.rect;
    const MovingBezierPatch& root = roots[c.patch];
    const ParamRect grown{std::max(r.xi1_min - r.d_xi1(), root.p.rect.xi1_min),
                          std::min(r.xi1_max + r.d_xi1(), root.p.rect.xi1_max),
                          std::max(r.xi2_min - r.d_xi2(), root.p.rect.xi2_min),
                          std::min(r.xi2_max + r.d_xi2(), root.p.rect.xi2_max)};
    const IntervalSet s = moving_point_interval(pt, view(c));
    const NewtonRefineResult nr = newton_refine(root, pt, guess(c), grown, 20, hit_tol);
    if (nr.converged && s.contains(nr.tau, opt.eps_t)) {
      return ParamHit{c.patch, nr.xi1, nr.xi2, nr.tau, nr.residual};
    }
    // no polished root: the leaf box still holds the point, report its earliest time
    const Vec2 m = r.center();
    const double t = s.earliest();
    return ParamHit{c.patch, m.x(), m.y(), t, (root.at_time(t).eval(m.x(), m.y()) - pt.at(t)).norm()};
  }
};

double auto_tol(const IntersectOptions& opt, const Aabb& scene) {
  if (opt.hit_tol > 0.0) return opt.hit_tol;
  return 1e-9 * std::max(scene.diagonal(), 1e-300);
}

void check(const IntersectOptions& opt) {
  if (!(opt.eps_param > 0.0)) throw DomainError("intersect: eps_param must be positive");
  if (opt.max_newton_iters < 0) throw DomainError("intersect: max_newton_iters must be nonnegative");
  if (!(opt.eps_t > 0.0)) throw DomainError("intersect: eps_t must be positive");
}

}  // namespace

std::optional<ParamHit> static_intersect(const Ray& ray, const std::vector<BezierPatch>& patches,
                                         const IntersectOptions& opt, IntersectStats* stats) {
  check(opt);
  Aabb scene;
  for (const auto& b : patches) scene.expand(b.hull());
  RayQuery q{ray, opt, auto_tol(opt, scene), patches};
  std::vector<Cand> roots;
  for (int i = 0; i < static_cast<int>(patches.size()); ++i) roots.push_back(Cand{i, patches[i], patches[i], 0.0});
  return best_first(q, std::move(roots), opt, stats);
}

std::optional<ParamHit> ccd_point_patches(const MovingPoint& pt,
                                          const std::vector<MovingBezierPatch>& patches,
                                          const IntersectOptions& opt, IntersectStats* stats) {
  check(opt);
  Aabb scene;
  for (const auto& m : patches) {
    if (!(m.dt > 0.0)) throw DomainError("ccd: dt must be positive");
    scene.expand(m.p.hull());
    scene.expand(m.at_time(m.dt).hull());
    scene.expand(pt.at(m.dt));
  }
  scene.expand(pt.x0);
  PointQuery q{pt, opt, auto_tol(opt, scene), patches};
  std::vector<Cand> roots;
  for (int i = 0; i < static_cast<int>(patches.size()); ++i)
    roots.push_back(Cand{i, patches[i].p, patches[i].p_dot, 0.0});
  return best_first(q, std::move(roots), opt, stats);
}

std::optional<ParamHit> ccd_point_patch(const MovingPoint& pt, const MovingBezierPatch& mbez,
                                        const IntersectOptions& opt, IntersectStats* stats) {
  return ccd_point_patches(pt, {mbez}, opt, stats);
}

}  // namespace bhem
