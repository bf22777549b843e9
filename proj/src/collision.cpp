#include "bhem/collision.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

namespace bhem {

void ColliderSet::advance(double dt) {
  for (auto& s : spheres) s.center += dt * s.velocity;
  for (auto& p : planes) p.point += dt * p.velocity;
  for (auto& c : cylinders) c.point += dt * c.velocity;
  for (auto& m : meshes)
    for (auto& v : m.vertices) v += dt * m.velocity;
}

std::vector<Vec2> ColliderSet::sample_params(const ParamRect& r) const {
  std::vector<Vec2> out;
  const int n = samples_per_patch;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out.push_back(r.from_local((i + 0.5) / n, (j + 0.5) / n));
  return out;
}

double CollisionEvent::rate(const VecX& qdot, const Vec3& dir) const {
  Vec3 v = kin_v;
  for (const auto& [c, w] : weights) v += w * qdot.segment<3>(3 * c);
  return dir.dot(v);
}

double CollisionEvent::gap(const VecX& q) const {
  Vec3 x = kin_x;
  for (const auto& [c, w] : weights) x += w * q.segment<3>(3 * c);
  return normal.dot(x);
}

double signed_distance(const SphereCollider& c, const Vec3& x) { return (x - c.center).norm() - c.radius; }
double signed_distance(const PlaneCollider& c, const Vec3& x) { return c.normal.normalized().dot(x - c.point); }
double signed_distance(const CylinderCollider& c, const Vec3& x) {
  const Vec3 a = c.axis.normalized();
  const Vec3 r = x - c.point;
  return (r - r.dot(a) * a).norm() - c.radius;
}

namespace {

// Earliest s in [0, window] with |r0 + s w| = R entering from outside (or s = 0 when
// already inside and approaching).
std::optional<double> enter_ball(const Vec3& r0, const Vec3& w, double R, double window) {
  const double a = w.squaredNorm(), b = 2.0 * r0.dot(w), c = r0.squaredNorm() - R * R;
  if (c <= 0.0) return b < 0.0 ? std::optional<double>(0.0) : std::nullopt;
  if (!(b < 0.0) || a == 0.0) return std::nullopt;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::nullopt;
  // stable smaller root
  const double s = (2.0 * c) / (-b + std::sqrt(disc));
  if (s > window) return std::nullopt;
  return std::max(s, 0.0);
}

struct ShellSample {
  int patch;
  Vec2 xi;
  ShapeEval se;
};

std::vector<std::pair<int, double>> weights_of(const ShapeEval& se, double scale) {
  std::vector<std::pair<int, double>> w;
  for (int l = 0; l < 16; ++l) w.emplace_back(se.indices[l], scale * se.phi[l]);
  return w;
}

void merge_weights(std::vector<std::pair<int, double>>& w) {
  std::map<int, double> m;
  for (const auto& [c, v] : w) m[c] += v;
  w.assign(m.begin(), m.end());
}

Aabb swept(const BezierPatch& p, const BezierPatch& v, double window) {
  Aabb b = p.hull();
  for (int k = 0; k < 16; ++k) b.expand(p.p[k] + window * v.p[k]);
  return b;
}

// Parameter rect minus an open box, tiled by up to four rects.
std::vector<ParamRect> rect_minus_box(const ParamRect& r, double u0, double u1, double v0, double v1) {
  std::vector<ParamRect> out;
  if (u1 <= r.xi1_min || u0 >= r.xi1_max || v1 <= r.xi2_min || v0 >= r.xi2_max) return {r};
  const double cu0 = std::max(u0, r.xi1_min), cu1 = std::min(u1, r.xi1_max);
  auto push = [&](double a, double b, double c, double d) {
    if (b - a > 1e-12 && d - c > 1e-12) out.push_back(ParamRect{a, b, c, d});
  };
  push(r.xi1_min, cu0, r.xi2_min, r.xi2_max);
  push(cu1, r.xi1_max, r.xi2_min, r.xi2_max);
  push(cu0, cu1, r.xi2_min, std::max(v0, r.xi2_min));
  push(cu0, cu1, std::min(v1, r.xi2_max), r.xi2_max);
  return out;
}

MovingBezierPatch restrict_moving(const MovingBezierPatch& m, const ParamRect& sub) {
  const Vec2 lo = m.p.rect.to_local(sub.xi1_min, sub.xi2_min);
  const Vec2 hi = m.p.rect.to_local(sub.xi1_max, sub.xi2_max);
  MovingBezierPatch out{sub_patch(m.p, lo.x(), hi.x(), lo.y(), hi.y()),
                        sub_patch(m.p_dot, lo.x(), hi.x(), lo.y(), hi.y()), m.dt};
  out.p.rect = sub;
  out.p_dot.rect = sub;
  return out;
}

// Shell-side normal at (patch, xi) and time s, oriented from B toward A before contact.
Vec3 oriented_normal(const PatchGrid& grid, const VecX& q, const VecX& qdot, int patch, double xi1,
                     double xi2, double s, const Vec3& a0_minus_b0, const Vec3& rel_v) {
  const ShapeEval se = shape_eval(grid, patch, xi1, xi2);
  const VecX qs = q + s * qdot;
  Vec3 n = frame_from_shape(se, qs).a3;
  const double side = n.dot(a0_minus_b0);
  if (std::abs(side) > 1e-14 * (1.0 + a0_minus_b0.norm())) {
    if (side < 0.0) n = -n;
  } else if (n.dot(rel_v) > 0.0) {
    n = -n;
  }
  return n;
}

}  // namespace

std::optional<DetectResult> detect(const PatchGrid& grid, const VecX& q, const VecX& qdot,
                                   const ColliderSet& col, double window, double eps_t,
                                   const IntersectOptions& ccd) {
  if (!(window > 0.0)) throw DomainError("detect: window must be positive");
  std::vector<CollisionEvent> found;

  // shell samples against analytic colliders
  const bool analytic = !col.spheres.empty() || !col.planes.empty() || !col.cylinders.empty();
  std::vector<ShellSample> samples;
  if (analytic || col.self_collision) {
    for (int p = 0; p < grid.num_patches(); ++p)
      for (const Vec2& xi : col.sample_params(grid.patch_rect(p)))
        samples.push_back({p, xi, shape_eval(grid, p, xi.x(), xi.y())});
  }
  if (analytic) {
    for (int si = 0; si < static_cast<int>(samples.size()); ++si) {
      const ShellSample& sm = samples[si];
      const Vec3 x0 = reconstruct(sm.se, q), v = reconstruct(sm.se, qdot);
      std::optional<CollisionEvent> best;
      auto offer = [&](double s, const Vec3& n, const Vec3& xb, const Vec3& vb, ContactKind kind, int ci) {
        if (best && best->t <= s) return;
        CollisionEvent e;
        e.t = s;
        e.normal = n;
        e.point = xb;
        e.weights = weights_of(sm.se, 1.0);
        e.kin_x = -xb;
        e.kin_v = -vb;
        e.kind = kind;
        e.source = si;
        e.collider = ci;
        best = e;
      };
      for (int ci = 0; ci < static_cast<int>(col.spheres.size()); ++ci) {
        const auto& c = col.spheres[ci];
        const Vec3 w = v - c.velocity;
        if (auto s = enter_ball(x0 - c.center, w, c.radius, window)) {
          const Vec3 center = c.center + *s * c.velocity;
          Vec3 n = x0 + *s * v - center;
          n = n.norm() > 0.0 ? Vec3(n.normalized()) : Vec3(-w.normalized());
          offer(*s, n, center + c.radius * n, c.velocity, ContactKind::Sphere, ci);
        }
      }
      for (int ci = 0; ci < static_cast<int>(col.planes.size()); ++ci) {
        const auto& c = col.planes[ci];
        const Vec3 n = c.normal.normalized();
        const double d0 = n.dot(x0 - c.point), rate = n.dot(v - c.velocity);
        if (!(rate < 0.0)) continue;
        const double s = d0 <= 0.0 ? 0.0 : -d0 / rate;
        if (s > window) continue;
        const Vec3 xs = x0 + s * v;
        offer(s, n, xs - n.dot(xs - (c.point + s * c.velocity)) * n, c.velocity, ContactKind::Plane, ci);
      }
      for (int ci = 0; ci < static_cast<int>(col.cylinders.size()); ++ci) {
        const auto& c = col.cylinders[ci];
        const Vec3 a = c.axis.normalized();
        auto perp = [&a](const Vec3& x) { return Vec3(x - x.dot(a) * a); };
        const Vec3 w = v - c.velocity;
        if (auto s = enter_ball(perp(x0 - c.point), perp(w), c.radius, window)) {
          const Vec3 xs = x0 + *s * v;
          const Vec3 base = c.point + *s * c.velocity;
          Vec3 n = perp(xs - base);
          n = n.norm() > 0.0 ? Vec3(n.normalized()) : Vec3(-perp(w).normalized());
          offer(*s, n, xs - (signed_distance(CylinderCollider{base, a, c.radius, c.velocity}, xs)) * n,
                c.velocity, ContactKind::Cylinder, ci);
        }
      }
      if (best) found.push_back(*best);
    }
  }

  std::vector<MovingBezierPatch> moving;
  std::vector<Aabb> boxes;
  if (!col.meshes.empty() || col.self_collision) {
    const auto bp = to_bezier(grid, q), bv = to_bezier(grid, qdot);
    for (int p = 0; p < grid.num_patches(); ++p) {
      moving.push_back(MovingBezierPatch{bp[p], bv[p], window});
      boxes.push_back(swept(bp[p], bv[p], window));
    }
  }
  IntersectOptions opt = ccd;

  auto shell_event = [&](const ParamHit& h, int patch, const Vec3& a0, const Vec3& va,
                         std::vector<std::pair<int, double>> a_weights, const Vec3& kin_x,
                         const Vec3& kin_v, ContactKind kind, int source, int ci) {
    const ShapeEval sb = shape_eval(grid, patch, h.xi1, h.xi2);
    const Vec3 b0 = reconstruct(sb, q), vb = reconstruct(sb, qdot);
    CollisionEvent e;
    e.t = h.tau;
    e.normal = oriented_normal(grid, q, qdot, patch, h.xi1, h.xi2, h.tau, a0 - b0, va - vb);
    e.point = b0 + h.tau * vb;
    e.weights = std::move(a_weights);
    for (auto& w : weights_of(sb, -1.0)) e.weights.push_back(w);
    merge_weights(e.weights);
    e.kin_x = kin_x;
    e.kin_v = kin_v;
    e.kind = kind;
    e.source = source;
    e.collider = ci;
    return e;
  };

  // collider vertices against the shell
  for (int ci = 0; ci < static_cast<int>(col.meshes.size()); ++ci) {
    const MeshCollider& m = col.meshes[ci];
    for (int vi = 0; vi < static_cast<int>(m.vertices.size()); ++vi) {
      const MovingPoint pt{m.vertices[vi], m.velocity};
      Aabb seg;
      seg.expand(pt.x0);
      seg.expand(pt.at(window));
      std::vector<MovingBezierPatch> cand;
      std::vector<int> ids;
      for (int p = 0; p < grid.num_patches(); ++p)
        if (boxes[p].overlaps(seg)) {
          cand.push_back(moving[p]);
          ids.push_back(p);
        }
      if (cand.empty()) continue;
      if (auto h = ccd_point_patches(pt, cand, opt)) {
        const int patch = ids[h->patch];
        found.push_back(shell_event(*h, patch, pt.x0, pt.v, {}, pt.at(h->tau), m.velocity,
                                    ContactKind::MeshVertex, vi, ci));
      }
    }
  }

  // self contact: samples against patches away from their own neighbourhood
  if (col.self_collision) {
    std::vector<std::vector<int>> patch_nodes(grid.num_patches());
    for (int p = 0; p < grid.num_patches(); ++p) {
      const auto nodes = grid.patch_nodes(p);
      patch_nodes[p].assign(nodes.begin(), nodes.end());
    }
    auto adjacent = [&](int a, int b) {
      for (int x : patch_nodes[a])
        for (int y : patch_nodes[b])
          if (x == y) return true;
      return false;
    };
    const double r = col.self_exclusion;
    for (int si = 0; si < static_cast<int>(samples.size()); ++si) {
      const ShellSample& sm = samples[si];
      const MovingPoint pt{reconstruct(sm.se, q), reconstruct(sm.se, qdot)};
      Aabb seg;
      seg.expand(pt.x0);
      seg.expand(pt.at(window));
      std::vector<MovingBezierPatch> cand;
      std::vector<int> ids;
      for (int p = 0; p < grid.num_patches(); ++p) {
        if (!boxes[p].overlaps(seg)) continue;
        if (!adjacent(p, sm.patch)) {
          cand.push_back(moving[p]);
          ids.push_back(p);
          continue;
        }
        // align the sample with this patch across a periodic seam
        const ParamRect pr = grid.patch_rect(p);
        Vec2 xi = sm.xi;
        const Vec2 c = pr.center();
        if (grid.periodic_u()) xi.x() += grid.nx() * std::round((c.x() - xi.x()) / grid.nx());
        if (grid.periodic_v()) xi.y() += grid.ny() * std::round((c.y() - xi.y()) / grid.ny());
        for (const ParamRect& sub : rect_minus_box(pr, xi.x() - r, xi.x() + r, xi.y() - r, xi.y() + r)) {
          cand.push_back(restrict_moving(moving[p], sub));
          ids.push_back(p);
        }
      }
      if (cand.empty()) continue;
      if (auto h = ccd_point_patches(pt, cand, opt)) {
        found.push_back(shell_event(*h, ids[h->patch], pt.x0, pt.v, weights_of(sm.se, 1.0), Vec3::Zero(),
                                    Vec3::Zero(), ContactKind::Self, si, -1));
      }
    }
  }

  if (found.empty()) return std::nullopt;
  DetectResult res;
  res.t_earliest = std::min_element(found.begin(), found.end(), [](const auto& a, const auto& b) {
                     return a.t < b.t;
                   })->t;
  for (auto& e : found)
    if (e.t <= res.t_earliest + eps_t) res.events.push_back(std::move(e));
  std::stable_sort(res.events.begin(), res.events.end(), [](const auto& a, const auto& b) { return a.t < b.t; });
  return res;
}

namespace {
// relative pivot threshold of the contact systems; many samples per patch make them rank deficient
constexpr double kRankTol = 1e-10;
constexpr int kDenseInverseMax = 4000;
constexpr int kGaussSeidelSweeps = 300;
constexpr double kGaussSeidelTol = 1e-9;
}  // namespace

ContactSolver::ContactSolver(const SparseMat& mass, const ConstraintReducer& reducer) : reducer_(reducer) {
  SparseMat mff;
  reducer.reduce(mass, mff);
  mass_ff_.compute(mff);
  if (mass_ff_.info() != Eigen::Success) throw SolveError("contact: mass matrix not factorizable", 0.0, 0);
}

Eigen::MatrixXd ContactSolver::rows(const std::vector<CollisionEvent>& events,
                                    const std::vector<Vec3>& dirs) const {
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(events.size()), reducer_.num_free());
  for (size_t e = 0; e < events.size(); ++e)
    for (const auto& [c, w] : events[e].weights)
      for (int k = 0; k < 3; ++k) {
        const int f = reducer_.free_index(3 * c + k);
        if (f >= 0) G(static_cast<Eigen::Index>(e), f) += w * dirs[e][k];
      }
  return G;
}

Eigen::MatrixXd ContactSolver::solve_mass(const Eigen::MatrixXd& B) const { return mass_ff_.solve(B); }

// Least-squares impulses eta with G Minv G^T eta = rhs; adds Minv G^T eta to the free part of x.
VecX ContactSolver::project(const Eigen::MatrixXd& G, const VecX& rhs, VecX& x) const {
  if (G.rows() == 0) return VecX();
  const Eigen::MatrixXd Y = solve_mass(G.transpose());
  const Eigen::MatrixXd A = G * Y;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
  cod.setThreshold(kRankTol);
  cod.compute(A);
  const VecX eta = cod.solve(rhs);
  const VecX dx = Y * eta;
  for (int f = 0; f < reducer_.num_free(); ++f) x[reducer_.free_indices()[f]] += dx[f];
  return eta;
}

VecX ContactSolver::resolve_velocities(const std::vector<CollisionEvent>& events, VecX& qdot) const {
  std::vector<Vec3> dirs;
  VecX rhs(static_cast<Eigen::Index>(events.size()));
  for (size_t e = 0; e < events.size(); ++e) {
    dirs.push_back(events[e].normal);
    rhs[static_cast<Eigen::Index>(e)] = -events[e].rate(qdot, events[e].normal);
  }
  return project(rows(events, dirs), rhs, qdot);
}

void ContactSolver::resolve_positions(const std::vector<CollisionEvent>& events, VecX& q,
                                      double push_out) const {
  std::vector<Vec3> dirs;
  VecX rhs(static_cast<Eigen::Index>(events.size()));
  for (size_t e = 0; e < events.size(); ++e) {
    dirs.push_back(events[e].normal);
    rhs[static_cast<Eigen::Index>(e)] = push_out - events[e].gap(q);
  }
  project(rows(events, dirs), rhs, q);
}

// Projected Gauss-Seidel on A eta >= rhs, eta >= 0, complementary.
VecX ContactSolver::gauss_seidel(const Eigen::MatrixXd& A, const VecX& rhs) {
  const Eigen::Index n = A.rows();
  VecX eta = VecX::Zero(n);
  VecX w = -rhs;  // A eta - rhs
  const double tol = kGaussSeidelTol * std::max(1e-300, rhs.cwiseAbs().maxCoeff());
  for (int sweep = 0; sweep < kGaussSeidelSweeps; ++sweep) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!(A(i, i) > 0.0)) continue;
      const double next = std::max(0.0, eta[i] - w[i] / A(i, i));
      const double d = next - eta[i];
      if (d != 0.0) {
        w += d * A.col(i);
        eta[i] = next;
      }
    }
    for (Eigen::Index i = 0; i < n; ++i)
      worst = std::max(worst, eta[i] > 0.0 ? std::abs(w[i]) : std::max(0.0, -w[i]));
    if (worst <= tol) break;
  }
  return eta;
}

void ContactSolver::add_free(const VecX& dx, VecX& x) const {
  for (int f = 0; f < reducer_.num_free(); ++f) x[reducer_.free_indices()[f]] += dx[f];
}

VecX ContactSolver::project_unilateral(const Eigen::MatrixXd& G, const VecX& rhs, VecX& x) const {
  if (G.rows() == 0) return VecX();
  const Eigen::MatrixXd Y = solve_mass(G.transpose());
  const VecX eta = gauss_seidel(G * Y, rhs);
  add_free(Y * eta, x);
  return eta;
}

VecX ContactSolver::push(const std::vector<CollisionEvent>& events, VecX& qdot, VecX& q, double push_out,
                         double mu) const {
  if (events.empty()) return VecX();
  const Eigen::Index n = static_cast<Eigen::Index>(events.size());
  // free coordinates touched by any contact; the system only needs Minv on them
  std::vector<int> touched;
  for (const auto& e : events)
    for (const auto& [c, w] : e.weights)
      for (int k = 0; k < 3; ++k)
        if (reducer_.free_index(3 * c + k) >= 0) touched.push_back(reducer_.free_index(3 * c + k));
  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
  const Eigen::Index m = static_cast<Eigen::Index>(touched.size());
  std::vector<int> local(reducer_.num_free(), -1);
  for (Eigen::Index j = 0; j < m; ++j) local[touched[j]] = static_cast<int>(j);

  std::vector<Eigen::Triplet<double>> trip;
  for (Eigen::Index e = 0; e < n; ++e)
    for (const auto& [c, w] : events[e].weights)
      for (int k = 0; k < 3; ++k) {
        const int f = reducer_.free_index(3 * c + k);
        if (f >= 0) trip.emplace_back(static_cast<int>(e), local[f], w * events[e].normal[k]);
      }
  SparseMat Gs(n, m);
  Gs.setFromTriplets(trip.begin(), trip.end());
  Eigen::MatrixXd Z(reducer_.num_free(), m);  // columns of Minv at the touched coordinates
  if (reducer_.num_free() <= kDenseInverseMax) {
    if (minv_.size() == 0) minv_ = solve_mass(Eigen::MatrixXd::Identity(reducer_.num_free(), reducer_.num_free()));
    for (Eigen::Index j = 0; j < m; ++j) Z.col(j) = minv_.col(touched[j]);
  } else {
    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(reducer_.num_free(), m);
    for (Eigen::Index j = 0; j < m; ++j) E(touched[j], j) = 1.0;
    Z = solve_mass(E);
  }
  Eigen::MatrixXd W(m, m);
  for (Eigen::Index j = 0; j < m; ++j) W.row(j) = Z.row(touched[j]);
  const Eigen::MatrixXd GW = Gs * W;
  const Eigen::MatrixXd A = GW * Gs.transpose();
  auto apply = [&](const VecX& eta, VecX& x) { add_free(Z * (Gs.transpose() * eta), x); };
  auto velocity_rhs = [&] {
    VecX r(n);
    for (Eigen::Index e = 0; e < n; ++e) r[e] = -events[e].rate(qdot, events[e].normal);
    return r;
  };
  const VecX eta = gauss_seidel(A, velocity_rhs());
  apply(eta, qdot);
  if (mu > 0.0) {
    apply_friction(events, mu, eta, qdot);
    apply(gauss_seidel(A, velocity_rhs()), qdot);
  }
  VecX r(n);
  for (Eigen::Index e = 0; e < n; ++e) r[e] = push_out - events[e].gap(q);
  apply(gauss_seidel(A, r), q);
  return eta;
}

VecX ContactSolver::push_velocities(const std::vector<CollisionEvent>& events, VecX& qdot) const {
  std::vector<Vec3> dirs;
  VecX rhs(static_cast<Eigen::Index>(events.size()));
  for (size_t e = 0; e < events.size(); ++e) {
    dirs.push_back(events[e].normal);
    rhs[static_cast<Eigen::Index>(e)] = -events[e].rate(qdot, events[e].normal);
  }
  return project_unilateral(rows(events, dirs), rhs, qdot);
}

void ContactSolver::push_positions(const std::vector<CollisionEvent>& events, VecX& q, double push_out) const {
  std::vector<Vec3> dirs;
  VecX rhs(static_cast<Eigen::Index>(events.size()));
  for (size_t e = 0; e < events.size(); ++e) {
    dirs.push_back(events[e].normal);
    rhs[static_cast<Eigen::Index>(e)] = push_out - events[e].gap(q);
  }
  project_unilateral(rows(events, dirs), rhs, q);
}

VecX ContactSolver::apply_friction(const std::vector<CollisionEvent>& events, double mu, const VecX& eta_n,
                                   VecX& qdot) const {
  VecX mag = VecX::Zero(static_cast<Eigen::Index>(events.size()));
  if (mu <= 0.0 || events.empty()) return mag;
  // two tangent rows per sliding contact
  std::vector<CollisionEvent> rows_ev;
  std::vector<Vec3> dirs;
  std::vector<int> owner;
  for (size_t e = 0; e < events.size(); ++e) {
    const Vec3& n = events[e].normal;
    Vec3 vr = events[e].kin_v;
    for (const auto& [c, w] : events[e].weights) vr += w * qdot.segment<3>(3 * c);
    const Vec3 vt = vr - n.dot(vr) * n;
    if (vt.norm() <= 1e-14 * (1.0 + vr.norm())) continue;
    const Vec3 t1 = vt.normalized(), t2 = n.cross(t1);
    for (const Vec3& t : {t1, t2}) {
      rows_ev.push_back(events[e]);
      dirs.push_back(t);
      owner.push_back(static_cast<int>(e));
    }
  }
  if (rows_ev.empty()) return mag;
  const Eigen::MatrixXd G = rows(rows_ev, dirs);
  VecX rhs(G.rows());
  for (Eigen::Index r = 0; r < G.rows(); ++r) rhs[r] = -rows_ev[r].rate(qdot, dirs[r]);
  const Eigen::MatrixXd Y = solve_mass(G.transpose());
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
  cod.setThreshold(kRankTol);
  cod.compute(G * Y);
  VecX eta = cod.solve(rhs);
  // clamp each contact's tangential impulse to the cone
  for (Eigen::Index r = 0; r < eta.size(); r += 2) {
    const int e = owner[r];
    const double bound = mu * std::abs(eta_n[e]);
    const double m = std::hypot(eta[r], eta[r + 1]);
    if (m > bound) {
      eta[r] *= bound / m;
      eta[r + 1] *= bound / m;
    }
    mag[e] = std::hypot(eta[r], eta[r + 1]);
  }
  const VecX dx = Y * eta;
  for (int f = 0; f < reducer_.num_free(); ++f) qdot[reducer_.free_indices()[f]] += dx[f];
  return mag;
}

namespace {
using Clock = std::chrono::steady_clock;

// Static contacts of shell samples lying closer than `gap` to an analytic collider.
std::vector<CollisionEvent> proximity_events(const PatchGrid& grid, const VecX& q, const ColliderSet& col,
                                             double gap) {
  std::vector<CollisionEvent> out;
  if (col.spheres.empty() && col.planes.empty() && col.cylinders.empty()) return out;
  int si = 0;
  for (int p = 0; p < grid.num_patches(); ++p)
    for (const Vec2& xi : col.sample_params(grid.patch_rect(p))) {
      const ShapeEval se = shape_eval(grid, p, xi.x(), xi.y());
      const Vec3 x = reconstruct(se, q);
      std::optional<CollisionEvent> best;
      double dbest = gap;
      auto offer = [&](double d, const Vec3& n, const Vec3& point, const Vec3& vel, ContactKind kind, int ci) {
        if (!(d < dbest)) return;
        dbest = d;
        CollisionEvent e;
        e.normal = n;
        e.point = point;
        e.weights = weights_of(se, 1.0);
        e.kin_x = -point;
        e.kin_v = -vel;
        e.kind = kind;
        e.source = si;
        e.collider = ci;
        best = e;
      };
      for (int ci = 0; ci < static_cast<int>(col.spheres.size()); ++ci) {
        const auto& c = col.spheres[ci];
        const Vec3 r = x - c.center;
        if (r.norm() == 0.0) continue;
        const Vec3 n = r.normalized();
        offer(r.norm() - c.radius, n, c.center + c.radius * n, c.velocity, ContactKind::Sphere, ci);
      }
      for (int ci = 0; ci < static_cast<int>(col.planes.size()); ++ci) {
        const auto& c = col.planes[ci];
        const Vec3 n = c.normal.normalized();
        const double d = n.dot(x - c.point);
        offer(d, n, x - d * n, c.velocity, ContactKind::Plane, ci);
      }
      for (int ci = 0; ci < static_cast<int>(col.cylinders.size()); ++ci) {
        const auto& c = col.cylinders[ci];
        const Vec3 a = c.axis.normalized();
        Vec3 r = x - c.point;
        r -= r.dot(a) * a;
        if (r.norm() == 0.0) continue;
        const Vec3 n = r.normalized();
        offer(r.norm() - c.radius, n, x - (r.norm() - c.radius) * n, c.velocity, ContactKind::Cylinder, ci);
      }
      if (best) out.push_back(*best);
      ++si;
    }
  return out;
}

double seconds(Clock::time_point a, Clock::time_point b) { return std::chrono::duration<double>(b - a).count(); }
constexpr int kSweepRounds = 8;
}  // namespace

CollisionStepStats step_with_collisions(Simulator& sim, SystemState& state, ConstraintSet& cons,
                                        const Loads& loads, ColliderSet& colliders,
                                        const CollisionConfig& cfg, ContactCache* cache) {
  const double dt = sim.config().dt;
  const double eps_t = cfg.eps_t > 0.0 ? cfg.eps_t : dt / 25.0;
  const double t0 = state.t;
  const PatchGrid& grid = sim.model().grid();
  CollisionStepStats st;
  double remaining = dt;
  ContactCache local;
  ContactCache& cc = cache ? *cache : local;

  while (remaining > 1e-14 * dt) {
    SystemState trial = state;
    auto c0 = Clock::now();
    const StepStats ss = sim.step(trial, cons, loads, remaining);
    auto c1 = Clock::now();
    st.t_integrate += seconds(c0, c1);
    st.newton_iterations += ss.newton_iterations;
    st.residual = ss.residual;
    const auto det = colliders.empty()
                         ? std::nullopt
                         : detect(grid, state.q, trial.q_dot, colliders, remaining, eps_t, cfg.ccd);
    st.t_ccd += seconds(c1, Clock::now());
    if (!det) {
      state = trial;
      colliders.advance(remaining);
      st.substeps.push_back(remaining);
      remaining = 0.0;
      break;
    }
    if (++st.rollbacks > cfg.max_rollbacks) {
      throw StepFailure("collision: rollback cap exceeded", 0.0, st.newton_iterations);
    }
    const double tc = std::min(det->t_earliest, remaining);
    state.q += tc * trial.q_dot;
    state.q_dot = trial.q_dot;
    state.t += tc;
    colliders.advance(tc);
    c0 = Clock::now();
    std::vector<CollisionEvent> events = det->events;
    for (auto& e : events) e.kin_x -= (e.t - tc) * e.kin_v;
    const ConstraintReducer& red = sim.reducer_for(cons);
    if (!cc.solver || cc.free != red.free_indices()) {
      cc.solver.reset();
      cc.solver.emplace(sim.mass(), red);
      cc.free = red.free_indices();
    }
    const ContactSolver& solver = *cc.solver;
    // the batch plus every sample already within the push-out distance
    for (auto& e : proximity_events(grid, state.q, colliders, cfg.push_out)) {
      bool dup = false;
      for (const auto& b : events) dup = dup || (b.source == e.source && b.kind == e.kind && b.collider == e.collider);
      if (!dup) {
        e.t = tc;
        events.push_back(std::move(e));
      }
    }
    solver.push(events, state.q_dot, state.q, cfg.push_out, cfg.friction);
    // pushing drags neighbouring samples along
    for (int round = 0; round < kSweepRounds; ++round) {
      std::vector<CollisionEvent> near = proximity_events(grid, state.q, colliders, 0.5 * cfg.push_out);
      if (near.empty()) break;
      for (auto& e : near) {
        e.t = tc;
        events.push_back(std::move(e));
      }
      solver.push(events, state.q_dot, state.q, cfg.push_out, 0.0);
    }
    st.t_response += seconds(c0, Clock::now());
    st.events += static_cast<int>(events.size());
    st.substeps.push_back(tc);
    remaining -= tc;
  }
  state.t = t0 + dt;
  return st;
}

double min_sample_distance(const PatchGrid& grid, const VecX& q, const ColliderSet& col) {
  double d = std::numeric_limits<double>::infinity();
  for (int p = 0; p < grid.num_patches(); ++p)
    for (const Vec2& xi : col.sample_params(grid.patch_rect(p))) {
      const Vec3 x = eval_point(grid, q, p, xi.x(), xi.y());
      for (const auto& c : col.spheres) d = std::min(d, signed_distance(c, x));
      for (const auto& c : col.planes) d = std::min(d, signed_distance(c, x));
      for (const auto& c : col.cylinders) d = std::min(d, signed_distance(c, x));
    }
  return d;
}

}  // namespace bhem
