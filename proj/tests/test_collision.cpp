#include "bhem/collision.hpp"

#include <Eigen/Dense>
#include <catch_amalgamated.hpp>

#include <random>

using namespace bhem;
using Catch::Matchers::WithinAbs;

namespace {

struct Cloth {
  PatchGrid grid;
  VecX q_ref;
  Material mat{1e5, 0.3, 1e-3, 200.0};
  ElasticModel model;

  Cloth(int n, double len, double z) : grid(n, n), q_ref(flat_sheet(grid, len, len, Vec3(-len / 2, -len / 2, z))),
                                       model(grid, q_ref, mat) {}
};

VecX uniform_velocity(const PatchGrid& grid, const Vec3& v) { return translation_mode(grid, v); }

CollisionEvent plane_contact(const PatchGrid& grid, const VecX& q, int patch, double xi1, double xi2) {
  const ShapeEval se = shape_eval(grid, patch, xi1, xi2);
  CollisionEvent e;
  e.normal = Vec3::UnitZ();
  for (int l = 0; l < 16; ++l) e.weights.emplace_back(se.indices[l], se.phi[l]);
  const Vec3 x = reconstruct(se, q);
  e.point = Vec3(x.x(), x.y(), 0.0);
  e.kin_x = -e.point;
  return e;
}

}  // namespace

TEST_CASE("separated static scene reports nothing", "[collision]") {
  Cloth c(2, 1.0, 0.5);
  ColliderSet col;
  col.spheres.push_back({Vec3(0, 0, 0), 0.3, Vec3::Zero()});
  col.planes.push_back({Vec3(0, 0, -1), Vec3::UnitZ(), Vec3::Zero()});
  col.meshes.push_back({{Vec3(0, 0, 0.2), Vec3(0.1, 0, 0.2)}, {}, Vec3::Zero()});
  const VecX zero = VecX::Zero(c.q_ref.size());
  CHECK_FALSE(detect(c.grid, c.q_ref, zero, col, 0.01, 1e-4));
  // moving away from the sphere
  CHECK_FALSE(detect(c.grid, c.q_ref, uniform_velocity(c.grid, Vec3(0, 0, 1)), col, 0.01, 1e-4));
}

TEST_CASE("falling sheet meets a plane at g / v", "[collision]") {
  const double gap = 0.05, v = 2.0;
  Cloth c(2, 1.0, gap);
  ColliderSet col;
  col.planes.push_back({Vec3::Zero(), Vec3::UnitZ(), Vec3::Zero()});
  const auto det = detect(c.grid, c.q_ref, uniform_velocity(c.grid, Vec3(0, 0, -v)), col, 0.1, 1e-3);
  REQUIRE(det);
  CHECK_THAT(det->t_earliest, WithinAbs(gap / v, 1e-12));
  // every sample lands at the same instant
  CHECK(det->events.size() == 4u * 64u);
  for (const auto& e : det->events) CHECK(e.kind == ContactKind::Plane);
  // too short a window
  CHECK_FALSE(detect(c.grid, c.q_ref, uniform_velocity(c.grid, Vec3(0, 0, -v)), col, 0.02, 1e-3));
}

TEST_CASE("sphere and cylinder contact times follow closed forms", "[collision]") {
  Cloth c(1, 0.02, 1.0);  // tiny sheet centred on the axis
  const VecX vel = uniform_velocity(c.grid, Vec3(0, 0, -4.0));
  ColliderSet sph;
  sph.samples_per_patch = 1;
  sph.spheres.push_back({Vec3(0, 0, 0), 0.5, Vec3(0, 0, 1.0)});
  auto det = detect(c.grid, c.q_ref, vel, sph, 1.0, 1e-6);
  REQUIRE(det);
  // the single sample sits at the sheet centre: closing speed 5, distance 0.5
  CHECK_THAT(det->t_earliest, WithinAbs(0.1, 1e-12));
  CHECK((det->events[0].normal - Vec3::UnitZ()).norm() <= 1e-12);
  CHECK_THAT(det->events[0].point.z(), WithinAbs(0.6, 1e-12));

  ColliderSet cyl;
  cyl.samples_per_patch = 1;
  cyl.cylinders.push_back({Vec3(0, 0, 0), Vec3::UnitX(), 0.25, Vec3::Zero()});
  det = detect(c.grid, c.q_ref, vel, cyl, 1.0, 1e-6);
  REQUIRE(det);
  CHECK_THAT(det->t_earliest, WithinAbs(0.75 / 4.0, 1e-12));
  CHECK(signed_distance(cyl.cylinders[0], Vec3(3, 0, 0.5)) == Catch::Approx(0.25));
}

TEST_CASE("collider vertices against the shell", "[collision]") {
  Cloth c(3, 1.0, 0.0);
  ColliderSet col;
  MeshCollider needles;
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(-0.4, 0.4), h(0.01, 0.05);
  for (int k = 0; k < 20; ++k) needles.vertices.push_back(Vec3(u(rng), u(rng), -h(rng)));
  needles.velocity = Vec3::Zero();
  col.meshes.push_back(needles);
  const VecX vel = uniform_velocity(c.grid, Vec3(0.1, 0.0, -1.0));
  const auto det = detect(c.grid, c.q_ref, vel, col, 0.1, 1e-3);
  REQUIRE(det);
  double zmax = -1;
  for (const auto& v : needles.vertices) zmax = std::max(zmax, v.z());
  CHECK_THAT(det->t_earliest, WithinAbs(-zmax / 1.0, 1e-9));
  for (const auto& e : det->events) {
    CHECK(e.kind == ContactKind::MeshVertex);
    CHECK(std::abs(e.normal.norm() - 1.0) <= 1e-12);
    // approaching along -n at the moment of contact
    CHECK(e.rate(vel, e.normal) <= 0.0);
    // the contact gap vanishes at the reported time
    CHECK(std::abs(e.gap(c.q_ref + e.t * vel)) <= 1e-9);
  }
}

TEST_CASE("self contact between folded layers", "[collision]") {
  // strip of four patches folded so the last two lie above the first
  PatchGrid grid(4, 1);
  VecX q = VecX::Zero(grid.num_dofs());
  const Vec3 pos[5] = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1.2, 0, 0.15), Vec3(1, 0, 0.3), Vec3(0, 0, 0.3)};
  const Vec3 d1[5] = {Vec3(1, 0, 0), Vec3(1, 0, 0), Vec3(0, 0, 0.3), Vec3(-1, 0, 0), Vec3(-1, 0, 0)};
  for (int i = 0; i <= 4; ++i)
    for (int j = 0; j <= 1; ++j) {
      NodeDofs n;
      n.value = pos[i] + Vec3(0, j, 0);
      n.d1 = d1[i];
      n.d2 = Vec3(0, 1, 0);
      grid.set_node(grid.node_id(i, j), n, q);
    }
  VecX vel = VecX::Zero(q.size());
  for (int j = 0; j <= 1; ++j)
    for (int i = 3; i <= 4; ++i) vel.segment<3>(3 * grid.coord_index(grid.node_id(i, j), DofKind::Value)) = Vec3(0, 0, -1.0);
  ColliderSet col;
  col.self_collision = true;
  col.samples_per_patch = 4;
  const auto det = detect(grid, q, vel, col, 1.0, 1e-3);
  REQUIRE(det);
  CHECK(det->t_earliest > 0.0);
  CHECK(det->t_earliest < 0.3);
  for (const auto& e : det->events) {
    CHECK(e.kind == ContactKind::Self);
    CHECK(std::abs(e.gap(q + e.t * vel)) <= 1e-8);
    CHECK(e.rate(vel, e.normal) <= 0.0);
  }
  // without the fold moving, nothing
  CHECK_FALSE(detect(grid, q, VecX::Zero(q.size()), col, 1.0, 1e-3));
}

TEST_CASE("contact rate is the derivative of the contact point", "[collision]") {
  Cloth c(2, 1.0, 0.0);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VecX q = c.q_ref, qd(q.size());
  for (int i = 0; i < q.size(); ++i) {
    q[i] += 0.05 * u(rng);
    qd[i] = u(rng);
  }
  const CollisionEvent e = plane_contact(c.grid, q, 3, 1.3, 1.6);
  const Vec3 n = Vec3(0.3, -0.4, 0.866).normalized();
  const double h = 1e-6;
  const Vec3 xp = eval_point(c.grid, q + h * qd, 3, 1.3, 1.6), xm = eval_point(c.grid, q - h * qd, 3, 1.3, 1.6);
  CHECK_THAT(e.rate(qd, n), WithinAbs(n.dot(xp - xm) / (2 * h), 1e-8));
}

TEST_CASE("velocity resolution: single contact", "[collision]") {
  Cloth c(2, 1.0, 0.0);
  const SparseMat& M0 = c.model.mass_matrix();
  ConstraintSet none;
  const ConstraintReducer red(c.grid, none, c.model.pattern().empty_matrix());
  const ContactSolver cs(M0, red);
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VecX qd(c.q_ref.size());
  for (int i = 0; i < qd.size(); ++i) qd[i] = u(rng);
  const CollisionEvent e = plane_contact(c.grid, c.q_ref, 1, 1.25, 0.4);

  // scalar formula with a dense inverse
  const Eigen::MatrixXd M = Eigen::MatrixXd(M0);
  VecX g = VecX::Zero(qd.size());
  for (const auto& [coord, w] : e.weights) g.segment<3>(3 * coord) += w * e.normal;
  const VecX Minv_g = M.ldlt().solve(g);
  const double eta_ref = (-g.dot(qd)) / g.dot(Minv_g);

  VecX q1 = qd;
  const VecX eta = cs.resolve_velocities({e}, q1);
  REQUIRE(eta.size() == 1);
  CHECK_THAT(eta[0], WithinAbs(eta_ref, 1e-9 * std::abs(eta_ref)));
  CHECK(std::abs(e.rate(q1, e.normal)) <= 1e-10);
  CHECK((q1 - (qd + eta_ref * Minv_g)).norm() <= 1e-9 * qd.norm());

  // duplicated constraint
  VecX q2 = qd;
  cs.resolve_velocities({e, e}, q2);
  CHECK((q2 - q1).norm() <= 1e-10 * q1.norm());

  // the update lies in the span of M^-1 grad C
  const VecX dq = q1 - qd;
  const double alpha = dq.dot(Minv_g) / Minv_g.squaredNorm();
  CHECK((dq - alpha * Minv_g).norm() <= 1e-9 * dq.norm());
}

TEST_CASE("position resolution: push-out", "[collision]") {
  Cloth c(3, 1.0, 0.0);
  ConstraintSet none;
  const ConstraintReducer red(c.grid, none, c.model.pattern().empty_matrix());
  const ContactSolver cs(c.model.mass_matrix(), red);
  VecX q = c.q_ref;
  const CollisionEvent a = plane_contact(c.grid, q, 0, 0.3, 0.3);
  const CollisionEvent b = plane_contact(c.grid, q, 8, 2.7, 2.6);
  VecX q0 = q;
  cs.resolve_positions({}, q0, 1e-4);
  CHECK(q0 == q);
  VecX q1 = q;
  cs.resolve_positions({a}, q1, 1e-4);
  CHECK_THAT(a.gap(q1), WithinAbs(1e-4, 1e-10));
  VecX q2 = q;
  cs.resolve_positions({a, b}, q2, 1e-4);
  CHECK_THAT(a.gap(q2), WithinAbs(1e-4, 1e-9));
  CHECK_THAT(b.gap(q2), WithinAbs(1e-4, 1e-9));
}

TEST_CASE("Coulomb friction: zero, sticking and sliding", "[collision]") {
  Cloth c(2, 1.0, 0.0);
  ConstraintSet none;
  const ConstraintReducer red(c.grid, none, c.model.pattern().empty_matrix());
  const ContactSolver cs(c.model.mass_matrix(), red);
  const CollisionEvent e = plane_contact(c.grid, c.q_ref, 0, 0.5, 0.5);
  const VecX v0 = uniform_velocity(c.grid, Vec3(0.05, 0.02, -1.0));

  VecX v = v0;
  const VecX eta = cs.resolve_velocities({e}, v);
  REQUIRE(eta[0] > 0.0);
  const Vec3 t = Vec3(0.05, 0.02, 0).normalized();

  SECTION("mu = 0 leaves the velocity alone") {
    VecX w = v;
    cs.apply_friction({e}, 0.0, eta, w);
    CHECK(w == v);
  }
  SECTION("large mu sticks") {
    VecX w = v;
    const VecX mag = cs.apply_friction({e}, 10.0, eta, w);
    CHECK(std::abs(e.rate(w, t)) <= 1e-9);
    CHECK(std::abs(e.rate(w, Vec3::UnitZ())) <= 1e-10);
    CHECK(mag[0] <= 10.0 * eta[0]);
  }
  SECTION("small mu slides on the cone") {
    VecX w = v;
    const double mu = 0.01;
    const VecX mag = cs.apply_friction({e}, mu, eta, w);
    CHECK_THAT(mag[0], WithinAbs(mu * eta[0], 1e-9 * eta[0]));
    const double before = e.rate(v, t), after = e.rate(w, t);
    CHECK(after > 0.0);
    CHECK(after < before);
  }
}

TEST_CASE("collision-free step equals the plain step", "[collision]") {
  Cloth c(2, 1.0, 1.0);
  SolverConfig cfg;
  cfg.dt = 2e-3;
  Simulator a(c.model, cfg), b(c.model, cfg);
  Loads loads;
  loads.gravity = Vec3(0, 0, -9.81);
  ConstraintSet ca, cb;
  SystemState sa{c.q_ref, VecX::Zero(c.q_ref.size()), 0.0}, sb = sa;
  ColliderSet far;
  far.spheres.push_back({Vec3(0, 0, -5), 0.5, Vec3::Zero()});
  for (int k = 0; k < 5; ++k) {
    a.step(sa, ca, loads);
    const auto st = step_with_collisions(b, sb, cb, loads, far, CollisionConfig{});
    CHECK(st.rollbacks == 0);
  }
  CHECK(sa.q == sb.q);
  CHECK(sa.q_dot == sb.q_dot);
  CHECK(sa.t == sb.t);
}

TEST_CASE("sheet dropped on a sphere does not penetrate", "[collision]") {
  Cloth c(4, 1.0, 0.32);
  SolverConfig cfg;
  cfg.dt = 2e-3;
  cfg.rayleigh_alpha = 2.5;
  Simulator sim(c.model, cfg);
  Loads loads;
  loads.gravity = Vec3(0, 0, -9.81);
  ConstraintSet cons;
  ColliderSet col;
  col.spheres.push_back({Vec3::Zero(), 0.3, Vec3::Zero()});
  SystemState st{c.q_ref, VecX::Zero(c.q_ref.size()), 0.0};
  int contacts = 0;
  double dmin = 1.0;
  for (int k = 0; k < 60; ++k) {
    const auto cs = step_with_collisions(sim, st, cons, loads, col, CollisionConfig{});
    contacts += cs.events;
    double sum = 0.0;
    for (double s : cs.substeps) sum += s;
    CHECK_THAT(sum, WithinAbs(cfg.dt, 1e-12));
    dmin = std::min(dmin, min_sample_distance(c.grid, st.q, col));
  }
  CHECK(contacts > 0);
  CHECK(dmin >= -1e-6);
  CHECK(st.t == Catch::Approx(60 * cfg.dt));
}

TEST_CASE("rollback cap raises", "[collision]") {
  Cloth c(2, 1.0, 0.001);
  SolverConfig cfg;
  cfg.dt = 2e-3;
  Simulator sim(c.model, cfg);
  ConstraintSet cons;
  ColliderSet col;
  col.planes.push_back({Vec3::Zero(), Vec3::UnitZ(), Vec3::Zero()});
  SystemState st{c.q_ref, uniform_velocity(c.grid, Vec3(0, 0, -5.0)), 0.0};
  CollisionConfig cc;
  cc.max_rollbacks = 0;
  CHECK_THROWS_AS(step_with_collisions(sim, st, cons, Loads{}, col, cc), StepFailure);
}
