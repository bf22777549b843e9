#include "bhem/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace bhem {

void SolverConfig::validate() const {
  if (!(dt > 0.0)) throw DomainError("solver: dt must be positive");
  if (!(newton_tol > 0.0)) throw DomainError("solver: newton_tol must be positive");
  if (max_newton_iters < 1) throw DomainError("solver: max_newton_iters must be at least 1");
  if (!(regularization_init > 0.0) || !(regularization_growth > 1.0) ||
      !(regularization_cap > regularization_init)) {
    throw DomainError("solver: invalid regularization schedule");
  }
  if (!(rayleigh_alpha >= 0.0)) throw DomainError("solver: rayleigh_alpha must be nonnegative");
  if (!(constraint_tol > 0.0)) throw DomainError("solver: constraint_tol must be positive");
}

void ConstraintSet::pin(const PatchGrid& grid, const VecX& q, int node, DofKind kind,
                        std::array<bool, 3> mask) {
  const Vec3 v = q.segment<3>(3 * grid.coord_index(node, kind));
  pin(grid, node, kind, [v](double) { return v; }, mask);
}

void ConstraintSet::pin(const PatchGrid& grid, int node, DofKind kind,
                        std::function<Vec3(double)> target, std::array<bool, 3> mask) {
  DofPin p{grid.coord_index(node, kind), mask, std::move(target)};
  (kind == DofKind::Value ? dirichlet : neumann).push_back(std::move(p));
}

ConstraintReducer::ConstraintReducer(const PatchGrid& grid, const ConstraintSet& cons,
                                     const SparseMat& pattern) {
  const int n = grid.num_dofs();
  std::vector<char> pinned(n, 0);
  auto mark = [&](const DofPin& p, bool want_value) {
    if (p.coord < 0 || p.coord >= grid.num_coords()) throw ConstraintError("pin: coordinate out of range");
    if (((p.coord % 4) == 0) != want_value) {
      throw ConstraintError(want_value ? "dirichlet pin on a derivative coordinate"
                                       : "neumann pin on a value coordinate");
    }
    for (int c = 0; c < 3; ++c) {
      if (!p.mask[c]) continue;
      char& slot = pinned[3 * p.coord + c];
      if (slot) {
        std::ostringstream os;
        os << "conflicting prescriptions for coordinate " << p.coord << " component " << c;
        throw ConstraintError(os.str());
      }
      slot = 1;
    }
  };
  for (const auto& p : cons.dirichlet) mark(p, true);
  for (const auto& p : cons.neumann) mark(p, false);

  full_to_free_.assign(n, -1);
  for (int i = 0; i < n; ++i) {
    if (!pinned[i]) {
      full_to_free_[i] = static_cast<int>(free_.size());
      free_.push_back(i);
    }
  }

  const int nf = num_free();
  std::vector<int> outer(nf + 1, 0), inner;
  value_map_.clear();
  for (int jf = 0; jf < nf; ++jf) {
    const int j = free_[jf];
    for (int k = pattern.outerIndexPtr()[j]; k < pattern.outerIndexPtr()[j + 1]; ++k) {
      const int rf = full_to_free_[pattern.innerIndexPtr()[k]];
      if (rf < 0) continue;
      inner.push_back(rf);
      value_map_.push_back(k);
    }
    outer[jf + 1] = static_cast<int>(inner.size());
  }
  reduced_pattern_.resize(nf, nf);
  reduced_pattern_.resizeNonZeros(static_cast<Eigen::Index>(inner.size()));
  std::copy(outer.begin(), outer.end(), reduced_pattern_.outerIndexPtr());
  std::copy(inner.begin(), inner.end(), reduced_pattern_.innerIndexPtr());
  std::fill(reduced_pattern_.valuePtr(), reduced_pattern_.valuePtr() + inner.size(), 0.0);
}

VecX ConstraintReducer::restrict(const VecX& full) const {
  VecX r(num_free());
  for (int i = 0; i < num_free(); ++i) r[i] = full[free_[i]];
  return r;
}

void ConstraintReducer::scatter(const VecX& reduced, VecX& full) const {
  for (int i = 0; i < num_free(); ++i) full[free_[i]] = reduced[i];
}

void ConstraintReducer::reduce(const SparseMat& full, SparseMat& reduced) const {
  if (reduced.nonZeros() != reduced_pattern_.nonZeros() || reduced.rows() != num_free()) {
    reduced = reduced_pattern_;
  }
  const double* src = full.valuePtr();
  double* dst = reduced.valuePtr();
  for (size_t k = 0; k < value_map_.size(); ++k) dst[k] = src[value_map_[k]];
}

std::vector<std::pair<int, double>> ConstraintReducer::pinned_values(const ConstraintSet& cons,
                                                                     double t) const {
  std::vector<std::pair<int, double>> out;
  auto add = [&](const DofPin& p) {
    const Vec3 v = p.target(t);
    for (int c = 0; c < 3; ++c)
      if (p.mask[c]) out.emplace_back(3 * p.coord + c, v[c]);
  };
  for (const auto& p : cons.dirichlet) add(p);
  for (const auto& p : cons.neumann) add(p);
  return out;
}

std::pair<SparseMat, VecX> apply_constraints(const SparseMat& K, const VecX& rhs,
                                             const PatchGrid& grid, const ConstraintSet& cons,
                                             double t) {
  const ConstraintReducer red(grid, cons, K);
  VecX xp = VecX::Zero(K.rows());
  for (const auto& [i, v] : red.pinned_values(cons, t)) xp[i] = v;
  SparseMat Kff;
  red.reduce(K, Kff);
  const VecX b = rhs - K * xp;
  return {Kff, red.restrict(b)};
}

namespace {

struct ActiveConstraint {
  PointConstraint* pc;
  int patch;
  std::array<int, 16> idx;
  std::array<double, 16> w;
  Vec3 target;

  Vec3 value(const VecX& q) const {
    Vec3 x = Vec3::Zero();
    for (int l = 0; l < 16; ++l) x += w[l] * q.segment<3>(3 * idx[l]);
    return x - target;
  }
};

std::vector<ActiveConstraint> activate(const PatchGrid& grid, ConstraintSet& cons, double t) {
  std::vector<ActiveConstraint> out;
  for (auto& pc : cons.point_constraints) {
    if (pc.kind == DofKind::D12) throw ConstraintError("point constraint on the mixed derivative");
    ActiveConstraint a{&pc, grid.locate(pc.xi1, pc.xi2), {}, {}, pc.target(t)};
    const ShapeEval se = shape_eval(grid, a.patch, pc.xi1, pc.xi2);
    a.idx = se.indices;
    for (int l = 0; l < 16; ++l) {
      a.w[l] = pc.kind == DofKind::Value ? se.phi[l]
               : pc.kind == DofKind::D1  ? se.dphi[l][0]
                                         : se.dphi[l][1];
    }
    out.push_back(a);
  }
  return out;
}

double mean_diag(const SparseMat& A) {
  double s = 0.0;
  for (int j = 0; j < A.outerSize(); ++j) s += std::abs(A.coeff(j, j));
  return A.rows() ? s / A.rows() : 1.0;
}

}  // namespace

Simulator::Simulator(const ElasticModel& model, const SolverConfig& config)
    : model_(model), config_(config), mass_(model.mass_matrix()) {
  config_.validate();
}

const ConstraintReducer& Simulator::reducer_for(const ConstraintSet& cons) {
  std::vector<std::pair<int, std::array<bool, 3>>> key;
  for (const auto& p : cons.dirichlet) key.emplace_back(p.coord, p.mask);
  for (const auto& p : cons.neumann) key.emplace_back(-1 - p.coord, p.mask);
  if (!reducer_ready_ || key != reducer_key_) {
    reducer_ = ConstraintReducer(model_.grid(), cons, model_.pattern().empty_matrix());
    reducer_key_ = std::move(key);
    reducer_ready_ = true;
  }
  return reducer_;
}

StepStats Simulator::step(SystemState& state, ConstraintSet& cons, const Loads& loads, double dt) {
  if (dt < 0.0 || !std::isfinite(dt)) throw DomainError("step: invalid step length");
  return solve(state, cons, loads, true, dt > 0.0 ? dt : config_.dt);
}

StepStats Simulator::static_solve(VecX& q, ConstraintSet& cons, const Loads& loads, double t) {
  SystemState s{q, VecX::Zero(q.size()), t};
  StepStats st = solve(s, cons, loads, false, config_.dt);
  q = s.q;
  return st;
}

StepStats Simulator::solve(SystemState& state, ConstraintSet& cons, const Loads& loads,
                           bool dynamic, double dt) {
  const PatchGrid& grid = model_.grid();
  const int n = grid.num_dofs();
  if (state.q.size() != n || state.q_dot.size() != n) throw DomainError("step: state size mismatch");
  if (!state.q.allFinite() || !state.q_dot.allFinite()) throw DomainError("step: non-finite state");

  const double a = config_.rayleigh_alpha;
  const double t1 = dynamic ? state.t + dt : state.t;
  const ConstraintReducer& red = reducer_for(cons);
  const VecX qn = state.q, vn = state.q_dot;
  const VecX F = loads.empty() ? VecX::Zero(n)
                               : external_forces(grid, qn, model_.material(), model_.reference(), loads);
  std::vector<ActiveConstraint> al = activate(grid, cons, t1);

  // x is the velocity (dynamic) or the configuration (static); pinned entries fixed
  VecX x0 = dynamic ? vn : qn;
  for (const auto& [i, v] : red.pinned_values(cons, t1)) x0[i] = dynamic ? (v - qn[i]) / dt : v;

  const double s = dynamic ? dt : 1.0;  // dq = s dx
  const VecX Mvn = mass_ * vn;
  auto to_q = [&](const VecX& x) -> VecX { return dynamic ? VecX(qn + dt * x) : x; };

  SparseMat K = model_.pattern().empty_matrix();
  SparseMat Jfull = K;

  if (!al.empty()) {
    for (auto& c : al) {
      if (c.pc->penalty > 0.0) continue;
      model_.hessian(qn, config_.hessian_mode, K);
      double base = mean_diag(K);
      if (dynamic) base += (1.0 + a * dt) * mean_diag(mass_) / (dt * dt);
      double wn = 0.0;
      for (double w : c.w) wn += w * w;
      c.pc->penalty = 1e3 * base / std::max(wn, 1e-300);
    }
  }

  auto potential_and_grad = [&](const VecX& x, VecX* grad) -> double {
    const VecX q = to_q(x);
    double e;
    VecX g;
    if (grad) {
      e = model_.energy_gradient(q, g);
    } else {
      e = model_.energy(q);
    }
    for (const auto& c : al) {
      const Vec3 C = c.value(q);
      const double pen = c.pc->penalty;
      e += c.pc->multiplier.dot(C) + 0.5 * pen * C.squaredNorm();
      if (grad) {
        const Vec3 f = c.pc->multiplier + pen * C;
        for (int l = 0; l < 16; ++l) g.segment<3>(3 * c.idx[l]) += c.w[l] * f;
      }
    }
    double phi;
    if (dynamic) {
      const VecX dv = x - vn;
      const VecX Mx = mass_ * x;
      phi = 0.5 * dv.dot(Mx - Mvn) + 0.5 * a * dt * x.dot(Mx) + e - dt * F.dot(x);
      if (grad) *grad = Mx - Mvn + a * dt * Mx + dt * (g - F);
    } else {
      phi = e - F.dot(x);
      if (grad) *grad = g - F;
    }
    return phi;
  };

  VecX xfull = x0;
  NewtonProblem pb;
  pb.residual = [&](const VecX& xf, VecX& r) {
    red.scatter(xf, xfull);
    VecX gfull;
    const double phi = potential_and_grad(xfull, &gfull);
    r = red.restrict(gfull);
    return phi;
  };
  pb.potential = [&](const VecX& xf) {
    red.scatter(xf, xfull);
    return potential_and_grad(xfull, nullptr);
  };
  pb.jacobian = [&](const VecX& xf, SparseMat& J) {
    red.scatter(xf, xfull);
    model_.hessian(to_q(xfull), config_.hessian_mode, K);
    const double* kv = K.valuePtr();
    const double* mv = mass_.valuePtr();
    double* jv = Jfull.valuePtr();
    const long nnz = K.nonZeros();
    if (dynamic) {
      for (long k = 0; k < nnz; ++k) jv[k] = (1.0 + a * dt) * mv[k] + dt * dt * kv[k];
    } else {
      std::copy(kv, kv + nnz, jv);
    }
    for (const auto& c : al) {
      ElementMatrix ke = ElementMatrix::Zero();
      for (int lb = 0; lb < 16; ++lb)
        for (int la = 0; la < 16; ++la)
          for (int d = 0; d < 3; ++d) ke(3 * la + d, 3 * lb + d) = s * s * c.pc->penalty * c.w[la] * c.w[lb];
      model_.pattern().scatter(c.patch, ke, Jfull);
    }
    red.reduce(Jfull, J);
  };

  NewtonOptions opt;
  opt.max_iters = config_.max_newton_iters;
  opt.line_search = config_.line_search;
  opt.regularization_init = config_.regularization_init;
  opt.regularization_growth = config_.regularization_growth;
  opt.regularization_cap = config_.regularization_cap;
  opt.merit = config_.merit;

  // residual scale of this solve
  VecX r0;
  VecX xf = red.restrict(x0);
  pb.residual(xf, r0);
  double scale = r0.norm();
  {
    VecX g0;
    model_.energy_gradient(qn, g0);
    // the full elastic force includes support reactions, which stay finite at equilibrium
    scale = std::max({scale, s * g0.norm(), s * red.restrict(F).norm(),
                      dynamic ? red.restrict(Mvn).norm() : 0.0});
  }
  opt.tol = config_.newton_tol * scale;
  opt.stall_tol = std::sqrt(config_.newton_tol) * scale;

  StepStats st;
  for (int outer = 0;; ++outer) {
    NewtonStats ns;
    try {
      ns = newton_solve(pb, xf, opt, &linear_);
    } catch (const SolveError& e) {
      throw StepFailure(e.what(), e.residual(), st.newton_iterations + e.iterations());
    }
    st.newton_iterations += ns.iterations;
    st.residual = ns.residual;
    st.regularizations += ns.regularizations;
    st.merit_history.insert(st.merit_history.end(), ns.merit_history.begin(), ns.merit_history.end());
    red.scatter(xf, xfull);
    const VecX q = to_q(xfull);
    double viol = 0.0;
    for (const auto& c : al) viol = std::max(viol, c.value(q).norm());
    st.constraint_violation = viol;
    st.al_iterations = outer;
    if (viol <= config_.constraint_tol) break;
    if (outer + 1 >= config_.max_al_iters) {
      throw StepFailure("augmented Lagrangian: constraint violation above tolerance", viol,
                        st.newton_iterations);
    }
    for (auto& c : al) c.pc->multiplier += c.pc->penalty * c.value(q);
    // the multiplier shift changes the residual scale only through known terms
    VecX rr;
    pb.residual(xf, rr);
    opt.tol = config_.newton_tol * std::max(scale, rr.norm());
    opt.stall_tol = std::sqrt(config_.newton_tol) * std::max(scale, rr.norm());
  }

  red.scatter(xf, xfull);
  if (dynamic) {
    state.q = qn + dt * xfull;
    state.q_dot = xfull;
    for (const auto& [i, v] : red.pinned_values(cons, t1)) state.q[i] = v;
    state.t = t1;
  } else {
    state.q = xfull;
  }
  return st;
}

std::pair<Vec3, Vec3> twist_targets(const NodeDofs& ref, double omega, double t, const Vec3& axis) {
  const Mat3 R = Eigen::AngleAxisd(omega * t, axis.normalized()).toRotationMatrix();
  return {R * ref.d1, R * ref.d2};
}

void add_twist(ConstraintSet& cons, const PatchGrid& grid, const VecX& q_ref, int node, double omega,
               const Vec3& axis) {
  const NodeDofs ref = grid.node(node, q_ref);
  cons.pin(grid, q_ref, node, DofKind::Value);
  cons.pin(grid, node, DofKind::D1,
           [ref, omega, axis](double t) { return twist_targets(ref, omega, t, axis).first; });
  cons.pin(grid, node, DofKind::D2,
           [ref, omega, axis](double t) { return twist_targets(ref, omega, t, axis).second; });
}

std::optional<VecX> Simulator::negative_curvature(const VecX& q, const ConstraintSet& cons, unsigned long seed,
                                                  double* curvature) {
  const ConstraintReducer& red = reducer_for(cons);
  if (red.num_free() == 0) return std::nullopt;
  const SparseMat K = model_.hessian(q, HessianMode::Exact);
  SparseMat Kf;
  red.reduce(K, Kf);
  SymmetricSolver solver;
  if (solver.factorize(Kf, 0.0, true)) return std::nullopt;

  // smallest SPD shift within a factor of 2, then inverse iteration towards the lowest mode
  const double base = mean_diag(Kf);
  double hi = 1e-8 * base;
  while (!solver.factorize(Kf, hi, true)) {
    hi *= 10.0;
    if (hi > 1e6 * base) return std::nullopt;
  }
  double lo = hi / 10.0;
  while (hi > 2.0 * lo) {
    const double mid = std::sqrt(lo * hi);
    if (solver.factorize(Kf, mid, true)) hi = mid;
    else lo = mid;
  }
  solver.factorize(Kf, hi, true);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  VecX v(red.num_free());
  for (int i = 0; i < v.size(); ++i) v[i] = n01(rng);
  v.normalize();
  double rq = 0.0;
  for (int it = 0; it < 50; ++it) {
    v = solver.solve(v);
    v.normalize();
    const double next = v.dot(Kf * v);
    if (it > 0 && std::abs(next - rq) <= 1e-8 * std::abs(next)) {
      rq = next;
      break;
    }
    rq = next;
  }
  if (curvature) *curvature = rq;
  if (!(rq < 0.0)) return std::nullopt;
  VecX full = VecX::Zero(q.size());
  red.scatter(v, full);
  return full;
}

StepStats Simulator::stable_static_solve(VecX& q, ConstraintSet& cons, const Loads& loads, double t, double kick,
                                         int max_kicks, unsigned long seed) {
  StepStats total = static_solve(q, cons, loads, t);
  const PatchGrid& grid = model_.grid();
  for (int k = 0; k < max_kicks; ++k) {
    auto dir = negative_curvature(q, cons, seed + k);
    if (!dir) break;
    double vmax = 0.0;
    for (int node = 0; node < grid.num_nodes(); ++node)
      vmax = std::max(vmax, dir->segment<3>(3 * grid.coord_index(node, DofKind::Value)).norm());
    if (!(vmax > 0.0)) break;
    q += (kick / vmax) * *dir;
    const StepStats st = static_solve(q, cons, loads, t);
    total.newton_iterations += st.newton_iterations;
    total.residual = st.residual;
    total.regularizations += st.regularizations;
  }
  return total;
}

}  // namespace bhem
