#pragma once

// Implicit Euler time integration of the shell, Dirichlet/Neumann elimination and
// augmented-Lagrangian point constraints.

#include "bhem/elastic.hpp"
#include "bhem/newton.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace bhem {

struct SystemState {
  VecX q;
  VecX q_dot;
  double t = 0.0;
};

struct SolverConfig {
  double dt = 1e-3;
  /// Newton stops once |R| <= newton_tol * (residual scale of the step).
  double newton_tol = 1e-9;
  int max_newton_iters = 60;
  LineSearchConfig line_search;
  HessianMode hessian_mode = HessianMode::Exact;
  double regularization_init = 1e-8;
  double regularization_growth = 10.0;
  double regularization_cap = 1e4;
  double rayleigh_alpha = 0.0;
  /// Augmented Lagrangian: bound on |C| and cap on multiplier updates per step.
  double constraint_tol = 1e-6;
  int max_al_iters = 30;
  /// Line-search merit: the incremental potential, or 1/2 |R|^2.
  MeritKind merit = MeritKind::Potential;

  void validate() const;
};

/// Prescribed trajectory of a generalized coordinate; components with mask false stay free.
struct DofPin {
  int coord = 0;
  std::array<bool, 3> mask{true, true, true};
  std::function<Vec3(double t)> target;
};

/// Linear constraint on the surface position or a first derivative at an arbitrary point.
struct PointConstraint {
  double xi1 = 0.0, xi2 = 0.0;
  DofKind kind = DofKind::Value;  // Value, D1 or D2
  std::function<Vec3(double t)> target;
  double penalty = 0.0;  // <= 0 selects a penalty from the system scale
  Vec3 multiplier = Vec3::Zero();
};

struct ConstraintSet {
  std::vector<DofPin> dirichlet;  // value coordinates
  std::vector<DofPin> neumann;    // derivative coordinates
  std::vector<PointConstraint> point_constraints;

  bool empty() const { return dirichlet.empty() && neumann.empty() && point_constraints.empty(); }

  /// Pins the masked components of a coordinate at its current value.
  void pin(const PatchGrid& grid, const VecX& q, int node, DofKind kind,
           std::array<bool, 3> mask = {true, true, true});
  /// Pins with a time-dependent target.
  void pin(const PatchGrid& grid, int node, DofKind kind, std::function<Vec3(double)> target,
           std::array<bool, 3> mask = {true, true, true});
};

/// Free/pinned partition of the 3N scalar unknowns, with the reduced matrix pattern
/// and value maps prepared once.
class ConstraintReducer {
 public:
  ConstraintReducer() = default;
  /// Throws ConstraintError when a scalar is pinned twice or a pin has the wrong kind.
  ConstraintReducer(const PatchGrid& grid, const ConstraintSet& cons, const SparseMat& pattern);

  int num_free() const { return static_cast<int>(free_.size()); }
  int num_total() const { return static_cast<int>(full_to_free_.size()); }
  bool is_free(int i) const { return full_to_free_[i] >= 0; }
  int free_index(int i) const { return full_to_free_[i]; }
  const std::vector<int>& free_indices() const { return free_; }

  VecX restrict(const VecX& full) const;
  void scatter(const VecX& reduced, VecX& full) const;
  /// Reduced matrix values gathered from a matrix with the full pattern.
  void reduce(const SparseMat& full, SparseMat& reduced) const;

  /// Prescribed values of pinned scalars at time t: (index, value).
  std::vector<std::pair<int, double>> pinned_values(const ConstraintSet& cons, double t) const;

 private:
  std::vector<int> free_;
  std::vector<int> full_to_free_;
  SparseMat reduced_pattern_;
  std::vector<int> value_map_;
};

/// Reduced system from a full one: pinned rows and columns removed, their coupling moved
/// to the right-hand side. Returns (K_ff, b_f - K_fp x_p).
std::pair<SparseMat, VecX> apply_constraints(const SparseMat& K, const VecX& rhs,
                                             const PatchGrid& grid, const ConstraintSet& cons,
                                             double t);

struct StepStats {
  int newton_iterations = 0;
  double residual = 0.0;
  int al_iterations = 0;
  double constraint_violation = 0.0;
  int regularizations = 0;
  std::vector<double> merit_history;
};

class Simulator {
 public:
  Simulator(const ElasticModel& model, const SolverConfig& config);

  const ElasticModel& model() const { return model_; }
  const SolverConfig& config() const { return config_; }
  SolverConfig& config() { return config_; }
  const SparseMat& mass() const { return mass_; }
  /// Free/pinned partition for a constraint set (cached while the pins stay the same).
  const ConstraintReducer& reducer_for(const ConstraintSet& cons);

  /// Advances one implicit Euler step in place, of length config().dt unless `dt` is
  /// positive. Multipliers of point constraints are updated in `cons`. Throws StepFailure.
  StepStats step(SystemState& state, ConstraintSet& cons, const Loads& loads, double dt = 0.0);

  /// Minimizes V(q) - F.q subject to the constraints at time t, starting from q.
  StepStats static_solve(VecX& q, ConstraintSet& cons, const Loads& loads, double t);

  /// Unit direction (pinned entries zero) of negative curvature of the elastic energy at q
  /// restricted to the free coordinates, or none when that Hessian is positive definite.
  /// `curvature` receives the Rayleigh quotient along the direction.
  std::optional<VecX> negative_curvature(const VecX& q, const ConstraintSet& cons, unsigned long seed = 1,
                                         double* curvature = nullptr);

  /// Static solve repeated from kicks along negative-curvature directions until the
  /// equilibrium is stable (at most max_kicks times). Kicks move values by at most `kick`.
  StepStats stable_static_solve(VecX& q, ConstraintSet& cons, const Loads& loads, double t, double kick,
                                int max_kicks = 20, unsigned long seed = 1);

  double kinetic_energy(const SystemState& s) const { return 0.5 * s.q_dot.dot(mass_ * s.q_dot); }

 private:
  StepStats solve(SystemState& state, ConstraintSet& cons, const Loads& loads, bool dynamic, double dt);

  const ElasticModel& model_;
  SolverConfig config_;
  SparseMat mass_;
  ConstraintReducer reducer_;
  std::vector<std::pair<int, std::array<bool, 3>>> reducer_key_;
  bool reducer_ready_ = false;
  SymmetricSolver linear_;
};

/// Node pins for a center node rotating about `axis` at angular speed omega: value fixed,
/// d1 and d2 rotated copies of their reference values.
void add_twist(ConstraintSet& cons, const PatchGrid& grid, const VecX& q_ref, int node,
               double omega, const Vec3& axis = Vec3::UnitZ());

/// The prescribed (d1, d2) of a twisted node at time t.
std::pair<Vec3, Vec3> twist_targets(const NodeDofs& ref, double omega, double t,
                                    const Vec3& axis = Vec3::UnitZ());

}  // namespace bhem
