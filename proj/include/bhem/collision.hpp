#pragma once

// Sample-based continuous collision detection for the shell against kinematic colliders
// and itself, and impulse-based response (zero restitution, push-out, Coulomb friction).

#include "bhem/dynamics.hpp"
#include "bhem/intersection.hpp"

#include <optional>
#include <vector>

namespace bhem {

struct SphereCollider {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  Vec3 velocity = Vec3::Zero();
};

struct PlaneCollider {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();  // the free side
  Vec3 velocity = Vec3::Zero();
};

/// Infinite circular cylinder.
struct CylinderCollider {
  Vec3 point = Vec3::Zero();
  Vec3 axis = Vec3::UnitZ();
  double radius = 1.0;
  Vec3 velocity = Vec3::Zero();
};

/// Triangle mesh whose vertices act as sample points against the shell.
struct MeshCollider {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  Vec3 velocity = Vec3::Zero();
};

struct ColliderSet {
  std::vector<SphereCollider> spheres;
  std::vector<PlaneCollider> planes;
  std::vector<CylinderCollider> cylinders;
  std::vector<MeshCollider> meshes;
  bool self_collision = false;
  int samples_per_patch = 8;
  /// Self-collision: parameter half-width of the neighbourhood of a sample left out of
  /// its own and adjacent patches.
  double self_exclusion = 0.5;

  bool empty() const {
    return spheres.empty() && planes.empty() && cylinders.empty() && meshes.empty() && !self_collision;
  }
  /// Moves every collider by velocity * dt.
  void advance(double dt);
  /// Parameters of the shell samples of one patch.
  std::vector<Vec2> sample_params(const ParamRect& rect) const;
};

enum class ContactKind { Sphere, Plane, Cylinder, MeshVertex, Self };

/// One contact: the gap along `normal` is normal . (sum_l w_l q_l + kin_x) and its rate
/// normal . (sum_l w_l qdot_l + kin_v), where the sum runs over shell coordinates.
struct CollisionEvent {
  double t = 0.0;  // time of impact within the checked window
  Vec3 normal = Vec3::UnitZ();
  Vec3 point = Vec3::Zero();
  std::vector<std::pair<int, double>> weights;  // (coordinate, weight)
  Vec3 kin_x = Vec3::Zero();
  Vec3 kin_v = Vec3::Zero();
  ContactKind kind = ContactKind::Plane;
  int source = -1;  // sample or vertex index
  int collider = -1;

  /// Rate of the contact along `dir` for generalized velocities qdot.
  double rate(const VecX& qdot, const Vec3& dir) const;
  double gap(const VecX& q) const;
};

struct CollisionConfig {
  double push_out = 1e-4;
  double friction = 0.0;
  /// Batch window; <= 0 selects dt / 25.
  double eps_t = 0.0;
  int max_rollbacks = 50;
  IntersectOptions ccd;
};

struct DetectResult {
  double t_earliest = 0.0;
  std::vector<CollisionEvent> events;  // t within [t_earliest, t_earliest + eps_t]
};

/// Checks the linear trajectories q + s qdot, s in [0, window], against the colliders
/// (positioned at the start of the window).
std::optional<DetectResult> detect(const PatchGrid& grid, const VecX& q, const VecX& qdot,
                                   const ColliderSet& colliders, double window, double eps_t,
                                   const IntersectOptions& ccd = {});

/// Applies contact impulses through the inverse mass restricted to free coordinates.
class ContactSolver {
 public:
  ContactSolver(const SparseMat& mass, const ConstraintReducer& reducer);

  /// Zero-restitution velocity update; returns the normal impulses (least squares).
  VecX resolve_velocities(const std::vector<CollisionEvent>& events, VecX& qdot) const;
  /// Moves the contacts to gap = push_out along their normals.
  void resolve_positions(const std::vector<CollisionEvent>& events, VecX& q, double push_out) const;
  /// Non-negative impulses only: approaching contacts stop, separating ones are left alone.
  VecX push_velocities(const std::vector<CollisionEvent>& events, VecX& qdot) const;
  /// Moves contacts closer than push_out out to push_out; contacts farther away are not pulled.
  void push_positions(const std::vector<CollisionEvent>& events, VecX& q, double push_out) const;
  /// push_velocities, friction (mu > 0) and push_positions sharing one contact system.
  VecX push(const std::vector<CollisionEvent>& events, VecX& qdot, VecX& q, double push_out, double mu) const;
  /// Tangential impulses bounded by mu times the normal ones; returns their magnitudes.
  VecX apply_friction(const std::vector<CollisionEvent>& events, double mu, const VecX& eta_n,
                      VecX& qdot) const;

  /// Dense rows of the given events along per-event directions, over free coordinates.
  Eigen::MatrixXd rows(const std::vector<CollisionEvent>& events, const std::vector<Vec3>& dirs) const;
  /// M_ff^-1 applied to a matrix of free-coordinate columns.
  Eigen::MatrixXd solve_mass(const Eigen::MatrixXd& B) const;
  const ConstraintReducer& reducer() const { return reducer_; }

 private:
  VecX project(const Eigen::MatrixXd& G, const VecX& rhs, VecX& x) const;
  VecX project_unilateral(const Eigen::MatrixXd& G, const VecX& rhs, VecX& x) const;
  static VecX gauss_seidel(const Eigen::MatrixXd& A, const VecX& rhs);
  void add_free(const VecX& dx, VecX& x) const;

  const ConstraintReducer& reducer_;
  Eigen::SimplicialLDLT<SparseMat> mass_ff_;
  mutable Eigen::MatrixXd minv_;  // dense M_ff^-1, filled on first use for small systems
};

struct CollisionStepStats {
  int rollbacks = 0;
  int events = 0;
  std::vector<double> substeps;
  int newton_iterations = 0;
  double residual = 0.0;
  // wall-clock seconds
  double t_integrate = 0.0;
  double t_ccd = 0.0;
  double t_response = 0.0;
};

/// Contact solver kept between steps; rebuilt when the free coordinates change.
struct ContactCache {
  std::optional<ContactSolver> solver;
  std::vector<int> free;
};

/// One step of length sim.config().dt with rollback to each earliest contact batch.
/// Colliders are advanced by dt. Throws StepFailure past max_rollbacks.
CollisionStepStats step_with_collisions(Simulator& sim, SystemState& state, ConstraintSet& cons,
                                        const Loads& loads, ColliderSet& colliders,
                                        const CollisionConfig& cfg, ContactCache* cache = nullptr);

/// Signed distance of a point to an analytic collider (negative inside).
double signed_distance(const SphereCollider& c, const Vec3& x);
double signed_distance(const PlaneCollider& c, const Vec3& x);
double signed_distance(const CylinderCollider& c, const Vec3& x);

/// Smallest signed distance of all shell samples to the analytic colliders.
double min_sample_distance(const PatchGrid& grid, const VecX& q, const ColliderSet& colliders);

}  // namespace bhem
