#pragma once

// Scene files, scenario runners and exporters (metrics CSV, OBJ meshes, ray-cast images).

#include "bhem/collision.hpp"

#include <array>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bhem {

/// Malformed or schema-violating scene file; what() lists every problem with its location.
class SchemaError : public std::runtime_error {
 public:
  explicit SchemaError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

using Arr3 = std::array<double, 3>;

enum class Scenario { Free, Drape, Wrinkle, Cantilever, LateralBuckling, Twist, Needles };

struct GridSpec {
  int nx = 10, ny = 10;
  std::array<double, 2> size{1.0, 1.0};
  Arr3 origin{0.0, 0.0, 0.0};
  bool operator==(const GridSpec&) const = default;
};

struct MaterialSpec {
  double Y = 1e5, nu = 0.3, h = 1e-3, rho = 200.0;
  bool operator==(const MaterialSpec&) const = default;
};

struct SolverSpec {
  double dt = 2e-3;
  std::string hessian = "exact";  // exact | pseudo
  std::string merit = "potential";  // potential | residual
  double newton_tol = 1e-9;
  int max_newton_iters = 60;
  double rayleigh_alpha = 0.0;
  bool quasi_static = false;
  bool operator==(const SolverSpec&) const = default;
};

struct LoadSpec {
  Arr3 gravity{0.0, 0.0, -9.81};
  double pressure = 0.0;
  bool operator==(const LoadSpec&) const = default;
};

struct RunSpec {
  int steps = 100;
  /// Quasi-static runs: loads and prescribed displacements reach full size at this step.
  int ramp_steps = 1;
  unsigned long seed = 1;
  /// Amplitude (relative to the sheet size) of the seeded out-of-plane perturbation.
  double perturbation = 0.0;
  bool operator==(const RunSpec&) const = default;
};

struct SphereSpec {
  Arr3 center{0, 0, 0};
  double radius = 0.25;
  Arr3 velocity{0, 0, 0};
  bool operator==(const SphereSpec&) const = default;
};

struct PlaneSpec {
  Arr3 point{0, 0, 0};
  Arr3 normal{0, 0, 1};
  Arr3 velocity{0, 0, 0};
  bool operator==(const PlaneSpec&) const = default;
};

struct NeedleSpec {
  int nx = 0, ny = 0;  // needle lattice; 0 disables
  double spacing = 0.1;
  Arr3 center{0, 0, 0};  // centre of the tip lattice
  Arr3 velocity{0, 0, 0};
  bool operator==(const NeedleSpec&) const = default;
};

struct CollisionSpec {
  std::vector<SphereSpec> spheres;
  std::vector<PlaneSpec> planes;
  NeedleSpec needles;
  bool self_collision = false;
  int samples_per_patch = 8;
  double friction = 0.0;
  double push_out = 1e-4;
  double eps_t = 0.0;  // <= 0: dt / 25
  bool operator==(const CollisionSpec&) const = default;
};

struct WrinkleSpec {
  double stretch = 0.1;  // nominal strain along x
  bool operator==(const WrinkleSpec&) const = default;
};

struct DrapeSpec {
  bool clamp_corners = false;  // pin the positions of the four corner nodes
  bool operator==(const DrapeSpec&) const = default;
};

struct TwistSpec {
  double omega = 1.0;  // rad/s about the sheet normal at the centre node
  bool operator==(const TwistSpec&) const = default;
};

struct OutputSpec {
  std::string dir = "out";
  int mesh_every = 0;  // 0: final mesh only
  int subdiv = 4;
  bool operator==(const OutputSpec&) const = default;
};

struct CameraSpec {
  Arr3 eye{0.0, -2.0, 2.0};
  Arr3 target{0.0, 0.0, 0.0};
  Arr3 up{0.0, 0.0, 1.0};
  double fov_deg = 40.0;
  int width = 256, height = 256;
  bool operator==(const CameraSpec&) const = default;
};

struct SceneConfig {
  Scenario scenario = Scenario::Free;
  std::string name;
  GridSpec grid;
  MaterialSpec material;
  SolverSpec solver;
  LoadSpec loads;
  RunSpec run;
  CollisionSpec collision;
  DrapeSpec drape;
  WrinkleSpec wrinkle;
  TwistSpec twist;
  OutputSpec output;
  CameraSpec camera;
  bool operator==(const SceneConfig&) const = default;

  /// Gravito-bending parameter 12 (1 - nu^2) rho |g| L^3 / (Y h^2), L = grid.size[0].
  double gamma_star() const;
};

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);  // throws SchemaError

/// Parses and validates; throws SchemaError (all problems) on any violation.
SceneConfig parse_scene(const std::string& text);
SceneConfig load_scene(const std::string& path);
std::string dump_scene(const SceneConfig& cfg);
void save_scene(const SceneConfig& cfg, const std::string& path);
/// Human-readable schema: every key with its type, default and meaning.
std::string schema_help();

/// Overrides from the command line, applied after loading.
struct Overrides {
  std::optional<std::array<int, 2>> patches;
  std::optional<double> dt;
  std::optional<std::string> hessian;
  std::optional<int> steps;
  std::optional<std::string> out;
  std::optional<unsigned long> seed;
};
void apply_overrides(SceneConfig& cfg, const Overrides& o);
/// Parses "NXxNY".
std::array<int, 2> parse_patches(const std::string& s);

struct MetricRow {
  long step = 0;
  double time = 0.0;
  double kinetic_energy = 0.0;
  double elastic_energy = 0.0;
  int newton_iterations = 0;
  double residual = 0.0;
  double metric = 0.0;
  // not part of the deterministic CSV
  double wall_time = 0.0;
  double t_integrate = 0.0;
  double t_ccd = 0.0;
  int contacts = 0;
};

/// Column names of the metrics CSV in file order.
const std::vector<std::string>& csv_columns();
void write_csv_header(std::ostream& os);
void write_csv_row(std::ostream& os, const MetricRow& r);

/// Built scene with its solver; holds references into itself, so it is not movable.
class SceneRunner {
 public:
  explicit SceneRunner(const SceneConfig& cfg);
  SceneRunner(const SceneRunner&) = delete;
  SceneRunner& operator=(const SceneRunner&) = delete;

  const SceneConfig& config() const { return cfg_; }
  const PatchGrid& grid() const { return grid_; }
  const VecX& reference() const { return q_ref_; }
  const SystemState& state() const { return state_; }
  SystemState& state() { return state_; }
  const ElasticModel& model() const { return *model_; }
  Simulator& simulator() { return *sim_; }
  const ColliderSet& colliders() const { return colliders_; }
  ConstraintSet& constraints() { return cons_; }
  long step_index() const { return step_; }

  /// Name of the scenario metric column value.
  std::string metric_name() const;
  double metric() const;
  MetricRow initial_row() const;
  /// One time step (or one quasi-static load increment). Throws StepFailure with the step index.
  MetricRow advance();

 private:
  Loads loads_at(long step) const;

  SceneConfig cfg_;
  PatchGrid grid_;
  VecX q_ref_;
  std::unique_ptr<ElasticModel> model_;
  std::unique_ptr<Simulator> sim_;
  ConstraintSet cons_;
  ColliderSet colliders_;
  CollisionConfig ccfg_;
  ContactCache contact_cache_;
  SystemState state_;
  long step_ = 0;
  int last_contacts_ = 0;
};

/// Runs cfg.run.steps steps, writing metrics.csv, timings.csv and OBJ snapshots under
/// cfg.output.dir. Returns all rows.
std::vector<MetricRow> run_scenario(const SceneConfig& cfg, std::ostream* log = nullptr);

// Scenario metrics.

/// Largest |z - z_ref| on the line x = size_x / 2 (transverse centreline), 512 samples.
double wrinkle_amplitude(const PatchGrid& grid, const VecX& q, const VecX& q_ref, int samples = 512);
/// Mean drop of the free end (xi1 = nx) below its reference height.
double tip_deflection(const PatchGrid& grid, const VecX& q, const VecX& q_ref);
/// Height over horizontal extent of the deformed centreline's bounding box.
double aspect_ratio_hw(const PatchGrid& grid, const VecX& q);
/// Largest |y - y_ref| over a sample lattice.
double lateral_displacement(const PatchGrid& grid, const VecX& q, const VecX& q_ref);
double max_displacement(const PatchGrid& grid, const VecX& q, const VecX& q_ref);

// Export.

/// Lattice of (s nx + 1)(s ny + 1) points (periodic seams shared), quads; Wavefront OBJ text.
struct QuadMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 4>> quads;
};
QuadMesh tessellate(const PatchGrid& grid, const VecX& q, int subdiv);
void write_obj(const QuadMesh& mesh, std::ostream& os);
void export_mesh(const PatchGrid& grid, const VecX& q, int subdiv, const std::string& path);

// Ray-cast images.

struct Camera {
  Vec3 eye, forward, right, up;
  double tan_half = 0.0, aspect = 1.0;
  int width = 0, height = 0;

  static Camera make(const CameraSpec& spec);
  /// Primary ray through the centre of pixel (px, py); row 0 is the top.
  Ray ray(int px, int py) const;
};

struct RayImage {
  int width = 0, height = 0;
  std::vector<double> tau;  // +inf on miss
  std::vector<Vec3> normal;  // zero on miss
  bool hit(int i) const { return std::isfinite(tau[i]); }
};

RayImage raycast(const PatchGrid& grid, const VecX& q, const Camera& cam,
                 const IntersectOptions& opt = {}, int threads = 0);
/// Depth as 16-bit binary PGM: 0 marks a miss, 1..65535 map [tau_min, tau_max] linearly;
/// tau_min and tau_max are recorded in a header comment.
void write_depth_pgm(const RayImage& img, const std::string& path);
/// Normals as 8-bit binary PPM: channel = round(255 (n + 1) / 2), misses black.
void write_normal_ppm(const RayImage& img, const std::string& path);

}  // namespace bhem
