#include "bhem/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

namespace bhem {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string join_lines(const std::vector<std::string>& v) {
  std::string s = "scene schema errors:";
  for (const auto& p : v) s += "\n  " + p;
  return s;
}

struct Field {
  const char* path;
  const char* type;
  bool required;
  const char* def;
  const char* help;
};

// The schema: one entry per key. "[]" marks an array of objects.
const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"scenario", "string", true, "", "free | drape | wrinkle | cantilever | lateral_buckling | twist | needles"},
      {"name", "string", false, "\"\"", "label used in bench output"},
      {"grid.nx", "integer >= 1", true, "", "patches along x (first parameter)"},
      {"grid.ny", "integer >= 1", true, "", "patches along y"},
      {"grid.size", "[number, number] > 0", true, "", "sheet extent in metres"},
      {"grid.origin", "[x, y, z]", false, "[0, 0, 0]", "corner of the sheet"},
      {"material.Y", "number > 0", true, "", "Young's modulus [Pa]"},
      {"material.nu", "number in [0, 0.5]", true, "", "Poisson ratio"},
      {"material.h", "number > 0", true, "", "thickness [m]"},
      {"material.rho", "number >= 0", true, "", "density [kg/m^3]"},
      {"solver.dt", "number > 0", true, "", "time step [s] (load increment size when quasi-static)"},
      {"solver.hessian", "string", false, "\"exact\"", "exact | pseudo"},
      {"solver.merit", "string", false, "\"potential\"", "line-search merit: potential | residual"},
      {"solver.newton_tol", "number > 0", false, "1e-9", "relative Newton tolerance"},
      {"solver.max_newton_iters", "integer >= 1", false, "60", "Newton iteration cap per step"},
      {"solver.rayleigh_alpha", "number >= 0", false, "0", "mass-proportional damping"},
      {"solver.quasi_static", "boolean", false, "false", "static equilibrium per step instead of dynamics"},
      {"loads.gravity", "[x, y, z]", false, "[0, 0, -9.81]", "gravitational acceleration [m/s^2]"},
      {"loads.pressure", "number", false, "0", "pressure along the normal [Pa]"},
      {"run.steps", "integer >= 0", false, "100", "number of steps"},
      {"run.ramp_steps", "integer >= 1", false, "1", "quasi-static: steps until full load"},
      {"run.seed", "integer >= 0", false, "1", "seed of the symmetry-breaking perturbation"},
      {"run.perturbation", "number >= 0", false, "0", "perturbation amplitude relative to the sheet size"},
      {"collision.spheres[].center", "[x, y, z]", false, "[0, 0, 0]", "sphere centre"},
      {"collision.spheres[].radius", "number > 0", false, "0.25", "sphere radius"},
      {"collision.spheres[].velocity", "[x, y, z]", false, "[0, 0, 0]", "sphere velocity"},
      {"collision.planes[].point", "[x, y, z]", false, "[0, 0, 0]", "point on the plane"},
      {"collision.planes[].normal", "[x, y, z] != 0", false, "[0, 0, 1]", "normal towards the free side"},
      {"collision.planes[].velocity", "[x, y, z]", false, "[0, 0, 0]", "plane velocity"},
      {"collision.needles.nx", "integer >= 0", false, "0", "needle columns"},
      {"collision.needles.ny", "integer >= 0", false, "0", "needle rows"},
      {"collision.needles.spacing", "number > 0", false, "0.1", "needle spacing [m]"},
      {"collision.needles.center", "[x, y, z]", false, "[0, 0, 0]", "centre of the tip lattice"},
      {"collision.needles.velocity", "[x, y, z]", false, "[0, 0, 0]", "needle velocity"},
      {"collision.self_collision", "boolean", false, "false", "detect self contact"},
      {"collision.samples_per_patch", "integer >= 1", false, "8", "shell samples per patch side"},
      {"collision.friction", "number >= 0", false, "0", "Coulomb coefficient"},
      {"collision.push_out", "number >= 0", false, "1e-4", "positional offset after response [m]"},
      {"collision.eps_t", "number >= 0", false, "0", "contact batch window [s]; 0 selects dt/25"},
      {"wrinkle.stretch", "number > -1", false, "0.1", "nominal strain imposed between the clamped ends"},
      {"drape.clamp_corners", "boolean", false, "false", "pin the four corner positions"},
      {"twist.omega", "number", false, "1", "angular speed of the centre node [rad/s]"},
      {"output.dir", "string", false, "\"out\"", "output directory"},
      {"output.mesh_every", "integer >= 0", false, "0", "OBJ snapshot interval; 0 writes the final mesh only"},
      {"output.subdiv", "integer >= 1", false, "4", "tessellation level of exported meshes"},
      {"camera.eye", "[x, y, z]", false, "[0, -2, 2]", "camera position"},
      {"camera.target", "[x, y, z]", false, "[0, 0, 0]", "look-at point"},
      {"camera.up", "[x, y, z]", false, "[0, 0, 1]", "up hint"},
      {"camera.fov_deg", "number in (0, 180)", false, "40", "vertical field of view"},
      {"camera.width", "integer >= 1", false, "256", "image width"},
      {"camera.height", "integer >= 1", false, "256", "image height"},
  };
  return f;
}

// Keys allowed directly under a schema prefix ("" for the root, "collision.spheres[]." ...).
std::vector<std::string> children(const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& f : fields()) {
    const std::string p = f.path;
    if (p.rfind(prefix, 0) != 0) continue;
    std::string rest = p.substr(prefix.size());
    rest = rest.substr(0, rest.find_first_of(".["));
    if (std::find(out.begin(), out.end(), rest) == out.end()) out.push_back(rest);
  }
  return out;
}

class Reader {
 public:
  std::vector<std::string> errs;

  // Checks that j is an object whose keys are known and whose required keys exist.
  bool object(const json& j, const std::string& prefix, const std::string& loc) {
    if (!j.is_object()) {
      errs.push_back(loc + ": expected an object");
      return false;
    }
    const auto known = children(prefix);
    for (auto it = j.begin(); it != j.end(); ++it)
      if (std::find(known.begin(), known.end(), it.key()) == known.end())
        errs.push_back(loc + "/" + it.key() + ": unknown key");
    for (const auto& f : fields()) {
      const std::string p = f.path;
      if (!f.required || p.rfind(prefix, 0) != 0) continue;
      std::string rest = p.substr(prefix.size());
      rest = rest.substr(0, rest.find_first_of(".["));
      const std::string msg = loc + "/" + rest + ": missing required key";
      if (!j.contains(rest) && std::find(errs.begin(), errs.end(), msg) == errs.end()) errs.push_back(msg);
    }
    return true;
  }

  void number(const json& j, const char* key, double& out, const std::string& loc, double lo, double hi,
              bool lo_open = false, bool hi_open = false) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    const std::string l = loc + "/" + key;
    if (!v.is_number()) {
      errs.push_back(l + ": expected a number");
      return;
    }
    const double x = v.get<double>();
    if (!std::isfinite(x) || x < lo || x > hi || (lo_open && x == lo) || (hi_open && x == hi)) {
      errs.push_back(l + ": value out of range");
      return;
    }
    out = x;
  }

  template <class I>
  void integer(const json& j, const char* key, I& out, const std::string& loc, long long lo) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    const std::string l = loc + "/" + key;
    if (!v.is_number_integer()) {
      errs.push_back(l + ": expected an integer");
      return;
    }
    const long long x = v.get<long long>();
    if (x < lo) {
      errs.push_back(l + ": value out of range");
      return;
    }
    out = static_cast<I>(x);
  }

  void boolean(const json& j, const char* key, bool& out, const std::string& loc) {
    if (!j.contains(key)) return;
    if (!j.at(key).is_boolean()) {
      errs.push_back(loc + "/" + key + ": expected a boolean");
      return;
    }
    out = j.at(key).get<bool>();
  }

  void string(const json& j, const char* key, std::string& out, const std::string& loc,
              const std::vector<std::string>& allowed = {}) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    const std::string l = loc + "/" + key;
    if (!v.is_string()) {
      errs.push_back(l + ": expected a string");
      return;
    }
    const std::string s = v.get<std::string>();
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string msg = l + ": expected one of";
      for (const auto& a : allowed) msg += " " + a;
      errs.push_back(msg);
      return;
    }
    out = s;
  }

  template <std::size_t N>
  void array(const json& j, const char* key, std::array<double, N>& out, const std::string& loc,
             bool positive = false) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    const std::string l = loc + "/" + key;
    if (!v.is_array() || v.size() != N) {
      errs.push_back(l + ": expected an array of " + std::to_string(N) + " numbers");
      return;
    }
    std::array<double, N> a{};
    for (std::size_t i = 0; i < N; ++i) {
      if (!v[i].is_number() || !std::isfinite(v[i].get<double>()) || (positive && v[i].get<double>() <= 0.0)) {
        errs.push_back(l + "/" + std::to_string(i) + (positive ? ": expected a positive number" : ": expected a number"));
        return;
      }
      a[i] = v[i].get<double>();
    }
    out = a;
  }
};

json arr(const Arr3& a) { return json::array({a[0], a[1], a[2]}); }
Vec3 vec(const Arr3& a) { return Vec3(a[0], a[1], a[2]); }

void parse_into(const json& root, SceneConfig& c, Reader& r) {
  if (!r.object(root, "", "")) return;
  if (root.contains("scenario")) {
    std::string s;
    r.string(root, "scenario", s, "",
             {"free", "drape", "wrinkle", "cantilever", "lateral_buckling", "twist", "needles"});
    if (!s.empty()) c.scenario = scenario_from_string(s);
  }
  r.string(root, "name", c.name, "");

  if (root.contains("grid") && r.object(root["grid"], "grid.", "/grid")) {
    const json& g = root["grid"];
    r.integer(g, "nx", c.grid.nx, "/grid", 1);
    r.integer(g, "ny", c.grid.ny, "/grid", 1);
    r.array(g, "size", c.grid.size, "/grid", true);
    r.array(g, "origin", c.grid.origin, "/grid");
  }
  if (root.contains("material") && r.object(root["material"], "material.", "/material")) {
    const json& m = root["material"];
    const double inf = std::numeric_limits<double>::infinity();
    r.number(m, "Y", c.material.Y, "/material", 0.0, inf, true);
    r.number(m, "nu", c.material.nu, "/material", 0.0, 0.5);
    r.number(m, "h", c.material.h, "/material", 0.0, inf, true);
    r.number(m, "rho", c.material.rho, "/material", 0.0, inf);
  }
  const double inf = std::numeric_limits<double>::infinity();
  if (root.contains("solver") && r.object(root["solver"], "solver.", "/solver")) {
    const json& s = root["solver"];
    r.number(s, "dt", c.solver.dt, "/solver", 0.0, inf, true);
    r.string(s, "hessian", c.solver.hessian, "/solver", {"exact", "pseudo"});
    r.string(s, "merit", c.solver.merit, "/solver", {"potential", "residual"});
    r.number(s, "newton_tol", c.solver.newton_tol, "/solver", 0.0, inf, true);
    r.integer(s, "max_newton_iters", c.solver.max_newton_iters, "/solver", 1);
    r.number(s, "rayleigh_alpha", c.solver.rayleigh_alpha, "/solver", 0.0, inf);
    r.boolean(s, "quasi_static", c.solver.quasi_static, "/solver");
  }
  if (root.contains("loads") && r.object(root["loads"], "loads.", "/loads")) {
    r.array(root["loads"], "gravity", c.loads.gravity, "/loads");
    r.number(root["loads"], "pressure", c.loads.pressure, "/loads", -inf, inf);
  }
  if (root.contains("run") && r.object(root["run"], "run.", "/run")) {
    const json& s = root["run"];
    r.integer(s, "steps", c.run.steps, "/run", 0);
    r.integer(s, "ramp_steps", c.run.ramp_steps, "/run", 1);
    r.integer(s, "seed", c.run.seed, "/run", 0);
    r.number(s, "perturbation", c.run.perturbation, "/run", 0.0, inf);
  }
  if (root.contains("collision") && r.object(root["collision"], "collision.", "/collision")) {
    const json& s = root["collision"];
    auto objects = [&](const char* key, auto&& each) {
      if (!s.contains(key)) return;
      const std::string loc = std::string("/collision/") + key;
      if (!s[key].is_array()) {
        r.errs.push_back(loc + ": expected an array");
        return;
      }
      for (std::size_t i = 0; i < s[key].size(); ++i) {
        const std::string l = loc + "/" + std::to_string(i);
        if (r.object(s[key][i], std::string("collision.") + key + "[].", l)) each(s[key][i], l);
      }
    };
    objects("spheres", [&](const json& o, const std::string& l) {
      SphereSpec sp;
      r.array(o, "center", sp.center, l);
      r.number(o, "radius", sp.radius, l, 0.0, inf, true);
      r.array(o, "velocity", sp.velocity, l);
      c.collision.spheres.push_back(sp);
    });
    objects("planes", [&](const json& o, const std::string& l) {
      PlaneSpec pl;
      r.array(o, "point", pl.point, l);
      r.array(o, "normal", pl.normal, l);
      if (vec(pl.normal).norm() == 0.0) r.errs.push_back(l + "/normal: must be nonzero");
      r.array(o, "velocity", pl.velocity, l);
      c.collision.planes.push_back(pl);
    });
    if (s.contains("needles") && r.object(s["needles"], "collision.needles.", "/collision/needles")) {
      const json& n = s["needles"];
      r.integer(n, "nx", c.collision.needles.nx, "/collision/needles", 0);
      r.integer(n, "ny", c.collision.needles.ny, "/collision/needles", 0);
      r.number(n, "spacing", c.collision.needles.spacing, "/collision/needles", 0.0, inf, true);
      r.array(n, "center", c.collision.needles.center, "/collision/needles");
      r.array(n, "velocity", c.collision.needles.velocity, "/collision/needles");
    }
    r.boolean(s, "self_collision", c.collision.self_collision, "/collision");
    r.integer(s, "samples_per_patch", c.collision.samples_per_patch, "/collision", 1);
    r.number(s, "friction", c.collision.friction, "/collision", 0.0, inf);
    r.number(s, "push_out", c.collision.push_out, "/collision", 0.0, inf);
    r.number(s, "eps_t", c.collision.eps_t, "/collision", 0.0, inf);
  }
  if (root.contains("wrinkle") && r.object(root["wrinkle"], "wrinkle.", "/wrinkle"))
    r.number(root["wrinkle"], "stretch", c.wrinkle.stretch, "/wrinkle", -1.0, inf, true);
  if (root.contains("drape") && r.object(root["drape"], "drape.", "/drape"))
    r.boolean(root["drape"], "clamp_corners", c.drape.clamp_corners, "/drape");
  if (root.contains("twist") && r.object(root["twist"], "twist.", "/twist"))
    r.number(root["twist"], "omega", c.twist.omega, "/twist", -inf, inf);
  if (root.contains("output") && r.object(root["output"], "output.", "/output")) {
    const json& s = root["output"];
    r.string(s, "dir", c.output.dir, "/output");
    r.integer(s, "mesh_every", c.output.mesh_every, "/output", 0);
    r.integer(s, "subdiv", c.output.subdiv, "/output", 1);
  }
  if (root.contains("camera") && r.object(root["camera"], "camera.", "/camera")) {
    const json& s = root["camera"];
    r.array(s, "eye", c.camera.eye, "/camera");
    r.array(s, "target", c.camera.target, "/camera");
    r.array(s, "up", c.camera.up, "/camera");
    r.number(s, "fov_deg", c.camera.fov_deg, "/camera", 0.0, 180.0, true, true);
    r.integer(s, "width", c.camera.width, "/camera", 1);
    r.integer(s, "height", c.camera.height, "/camera", 1);
  }

  const bool has_colliders = !c.collision.spheres.empty() || !c.collision.planes.empty() ||
                             (c.collision.needles.nx > 0 && c.collision.needles.ny > 0) ||
                             c.collision.self_collision;
  if (c.solver.quasi_static && has_colliders)
    r.errs.push_back("/solver/quasi_static: collisions need a dynamic run");
}

}  // namespace

SchemaError::SchemaError(std::vector<std::string> problems)
    : std::runtime_error(join_lines(problems)), problems_(std::move(problems)) {}

double SceneConfig::gamma_star() const {
  const double L = grid.size[0];
  const double g = vec(loads.gravity).norm();
  const auto& m = material;
  return 12.0 * (1.0 - m.nu * m.nu) * m.rho * g * L * L * L / (m.Y * m.h * m.h);
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Free: return "free";
    case Scenario::Drape: return "drape";
    case Scenario::Wrinkle: return "wrinkle";
    case Scenario::Cantilever: return "cantilever";
    case Scenario::LateralBuckling: return "lateral_buckling";
    case Scenario::Twist: return "twist";
    case Scenario::Needles: return "needles";
  }
  return "free";
}

Scenario scenario_from_string(const std::string& s) {
  for (Scenario k : {Scenario::Free, Scenario::Drape, Scenario::Wrinkle, Scenario::Cantilever,
                     Scenario::LateralBuckling, Scenario::Twist, Scenario::Needles})
    if (to_string(k) == s) return k;
  throw SchemaError({"/scenario: unknown scenario '" + s + "'"});
}

SceneConfig parse_scene(const std::string& text) {
  const bool blank = std::all_of(text.begin(), text.end(), [](unsigned char ch) { return std::isspace(ch); });
  json root;
  if (blank) {
    root = json::object();
  } else {
    try {
      root = json::parse(text);
    } catch (const json::parse_error& e) {
      throw SchemaError({std::string("parse error: ") + e.what()});
    }
  }
  SceneConfig c;
  Reader r;
  parse_into(root, c, r);
  if (!r.errs.empty()) throw SchemaError(r.errs);
  return c;
}

SceneConfig load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str());
}

std::string dump_scene(const SceneConfig& c) {
  json j;
  j["scenario"] = to_string(c.scenario);
  j["name"] = c.name;
  j["grid"] = {{"nx", c.grid.nx}, {"ny", c.grid.ny}, {"size", {c.grid.size[0], c.grid.size[1]}},
               {"origin", arr(c.grid.origin)}};
  j["material"] = {{"Y", c.material.Y}, {"nu", c.material.nu}, {"h", c.material.h}, {"rho", c.material.rho}};
  j["solver"] = {{"dt", c.solver.dt},
                 {"hessian", c.solver.hessian},
                 {"merit", c.solver.merit},
                 {"newton_tol", c.solver.newton_tol},
                 {"max_newton_iters", c.solver.max_newton_iters},
                 {"rayleigh_alpha", c.solver.rayleigh_alpha},
                 {"quasi_static", c.solver.quasi_static}};
  j["loads"] = {{"gravity", arr(c.loads.gravity)}, {"pressure", c.loads.pressure}};
  j["run"] = {{"steps", c.run.steps},
              {"ramp_steps", c.run.ramp_steps},
              {"seed", c.run.seed},
              {"perturbation", c.run.perturbation}};
  json spheres = json::array(), planes = json::array();
  for (const auto& s : c.collision.spheres)
    spheres.push_back({{"center", arr(s.center)}, {"radius", s.radius}, {"velocity", arr(s.velocity)}});
  for (const auto& p : c.collision.planes)
    planes.push_back({{"point", arr(p.point)}, {"normal", arr(p.normal)}, {"velocity", arr(p.velocity)}});
  const auto& n = c.collision.needles;
  j["collision"] = {{"spheres", spheres},
                    {"planes", planes},
                    {"needles",
                     {{"nx", n.nx}, {"ny", n.ny}, {"spacing", n.spacing}, {"center", arr(n.center)},
                      {"velocity", arr(n.velocity)}}},
                    {"self_collision", c.collision.self_collision},
                    {"samples_per_patch", c.collision.samples_per_patch},
                    {"friction", c.collision.friction},
                    {"push_out", c.collision.push_out},
                    {"eps_t", c.collision.eps_t}};
  j["drape"] = {{"clamp_corners", c.drape.clamp_corners}};
  j["wrinkle"] = {{"stretch", c.wrinkle.stretch}};
  j["twist"] = {{"omega", c.twist.omega}};
  j["output"] = {{"dir", c.output.dir}, {"mesh_every", c.output.mesh_every}, {"subdiv", c.output.subdiv}};
  j["camera"] = {{"eye", arr(c.camera.eye)},       {"target", arr(c.camera.target)},
                 {"up", arr(c.camera.up)},         {"fov_deg", c.camera.fov_deg},
                 {"width", c.camera.width},        {"height", c.camera.height}};
  return j.dump(2) + "\n";
}

void save_scene(const SceneConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << dump_scene(cfg);
}

std::string schema_help() {
  std::ostringstream os;
  os << "Scene file: JSON object. Unknown keys are rejected. '[]' marks arrays of objects.\n\n";
  for (const auto& f : fields()) {
    char line[512];
    std::snprintf(line, sizeof line, "  %-30s %-22s %-9s %s%s%s\n", f.path, f.type, f.required ? "required" : "",
                  f.help, f.required ? "" : "; default ", f.required ? "" : f.def);
    os << line;
  }
  return os.str();
}

std::array<int, 2> parse_patches(const std::string& s) {
  int a = 0, b = 0;
  char x = 0, extra = 0;
  if (std::sscanf(s.c_str(), "%d%c%d%c", &a, &x, &b, &extra) != 3 || (x != 'x' && x != 'X') || a < 1 || b < 1)
    throw std::invalid_argument("--patches expects NXxNY with positive integers, got '" + s + "'");
  return {a, b};
}

void apply_overrides(SceneConfig& c, const Overrides& o) {
  if (o.patches) {
    c.grid.nx = (*o.patches)[0];
    c.grid.ny = (*o.patches)[1];
  }
  if (o.dt) {
    if (!(*o.dt > 0.0)) throw std::invalid_argument("--dt must be positive");
    c.solver.dt = *o.dt;
  }
  if (o.hessian) {
    if (*o.hessian != "exact" && *o.hessian != "pseudo") throw std::invalid_argument("--hessian expects exact or pseudo");
    c.solver.hessian = *o.hessian;
  }
  if (o.steps) {
    if (*o.steps < 0) throw std::invalid_argument("--steps must be >= 0");
    c.run.steps = *o.steps;
  }
  if (o.out) c.output.dir = *o.out;
  if (o.seed) c.run.seed = *o.seed;
}

// ---------------------------------------------------------------------------------------

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> c = {"step",     "time", "kinetic_energy", "elastic_energy",
                                             "newton_iterations", "residual", "metric"};
  return c;
}

void write_csv_header(std::ostream& os) {
  const auto& c = csv_columns();
  for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
  os << "\n";
}

void write_csv_row(std::ostream& os, const MetricRow& r) {
  char line[512];
  std::snprintf(line, sizeof line, "%ld,%.9e,%.12e,%.12e,%d,%.6e,%.12e\n", r.step, r.time, r.kinetic_energy,
                r.elastic_energy, r.newton_iterations, r.residual, r.metric);
  os << line;
}

// ---------------------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Material to_material(const MaterialSpec& m) { return Material::make(m.Y, m.nu, m.h, m.rho); }

// Pins the listed node kinds along the column i of the lattice to time-dependent targets
// ref + disp * ramp(t).
void clamp_column(ConstraintSet& cons, const PatchGrid& grid, const VecX& q_ref, int i, const Vec3& disp,
                  double ramp_time, bool clamp_d1_fully) {
  for (int j = 0; j <= grid.ny(); ++j) {
    const int node = grid.node_id(i, j);
    const NodeDofs ref = grid.node(node, q_ref);
    cons.pin(grid, node, DofKind::Value, [x = ref.value, disp, ramp_time](double t) -> Vec3 {
      const double s = ramp_time > 0.0 ? std::min(1.0, t / ramp_time) : 1.0;
      return x + s * disp;
    });
    if (clamp_d1_fully)
      cons.pin(grid, node, DofKind::D1, [d = ref.d1](double) { return d; });
    else
      cons.pin(grid, node, DofKind::D1, [d = ref.d1](double) { return d; }, {false, false, true});
    cons.pin(grid, node, DofKind::D2, [d = ref.d2](double) { return d; });
    cons.pin(grid, node, DofKind::D12, [d = ref.d12](double) { return d; });
  }
}

}  // namespace

SceneRunner::SceneRunner(const SceneConfig& cfg) : cfg_(cfg) {
  const GridSpec& g = cfg.grid;
  grid_ = PatchGrid(g.nx, g.ny);
  q_ref_ = flat_sheet(grid_, g.size[0], g.size[1], vec(g.origin));
  Vec3 out_of_plane = Vec3::UnitZ();
  if (cfg.scenario == Scenario::LateralBuckling) {
    // plate hanging in the x-z plane, width along -z
    const Mat3 rot = Eigen::AngleAxisd(M_PI / 2, Vec3::UnitX()).toRotationMatrix();
    const Vec3 o = vec(g.origin);
    q_ref_ = transform(grid_, transform(grid_, q_ref_, Mat3::Identity(), -o), rot, o);
    out_of_plane = rot * Vec3::UnitZ();
  }
  model_ = std::make_unique<ElasticModel>(grid_, q_ref_, to_material(cfg.material));

  SolverConfig sc;
  sc.dt = cfg.solver.dt;
  sc.hessian_mode = cfg.solver.hessian == "pseudo" ? HessianMode::Pseudo : HessianMode::Exact;
  sc.merit = cfg.solver.merit == "residual" ? MeritKind::Residual : MeritKind::Potential;
  sc.newton_tol = cfg.solver.newton_tol;
  sc.max_newton_iters = cfg.solver.max_newton_iters;
  sc.rayleigh_alpha = cfg.solver.rayleigh_alpha;
  sim_ = std::make_unique<Simulator>(*model_, sc);

  const double ramp_time = cfg.run.ramp_steps * cfg.solver.dt;
  switch (cfg.scenario) {
    case Scenario::Wrinkle: {
      const Vec3 half(0.5 * cfg.wrinkle.stretch * g.size[0], 0.0, 0.0);
      clamp_column(cons_, grid_, q_ref_, 0, -half, ramp_time, false);
      clamp_column(cons_, grid_, q_ref_, g.nx, half, ramp_time, false);
      break;
    }
    case Scenario::Cantilever: {
      clamp_column(cons_, grid_, q_ref_, 0, Vec3::Zero(), 0.0, true);
      // cylindrical bending: transverse derivatives held at their reference values
      for (int i = 1; i <= g.nx; ++i)
        for (int j = 0; j <= g.ny; ++j) {
          const int node = grid_.node_id(i, j);
          const NodeDofs ref = grid_.node(node, q_ref_);
          cons_.pin(grid_, node, DofKind::D2, [d = ref.d2](double) { return d; });
          cons_.pin(grid_, node, DofKind::D12, [d = ref.d12](double) { return d; });
        }
      break;
    }
    case Scenario::LateralBuckling:
      clamp_column(cons_, grid_, q_ref_, 0, Vec3::Zero(), 0.0, true);
      break;
    case Scenario::Drape:
      if (cfg.drape.clamp_corners)
        for (int i : {0, g.nx})
          for (int j : {0, g.ny}) {
            const int node = grid_.node_id(i, j);
            cons_.pin(grid_, node, DofKind::Value, [x = grid_.node(node, q_ref_).value](double) { return x; });
          }
      break;
    case Scenario::Twist:
      add_twist(cons_, grid_, q_ref_, grid_.node_id(g.nx / 2, g.ny / 2), cfg.twist.omega);
      break;
    default:
      break;
  }

  const CollisionSpec& cs = cfg.collision;
  for (const auto& s : cs.spheres) colliders_.spheres.push_back({vec(s.center), s.radius, vec(s.velocity)});
  for (const auto& p : cs.planes) colliders_.planes.push_back({vec(p.point), vec(p.normal).normalized(), vec(p.velocity)});
  if (cs.needles.nx > 0 && cs.needles.ny > 0) {
    MeshCollider m;
    for (int j = 0; j < cs.needles.ny; ++j)
      for (int i = 0; i < cs.needles.nx; ++i)
        m.vertices.push_back(vec(cs.needles.center) +
                             cs.needles.spacing * Vec3(i - 0.5 * (cs.needles.nx - 1), j - 0.5 * (cs.needles.ny - 1), 0.0));
    m.velocity = vec(cs.needles.velocity);
    colliders_.meshes.push_back(std::move(m));
  }
  colliders_.self_collision = cs.self_collision;
  colliders_.samples_per_patch = cs.samples_per_patch;
  ccfg_.friction = cs.friction;
  ccfg_.push_out = cs.push_out;
  ccfg_.eps_t = cs.eps_t;

  state_.q = q_ref_;
  state_.q_dot = VecX::Zero(q_ref_.size());
  state_.t = 0.0;
  if (cfg.run.perturbation > 0.0) {
    std::mt19937_64 rng(cfg.run.seed);
    std::normal_distribution<double> n01;
    const double amp = cfg.run.perturbation * std::max(g.size[0], g.size[1]);
    for (int node = 0; node < grid_.num_nodes(); ++node) {
      NodeDofs d = grid_.node(node, state_.q);
      d.value += amp * n01(rng) * out_of_plane;
      grid_.set_node(node, d, state_.q);
    }
  }
}

std::string SceneRunner::metric_name() const {
  switch (cfg_.scenario) {
    case Scenario::Free: return "max_displacement";
    case Scenario::Drape: return colliders_.empty() ? "max_displacement" : "min_distance";
    case Scenario::Wrinkle: return "wrinkle_amplitude";
    case Scenario::Cantilever: return "tip_deflection";
    case Scenario::LateralBuckling: return "lateral_displacement";
    case Scenario::Twist: return "max_displacement";
    case Scenario::Needles: return "contacts";
  }
  return "metric";
}

double SceneRunner::metric() const {
  const VecX& q = state_.q;
  switch (cfg_.scenario) {
    case Scenario::Drape:
      if (colliders_.empty()) return max_displacement(grid_, q, q_ref_);
      return min_sample_distance(grid_, q, colliders_);
    case Scenario::Wrinkle:
      return wrinkle_amplitude(grid_, q, q_ref_);
    case Scenario::Cantilever:
      return tip_deflection(grid_, q, q_ref_);
    case Scenario::LateralBuckling:
      return lateral_displacement(grid_, q, q_ref_);
    case Scenario::Needles:
      return last_contacts_;
    default:
      return max_displacement(grid_, q, q_ref_);
  }
}

Loads SceneRunner::loads_at(long step) const {
  Loads l;
  double s = 1.0;
  if (cfg_.solver.quasi_static) s = std::min(1.0, static_cast<double>(step) / cfg_.run.ramp_steps);
  l.gravity = s * vec(cfg_.loads.gravity);
  l.pressure = s * cfg_.loads.pressure;
  return l;
}

MetricRow SceneRunner::initial_row() const {
  MetricRow r;
  r.step = step_;
  r.time = state_.t;
  r.kinetic_energy = sim_->kinetic_energy(state_);
  r.elastic_energy = model_->energy(state_.q);
  r.metric = metric();
  return r;
}

MetricRow SceneRunner::advance() {
  const auto w0 = Clock::now();
  ++step_;
  MetricRow r;
  last_contacts_ = 0;
  try {
    const Loads loads = loads_at(step_);
    if (cfg_.solver.quasi_static) {
      state_.t = step_ * cfg_.solver.dt;
      const StepStats st = sim_->stable_static_solve(state_.q, cons_, loads, state_.t, cfg_.material.h, 20,
                                                       cfg_.run.seed + static_cast<unsigned long>(step_));
      state_.q_dot.setZero();
      r.newton_iterations = st.newton_iterations;
      r.residual = st.residual;
      r.t_integrate = since(w0);
    } else if (!colliders_.empty()) {
      const CollisionStepStats st = step_with_collisions(*sim_, state_, cons_, loads, colliders_, ccfg_, &contact_cache_);
      r.newton_iterations = st.newton_iterations;
      r.residual = st.residual;
      r.t_integrate = st.t_integrate;
      r.t_ccd = st.t_ccd;
      last_contacts_ = st.events;
    } else {
      const StepStats st = sim_->step(state_, cons_, loads);
      r.newton_iterations = st.newton_iterations;
      r.residual = st.residual;
      r.t_integrate = since(w0);
    }
  } catch (const SolveError& e) {
    throw StepFailure(std::string(e.what()) + " (step " + std::to_string(step_) + ")", e.residual(),
                      e.iterations(), step_);
  }
  r.step = step_;
  r.time = state_.t;
  r.kinetic_energy = sim_->kinetic_energy(state_);
  r.elastic_energy = model_->energy(state_.q);
  r.metric = metric();
  r.contacts = last_contacts_;
  r.wall_time = since(w0);
  return r;
}

std::vector<MetricRow> run_scenario(const SceneConfig& cfg, std::ostream* log) {
  const fs::path dir(cfg.output.dir);
  fs::create_directories(dir);
  save_scene(cfg, (dir / "scene.json").string());
  std::ofstream csv(dir / "metrics.csv"), timing(dir / "timings.csv");
  if (!csv || !timing) throw std::runtime_error("cannot write into " + dir.string());
  write_csv_header(csv);
  timing << "step,wall_time,t_integrate,t_ccd,contacts\n";

  SceneRunner runner(cfg);
  std::vector<MetricRow> rows{runner.initial_row()};
  write_csv_row(csv, rows.back());
  if (log) *log << "scenario " << to_string(cfg.scenario) << ": " << runner.grid().num_dofs() << " dofs, "
                << cfg.run.steps << " steps, metric " << runner.metric_name() << "\n";
  for (int k = 0; k < cfg.run.steps; ++k) {
    rows.push_back(runner.advance());
    const MetricRow& r = rows.back();
    write_csv_row(csv, r);
    csv.flush();
    char line[256];
    std::snprintf(line, sizeof line, "%ld,%.6f,%.6f,%.6f,%d\n", r.step, r.wall_time, r.t_integrate, r.t_ccd,
                  r.contacts);
    timing << line;
    if (cfg.output.mesh_every > 0 && r.step % cfg.output.mesh_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "mesh_%05ld.obj", r.step);
      export_mesh(runner.grid(), runner.state().q, cfg.output.subdiv, (dir / name).string());
    }
    if (log) {
      std::snprintf(line, sizeof line, "step %ld t=%.4f newton=%d residual=%.2e %s=%.6e (%.2fs)\n", r.step, r.time,
                    r.newton_iterations, r.residual, runner.metric_name().c_str(), r.metric, r.wall_time);
      *log << line << std::flush;
    }
  }
  export_mesh(runner.grid(), runner.state().q, cfg.output.subdiv, (dir / "final.obj").string());
  return rows;
}

// ---------------------------------------------------------------------------------------

double wrinkle_amplitude(const PatchGrid& grid, const VecX& q, const VecX& q_ref, int samples) {
  const double xi1 = 0.5 * grid.nx();
  double a = 0.0;
  for (int k = 0; k < samples; ++k) {
    const double xi2 = grid.ny() * static_cast<double>(k) / (samples - 1);
    a = std::max(a, std::abs(eval_point(grid, q, xi1, xi2).z() - eval_point(grid, q_ref, xi1, xi2).z()));
  }
  return a;
}

double tip_deflection(const PatchGrid& grid, const VecX& q, const VecX& q_ref) {
  const int n = 16;
  double s = 0.0;
  for (int k = 0; k < n; ++k) {
    const double xi2 = grid.ny() * (k + 0.5) / n;
    s += eval_point(grid, q_ref, grid.nx(), xi2).z() - eval_point(grid, q, grid.nx(), xi2).z();
  }
  return s / n;
}

double aspect_ratio_hw(const PatchGrid& grid, const VecX& q) {
  const int n = 256;
  double zmin = 1e300, zmax = -1e300, xmin = 1e300, xmax = -1e300;
  for (int k = 0; k <= n; ++k) {
    const Vec3 x = eval_point(grid, q, grid.nx() * static_cast<double>(k) / n, 0.5 * grid.ny());
    zmin = std::min(zmin, x.z());
    zmax = std::max(zmax, x.z());
    xmin = std::min(xmin, x.x());
    xmax = std::max(xmax, x.x());
  }
  return (zmax - zmin) / (xmax - xmin);
}

namespace {
template <class F>
double lattice_max(const PatchGrid& grid, F&& f) {
  const int s = 4;
  double m = 0.0;
  for (int a = 0; a <= s * grid.nx(); ++a)
    for (int b = 0; b <= s * grid.ny(); ++b) m = std::max(m, f(static_cast<double>(a) / s, static_cast<double>(b) / s));
  return m;
}
}  // namespace

double lateral_displacement(const PatchGrid& grid, const VecX& q, const VecX& q_ref) {
  return lattice_max(grid, [&](double u, double v) {
    return std::abs(eval_point(grid, q, u, v).y() - eval_point(grid, q_ref, u, v).y());
  });
}

double max_displacement(const PatchGrid& grid, const VecX& q, const VecX& q_ref) {
  return lattice_max(grid, [&](double u, double v) {
    return (eval_point(grid, q, u, v) - eval_point(grid, q_ref, u, v)).norm();
  });
}

// ---------------------------------------------------------------------------------------

QuadMesh tessellate(const PatchGrid& grid, const VecX& q, int subdiv) {
  if (subdiv < 1) throw DomainError("tessellate: subdiv must be >= 1");
  const int na = subdiv * grid.nx(), nb = subdiv * grid.ny();
  const int ca = grid.periodic_u() ? na : na + 1, cb = grid.periodic_v() ? nb : nb + 1;
  QuadMesh m;
  m.vertices.reserve(static_cast<std::size_t>(ca) * cb);
  for (int b = 0; b < cb; ++b)
    for (int a = 0; a < ca; ++a)
      m.vertices.push_back(eval_point(grid, q, static_cast<double>(a) / subdiv, static_cast<double>(b) / subdiv));
  auto id = [&](int a, int b) { return (a % ca) + ca * (b % cb); };
  for (int b = 0; b < nb; ++b)
    for (int a = 0; a < na; ++a) m.quads.push_back({id(a, b), id(a + 1, b), id(a + 1, b + 1), id(a, b + 1)});
  return m;
}

void write_obj(const QuadMesh& mesh, std::ostream& os) {
  char line[160];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(line, sizeof line, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    os << line;
  }
  for (const auto& f : mesh.quads) os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << ' ' << f[3] + 1 << '\n';
}

void export_mesh(const PatchGrid& grid, const VecX& q, int subdiv, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# bhem tessellation " << grid.nx() << "x" << grid.ny() << " patches, level " << subdiv << "\n";
  write_obj(tessellate(grid, q, subdiv), out);
  if (!out) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------------------

Camera Camera::make(const CameraSpec& s) {
  Camera c;
  c.eye = vec(s.eye);
  c.forward = (vec(s.target) - c.eye).normalized();
  c.right = c.forward.cross(vec(s.up));
  if (!(c.right.norm() > 1e-12) || !c.forward.allFinite()) throw DomainError("camera: degenerate view or up vector");
  c.right.normalize();
  c.up = c.right.cross(c.forward);
  c.tan_half = std::tan(0.5 * s.fov_deg * M_PI / 180.0);
  c.width = s.width;
  c.height = s.height;
  c.aspect = static_cast<double>(s.width) / s.height;
  return c;
}

Ray Camera::ray(int px, int py) const {
  const double sx = (2.0 * (px + 0.5) / width - 1.0) * tan_half * aspect;
  const double sy = (1.0 - 2.0 * (py + 0.5) / height) * tan_half;
  return Ray::make(eye, forward + sx * right + sy * up);
}

RayImage raycast(const PatchGrid& grid, const VecX& q, const Camera& cam, const IntersectOptions& opt,
                 int threads) {
  RayImage img;
  img.width = cam.width;
  img.height = cam.height;
  const std::size_t n = static_cast<std::size_t>(cam.width) * cam.height;
  img.tau.assign(n, std::numeric_limits<double>::infinity());
  img.normal.assign(n, Vec3::Zero());
  const std::vector<BezierPatch> patches = grid.num_patches() > 0 ? to_bezier(grid, q) : std::vector<BezierPatch>{};
  if (patches.empty()) return img;

  std::atomic<int> next_row{0};
  auto work = [&] {
    for (int py; (py = next_row++) < cam.height;)
      for (int px = 0; px < cam.width; ++px) {
        const auto hit = static_intersect(cam.ray(px, py), patches, opt);
        if (!hit) continue;
        const std::size_t i = static_cast<std::size_t>(py) * cam.width + px;
        img.tau[i] = hit->tau;
        img.normal[i] = eval_frame(grid, q, hit->xi1, hit->xi2).a3;
      }
  };
  int nt = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  nt = std::min(nt, cam.height);
  std::vector<std::thread> pool;
  for (int k = 1; k < nt; ++k) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return img;
}

void write_depth_pgm(const RayImage& img, const std::string& path) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < img.tau.size(); ++i)
    if (img.hit(i)) {
      lo = std::min(lo, img.tau[i]);
      hi = std::max(hi, img.tau[i]);
    }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  char head[256];
  std::snprintf(head, sizeof head, "P5\n# bhem depth tau_min=%.17g tau_max=%.17g miss=0\n%d %d\n65535\n", lo, hi,
                img.width, img.height);
  out << head;
  for (std::size_t i = 0; i < img.tau.size(); ++i) {
    unsigned v = 0;
    if (img.hit(i)) v = 1 + static_cast<unsigned>(std::lround(hi > lo ? (img.tau[i] - lo) / (hi - lo) * 65534.0 : 0.0));
    const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
    out.write(bytes, 2);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_normal_ppm(const RayImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n# bhem normal rgb=round(255*(n+1)/2) miss=0,0,0\n" << img.width << ' ' << img.height << "\n255\n";
  for (std::size_t i = 0; i < img.normal.size(); ++i) {
    char rgb[3] = {0, 0, 0};
    if (img.hit(i))
      for (int k = 0; k < 3; ++k) rgb[k] = static_cast<char>(std::lround(127.5 * (img.normal[i][k] + 1.0)));
    out.write(rgb, 3);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace bhem
