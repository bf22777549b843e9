// bhem: run, validate, ray-cast, export and benchmark shell scenes.

#include "bhem/scene.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace bhem;

namespace {

struct Common {
  std::string scene;
  std::string patches;
  std::optional<double> dt;
  std::optional<std::string> hessian;
  std::optional<int> steps;
  std::optional<std::string> out;
  std::optional<unsigned long> seed;

  void attach(CLI::App* app) {
    app->add_option("scene", scene, "scene file (JSON)")->required();
    app->add_option("--patches", patches, "grid override NXxNY");
    app->add_option("--dt", dt, "time step override [s]");
    app->add_option("--hessian", hessian, "exact | pseudo")->check(CLI::IsMember({"exact", "pseudo"}));
    app->add_option("--steps", steps, "number of steps");
    app->add_option("--out", out, "output directory");
    app->add_option("--seed", seed, "perturbation seed");
  }

  SceneConfig load() const {
    SceneConfig cfg = load_scene(scene);
    Overrides o;
    if (!patches.empty()) o.patches = parse_patches(patches);
    o.dt = dt;
    o.hessian = hessian;
    o.steps = steps;
    o.out = out;
    o.seed = seed;
    apply_overrides(cfg, o);
    return cfg;
  }
};

void advance_quietly(SceneRunner& r, int steps) {
  for (int k = 0; k < steps; ++k) r.advance();
}

int cmd_run(const Common& c) {
  const SceneConfig cfg = c.load();
  const auto rows = run_scenario(cfg, &std::cout);
  std::cout << "wrote " << (fs::path(cfg.output.dir) / "metrics.csv").string() << " (" << rows.size() << " rows)\n";
  return 0;
}

int cmd_validate(const Common& c) {
  const SceneConfig cfg = c.load();
  std::printf("scene valid: %s, %dx%d patches, %d dofs\n", to_string(cfg.scenario).c_str(), cfg.grid.nx, cfg.grid.ny,
              3 * 4 * (cfg.grid.nx + 1) * (cfg.grid.ny + 1));
  if (cfg.scenario == Scenario::Cantilever) {
    SceneRunner r(cfg);
    advance_quietly(r, cfg.run.steps);
    const double g = cfg.gamma_star();
    const double hw = aspect_ratio_hw(r.grid(), r.state().q);
    const double oracle = g / 8.0;  // small-deflection plate theory: w / L = Gamma* / 8
    const double err = std::abs(hw - oracle) / oracle;
    const bool linear = g <= 0.1;
    std::printf("Gamma* = %.6g\nsimulated H/W = %.6g\noracle H/W (linear plate theory) = %.6g\n", g, hw, oracle);
    if (!linear) {
      std::printf("relative difference %.3g; oracle outside its small-deflection range, no verdict\n", err);
      return 0;
    }
    std::printf("relative error %.3g: %s\n", err, err <= 0.05 ? "PASS" : "FAIL");
    return err <= 0.05 ? 0 : 1;
  }
  if (cfg.scenario == Scenario::Wrinkle) {
    SceneRunner r(cfg);
    advance_quietly(r, cfg.run.steps);
    const double a = wrinkle_amplitude(r.grid(), r.state().q, r.reference());
    const bool ok = std::abs(a - 0.34e-3) <= 0.03e-3;
    std::printf("peak wrinkle amplitude = %.4f mm\nreference 0.34 mm +- 0.03 mm: %s\n", a * 1e3, ok ? "PASS" : "FAIL");
    return ok ? 0 : 1;
  }
  return 0;
}

int cmd_raycast(const Common& c) {
  const SceneConfig cfg = c.load();
  SceneRunner r(cfg);
  advance_quietly(r, c.steps.value_or(0));
  const Camera cam = Camera::make(cfg.camera);
  const auto t0 = std::chrono::steady_clock::now();
  const RayImage img = raycast(r.grid(), r.state().q, cam);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  fs::create_directories(cfg.output.dir);
  const std::string depth = (fs::path(cfg.output.dir) / "depth.pgm").string();
  const std::string normal = (fs::path(cfg.output.dir) / "normal.ppm").string();
  write_depth_pgm(img, depth);
  write_normal_ppm(img, normal);
  long hits = 0;
  for (std::size_t i = 0; i < img.tau.size(); ++i) hits += img.hit(i);
  std::printf("%dx%d rays, %ld hits, %.2f s\nwrote %s %s\n", img.width, img.height, hits, secs, depth.c_str(),
              normal.c_str());
  return 0;
}

int cmd_export(const Common& c, int subdiv) {
  const SceneConfig cfg = c.load();
  SceneRunner r(cfg);
  advance_quietly(r, c.steps.value_or(0));
  fs::create_directories(cfg.output.dir);
  const std::string path = (fs::path(cfg.output.dir) / "mesh.obj").string();
  const int s = subdiv > 0 ? subdiv : cfg.output.subdiv;
  export_mesh(r.grid(), r.state().q, s, path);
  std::printf("wrote %s (%d vertices)\n", path.c_str(), (s * cfg.grid.nx + 1) * (s * cfg.grid.ny + 1));
  return 0;
}

std::string sci(double v) {
  if (v == 0.0) return "0";
  const int e = static_cast<int>(std::floor(std::log10(std::abs(v))));
  char b[32];
  std::snprintf(b, sizeof b, "%.2fx10^%d", v / std::pow(10.0, e), e);
  return b;
}

int cmd_bench(const Common& c) {
  const SceneConfig cfg = c.load();
  SceneRunner r(cfg);
  const int steps = c.steps.value_or(3);
  const long dofs = r.grid().num_dofs();
  const long nnz = r.model().pattern().empty_matrix().nonZeros();
  long sps = 0;
  for (const auto& m : r.colliders().meshes) sps += static_cast<long>(m.vertices.size());
  const bool ccd = !r.colliders().empty();

  double t_int = 0.0, t_obj = 0.0;
  std::printf("step  t_int[s]   t_obj[s]   newton\n");
  for (int k = 0; k < steps; ++k) {
    const MetricRow row = r.advance();
    t_int += row.t_integrate;
    t_obj += row.t_ccd;
    std::printf("%4ld  %9.4f  %9.4f  %6d\n", row.step, row.t_integrate, row.t_ccd, row.newton_iterations);
  }
  if (steps > 0) {
    t_int /= steps;
    t_obj /= steps;
  }
  const auto& m = cfg.material;
  std::printf("\n%-12s| %-10s| %-10s| %-6s| %-9s| %-6s| %-5s| %-6s| %-5s| %-6s| %-8s| %-8s| %s\n", "Example", "#DoFs",
              "#NNZs", "#SPs", "Y", "nu", "h", "rho", "alpha", "dt", "t_int", "t_obj", "SC");
  char row[512];
  std::snprintf(row, sizeof row, "%-12s| %-10s| %-10s| %-6s| %-9s| %-6g| %-5g| %-6g| %-5g| %-6g| %-8.3f| %-8s| %s\n",
                cfg.name.empty() ? to_string(cfg.scenario).c_str() : cfg.name.c_str(), sci(dofs).c_str(),
                sci(nnz).c_str(), sps ? std::to_string(sps).c_str() : "--", sci(m.Y).c_str(), m.nu, m.h * 1e3,
                m.rho * 1e-3, cfg.solver.rayleigh_alpha, cfg.solver.dt * 1e3, t_int,
                ccd ? std::to_string(t_obj).c_str() : "--",
                ccd ? (cfg.collision.self_collision ? "yes" : "no") : "--");
  std::printf("%s", row);
  std::printf("units: h [mm], rho [10^3 kg/m^3], dt [ms], t_int/t_obj [s] mean per step over %d steps\n", steps);
  std::printf("dofs %ld nnz %ld\n", dofs, nnz);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bicubic Hermite shell simulator"};
  app.require_subcommand(0, 1);
  app.set_help_all_flag("--help-all", "all subcommands");
  bool show_schema = false;
  app.add_flag("--schema", show_schema, "print the scene file schema");

  Common run_o, val_o, ray_o, exp_o, bench_o;
  int subdiv = 0;
  auto* run = app.add_subcommand("run", "simulate and write metrics.csv, timings.csv and OBJ meshes");
  run_o.attach(run);
  auto* val = app.add_subcommand("validate", "check the scene; cantilever and wrinkle scenes are compared to references");
  val_o.attach(val);
  auto* ray = app.add_subcommand("raycast", "render depth.pgm and normal.ppm by ray casting");
  ray_o.attach(ray);
  auto* exp = app.add_subcommand("export", "tessellate to mesh.obj");
  exp_o.attach(exp);
  exp->add_option("--subdiv", subdiv, "samples per patch side");
  auto* bench = app.add_subcommand("bench", "time integration and CCD per step, with a summary row");
  bench_o.attach(bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) std::cerr << "\n" << schema_help();
    return code;
  }

  try {
    if (app.get_subcommands().empty()) {
      if (show_schema) {
        std::cout << schema_help();
        return 0;
      }
      std::cerr << app.help() << "\n" << schema_help();
      return 1;
    }
    if (*run) return cmd_run(run_o);
    if (*val) return cmd_validate(val_o);
    if (*ray) return cmd_raycast(ray_o);
    if (*exp) return cmd_export(exp_o, subdiv);
    if (*bench) return cmd_bench(bench_o);
  } catch (const SchemaError& e) {
    std::cerr << e.what() << "\n\n" << schema_help();
    return 2;
  } catch (const StepFailure& e) {
    std::cerr << "step failure at step " << e.step() << ": " << e.what() << " (residual " << e.residual() << ")\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
