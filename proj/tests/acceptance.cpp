// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
//   acceptance [--long] [--only N ...]

#include "bhem/scene.hpp"
#include "support/elastic_oracles.hpp"
#include "support/oracles.hpp"

#include <CLI11.hpp>
#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <sstream>

using namespace bhem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // records one sub-check
  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.str().empty()) detail << "; ";
    detail << what << (ok ? "" : " [FAILED]");
  }
};

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

std::string scene_path(const std::string& name) { return std::string(BHEM_SCENE_DIR) + "/" + name; }

VecX jitter(const VecX& q, unsigned seed, double amp) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-amp, amp);
  VecX out = q;
  for (int i = 0; i < out.size(); ++i) out[i] += u(rng);
  return out;
}

// 1
void geometry(Outcome& o) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const PatchGrid g(2, 2);
  const VecX q = jitter(flat_sheet(g, 2.0, 2.0), 3, 0.3);

  double c1 = 0.0;
  for (int k = 0; k <= 1000; ++k) {
    const double t = k / 1000.0;
    for (int side = 0; side < 2; ++side) {
      const double s = side + t;
      // xi1 = 1 between patches (0, j) and (1, j); xi2 = 1 between (i, 0) and (i, 1)
      const auto l = eval_frame(g, q, g.patch_id(0, side), 1.0, s);
      const auto r = eval_frame(g, q, g.patch_id(1, side), 1.0, s);
      const auto b = eval_frame(g, q, g.patch_id(side, 0), s, 1.0);
      const auto tp = eval_frame(g, q, g.patch_id(side, 1), s, 1.0);
      c1 = std::max({c1, (l.x - r.x).norm(), (l.a1 - r.a1).norm(), (l.a2 - r.a2).norm(), (b.x - tp.x).norm(),
                     (b.a1 - tp.a1).norm(), (b.a2 - tp.a2).norm()});
    }
  }
  o.check(c1 <= 1e-12, "C1 jump " + fmt("%.2e", c1));

  double equiv = 0.0;
  for (int p = 0; p < g.num_patches(); ++p) {
    const HermitePatch hp = g.patch(p, q);
    const BezierPatch bz = to_bezier(hp);
    for (int k = 0; k < 1000; ++k) {
      const Vec2 xi = hp.rect.from_local(u(rng), u(rng));
      Vec3 x, x1, x2;
      bz.eval_d(xi.x(), xi.y(), x, x1, x2);
      const SurfaceFrame f = eval_frame(hp, xi.x(), xi.y());
      equiv = std::max({equiv, (x - f.x).norm(), (x1 - f.a1).norm(), (x2 - f.a2).norm()});
    }
  }
  o.check(equiv <= 1e-12, "Hermite vs Bezier " + fmt("%.2e", equiv));

  int outside = 0;
  for (int p = 0; p < g.num_patches(); ++p) {
    const BezierPatch bz = to_bezier(g.patch(p, q));
    const Aabb box = bz.hull();
    for (int k = 0; k < 2500; ++k)
      if (!box.contains(bz.eval_local(u(rng), u(rng)))) ++outside;
  }
  o.check(outside == 0, "hull misses " + std::to_string(outside) + "/10000");

  double split = 0.0;
  for (int p = 0; p < g.num_patches(); ++p) {
    const BezierPatch bz = to_bezier(g.patch(p, q));
    for (int trial = 0; trial < 5; ++trial) {
      const double su = 0.1 + 0.8 * u(rng), sv = 0.1 + 0.8 * u(rng);
      for (const auto& kid : decasteljau_split(bz, su, sv))
        for (int k = 0; k < 100; ++k) {
          const Vec2 xi = kid.rect.from_local(u(rng), u(rng));
          split = std::max(split, (kid.eval(xi.x(), xi.y()) - bz.eval(xi.x(), xi.y())).norm());
        }
    }
  }
  o.check(split <= 1e-12, "de Casteljau child vs parent " + fmt("%.2e", split));
}

// 2
void quadrature(Outcome& o) {
  const ParamRect r = ParamRect::make(-0.3, 1.7, 2.0, 2.5);
  const QuadratureRule rule = gauss_legendre_16(r);
  auto exact = [](double a, double b, int n) { return (std::pow(b, n + 1) - std::pow(a, n + 1)) / (n + 1); };
  double worst = 0.0;
  for (int a = 0; a <= 7; ++a)
    for (int b = 0; b <= 7; ++b) {
      double s = 0.0;
      for (int k = 0; k < 16; ++k)
        s += rule.weights[k] * std::pow(rule.points[k].x(), a) * std::pow(rule.points[k].y(), b);
      const double ref = exact(r.xi1_min, r.xi1_max, a) * exact(r.xi2_min, r.xi2_max, b);
      worst = std::max(worst, std::abs(s - ref) / std::max(1.0, std::abs(ref)));
    }
  o.check(worst <= 1e-14, "degree <= 7 error " + fmt("%.2e", worst));
  double deg8 = 0.0;
  for (int k = 0; k < 16; ++k) deg8 += rule.weights[k] * std::pow(rule.points[k].x(), 8);
  const double miss = std::abs(deg8 - exact(r.xi1_min, r.xi1_max, 8) * r.d_xi2());
  o.check(miss > 1e-8, "x^8 error " + fmt("%.2e", miss));
}

// 3
void derivatives(Outcome& o) {
  using oracle::rel;
  const PatchGrid g(2, 2);
  const VecX q_ref = flat_sheet(g, 2.0, 2.0);
  const ElasticModel model(g, q_ref, Material{1e3, 0.3, 0.08, 1.0});
  const VecX q = jitter(q_ref, 7, 0.1);

  const double eg = rel(model.gradient(q), oracle::fd_gradient(model, q, 1e-6));
  o.check(eg <= 1e-4, "gradient " + fmt("%.1e", eg));
  const Eigen::MatrixXd H = Eigen::MatrixXd(model.hessian(q, HessianMode::Exact));
  const double eh = rel(oracle::fd_hessian(model, q, 1e-6), H);
  o.check(eh <= 1e-4, "Hessian " + fmt("%.1e", eh));
  const double e1 = rel(oracle::fd_hessian(model, q, 4e-3), H);
  const double e2 = rel(oracle::fd_hessian(model, q, 2e-3), H);
  const double e3 = rel(oracle::fd_hessian(model, q, 1e-3), H);
  o.check(e1 / e2 > 3.5 && e2 / e3 > 3.5, "FD error ratios " + fmt("%.2f", e1 / e2) + ", " + fmt("%.2f", e2 / e3));

  double worst = 0.0, scale = 0.0;
  for (int p = 0; p < g.num_patches(); ++p) {
    const ElementMatrix diff =
        model.element_hessian(p, q, HessianMode::Exact) - model.element_hessian(p, q, HessianMode::Pseudo);
    const ElementMatrix ref = oracle::dropped_term(model, p, q);
    worst = std::max(worst, (diff - ref).cwiseAbs().maxCoeff());
    scale = std::max(scale, ref.cwiseAbs().maxCoeff());
  }
  o.check(scale > 0.0 && worst <= 1e-10 * scale, "exact - pseudo vs dropped term " + fmt("%.1e", worst / scale));
}

// 4
void invariants(Outcome& o) {
  const PatchGrid g(2, 2);
  const VecX q_ref = flat_sheet(g, 2.0, 2.0);
  const ElasticModel model(g, q_ref, Material{1e3, 0.3, 0.08, 1.0});
  const VecX q = jitter(q_ref, 4, 0.05);
  const double e = model.energy(q);
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Mat3 R = Eigen::AngleAxisd(3.0 * u(rng), Vec3(u(rng), u(rng), u(rng)).normalized()).toRotationMatrix();
    const Vec3 t(u(rng), u(rng), u(rng));
    worst = std::max(worst, std::abs(model.energy(transform(g, q, R, t)) - e) / e);
  }
  o.check(worst <= 1e-10, "rigid-motion energy " + fmt("%.1e", worst));

  const Eigen::MatrixXd H0 = Eigen::MatrixXd(model.hessian(q_ref, HessianMode::Exact));
  double modes = 0.0;
  for (int c = 0; c < 3; ++c)
    for (const VecX& m : {translation_mode(g, Vec3::Unit(c)), rotation_mode(g, q_ref, Vec3::Unit(c))})
      modes = std::max(modes, (H0 * m).norm() / (H0.norm() * m.norm()));
  o.check(modes <= 1e-9, "rest Hessian on 6 rigid modes " + fmt("%.1e", modes));

  SolverConfig cfg;
  cfg.dt = 1e-2;
  cfg.newton_tol = 1e-11;
  Simulator sim(model, cfg);
  SystemState st{jitter(q_ref, 11, 0.05), VecX::Zero(q_ref.size()), 0.0};
  ConstraintSet cons;
  double prev = model.energy(st.q);
  const double e0 = prev;
  int rises = 0;
  for (int k = 0; k < 200; ++k) {
    sim.step(st, cons, Loads{});
    const double en = sim.kinetic_energy(st) + model.energy(st.q);
    if (en > prev * (1.0 + 1e-9)) ++rises;
    prev = en;
  }
  o.check(rises == 0, "free vibration: " + std::to_string(rises) + " energy rises in 200 steps, E/E0 " +
                          fmt("%.3f", prev / e0));
}

// 5
void intersection(Outcome& o) {
  const int scenes = 50;
  int missed = 0, spurious = 0, disagree = 0, fewer = 0;
  double tau_err = 0.0;
  for (int s = 0; s < scenes; ++s) {
    std::vector<oracle::Scene> layers{oracle::bumpy_sheet(1000 + s)};
    if (s % 2) {
      oracle::Scene low = oracle::bumpy_sheet(2000 + s);
      low.q = transform(low.grid, low.q, Mat3::Identity(), Vec3(0.05, -0.05, -0.35));
      low.bez = to_bezier(low.grid, low.q);
      layers.push_back(low);
    }
    std::vector<BezierPatch> all;
    std::vector<oracle::Tessellation> tess;
    for (const auto& l : layers) {
      all.insert(all.end(), l.bez.begin(), l.bez.end());
      tess.emplace_back(l.grid, l.q, 256);
    }
    std::mt19937 rng(s);
    std::uniform_real_distribution<double> u(0.1, 0.9), w(-0.3, 1.3);
    long en = 0, ep = 0;
    for (int r = 0; r < 4; ++r) {
      const Vec3 orig(u(rng), u(rng), 1.0);
      const Vec3 d = Vec3(w(rng), w(rng), -0.6) - orig;
      const Ray ray = Ray::make(orig, d);
      IntersectOptions pure;
      pure.max_newton_iters = 0;
      IntersectStats sn, sp;
      const auto hn = static_intersect(ray, all, {}, &sn);
      const auto hp = static_intersect(ray, all, pure, &sp);
      en += sn.expansions;
      ep += sp.expansions;
      std::optional<double> ref;
      for (const auto& t : tess) {
        const auto h = t.hits(orig, d);
        if (!h.empty() && (!ref || h[0].tau < *ref)) ref = h[0].tau;
      }
      if (hn.has_value() != hp.has_value() || (hn && std::abs(hn->tau - hp->tau) > 1e-8)) ++disagree;
      if (ref) {
        if (!hn) {
          ++missed;
          continue;
        }
        tau_err = std::max(tau_err, std::abs(hn->tau - *ref));
      } else if (hn) {
        // a hit the lattice does not see must still lie on the surface
        const auto& l = layers[hn->patch / layers[0].grid.num_patches()];
        const Vec3 x = eval_point(l.grid, l.q, hn->patch % layers[0].grid.num_patches(), hn->xi1, hn->xi2);
        if ((x - ray.at(hn->tau)).norm() > 1e-8) ++spurious;
      }
    }
    if (en < ep) ++fewer;
  }
  o.check(missed == 0 && spurious == 0, "static: " + std::to_string(missed) + " missed, " +
                                            std::to_string(spurious) + " off-surface hits");
  o.check(tau_err <= 1e-4, "static tau error " + fmt("%.1e", tau_err));

  // moving height fields against moving points; the gap along z is exact
  int ccd_missed = 0, ccd_bad = 0, crossings = 0, ccd_fewer = 0;
  double t_err = 0.0;
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < scenes; ++k) {
    MovingBezierPatch m{{}, {}, 0.01};
    m.p.rect = ParamRect{0.0, 1.0, 0.0, 1.0};
    m.p_dot.rect = m.p.rect;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        m.p.at(i, j) = Vec3(i / 3.0, j / 3.0, 0.1 * u(rng));
        m.p_dot.at(i, j) = Vec3(0.0, 0.0, 10.0 * u(rng));
      }
    // every scene has a crossing: the point starts above and ends below the surface
    const MovingPoint pt{Vec3(0.5 + 0.3 * u(rng), 0.5 + 0.3 * u(rng), 0.12 + 0.05 * std::abs(u(rng))),
                         Vec3(5.0 * u(rng), 5.0 * u(rng), -40.0 - 20.0 * std::abs(u(rng)))};
    auto gap = [&](double t) {
      const Vec3 x = pt.at(t);
      if (x.x() < 0 || x.x() > 1 || x.y() < 0 || x.y() > 1) return std::numeric_limits<double>::quiet_NaN();
      return x.z() - m.at_time(t).eval(x.x(), x.y()).z();
    };
    std::optional<double> t_ref;
    const int sub = 1000;
    double g0 = gap(0.0);
    for (int i = 1; i <= sub && !t_ref && std::isfinite(g0); ++i) {
      const double t1 = m.dt * i / sub;
      const double g1 = gap(t1);
      if (!std::isfinite(g1)) break;
      if ((g0 > 0) != (g1 > 0)) {
        double a = m.dt * (i - 1) / sub, b = t1;
        for (int it = 0; it < 80; ++it) {
          const double mid = 0.5 * (a + b);
          ((gap(mid) > 0) == (g0 > 0) ? a : b) = mid;
        }
        t_ref = 0.5 * (a + b);
      }
      g0 = g1;
    }
    IntersectOptions opt;
    opt.eps_t = 1e-6 * m.dt;
    IntersectStats sn, sp;
    const auto hn = ccd_point_patch(pt, m, opt, &sn);
    opt.max_newton_iters = 0;
    const auto hp = ccd_point_patch(pt, m, opt, &sp);
    if (sn.expansions < sp.expansions) ++ccd_fewer;
    if (hn.has_value() != hp.has_value() || (hn && std::abs(hn->tau - hp->tau) > opt.eps_t)) ++disagree;
    if (!t_ref) {
      if (hn && hn->residual > 1e-8) ++ccd_bad;
      continue;
    }
    ++crossings;
    if (!hn) {
      ++ccd_missed;
      continue;
    }
    const double err = std::abs(hn->tau - *t_ref);
    t_err = std::max(t_err, err);
    if (err > opt.eps_t) ++ccd_bad;
  }
  o.check(ccd_missed == 0 && ccd_bad == 0 && crossings >= scenes / 2,
          "CCD: " + std::to_string(crossings) + " crossings, " + std::to_string(ccd_missed) + " missed, max |dt| " +
              fmt("%.1e", t_err) + " (eps_t 1e-08)");
  o.check(disagree == 0, "Newton vs pure subdivision: " + std::to_string(disagree) + " differing results");
  o.check(fewer >= 45, "fewer expansions with Newton on " + std::to_string(fewer) + "/50 static scenes (" +
                           std::to_string(ccd_fewer) + "/50 CCD)");
}

// 6
void collision(Outcome& o) {
  const PatchGrid g(3, 3);
  const VecX q0 = flat_sheet(g, 1.0, 1.0);
  const ElasticModel model(g, q0, Material{1e5, 0.3, 1e-3, 200.0});
  ConstraintSet none;
  const ConstraintReducer red(g, none, model.pattern().empty_matrix());
  const ContactSolver cs(model.mass_matrix(), red);
  auto plane_contact = [&](int patch, double xi1, double xi2) {
    const ShapeEval se = shape_eval(g, patch, xi1, xi2);
    CollisionEvent e;
    for (int l = 0; l < 16; ++l) e.weights.emplace_back(se.indices[l], se.phi[l]);
    const Vec3 x = reconstruct(se, q0);
    e.point = Vec3(x.x(), x.y(), 0.0);
    e.kin_x = -e.point;
    return e;
  };
  const CollisionEvent e = plane_contact(4, 1.4, 1.7);
  VecX qd = jitter(VecX::Zero(q0.size()), 8, 1.0);
  cs.resolve_velocities({e}, qd);
  const double vn = std::abs(e.rate(qd, e.normal));
  o.check(vn <= 1e-10, "post-contact normal velocity " + fmt("%.1e", vn));

  const CollisionConfig defaults;
  VecX q = q0;
  cs.resolve_positions({e}, q, defaults.push_out);
  const double gap = e.gap(q);
  o.check(defaults.push_out == 1e-4 && std::abs(gap - 1e-4) <= 1e-10, "push-out gap " + fmt("%.6e", gap));

  SceneConfig cfg = load_scene(scene_path("ball.json"));
  apply_overrides(cfg, Overrides{std::array<int, 2>{10, 10}, {}, {}, 200, {}, {}});
  SceneRunner r(cfg);
  double dmin = min_sample_distance(r.grid(), r.state().q, r.colliders());
  for (int k = 0; k < 200; ++k) {
    r.advance();
    dmin = std::min(dmin, min_sample_distance(r.grid(), r.state().q, r.colliders()));
  }
  o.check(dmin >= -1e-6, "sphere drape 10x10, 200 steps: min sample distance " + fmt("%.3e", dmin) + " m");
}

// 7
void cantilever(Outcome& o) {
  const SceneConfig base = load_scene(scene_path("cantilever.json"));
  double prev_hw = 0.0;
  bool monotone = true;
  for (double scale : {0.5, 1.0, 2.0}) {
    SceneConfig cfg = base;
    for (double& gk : cfg.loads.gravity) gk *= scale;
    SceneRunner r(cfg);
    for (int k = 0; k < cfg.run.steps; ++k) r.advance();
    const auto& m = cfg.material;
    const double q = m.rho * std::abs(cfg.loads.gravity[2]) * m.h, L = cfg.grid.size[0];
    const double D = m.Y * m.h * m.h * m.h / (12.0 * (1.0 - m.nu * m.nu));
    const double w = q * L * L * L * L / (8.0 * D);
    const double err = std::abs(r.metric() - w) / w;
    const double hw = aspect_ratio_hw(r.grid(), r.state().q);
    o.check(err <= 0.05, "Gamma* " + fmt("%.4f", cfg.gamma_star()) + ": tip " + fmt("%.4e", r.metric()) + " vs " +
                             fmt("%.4e", w) + " (" + fmt("%.2f%%", 100 * err) + ")");
    monotone = monotone && hw > prev_hw;
    prev_hw = hw;
  }
  o.check(monotone, "H/W increasing in Gamma*");
}

// 8
double wrinkle_run(int n) {
  SceneConfig cfg = load_scene(scene_path("wrinkle.json"));
  apply_overrides(cfg, Overrides{std::array<int, 2>{n, n}, {}, {}, {}, {}, {}});
  SceneRunner r(cfg);
  for (int k = 0; k < cfg.run.steps; ++k) r.advance();
  return wrinkle_amplitude(r.grid(), r.state().q, r.reference());
}

void wrinkle(Outcome& o, bool long_run) {
  const double a15 = wrinkle_run(15);
  o.check(std::abs(a15 - 0.34e-3) <= 0.3 * 0.34e-3, "15x15 peak " + fmt("%.4f", a15 * 1e3) + " mm (0.34 +- 30%)");
  const double a5 = wrinkle_run(5);
  o.check(a5 <= 0.05e-3, "5x5 peak " + fmt("%.4f", a5 * 1e3) + " mm (<= 0.05)");
  if (long_run) {
    const double a30 = wrinkle_run(30);
    o.check(std::abs(a30 - 0.34e-3) <= 0.03e-3, "30x30 peak " + fmt("%.4f", a30 * 1e3) + " mm (0.34 +- 0.03)");
  } else {
    o.detail << "; 30x30 skipped (--long)";
  }
}

// 9
void bookkeeping(Outcome& o) {
  SceneConfig cfg = load_scene(scene_path("drape.json"));
  apply_overrides(cfg, Overrides{std::array<int, 2>{30, 30}, {}, {}, {}, {}, {}});
  SceneRunner r(cfg);
  const long dofs = r.grid().num_dofs();
  const double nnz = static_cast<double>(r.model().pattern().empty_matrix().nonZeros());
  o.check(dofs == 3 * 4 * 31 * 31, "DoFs " + std::to_string(dofs));
  o.check(std::abs(nnz - 1.19e6) <= 0.02 * 1.19e6,
          "NNZ " + std::to_string(static_cast<long>(nnz)) + " (" + fmt("%+.2f%%", 100 * (nnz / 1.19e6 - 1)) + ")");
}

struct Criterion {
  int id;
  const char* name;
  double budget;  // seconds
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  bool long_run = false;
  std::vector<int> only;
  app.add_flag("--long", long_run, "include the 30x30 wrinkle run");
  app.add_option("--only", only, "criterion numbers to run");
  CLI11_PARSE(app, argc, argv);
  if (const char* env = std::getenv("BHEM_LONG_TESTS"); env && std::string(env) == "1") long_run = true;

  const std::vector<Criterion> all{
      {1, "geometry kernel", 5, geometry},
      {2, "quadrature", 1, quadrature},
      {3, "derivative oracles", 30, derivatives},
      {4, "invariants", 60, invariants},
      {5, "intersection oracles", 120, intersection},
      {6, "collision response", 180, collision},
      {7, "cantilever", 120, cantilever},
      {8, "wrinkled sheet", long_run ? 3600.0 : 120.0, [&](Outcome& o) { wrinkle(o, long_run); }},
      {9, "bookkeeping", 10, bookkeeping},
  };
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.check(secs < c.budget, fmt("%.1f s", secs) + " of " + fmt("%.0f s", c.budget));
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.str().c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
