#pragma once

// Z-buffer of a fine tessellation: every triangle is projected, and the primary rays of the
// pixel centres it covers are intersected with it.

#include "bhem/scene.hpp"
#include "support/oracles.hpp"

namespace bhem::oracle {

inline std::vector<double> raster_depth(const PatchGrid& grid, const VecX& q, const Camera& cam, int res = 256) {
  const int W = cam.width, H = cam.height;
  std::vector<double> depth(static_cast<std::size_t>(W) * H, std::numeric_limits<double>::infinity());
  std::vector<Ray> rays;
  for (int py = 0; py < H; ++py)
    for (int px = 0; px < W; ++px) rays.push_back(cam.ray(px, py));

  // continuous pixel coordinates of a point in front of the camera
  auto project = [&](const Vec3& x, double& u, double& v) {
    const Vec3 p = x - cam.eye;
    const double z = p.dot(cam.forward);
    if (z <= 1e-12) return false;
    u = (p.dot(cam.right) / (z * cam.tan_half * cam.aspect) + 1.0) * 0.5 * W;
    v = (1.0 - p.dot(cam.up) / (z * cam.tan_half)) * 0.5 * H;
    return true;
  };

  std::vector<Vec3> pts((res + 1) * (res + 1));
  std::vector<Vec2> uv(pts.size());
  std::vector<char> ok(pts.size());
  for (int p = 0; p < grid.num_patches(); ++p) {
    const ParamRect r = grid.patch_rect(p);
    for (int i = 0; i <= res; ++i)
      for (int j = 0; j <= res; ++j) {
        const int k = i * (res + 1) + j;
        const Vec2 xi = r.from_local(double(i) / res, double(j) / res);
        pts[k] = eval_point(grid, q, p, xi.x(), xi.y());
        ok[k] = project(pts[k], uv[k].x(), uv[k].y());
      }
    auto tri = [&](int a, int b, int c) {
      if (!ok[a] || !ok[b] || !ok[c]) return;
      const double u0 = std::min({uv[a].x(), uv[b].x(), uv[c].x()}), u1 = std::max({uv[a].x(), uv[b].x(), uv[c].x()});
      const double v0 = std::min({uv[a].y(), uv[b].y(), uv[c].y()}), v1 = std::max({uv[a].y(), uv[b].y(), uv[c].y()});
      const int x0 = std::max(0, static_cast<int>(std::ceil(u0 - 0.5))), x1 = std::min(W - 1, static_cast<int>(std::floor(u1 - 0.5)));
      const int y0 = std::max(0, static_cast<int>(std::ceil(v0 - 0.5))), y1 = std::min(H - 1, static_cast<int>(std::floor(v1 - 0.5)));
      for (int py = y0; py <= y1; ++py)
        for (int px = x0; px <= x1; ++px) {
          const Ray& ray = rays[py * W + px];
          if (auto h = ray_triangle(ray.origin, ray.dir, pts[a], pts[b], pts[c]))
            if ((*h)[0] > 0.0) depth[py * W + px] = std::min(depth[py * W + px], (*h)[0]);
        }
    };
    for (int i = 0; i < res; ++i)
      for (int j = 0; j < res; ++j) {
        const int a = i * (res + 1) + j, b = (i + 1) * (res + 1) + j, c = b + 1, e = a + 1;
        tri(a, b, c);
        tri(a, c, e);
      }
  }
  return depth;
}

}  // namespace bhem::oracle
