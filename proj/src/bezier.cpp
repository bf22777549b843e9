#include "bhem/bezier.hpp"

#include <algorithm>

namespace bhem {

namespace {

// Hermite (v0, v1, d0, d1) -> Bernstein control points, d in unit-interval scale.
constexpr double kC[4][4] = {
    {1.0, 0.0, 0.0, 0.0},
    {1.0, 0.0, 1.0 / 3.0, 0.0},
    {0.0, 1.0, 0.0, -1.0 / 3.0},
    {0.0, 1.0, 0.0, 0.0},
};

// Blossom of a cubic Bezier curve at (t1, t2, t3).
Vec3 blossom(const Vec3 b[4], double t1, double t2, double t3) {
  Vec3 l1[3], l2[2];
  for (int k = 0; k < 3; ++k) l1[k] = (1.0 - t1) * b[k] + t1 * b[k + 1];
  for (int k = 0; k < 2; ++k) l2[k] = (1.0 - t2) * l1[k] + t2 * l1[k + 1];
  return (1.0 - t3) * l2[0] + t3 * l2[1];
}

// Control points of the curve restricted to [t0, t1].
void restrict_curve(const Vec3 in[4], double t0, double t1, Vec3 out[4]) {
  out[0] = blossom(in, t0, t0, t0);
  out[1] = blossom(in, t0, t0, t1);
  out[2] = blossom(in, t0, t1, t1);
  out[3] = blossom(in, t1, t1, t1);
}

}  // namespace

void bernstein3(double u, double b[4], double db[4]) {
  const double s = 1.0 - u;
  b[0] = s * s * s;
  b[1] = 3.0 * u * s * s;
  b[2] = 3.0 * u * u * s;
  b[3] = u * u * u;
  if (db) {
    db[0] = -3.0 * s * s;
    db[1] = 3.0 * s * s - 6.0 * u * s;
    db[2] = 6.0 * u * s - 3.0 * u * u;
    db[3] = 3.0 * u * u;
  }
}

Aabb BezierPatch::hull() const {
  Aabb box;
  for (const auto& q : p) box.expand(q);
  return box;
}

Vec3 BezierPatch::eval_local(double u, double v) const {
  double bu[4], bv[4];
  bernstein3(u, bu);
  bernstein3(v, bv);
  Vec3 x = Vec3::Zero();
  for (int i = 0; i < 4; ++i) {
    Vec3 row = Vec3::Zero();
    for (int j = 0; j < 4; ++j) row += bv[j] * at(i, j);
    x += bu[i] * row;
  }
  return x;
}

Vec3 BezierPatch::eval(double xi1, double xi2) const {
  const Vec2 l = rect.to_local(xi1, xi2);
  return eval_local(l.x(), l.y());
}

void BezierPatch::eval_d(double xi1, double xi2, Vec3& x, Vec3& x1, Vec3& x2) const {
  const Vec2 l = rect.to_local(xi1, xi2);
  double bu[4], bv[4], dbu[4], dbv[4];
  bernstein3(l.x(), bu, dbu);
  bernstein3(l.y(), bv, dbv);
  x.setZero();
  x1.setZero();
  x2.setZero();
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      x += bu[i] * bv[j] * at(i, j);
      x1 += dbu[i] * bv[j] * at(i, j);
      x2 += bu[i] * dbv[j] * at(i, j);
    }
  }
  x1 /= rect.d_xi1();
  x2 /= rect.d_xi2();
}

BezierPatch to_bezier(const HermitePatch& patch) {
  const double d[2][2] = {{1.0, patch.rect.d_xi1()}, {1.0, patch.rect.d_xi2()}};
  // G[a][b], a = p + 2r along xi1, b = q + 2s along xi2
  Vec3 G[4][4];
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      const int p = a & 1, r = a >> 1, q = b & 1, s = b >> 1;
      G[a][b] = patch.node(p, q)[static_cast<DofKind>(r + 2 * s)] * (d[0][r] * d[1][s]);
    }
  }
  BezierPatch bez;
  bez.rect = patch.rect;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      Vec3 acc = Vec3::Zero();
      for (int a = 0; a < 4; ++a) {
        if (kC[i][a] == 0.0) continue;
        for (int b = 0; b < 4; ++b) {
          if (kC[j][b] == 0.0) continue;
          acc += kC[i][a] * kC[j][b] * G[a][b];
        }
      }
      bez.at(i, j) = acc;
    }
  }
  return bez;
}

BezierPatch sub_patch(const BezierPatch& bez, double u0, double u1, double v0, double v1) {
  BezierPatch tmp, out;
  // restrict along xi2 (index j) for each i, then along xi1
  for (int i = 0; i < 4; ++i) {
    Vec3 in[4], res[4];
    for (int j = 0; j < 4; ++j) in[j] = bez.at(i, j);
    restrict_curve(in, v0, v1, res);
    for (int j = 0; j < 4; ++j) tmp.at(i, j) = res[j];
  }
  for (int j = 0; j < 4; ++j) {
    Vec3 in[4], res[4];
    for (int i = 0; i < 4; ++i) in[i] = tmp.at(i, j);
    restrict_curve(in, u0, u1, res);
    for (int i = 0; i < 4; ++i) out.at(i, j) = res[i];
  }
  const Vec2 lo = bez.rect.from_local(u0, v0);
  const Vec2 hi = bez.rect.from_local(u1, v1);
  out.rect = ParamRect{lo.x(), hi.x(), lo.y(), hi.y()};
  // keep the parent's exact bounds on the shared sides
  if (u0 == 0.0) out.rect.xi1_min = bez.rect.xi1_min;
  if (u1 == 1.0) out.rect.xi1_max = bez.rect.xi1_max;
  if (v0 == 0.0) out.rect.xi2_min = bez.rect.xi2_min;
  if (v1 == 1.0) out.rect.xi2_max = bez.rect.xi2_max;
  return out;
}

std::array<BezierPatch, 4> decasteljau_split(const BezierPatch& bez, double u, double v) {
  if (!(u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0)) {
    throw DomainError("decasteljau_split: split parameters must lie strictly inside (0, 1)");
  }
  std::array<BezierPatch, 4> out = {
      sub_patch(bez, 0.0, u, 0.0, v),
      sub_patch(bez, u, 1.0, 0.0, v),
      sub_patch(bez, 0.0, u, v, 1.0),
      sub_patch(bez, u, 1.0, v, 1.0),
  };
  const Vec2 c = bez.rect.from_local(u, v);
  out[0].rect.xi1_max = out[1].rect.xi1_min = out[2].rect.xi1_max = out[3].rect.xi1_min = c.x();
  out[0].rect.xi2_max = out[1].rect.xi2_max = out[2].rect.xi2_min = out[3].rect.xi2_min = c.y();
  return out;
}

std::vector<ParamRect> pinwheel_rects(const ParamRect& r, const Vec2& center, double radius) {
  if (!(radius > 0.0)) throw DomainError("split_excluding_neighborhood: radius must be positive");
  if (!(center.x() > r.xi1_min && center.x() < r.xi1_max && center.y() > r.xi2_min &&
        center.y() < r.xi2_max)) {
    throw DomainError("split_excluding_neighborhood: center must be interior");
  }
  const double u0 = std::max(center.x() - radius, r.xi1_min);
  const double u1 = std::min(center.x() + radius, r.xi1_max);
  const double v0 = std::max(center.y() - radius, r.xi2_min);
  const double v1 = std::min(center.y() + radius, r.xi2_max);
  std::vector<ParamRect> out;
  auto push = [&out](double a, double b, double c, double d) {
    if (b > a && d > c) out.push_back(ParamRect{a, b, c, d});
  };
  push(r.xi1_min, u0, v0, r.xi2_max);
  push(u0, r.xi1_max, v1, r.xi2_max);
  push(r.xi1_min, u1, r.xi2_min, v0);
  push(u1, r.xi1_max, r.xi2_min, v1);
  return out;
}

std::vector<BezierPatch> split_excluding_neighborhood(const BezierPatch& bez, const Vec2& center,
                                                      double radius) {
  std::vector<BezierPatch> out;
  for (const ParamRect& sub : pinwheel_rects(bez.rect, center, radius)) {
    const Vec2 lo = bez.rect.to_local(sub.xi1_min, sub.xi2_min);
    const Vec2 hi = bez.rect.to_local(sub.xi1_max, sub.xi2_max);
    BezierPatch child = sub_patch(bez, std::clamp(lo.x(), 0.0, 1.0), std::clamp(hi.x(), 0.0, 1.0),
                                  std::clamp(lo.y(), 0.0, 1.0), std::clamp(hi.y(), 0.0, 1.0));
    child.rect = sub;
    out.push_back(child);
  }
  return out;
}

}  // namespace bhem
