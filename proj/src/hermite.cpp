#include "bhem/hermite.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bhem {

namespace {

// Parameters this close outside a rect still count as inside; they are clamped.
constexpr double kRectSlack = 1e-12;

double f(double t) { return (2.0 * t - 3.0) * t * t + 1.0; }
double g(double t) { return ((t - 2.0) * t + 1.0) * t; }
double df(double t) { return 6.0 * t * t - 6.0 * t; }
double dg(double t) { return (3.0 * t - 4.0) * t + 1.0; }
double ddf(double t) { return 12.0 * t - 6.0; }
double ddg(double t) { return 6.0 * t - 4.0; }

double clamp_theta(double xi, double lo, double delta, const char* axis) {
  const double theta = (xi - lo) / delta;
  if (!(theta >= -kRectSlack && theta <= 1.0 + kRectSlack)) {
    std::ostringstream os;
    os << "parameter " << axis << "=" << xi << " outside patch range [" << lo << ", "
       << lo + delta << "]";
    throw DomainError(os.str());
  }
  return std::clamp(theta, 0.0, 1.0);
}

}  // namespace

double basis(BasisKind kind, double theta) {
  if (!(theta >= 0.0 && theta <= 1.0)) {
    throw DomainError("basis: theta must lie in [0, 1]");
  }
  switch (kind) {
    case BasisKind::F: return f(theta);
    case BasisKind::G: return g(theta);
    case BasisKind::dF: return df(theta);
    case BasisKind::dG: return dg(theta);
  }
  return 0.0;
}

ParamRect ParamRect::make(double xi1_min, double xi1_max, double xi2_min, double xi2_max) {
  if (!(xi1_max > xi1_min) || !(xi2_max > xi2_min)) {
    throw DomainError("ParamRect: max must exceed min on both axes");
  }
  return ParamRect{xi1_min, xi1_max, xi2_min, xi2_max};
}

Vec3& NodeDofs::operator[](DofKind k) {
  switch (k) {
    case DofKind::Value: return value;
    case DofKind::D1: return d1;
    case DofKind::D2: return d2;
    case DofKind::D12: return d12;
  }
  return value;
}

const Vec3& NodeDofs::operator[](DofKind k) const {
  return const_cast<NodeDofs&>(*this)[k];
}

bool NodeDofs::finite() const {
  return value.allFinite() && d1.allFinite() && d2.allFinite() && d12.allFinite();
}

HermiteWeights1D hermite_weights(double theta, double delta) {
  const double s = 1.0 - theta;
  HermiteWeights1D hw{};
  // w_{p,r}: f(t), f(1-t), g(t), -g(1-t)
  hw.w[0][0] = f(theta);
  hw.w[1][0] = f(s);
  hw.w[0][1] = g(theta) * delta;
  hw.w[1][1] = -g(s) * delta;
  // d/dtheta, then / delta for d/dxi
  hw.dw[0][0] = df(theta) / delta;
  hw.dw[1][0] = -df(s) / delta;
  hw.dw[0][1] = dg(theta);
  hw.dw[1][1] = dg(s);
  const double inv2 = 1.0 / (delta * delta);
  hw.ddw[0][0] = ddf(theta) * inv2;
  hw.ddw[1][0] = ddf(s) * inv2;
  hw.ddw[0][1] = ddg(theta) / delta;
  hw.ddw[1][1] = -ddg(s) / delta;
  return hw;
}

Vec3 eval_point(const HermitePatch& patch, double xi1, double xi2) {
  const ParamRect& r = patch.rect;
  const auto w1 = hermite_weights(clamp_theta(xi1, r.xi1_min, r.d_xi1(), "xi1"), r.d_xi1());
  const auto w2 = hermite_weights(clamp_theta(xi2, r.xi2_min, r.d_xi2(), "xi2"), r.d_xi2());
  Vec3 x = Vec3::Zero();
  for (int q = 0; q < 2; ++q) {
    for (int p = 0; p < 2; ++p) {
      const NodeDofs& n = patch.node(p, q);
      x += w1.w[p][0] * w2.w[q][0] * n.value + w1.w[p][1] * w2.w[q][0] * n.d1 +
           w1.w[p][0] * w2.w[q][1] * n.d2 + w1.w[p][1] * w2.w[q][1] * n.d12;
    }
  }
  return x;
}

SurfaceFrame make_frame(const Vec3& x, const Vec3& a1, const Vec3& a2, const Vec3& a11,
                        const Vec3& a12, const Vec3& a22) {
  SurfaceFrame fr;
  fr.x = x;
  fr.a1 = a1;
  fr.a2 = a2;
  fr.a11 = a11;
  fr.a12 = a12;
  fr.a22 = a22;
  const Vec3 c = a1.cross(a2);
  const double len = c.norm();
  if (!(len >= kSingularFrameTol * a1.norm() * a2.norm()) || len == 0.0) {
    throw SingularFrameError("degenerate tangent vectors: |a1 x a2| below tolerance");
  }
  fr.area_density = len;
  fr.a3 = c / len;
  return fr;
}

SurfaceFrame eval_frame(const HermitePatch& patch, double xi1, double xi2) {
  const ParamRect& r = patch.rect;
  const auto w1 = hermite_weights(clamp_theta(xi1, r.xi1_min, r.d_xi1(), "xi1"), r.d_xi1());
  const auto w2 = hermite_weights(clamp_theta(xi2, r.xi2_min, r.d_xi2(), "xi2"), r.d_xi2());
  Vec3 x = Vec3::Zero(), a1 = Vec3::Zero(), a2 = Vec3::Zero();
  Vec3 a11 = Vec3::Zero(), a12 = Vec3::Zero(), a22 = Vec3::Zero();
  for (int q = 0; q < 2; ++q) {
    for (int p = 0; p < 2; ++p) {
      const NodeDofs& n = patch.node(p, q);
      for (int s = 0; s < 2; ++s) {
        for (int rr = 0; rr < 2; ++rr) {
          const Vec3& d = n[static_cast<DofKind>(rr + 2 * s)];
          x += w1.w[p][rr] * w2.w[q][s] * d;
          a1 += w1.dw[p][rr] * w2.w[q][s] * d;
          a2 += w1.w[p][rr] * w2.dw[q][s] * d;
          a11 += w1.ddw[p][rr] * w2.w[q][s] * d;
          a12 += w1.dw[p][rr] * w2.dw[q][s] * d;
          a22 += w1.w[p][rr] * w2.ddw[q][s] * d;
        }
      }
    }
  }
  return make_frame(x, a1, a2, a11, a12, a22);
}

}  // namespace bhem
