#include "bhem/shell.hpp"

#include <cmath>

namespace bhem {

Material Material::make(double Y, double nu, double h, double rho) {
  if (!(Y > 0.0)) throw DomainError("material: Young's modulus must be positive");
  if (!(nu >= 0.0 && nu <= 0.5)) throw DomainError("material: Poisson ratio must lie in [0, 0.5]");
  if (!(h > 0.0)) throw DomainError("material: thickness must be positive");
  if (!(rho >= 0.0)) throw DomainError("material: density must be nonnegative");
  return Material{Y, nu, h, rho};
}

FundamentalForms fundamental_forms(const SurfaceFrame& f) {
  FundamentalForms ff;
  ff.a << f.a1.dot(f.a1), f.a1.dot(f.a2), f.a2.dot(f.a1), f.a2.dot(f.a2);
  const double det = ff.a.determinant();
  if (!(det > 0.0)) throw SingularFrameError("fundamental_forms: metric is not positive definite");
  ff.sqrt_a = std::sqrt(det);
  ff.a_inv << ff.a(1, 1), -ff.a(0, 1), -ff.a(1, 0), ff.a(0, 0);
  ff.a_inv /= det;
  const Vec3& n = f.a3;
  ff.b << f.a11.dot(n), f.a12.dot(n), f.a12.dot(n), f.a22.dot(n);
  // derivatives of the unit normal: n_,k = P (a1,k x a2 + a1 x a2,k) / |a1 x a2|
  const Mat3 P = Mat3::Identity() - n * n.transpose();
  const Vec3 n1 = P * (f.a11.cross(f.a2) + f.a1.cross(f.a12)) / f.area_density;
  const Vec3 n2 = P * (f.a12.cross(f.a2) + f.a1.cross(f.a22)) / f.area_density;
  ff.c << n1.dot(n1), n1.dot(n2), n2.dot(n1), n2.dot(n2);
  return ff;
}

StrainState strain(const FundamentalForms& cur, const FundamentalForms& ref) {
  return StrainState{0.5 * (cur.a - ref.a), 0.5 * (cur.b - ref.b), 0.5 * (cur.c - ref.c)};
}

Mat3 voigt_H(const Mat2& ai, const Material& m) {
  const double l = m.lambda(), u = m.mu();
  const double a11 = ai(0, 0), a22 = ai(1, 1), a12 = ai(0, 1);
  Mat3 H;
  H(0, 0) = (l + 2 * u) * a11 * a11;
  H(0, 1) = l * a11 * a22 + 2 * u * a12 * a12;
  H(0, 2) = (l + 2 * u) * a11 * a12;
  H(1, 1) = (l + 2 * u) * a22 * a22;
  H(1, 2) = (l + 2 * u) * a12 * a22;
  H(2, 2) = (l + u) * a12 * a12 + u * a11 * a22;
  H(1, 0) = H(0, 1);
  H(2, 0) = H(0, 2);
  H(2, 1) = H(1, 2);
  return H;
}

Vec3 alpha_v(const Mat2& A) { return {A(0, 0), A(1, 1), 2.0 * A(0, 1)}; }
Vec3 beta_v(const Mat2& B) { return {2.0 * B(0, 0), 2.0 * B(1, 1), 4.0 * B(0, 1)}; }

double hbar(const Mat2& ai, const Material& m, int a, int b, int c, int d) {
  return 0.5 * m.lambda() * ai(a, b) * ai(c, d) + m.mu() * ai(b, c) * ai(a, d);
}

double energy_density(const StrainState& s, const Mat2& ai, const Material& m) {
  double aa = 0.0, bb = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c)
        for (int d = 0; d < 2; ++d) {
          const double H = hbar(ai, m, a, b, c, d);
          aa += s.A(a, b) * s.A(c, d) * H;
          bb += s.B(a, b) * s.B(c, d) * H;
        }
  return aa * m.h + bb * m.h * m.h * m.h / 3.0;
}

double energy_density_voigt(const StrainState& s, const Mat3& Hm, const Material& m) {
  const Vec3 al = alpha_v(s.A), be = beta_v(s.B);
  return 0.5 * m.h * al.dot(Hm * al) + m.h * m.h * m.h / 24.0 * be.dot(Hm * be);
}

QuadratureRule gauss_legendre_16(const ParamRect& r) {
  const double s = 2.0 / 7.0 * std::sqrt(6.0 / 5.0);
  const double x_in = std::sqrt(3.0 / 7.0 - s), x_out = std::sqrt(3.0 / 7.0 + s);
  const double w_in = (18.0 + std::sqrt(30.0)) / 36.0, w_out = (18.0 - std::sqrt(30.0)) / 36.0;
  const double x[4] = {-x_out, -x_in, x_in, x_out};
  const double w[4] = {w_out, w_in, w_in, w_out};
  const Vec2 c = r.center();
  QuadratureRule rule;
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < 4; ++i) {
      rule.points[4 * j + i] = Vec2(c.x() + 0.5 * r.d_xi1() * x[i], c.y() + 0.5 * r.d_xi2() * x[j]);
      rule.weights[4 * j + i] = 0.25 * r.d_xi1() * r.d_xi2() * w[i] * w[j];
    }
  }
  return rule;
}

ReferenceCache::ReferenceCache(const PatchGrid& grid, const VecX& q_ref, const Material& m) {
  points_.resize(static_cast<size_t>(grid.num_patches()) * 16);
  for (int p = 0; p < grid.num_patches(); ++p) {
    const auto rule = gauss_legendre_16(grid.patch_rect(p));
    for (int k = 0; k < 16; ++k) {
      QuadPoint& qp = points_[16 * p + k];
      qp.shape = shape_eval(grid, p, rule.points[k].x(), rule.points[k].y());
      qp.ref = fundamental_forms(frame_from_shape(qp.shape, q_ref));
      qp.Hm = voigt_H(qp.ref.a_inv, m);
      qp.weight = rule.weights[k];
      qp.dA = qp.weight * qp.ref.sqrt_a;
      area_ += qp.dA;
    }
  }
}

SparseMat mass_matrix(const PatchGrid& grid, const Material& m, const ReferenceCache& ref,
                      const BlockPattern& pattern) {
  SparseMat M = pattern.empty_matrix();
  Eigen::Matrix<double, 48, 48> ke;
  for (int p = 0; p < grid.num_patches(); ++p) {
    Eigen::Matrix<double, 16, 16> s = Eigen::Matrix<double, 16, 16>::Zero();
    for (int k = 0; k < 16; ++k) {
      const QuadPoint& qp = ref.point(p, k);
      Eigen::Map<const Eigen::Matrix<double, 16, 1>> phi(qp.shape.phi.data());
      s.noalias() += (m.rho * m.h * qp.dA) * phi * phi.transpose();
    }
    s = (0.5 * (s + s.transpose())).eval();
    ke.setZero();
    for (int a = 0; a < 16; ++a)
      for (int b = 0; b < 16; ++b)
        for (int c = 0; c < 3; ++c) ke(3 * a + c, 3 * b + c) = s(a, b);
    pattern.scatter(p, ke, M);
  }
  return M;
}

VecX external_forces(const PatchGrid& grid, const VecX& q, const Material& m,
                     const ReferenceCache& ref, const Loads& loads) {
  VecX f = VecX::Zero(grid.num_dofs());
  const bool areal = !loads.gravity.isZero(0.0) || loads.pressure != 0.0;
  if (areal) {
    for (int p = 0; p < grid.num_patches(); ++p) {
      for (int k = 0; k < 16; ++k) {
        const QuadPoint& qp = ref.point(p, k);
        Vec3 load = m.rho * m.h * loads.gravity;
        if (loads.pressure != 0.0) load += loads.pressure * frame_from_shape(qp.shape, q).a3;
        for (int l = 0; l < 16; ++l)
          f.segment<3>(3 * qp.shape.indices[l]) += (qp.dA * qp.shape.phi[l]) * load;
      }
    }
  }
  for (const PointForce& pf : loads.point_forces) {
    const int p = grid.locate(pf.xi1, pf.xi2);
    const ShapeEval se = shape_eval(grid, p, pf.xi1, pf.xi2);
    for (int l = 0; l < 16; ++l) f.segment<3>(3 * se.indices[l]) += se.phi[l] * pf.force;
  }
  return f;
}

}  // namespace bhem
