#include "bhem/elastic.hpp"

namespace bhem {

StrainDerivatives strain_first_derivatives(const SurfaceFrame& f, const ShapeEval& se) {
  const Vec3& n = f.a3;
  const double len = f.area_density;
  const Mat3 P = Mat3::Identity() - n * n.transpose();
  const Vec3 w[3] = {P * f.a11 / len, P * f.a22 / len, P * f.a12 / len};
  StrainDerivatives d;
  for (int l = 0; l < 16; ++l) {
    const double p1 = se.dphi[l][0], p2 = se.dphi[l][1];
    d.da[l][0] = 2.0 * p1 * f.a1;
    d.da[l][1] = 2.0 * p2 * f.a2;
    d.da[l][2] = p1 * f.a2 + p2 * f.a1;
    const double pp[3] = {se.ddphi[l][0], se.ddphi[l][2], se.ddphi[l][1]};
    for (int c = 0; c < 3; ++c) {
      d.db[l][c] = pp[c] * n + p1 * f.a2.cross(w[c]) + p2 * w[c].cross(f.a1);
    }
  }
  return d;
}

ElasticModel::ElasticModel(const PatchGrid& grid, const VecX& q_ref, const Material& material)
    : grid_(grid), q_ref_(q_ref), material_(material), ref_(grid, q_ref, material), pattern_(grid) {
  if (q_ref.size() != grid.num_dofs()) throw DomainError("ElasticModel: configuration size mismatch");
}

double ElasticModel::element(int patch, const VecX& q, ElementVector* g, ElementMatrix* k,
                             HessianMode mode) const {
  const double h = material_.h;
  const double cm = h * membrane_scale_;
  const double cb = h * h * h / 12.0 * bending_scale_;
  double energy = 0.0;
  if (g) g->setZero();
  if (k) k->setZero();

  // K = sum over points of X W X^T; columns of X per point: KA, KB (3 each), [phi1 I, phi2 I] (6),
  // psi I and N^T (3 each, exact bending only). Stacked as X and Y = X W, product formed once.
  constexpr int kCols = 18;
  Eigen::Matrix<double, 48, 16 * kCols> X, Y;
  int cols = 0;
  Eigen::Matrix<double, 48, 3> KA, KB;
  for (int qpi = 0; qpi < 16; ++qpi) {
    const QuadPoint& qp = ref_.point(patch, qpi);
    const ShapeEval& se = qp.shape;
    const SurfaceFrame f = frame_from_shape(se, q);
    const Vec3& n = f.a3;
    const double len = f.area_density;

    const Vec3 alpha(0.5 * (f.a1.dot(f.a1) - qp.ref.a(0, 0)), 0.5 * (f.a2.dot(f.a2) - qp.ref.a(1, 1)),
                     f.a1.dot(f.a2) - qp.ref.a(0, 1));
    const Vec3 beta(f.a11.dot(n) - qp.ref.b(0, 0), f.a22.dot(n) - qp.ref.b(1, 1),
                    2.0 * (f.a12.dot(n) - qp.ref.b(0, 1)));
    const Mat3& H = qp.Hm;
    const Vec3 sigma = H * alpha;
    const Vec3 m = H * beta;
    energy += qp.dA * (0.5 * cm * alpha.dot(sigma) + 0.5 * cb * beta.dot(m));
    if (!g && !k) continue;

    const Mat3 P = Mat3::Identity() - n * n.transpose();
    const Vec3 w11 = P * f.a11 / len, w22 = P * f.a22 / len, w12 = P * f.a12 / len;
    for (int l = 0; l < 16; ++l) {
      const double p1 = se.dphi[l][0], p2 = se.dphi[l][1];
      KA.block<3, 1>(3 * l, 0) = p1 * f.a1;
      KA.block<3, 1>(3 * l, 1) = p2 * f.a2;
      KA.block<3, 1>(3 * l, 2) = p1 * f.a2 + p2 * f.a1;
      KB.block<3, 1>(3 * l, 0) = se.ddphi[l][0] * n + p1 * f.a2.cross(w11) + p2 * w11.cross(f.a1);
      KB.block<3, 1>(3 * l, 1) = se.ddphi[l][2] * n + p1 * f.a2.cross(w22) + p2 * w22.cross(f.a1);
      KB.block<3, 1>(3 * l, 2) =
          2.0 * (se.ddphi[l][1] * n + p1 * f.a2.cross(w12) + p2 * w12.cross(f.a1));
    }
    if (g) g->noalias() += qp.dA * (cm * KA * sigma + cb * KB * m);
    if (!k) continue;

    const double am = qp.dA * cm, ab = qp.dA * cb;
    X.middleCols<3>(cols) = KA;
    Y.middleCols<3>(cols).noalias() = KA * (am * H);
    X.middleCols<3>(cols + 3) = KB;
    Y.middleCols<3>(cols + 3).noalias() = KB * (ab * H);
    auto Q = X.middleCols<6>(cols + 6);
    for (int l = 0; l < 16; ++l) {
      Q.block<3, 3>(3 * l, 0) = se.dphi[l][0] * Mat3::Identity();
      Q.block<3, 3>(3 * l, 3) = se.dphi[l][1] * Mat3::Identity();
    }
    // membrane stress term
    Eigen::Matrix<double, 6, 6> WQ;
    WQ << am * sigma[0] * Mat3::Identity(), am * sigma[2] * Mat3::Identity(), am * sigma[2] * Mat3::Identity(),
        am * sigma[1] * Mat3::Identity();
    if (mode == HessianMode::Pseudo || cb == 0.0) {
      Y.middleCols<6>(cols + 6).noalias() = Q * WQ;
      cols += 12;
      continue;
    }

    // second derivatives of m . beta with m frozen: V . n(a1, a2) with V linear in q
    const Vec3 V = m[0] * f.a11 + m[1] * f.a22 + 2.0 * m[2] * f.a12;
    const double vn = V.dot(n);
    const Vec3 wv = P * V / len;
    const Mat3 G = (-V * n.transpose() - n * V.transpose() - vn * Mat3::Identity() +
                    3.0 * vn * n * n.transpose()) /
                   (len * len);
    const Mat3 X1 = cross_matrix(f.a1), X2 = cross_matrix(f.a2);
    const Mat3 H11 = -X2 * G * X2;
    const Mat3 H22 = -X1 * G * X1;
    const Mat3 H12 = X2 * G * X1 - cross_matrix(wv);
    const Mat3 Dn1 = -P * X2 / len, Dn2 = P * X1 / len;
    Eigen::Matrix<double, 6, 6> Hf;
    Hf << H11, H12, H12.transpose(), H22;
    WQ += ab * Hf;
    Y.middleCols<6>(cols + 6).noalias() = Q * WQ;

    // psi_a N_b + psi_b N_a^T
    auto Psi = X.middleCols<3>(cols + 12);
    auto Nt = X.middleCols<3>(cols + 15);
    for (int l = 0; l < 16; ++l) {
      const double p1 = se.dphi[l][0], p2 = se.dphi[l][1];
      Nt.block<3, 3>(3 * l, 0) = (p1 * Dn1 + p2 * Dn2).transpose();
      const double ps = m[0] * se.ddphi[l][0] + m[1] * se.ddphi[l][2] + 2.0 * m[2] * se.ddphi[l][1];
      Psi.block<3, 3>(3 * l, 0) = ps * Mat3::Identity();
    }
    Y.middleCols<3>(cols + 12) = ab * Nt;
    Y.middleCols<3>(cols + 15) = ab * Psi;
    cols += kCols;
  }
  if (k) {
    k->triangularView<Eigen::Lower>() = Y.leftCols(cols) * X.leftCols(cols).transpose();
    k->triangularView<Eigen::StrictlyUpper>() = k->transpose();
  }
  return energy;
}

double ElasticModel::patch_energy(int patch, const VecX& q) const {
  return element(patch, q, nullptr, nullptr, HessianMode::Exact);
}

ElementVector ElasticModel::element_gradient(int patch, const VecX& q) const {
  ElementVector g;
  element(patch, q, &g, nullptr, HessianMode::Exact);
  return g;
}

ElementMatrix ElasticModel::element_hessian(int patch, const VecX& q, HessianMode mode) const {
  ElementMatrix k;
  element(patch, q, nullptr, &k, mode);
  return k;
}

double ElasticModel::energy(const VecX& q) const {
  double e = 0.0;
  for (int p = 0; p < grid_.num_patches(); ++p) e += patch_energy(p, q);
  return e;
}

double ElasticModel::energy_gradient(const VecX& q, VecX& grad) const {
  grad.setZero(grid_.num_dofs());
  double e = 0.0;
  ElementVector g;
  for (int p = 0; p < grid_.num_patches(); ++p) {
    e += element(p, q, &g, nullptr, HessianMode::Exact);
    const auto idx = grid_.patch_coords(p);
    for (int l = 0; l < 16; ++l) grad.segment<3>(3 * idx[l]) += g.segment<3>(3 * l);
  }
  return e;
}

VecX ElasticModel::gradient(const VecX& q) const {
  VecX g;
  energy_gradient(q, g);
  return g;
}

void ElasticModel::hessian(const VecX& q, HessianMode mode, SparseMat& out) const {
  std::fill(out.valuePtr(), out.valuePtr() + out.nonZeros(), 0.0);
  ElementMatrix k;
  for (int p = 0; p < grid_.num_patches(); ++p) {
    element(p, q, nullptr, &k, mode);
    pattern_.scatter(p, k, out);
  }
}

SparseMat ElasticModel::hessian(const VecX& q, HessianMode mode) const {
  SparseMat out = pattern_.empty_matrix();
  hessian(q, mode, out);
  return out;
}

SparseMat ElasticModel::mass_matrix() const {
  return bhem::mass_matrix(grid_, material_, ref_, pattern_);
}

}  // namespace bhem
