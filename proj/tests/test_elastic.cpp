#include "bhem/elastic.hpp"
#include "support/elastic_oracles.hpp"

#include <Eigen/Dense>
#include <catch_amalgamated.hpp>

#include <random>

using namespace bhem;
using oracle::dropped_term;
using oracle::fd_gradient;
using oracle::fd_hessian;
using oracle::rel;

namespace {

struct Scene {
  PatchGrid grid{2, 2};
  VecX q_ref;
  VecX q;
  Material mat{1e3, 0.3, 0.08, 1.0};
  ElasticModel model;

  explicit Scene(unsigned seed, double amp = 0.1)
      : q_ref(flat_sheet(grid, 2.0, 2.0)), model(grid, q_ref, mat) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-amp, amp);
    q = q_ref;
    for (int i = 0; i < q.size(); ++i) q[i] += u(rng);
  }
};

}  // namespace

TEST_CASE("strain first derivatives", "[elastic]") {
  Scene s(1);
  const auto& qp = s.model.reference().point(1, 5);
  const SurfaceFrame f = frame_from_shape(qp.shape, s.q);
  const auto d = strain_first_derivatives(f, qp.shape);
  const double h = 1e-6;
  double worst = 0.0;
  for (int l = 0; l < 16; ++l) {
    for (int c = 0; c < 3; ++c) {
      VecX qp_ = s.q, qm = s.q;
      qp_[3 * qp.shape.indices[l] + c] += h;
      qm[3 * qp.shape.indices[l] + c] -= h;
      const auto fp = fundamental_forms(frame_from_shape(qp.shape, qp_));
      const auto fm = fundamental_forms(frame_from_shape(qp.shape, qm));
      const double fa[3] = {(fp.a(0, 0) - fm.a(0, 0)) / (2 * h), (fp.a(1, 1) - fm.a(1, 1)) / (2 * h),
                            (fp.a(0, 1) - fm.a(0, 1)) / (2 * h)};
      const double fb[3] = {(fp.b(0, 0) - fm.b(0, 0)) / (2 * h), (fp.b(1, 1) - fm.b(1, 1)) / (2 * h),
                            (fp.b(0, 1) - fm.b(0, 1)) / (2 * h)};
      for (int k = 0; k < 3; ++k) {
        worst = std::max(worst, std::abs(fa[k] - d.da[l][k][c]) / std::max(1.0, std::abs(fa[k])));
        worst = std::max(worst, std::abs(fb[k] - d.db[l][k][c]) / std::max(1.0, std::abs(fb[k])));
      }
    }
  }
  CHECK(worst <= 1e-5);

  // flat frame: d a11 / d q for a value coordinate is 2 Phi_,1 a1
  const auto& q0 = s.model.reference().point(0, 3);
  const SurfaceFrame f0 = frame_from_shape(q0.shape, s.q_ref);
  const auto d0 = strain_first_derivatives(f0, q0.shape);
  CHECK((d0.da[0][0] - 2.0 * q0.shape.dphi[0][0] * f0.a1).norm() == 0.0);

  // translation invariance: sum over value coordinates vanishes
  for (int k = 0; k < 3; ++k) {
    Vec3 sa = Vec3::Zero(), sb = Vec3::Zero();
    for (int l = 0; l < 16; l += 4) {
      sa += d.da[l][k];
      sb += d.db[l][k];
    }
    CHECK(sa.norm() < 1e-13);
    CHECK(sb.norm() < 1e-12);
  }
}

TEST_CASE("elastic gradient", "[elastic]") {
  Scene s(2);
  CHECK(s.model.gradient(s.q_ref).norm() == 0.0);
  const VecX g = s.model.gradient(s.q);
  const VecX fd = fd_gradient(s.model, s.q, 1e-6);
  CHECK(rel(g, fd) <= 1e-4);

  // rotating a stressed configuration rotates each 3-vector block
  const Mat3 R = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const VecX qr = transform(s.grid, s.q, R, Vec3(0.3, -0.2, 1.0));
  const VecX gr = s.model.gradient(qr);
  CHECK(std::abs(gr.norm() - g.norm()) <= 1e-10 * g.norm());
  double worst = 0.0;
  for (int c = 0; c < s.grid.num_coords(); ++c)
    worst = std::max(worst, (gr.segment<3>(3 * c) - R * g.segment<3>(3 * c)).norm());
  CHECK(worst <= 1e-10 * g.norm());
}

TEST_CASE("exact Hessian", "[elastic]") {
  Scene s(3);
  const Eigen::MatrixXd H = Eigen::MatrixXd(s.model.hessian(s.q, HessianMode::Exact));
  CHECK((H - H.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * H.cwiseAbs().maxCoeff());
  CHECK(rel(H, fd_hessian(s.model, s.q, 1e-6)) <= 1e-4);

  // second-order decay of the central-difference error
  const double e1 = rel(fd_hessian(s.model, s.q, 4e-3), H);
  const double e2 = rel(fd_hessian(s.model, s.q, 2e-3), H);
  const double e3 = rel(fd_hessian(s.model, s.q, 1e-3), H);
  CHECK(e1 / e2 > 3.5);
  CHECK(e2 / e3 > 3.5);

  // the rest state annihilates translations and infinitesimal rotations
  const Eigen::MatrixXd H0 = Eigen::MatrixXd(s.model.hessian(s.q_ref, HessianMode::Exact));
  const double scale = H0.norm();
  for (int c = 0; c < 3; ++c) {
    const VecX t = translation_mode(s.grid, Vec3::Unit(c));
    CHECK((H0 * t).norm() <= 1e-9 * scale * t.norm());
    const VecX r = rotation_mode(s.grid, s.q_ref, Vec3::Unit(c));
    CHECK((H0 * r).norm() <= 1e-9 * scale * r.norm());
  }
}

TEST_CASE("pseudo Hessian", "[elastic]") {
  Scene s(4);
  const SparseMat He = s.model.hessian(s.q, HessianMode::Exact);
  const SparseMat Hp = s.model.hessian(s.q, HessianMode::Pseudo);
  CHECK(He.nonZeros() == Hp.nonZeros());
  const Eigen::MatrixXd P = Eigen::MatrixXd(Hp);
  CHECK((P - P.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * P.cwiseAbs().maxCoeff());

  double worst = 0.0, scale = 0.0;
  for (int p = 0; p < s.grid.num_patches(); ++p) {
    const ElementMatrix diff = s.model.element_hessian(p, s.q, HessianMode::Exact) -
                               s.model.element_hessian(p, s.q, HessianMode::Pseudo);
    const ElementMatrix oracle = dropped_term(s.model, p, s.q);
    worst = std::max(worst, (diff - oracle).cwiseAbs().maxCoeff());
    scale = std::max(scale, oracle.cwiseAbs().maxCoeff());
  }
  CHECK(scale > 0.0);
  CHECK(worst <= 1e-10 * scale);

  // membrane-only material: both modes coincide
  ElasticModel membrane(s.grid, s.q_ref, s.mat);
  membrane.set_term_scales(1.0, 0.0);
  const Eigen::MatrixXd me = Eigen::MatrixXd(membrane.hessian(s.q, HessianMode::Exact));
  const Eigen::MatrixXd mp = Eigen::MatrixXd(membrane.hessian(s.q, HessianMode::Pseudo));
  CHECK((me - mp).cwiseAbs().maxCoeff() <= 1e-12 * me.cwiseAbs().maxCoeff());
}

TEST_CASE("sparsity pattern matches patch adjacency", "[elastic]") {
  const PatchGrid g(30, 30);
  const BlockPattern pat(g);
  CHECK(g.num_dofs() == 11532);
  CHECK(pat.nnz() == 1192464);
  Scene s(5);
  const SparseMat M = s.model.mass_matrix();
  const SparseMat H = s.model.hessian(s.q, HessianMode::Exact);
  CHECK(M.nonZeros() == H.nonZeros());
  for (int j = 0; j < M.outerSize(); ++j)
    CHECK(M.outerIndexPtr()[j] == H.outerIndexPtr()[j]);
}
