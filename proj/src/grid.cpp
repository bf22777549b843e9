#include "bhem/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace bhem {

PatchGrid::PatchGrid(int nx, int ny, bool periodic_u, bool periodic_v)
    : nx_(nx), ny_(ny), periodic_u_(periodic_u), periodic_v_(periodic_v) {
  if (nx < 1 || ny < 1) throw DomainError("PatchGrid: patch counts must be positive");
  if ((periodic_u && nx < 2) || (periodic_v && ny < 2)) {
    throw DomainError("PatchGrid: a periodic direction needs at least 2 patches");
  }
  lx_ = periodic_u ? nx : nx + 1;
  ly_ = periodic_v ? ny : ny + 1;
}

int PatchGrid::node_id(int i, int j) const {
  if (periodic_u_) i = ((i % nx_) + nx_) % nx_;
  if (periodic_v_) j = ((j % ny_) + ny_) % ny_;
  if (i < 0 || i >= lx_ || j < 0 || j >= ly_) throw DomainError("node_id: lattice index out of range");
  return i + lx_ * j;
}

std::array<int, 2> PatchGrid::node_ij(int node) const { return {node % lx_, node / lx_}; }

ParamRect PatchGrid::patch_rect(int patch) const {
  const auto [i, j] = patch_ij(patch);
  return ParamRect{double(i), double(i + 1), double(j), double(j + 1)};
}

std::array<int, 4> PatchGrid::patch_nodes(int patch) const {
  const auto [i, j] = patch_ij(patch);
  return {node_id(i, j), node_id(i + 1, j), node_id(i, j + 1), node_id(i + 1, j + 1)};
}

std::array<int, 16> PatchGrid::patch_coords(int patch) const {
  const auto nodes = patch_nodes(patch);
  std::array<int, 16> out{};
  for (int c = 0; c < 4; ++c)
    for (int k = 0; k < 4; ++k) out[4 * c + k] = 4 * nodes[c] + k;
  return out;
}

int PatchGrid::locate(double xi1, double xi2) const {
  if (!(xi1 >= 0.0 && xi1 <= nx_ && xi2 >= 0.0 && xi2 <= ny_)) {
    std::ostringstream os;
    os << "parameter (" << xi1 << ", " << xi2 << ") outside grid domain [0," << nx_ << "]x[0,"
       << ny_ << "]";
    throw DomainError(os.str());
  }
  const int i = std::min(static_cast<int>(std::floor(xi1)), nx_ - 1);
  const int j = std::min(static_cast<int>(std::floor(xi2)), ny_ - 1);
  return patch_id(i, j);
}

NodeDofs PatchGrid::node(int node, const VecX& q) const {
  NodeDofs n;
  for (int k = 0; k < 4; ++k) n[static_cast<DofKind>(k)] = q.segment<3>(3 * (4 * node + k));
  return n;
}

void PatchGrid::set_node(int node, const NodeDofs& dofs, VecX& q) const {
  for (int k = 0; k < 4; ++k) q.segment<3>(3 * (4 * node + k)) = dofs[static_cast<DofKind>(k)];
}

HermitePatch PatchGrid::patch(int patch, const VecX& q) const {
  HermitePatch hp;
  hp.rect = patch_rect(patch);
  const auto nodes = patch_nodes(patch);
  for (int c = 0; c < 4; ++c) hp.nodes[c] = node(nodes[c], q);
  return hp;
}

ShapeEval shape_eval(const PatchGrid& grid, int patch, double xi1, double xi2) {
  const ParamRect r = grid.patch_rect(patch);
  if (!r.contains(xi1, xi2, 1e-12)) throw DomainError("shape_eval: point outside patch");
  const double t1 = std::clamp((xi1 - r.xi1_min) / r.d_xi1(), 0.0, 1.0);
  const double t2 = std::clamp((xi2 - r.xi2_min) / r.d_xi2(), 0.0, 1.0);
  const auto w1 = hermite_weights(t1, r.d_xi1());
  const auto w2 = hermite_weights(t2, r.d_xi2());
  ShapeEval se;
  se.indices = grid.patch_coords(patch);
  for (int q = 0; q < 2; ++q) {
    for (int p = 0; p < 2; ++p) {
      for (int s = 0; s < 2; ++s) {
        for (int rr = 0; rr < 2; ++rr) {
          const int l = 4 * (p + 2 * q) + rr + 2 * s;
          se.phi[l] = w1.w[p][rr] * w2.w[q][s];
          se.dphi[l] = {w1.dw[p][rr] * w2.w[q][s], w1.w[p][rr] * w2.dw[q][s]};
          se.ddphi[l] = {w1.ddw[p][rr] * w2.w[q][s], w1.dw[p][rr] * w2.dw[q][s],
                         w1.w[p][rr] * w2.ddw[q][s]};
        }
      }
    }
  }
  return se;
}

Vec3 reconstruct(const ShapeEval& se, const VecX& q) {
  Vec3 x = Vec3::Zero();
  for (int l = 0; l < 16; ++l) x += se.phi[l] * q.segment<3>(3 * se.indices[l]);
  return x;
}

SurfaceFrame frame_from_shape(const ShapeEval& se, const VecX& q) {
  Vec3 x = Vec3::Zero(), a1 = Vec3::Zero(), a2 = Vec3::Zero();
  Vec3 a11 = Vec3::Zero(), a12 = Vec3::Zero(), a22 = Vec3::Zero();
  for (int l = 0; l < 16; ++l) {
    const Vec3 v = q.segment<3>(3 * se.indices[l]);
    x += se.phi[l] * v;
    a1 += se.dphi[l][0] * v;
    a2 += se.dphi[l][1] * v;
    a11 += se.ddphi[l][0] * v;
    a12 += se.ddphi[l][1] * v;
    a22 += se.ddphi[l][2] * v;
  }
  return make_frame(x, a1, a2, a11, a12, a22);
}

Vec3 eval_point(const PatchGrid& grid, const VecX& q, int patch, double xi1, double xi2) {
  return eval_point(grid.patch(patch, q), xi1, xi2);
}

SurfaceFrame eval_frame(const PatchGrid& grid, const VecX& q, int patch, double xi1, double xi2) {
  return eval_frame(grid.patch(patch, q), xi1, xi2);
}

VecX flat_sheet(const PatchGrid& grid, double lx, double ly, const Vec3& origin) {
  if (grid.periodic_u() || grid.periodic_v()) throw DomainError("flat_sheet: grid must be open");
  VecX q = VecX::Zero(grid.num_dofs());
  const double hx = lx / grid.nx(), hy = ly / grid.ny();
  for (int n = 0; n < grid.num_nodes(); ++n) {
    const auto [i, j] = grid.node_ij(n);
    NodeDofs d;
    d.value = origin + Vec3(i * hx, j * hy, 0.0);
    d.d1 = Vec3(hx, 0.0, 0.0);
    d.d2 = Vec3(0.0, hy, 0.0);
    grid.set_node(n, d, q);
  }
  return q;
}

VecX cylinder(const PatchGrid& grid, double r, double hgt, double phase) {
  if (grid.periodic_v()) throw DomainError("cylinder: grid must not wrap along the axis");
  VecX q = VecX::Zero(grid.num_dofs());
  const double dphi = (grid.periodic_u() ? 2.0 * std::numbers::pi : std::numbers::pi) / grid.nx();
  const double hz = hgt / grid.ny();
  for (int n = 0; n < grid.num_nodes(); ++n) {
    const auto [i, j] = grid.node_ij(n);
    const double a = phase + i * dphi;
    NodeDofs d;
    d.value = Vec3(r * std::cos(a), r * std::sin(a), j * hz);
    d.d1 = r * dphi * Vec3(-std::sin(a), std::cos(a), 0.0);
    d.d2 = Vec3(0.0, 0.0, hz);
    grid.set_node(n, d, q);
  }
  return q;
}

VecX transform(const PatchGrid& grid, const VecX& q, const Mat3& rot, const Vec3& t) {
  VecX out(q.size());
  for (int n = 0; n < grid.num_nodes(); ++n) {
    for (int k = 0; k < 4; ++k) {
      const int i = 3 * (4 * n + k);
      out.segment<3>(i) = rot * q.segment<3>(i);
      if (k == 0) out.segment<3>(i) += t;
    }
  }
  return out;
}

VecX translation_mode(const PatchGrid& grid, const Vec3& e) {
  VecX out = VecX::Zero(grid.num_dofs());
  for (int n = 0; n < grid.num_nodes(); ++n) out.segment<3>(12 * n) = e;
  return out;
}

VecX rotation_mode(const PatchGrid& grid, const VecX& q, const Vec3& w) {
  VecX out(q.size());
  for (int c = 0; c < grid.num_coords(); ++c) out.segment<3>(3 * c) = w.cross(Vec3(q.segment<3>(3 * c)));
  return out;
}

std::vector<BezierPatch> to_bezier(const PatchGrid& grid, const VecX& q) {
  std::vector<BezierPatch> out;
  out.reserve(grid.num_patches());
  for (int p = 0; p < grid.num_patches(); ++p) out.push_back(to_bezier(grid.patch(p, q)));
  return out;
}

Vec3 eval_point(const PatchGrid& grid, const VecX& q, double xi1, double xi2) {
  return eval_point(grid, q, grid.locate(xi1, xi2), xi1, xi2);
}

SurfaceFrame eval_frame(const PatchGrid& grid, const VecX& q, double xi1, double xi2) {
  return eval_frame(grid, q, grid.locate(xi1, xi2), xi1, xi2);
}

}  // namespace bhem
