#pragma once

// Structured grid of Hermite patches sharing nodes, and the global shape functions.

#include "bhem/bezier.hpp"
#include "bhem/hermite.hpp"

#include <array>
#include <vector>

namespace bhem {

/// Shape functions of one patch at one parameter point. Local index
/// l = 4 (p + 2 q) + kind, kind = r + 2 s; indices[l] is the global generalized
/// coordinate I, whose entries occupy q[3 I .. 3 I + 2].
struct ShapeEval {
  std::array<double, 16> phi{};
  std::array<std::array<double, 2>, 16> dphi{};
  std::array<std::array<double, 3>, 16> ddphi{};  // 11, 12, 22
  std::array<int, 16> indices{};
};

/// Node lattice with nx x ny patches. Patch (i, j) covers parameters
/// [i, i+1] x [j, j+1]. Generalized coordinate I = 4 node + kind.
class PatchGrid {
 public:
  PatchGrid() = default;
  PatchGrid(int nx, int ny, bool periodic_u = false, bool periodic_v = false);

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  bool periodic_u() const { return periodic_u_; }
  bool periodic_v() const { return periodic_v_; }
  int num_patches() const { return nx_ * ny_; }
  int num_nodes() const { return lx_ * ly_; }
  /// Number of generalized coordinates N (each a 3-vector).
  int num_coords() const { return 4 * num_nodes(); }
  int num_dofs() const { return 3 * num_coords(); }

  /// Node at lattice position (i, j), with periodic wrap; i in [0, nx], j in [0, ny].
  int node_id(int i, int j) const;
  /// Lattice position of a stored node.
  std::array<int, 2> node_ij(int node) const;
  int coord_index(int node, DofKind kind) const { return 4 * node + static_cast<int>(kind); }

  int patch_id(int i, int j) const { return i + nx_ * j; }
  std::array<int, 2> patch_ij(int patch) const { return {patch % nx_, patch / nx_}; }
  ParamRect patch_rect(int patch) const;
  /// Stored node ids of the corners (p, q) at index p + 2 q.
  std::array<int, 4> patch_nodes(int patch) const;
  /// The 16 generalized coordinates of a patch in local order.
  std::array<int, 16> patch_coords(int patch) const;

  /// Patch containing global parameters; points on shared edges go to the lower patch
  /// unless on the upper domain boundary. Throws DomainError outside the domain.
  int locate(double xi1, double xi2) const;

  /// Hermite patch of a configuration vector q (length num_dofs()).
  HermitePatch patch(int patch, const VecX& q) const;

  NodeDofs node(int node, const VecX& q) const;
  void set_node(int node, const NodeDofs& dofs, VecX& q) const;

 private:
  int nx_ = 0, ny_ = 0;
  int lx_ = 0, ly_ = 0;  // stored lattice extents
  bool periodic_u_ = false, periodic_v_ = false;
};

ShapeEval shape_eval(const PatchGrid& grid, int patch, double xi1, double xi2);

Vec3 eval_point(const PatchGrid& grid, const VecX& q, int patch, double xi1, double xi2);
SurfaceFrame eval_frame(const PatchGrid& grid, const VecX& q, int patch, double xi1, double xi2);
/// Same, locating the patch from the global parameters.
Vec3 eval_point(const PatchGrid& grid, const VecX& q, double xi1, double xi2);
SurfaceFrame eval_frame(const PatchGrid& grid, const VecX& q, double xi1, double xi2);

/// x = sum Phi^I q_I
Vec3 reconstruct(const ShapeEval& se, const VecX& q);

/// Surface frame from precomputed shape functions.
SurfaceFrame frame_from_shape(const ShapeEval& se, const VecX& q);

/// Flat Lx x Ly rectangle in the z = 0 plane with its corner at origin.
VecX flat_sheet(const PatchGrid& grid, double lx, double ly, const Vec3& origin = Vec3::Zero());

/// Open or closed cylinder of radius r and height hgt around the z axis; xi1 runs
/// around the circumference. The grid must be periodic in u for a closed cylinder.
VecX cylinder(const PatchGrid& grid, double r, double hgt, double phase = 0.0);

/// Applies x -> R x + t to values and R to all derivative coordinates.
VecX transform(const PatchGrid& grid, const VecX& q, const Mat3& rot, const Vec3& t);

/// Vector with e on every value coordinate and zero elsewhere.
VecX translation_mode(const PatchGrid& grid, const Vec3& e);

/// Infinitesimal rotation about axis w through the origin: value x -> w x x, derivative d -> w x d.
VecX rotation_mode(const PatchGrid& grid, const VecX& q, const Vec3& w);

std::vector<BezierPatch> to_bezier(const PatchGrid& grid, const VecX& q);

}  // namespace bhem
