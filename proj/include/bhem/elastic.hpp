#pragma once

// Total elastic energy of a patch grid and its first and second derivatives.

#include "bhem/shell.hpp"
#include "bhem/system_matrix.hpp"

#include <array>

namespace bhem {

enum class HessianMode { Exact, Pseudo };

/// Derivatives of a_{ab} and b_{ab} with respect to the 16 generalized coordinates of a
/// patch. Component order 11, 22, 12.
struct StrainDerivatives {
  std::array<std::array<Vec3, 3>, 16> da;
  std::array<std::array<Vec3, 3>, 16> db;
};

StrainDerivatives strain_first_derivatives(const SurfaceFrame& frame, const ShapeEval& shape);

using ElementMatrix = Eigen::Matrix<double, 48, 48>;
using ElementVector = Eigen::Matrix<double, 48, 1>;

class ElasticModel {
 public:
  ElasticModel(const PatchGrid& grid, const VecX& q_ref, const Material& material);

  const PatchGrid& grid() const { return grid_; }
  const Material& material() const { return material_; }
  const ReferenceCache& reference() const { return ref_; }
  const BlockPattern& pattern() const { return pattern_; }
  const VecX& reference_config() const { return q_ref_; }

  /// Multipliers on the membrane (h) and bending (h^3) terms; 1 by default.
  void set_term_scales(double membrane, double bending) {
    membrane_scale_ = membrane;
    bending_scale_ = bending;
  }

  double energy(const VecX& q) const;
  VecX gradient(const VecX& q) const;
  /// Energy and gradient in one pass.
  double energy_gradient(const VecX& q, VecX& grad) const;

  SparseMat hessian(const VecX& q, HessianMode mode) const;
  /// Overwrites the values of `out`, which must carry pattern().empty_matrix()'s structure.
  void hessian(const VecX& q, HessianMode mode, SparseMat& out) const;

  double patch_energy(int patch, const VecX& q) const;
  ElementVector element_gradient(int patch, const VecX& q) const;
  ElementMatrix element_hessian(int patch, const VecX& q, HessianMode mode) const;

  SparseMat mass_matrix() const;

 private:
  double element(int patch, const VecX& q, ElementVector* g, ElementMatrix* k, HessianMode mode) const;

  PatchGrid grid_;
  VecX q_ref_;
  Material material_;
  ReferenceCache ref_;
  BlockPattern pattern_;
  double membrane_scale_ = 1.0;
  double bending_scale_ = 1.0;
};

}  // namespace bhem
