#pragma once

// Block-sparse pattern of 3x3 blocks for generalized-coordinate pairs sharing a patch.

#include "bhem/grid.hpp"

#include <vector>

namespace bhem {

class BlockPattern {
 public:
  BlockPattern() = default;
  explicit BlockPattern(const PatchGrid& grid);

  /// Zero-valued compressed matrix with the full pattern.
  const SparseMat& empty_matrix() const { return skeleton_; }

  /// valuePtr offset of entry (3 I, 3 J + c) for local pair (a, b) of a patch; rows
  /// 3 I + r follow contiguously.
  int offset(int patch, int a, int b, int c) const {
    return offsets_[((static_cast<size_t>(patch) * 16 + a) * 16 + b) * 3 + c];
  }

  /// Adds a dense 48x48 element matrix (local ordering 3 l + component).
  template <typename Derived>
  void scatter(int patch, const Eigen::MatrixBase<Derived>& ke, SparseMat& out) const {
    double* v = out.valuePtr();
    for (int b = 0; b < 16; ++b)
      for (int c = 0; c < 3; ++c)
        for (int a = 0; a < 16; ++a) {
          double* dst = v + offset(patch, a, b, c);
          dst[0] += ke(3 * a, 3 * b + c);
          dst[1] += ke(3 * a + 1, 3 * b + c);
          dst[2] += ke(3 * a + 2, 3 * b + c);
        }
  }

  long nnz() const { return skeleton_.nonZeros(); }
  int dim() const { return static_cast<int>(skeleton_.rows()); }

 private:
  SparseMat skeleton_;
  std::vector<int> offsets_;
};

}  // namespace bhem
