#include "bhem/system_matrix.hpp"

#include <algorithm>

namespace bhem {

BlockPattern::BlockPattern(const PatchGrid& grid) {
  const int nn = grid.num_nodes();
  std::vector<std::vector<int>> nbr(nn);
  for (int p = 0; p < grid.num_patches(); ++p) {
    const auto nodes = grid.patch_nodes(p);
    for (int a : nodes)
      for (int b : nodes) nbr[b].push_back(a);
  }
  for (auto& v : nbr) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }

  const int n = grid.num_dofs();
  skeleton_.resize(n, n);
  std::vector<long> outer(n + 1, 0);
  for (int node = 0; node < nn; ++node) {
    const long per_col = 12L * static_cast<long>(nbr[node].size());
    for (int k = 0; k < 12; ++k) outer[12 * node + k + 1] = per_col;
  }
  for (int j = 0; j < n; ++j) outer[j + 1] += outer[j];

  skeleton_.resizeNonZeros(outer[n]);
  auto* op = skeleton_.outerIndexPtr();
  auto* ip = skeleton_.innerIndexPtr();
  for (int j = 0; j <= n; ++j) op[j] = static_cast<int>(outer[j]);
  for (int node = 0; node < nn; ++node) {
    for (int k = 0; k < 12; ++k) {
      long pos = outer[12 * node + k];
      for (int other : nbr[node])
        for (int r = 0; r < 12; ++r) ip[pos++] = 12 * other + r;
    }
  }
  std::fill(skeleton_.valuePtr(), skeleton_.valuePtr() + outer[n], 0.0);

  offsets_.assign(static_cast<size_t>(grid.num_patches()) * 16 * 16 * 3, 0);
  for (int p = 0; p < grid.num_patches(); ++p) {
    const auto nodes = grid.patch_nodes(p);
    for (int b = 0; b < 16; ++b) {
      const int nb = nodes[b / 4], kb = b % 4;
      for (int a = 0; a < 16; ++a) {
        const int na = nodes[a / 4], ka = a % 4;
        const auto& list = nbr[nb];
        const long rank = std::lower_bound(list.begin(), list.end(), na) - list.begin();
        for (int c = 0; c < 3; ++c) {
          const int col = 3 * (4 * nb + kb) + c;
          offsets_[((static_cast<size_t>(p) * 16 + a) * 16 + b) * 3 + c] =
              static_cast<int>(outer[col] + 12 * rank + 3 * ka);
        }
      }
    }
  }
}

}  // namespace bhem
