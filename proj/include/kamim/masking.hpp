#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "kamim/error.hpp"
#include "kamim/rng.hpp"
#include "kamim/tensor.hpp"

namespace kamim {

struct MaskConfig {
  int mask_patch_size = 8;
  double ratio = 0.6;
  std::uint64_t seed = 0;

  void validate(int img_side) const {
    if (mask_patch_size < 1) throw InvalidArgument("MaskConfig: mask_patch_size must be >= 1");
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidArgument("MaskConfig: ratio must be in [0, 1]");
    if (img_side < 1 || img_side % mask_patch_size != 0) {
      throw InvalidArgument("MaskConfig: mask patch " + std::to_string(mask_patch_size) +
                            " does not divide image side " + std::to_string(img_side));
    }
  }
};

/// Boolean grid over mask cells (true = masked) plus the sorted masked indices.
struct PatchMask {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<std::uint8_t> cells;
  std::vector<int> masked;

  std::size_t masked_count() const { return masked.size(); }
  bool at(int row, int col) const { return cells[static_cast<std::size_t>(row) * grid_w + col] != 0; }
  bool operator==(const PatchMask&) const = default;
};

/// round-half-up(ratio * n).
inline int masked_cell_count(double ratio, int n_cells) {
  return static_cast<int>(std::floor(ratio * n_cells + 0.5));
}

/// Masks exactly masked_cell_count(ratio, n) cells chosen uniformly without
/// replacement (partial Fisher-Yates).
inline PatchMask generate_mask(int img_side, const MaskConfig& cfg, Rng& rng) {
  cfg.validate(img_side);
  PatchMask m;
  m.grid_h = m.grid_w = img_side / cfg.mask_patch_size;
  const int n = m.grid_h * m.grid_w;
  const int k = masked_cell_count(cfg.ratio, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(order[i], order[j]);
  }
  m.cells.assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < k; ++i) m.cells[order[i]] = 1;
  for (int i = 0; i < n; ++i) {
    if (m.cells[i]) m.masked.push_back(i);
  }
  return m;
}

inline PatchMask generate_mask(int img_side, const MaskConfig& cfg) {
  Rng rng(cfg.seed);
  return generate_mask(img_side, cfg, rng);
}

/// Token-level mask (row-major over the token grid): a token is masked iff
/// its covering mask cell is.
inline std::vector<std::uint8_t> expand_to_tokens(const PatchMask& mask, int mask_patch_size,
                                                  int token_patch_size) {
  if (token_patch_size < 1 || mask_patch_size < 1 || mask_patch_size % token_patch_size != 0) {
    throw InvalidArgument("expand_to_tokens: mask patch " + std::to_string(mask_patch_size) +
                          " is not a multiple of token patch " + std::to_string(token_patch_size));
  }
  const int scale = mask_patch_size / token_patch_size;
  const int th = mask.grid_h * scale;
  const int tw = mask.grid_w * scale;
  std::vector<std::uint8_t> tokens(static_cast<std::size_t>(th) * tw, 0);
  for (int y = 0; y < th; ++y)
    for (int x = 0; x < tw; ++x) tokens[static_cast<std::size_t>(y) * tw + x] = mask.at(y / scale, x / scale);
  return tokens;
}

/// Replaces masked token embeddings ([N, D] or [B, N, D], mask over all rows)
/// with the learnable mask token.
template <typename T>
BasicTensor<T> apply_mask(const BasicTensor<T>& embeddings, const std::vector<std::uint8_t>& token_mask,
                          const BasicTensor<T>& mask_token) {
  return replace_rows(embeddings, token_mask, mask_token);
}

}  // namespace kamim
