#pragma once

#include "sagvit/backbone.hpp"

namespace sagvit {

struct PatchGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patch_size = 1;
  std::size_t channels = 0;

  std::size_t num_patches() const { return rows * cols; }
  std::size_t feature_dim() const { return patch_size * patch_size * channels; }
  std::size_t node_id(std::size_t row, std::size_t col) const { return row * cols + col; }
};

// Node features X_V [num_patches x k*k*D]; row r is patch (r / cols, r % cols).
struct PatchMatrix {
  Tensor features;
  PatchGrid grid;
};

// Throws ConfigError unless k divides both spatial extents.
PatchGrid make_patch_grid(std::size_t channels, std::size_t height, std::size_t width, std::size_t k);

// Non-overlapping k x k patches, each flattened in (row, col, channel) order.
PatchMatrix unfold(const FeatureMap& map, std::size_t k);
FeatureMap fold(const PatchMatrix& patches, std::size_t stride = 1);

}  // namespace sagvit
