#include "sagvit/patching.hpp"

#include "sagvit/ops.hpp"

namespace sagvit {

PatchGrid make_patch_grid(std::size_t channels, std::size_t height, std::size_t width, std::size_t k) {
  if (k == 0 || height % k != 0 || width % k != 0 || height == 0 || width == 0) {
    throw ConfigError("unfold: patch size " + std::to_string(k) + " must divide feature map extents H'=" +
                      std::to_string(height) + ", W'=" + std::to_string(width));
  }
  return PatchGrid{height / k, width / k, k, channels};
}

namespace {

// Flat index into [D x H x W] for every element of the patch matrix, row-major.
std::vector<std::size_t> patch_source_indices(const PatchGrid& g) {
  const std::size_t k = g.patch_size, d = g.channels;
  const std::size_t height = g.rows * k, width = g.cols * k;
  std::vector<std::size_t> idx;
  idx.reserve(g.num_patches() * g.feature_dim());
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
          for (std::size_t c = 0; c < d; ++c) idx.push_back((c * height + i * k + a) * width + j * k + b);
        }
      }
    }
  }
  return idx;
}

}  // namespace

PatchMatrix unfold(const FeatureMap& map, std::size_t k) {
  const PatchGrid grid = make_patch_grid(map.channels(), map.height(), map.width(), k);
  const auto idx = patch_source_indices(grid);
  return PatchMatrix{gather(map.data, idx, Shape{grid.num_patches(), grid.feature_dim()}), grid};
}

FeatureMap fold(const PatchMatrix& patches, std::size_t stride) {
  const PatchGrid& g = patches.grid;
  if (patches.features.shape() != Shape{g.num_patches(), g.feature_dim()}) {
    throw DimensionError("fold: features " + shape_string(patches.features.shape()) + " inconsistent with grid");
  }
  const auto forward = patch_source_indices(g);
  std::vector<std::size_t> inverse(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) inverse[forward[i]] = i;
  return FeatureMap{gather(patches.features, inverse, Shape{g.channels, g.rows * g.patch_size, g.cols * g.patch_size}),
                    stride};
}

}  // namespace sagvit
