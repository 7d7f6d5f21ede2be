#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sagvit/parameter.hpp"

namespace sagvit {

enum class Activation { relu, none };

struct Image {
  Tensor data;  // [C x H x W], values in [0, 1]
  std::optional<int> label;

  std::size_t channels() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
};

struct FeatureMap {
  Tensor data;  // [D x H' x W']
  std::size_t stride = 1;

  std::size_t channels() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
};

struct ConvLayerSpec {
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  Activation activation = Activation::relu;
};

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::vector<ConvLayerSpec> layers;

  // Three 3x3 layers, 16 -> 32 -> 64 channels, strides 2/2/1.
  static BackboneConfig desk_default(std::size_t in_channels = 3);

  std::size_t total_stride() const;
  std::size_t out_channels() const;
  // Throws ConfigError unless the stack maps HxW exactly onto (H/s)x(W/s).
  void validate(std::size_t height, std::size_t width) const;
};

// Cross-correlation of x[Cin x H x W] with weight[Cout x Cin x k x k].
Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding);
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding);

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride, std::size_t padding);

class Backbone {
 public:
  Backbone(BackboneConfig config, ParameterStore& store, const std::string& prefix = "backbone");

  const BackboneConfig& config() const { return config_; }
  const std::vector<Tensor>& weights() const { return weights_; }
  const std::vector<Tensor>& biases() const { return biases_; }

  FeatureMap extract(const Image& image) const;

 private:
  BackboneConfig config_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

inline FeatureMap extract_features(const Image& image, const Backbone& backbone) { return backbone.extract(image); }

// Precomputed maps stored as rank-3 SGT tensors. SGT carries no metadata, so
// the stride is supplied by the caller.
FeatureMap load_feature_map(const std::filesystem::path& path, std::size_t stride = 1);
void save_feature_map(const std::filesystem::path& path, const FeatureMap& map);

}  // namespace sagvit
