#pragma once

#include "sagvit/dataset.hpp"
#include "sagvit/model.hpp"

namespace sagvit::testing {

// Small single-channel model: 16x16 input, one stride-2 conv, 2x2 patches, all widths <= 8.
inline ModelConfig tiny_config(Ablation ablation = Ablation::full, Connectivity mode = Connectivity::moore) {
  ModelConfig c;
  c.in_channels = 1;
  c.image_height = c.image_width = 16;
  c.num_classes = 2;
  c.backbone = BackboneConfig{1, {{4, 3, 2, 1, Activation::relu}}};
  c.patch_size = 2;
  c.neighborhood = {mode, 3};
  c.gat.d_hidden = 8;
  c.gat.d_out = 8;
  c.gat.heads = 2;
  c.gat.layers = 2;
  c.transformer = TransformerConfig{8, 2, 1, 8, PosEncoding::sinusoidal};
  c.ablation = ablation;
  return c;
}

// Element count derived layer by layer from the architecture description.
inline std::size_t hand_param_count(const ModelConfig& config) {
  const ModelConfig c = config.resolved();
  std::size_t n = 0;
  if (c.uses_backbone()) {
    std::size_t cin = c.in_channels;
    for (const auto& l : c.backbone.layers) {
      n += l.out_channels * cin * l.kernel * l.kernel + l.out_channels;
      cin = l.out_channels;
    }
  }
  if (c.uses_gat()) {
    std::size_t width = c.gat.d_in;
    if (c.gat.first_layer == FirstLayer::graphconv) {
      n += c.gat.d_hidden * width;
      width = c.gat.d_hidden;
    }
    const std::size_t f = c.gat.d_hidden / c.gat.heads;
    for (std::size_t l = 0; l + 1 < c.gat.layers; ++l) {
      n += c.gat.heads * (f * width + 2 * f);
      width = c.gat.d_hidden;
    }
    n += c.gat.d_out * width + 2 * c.gat.d_out;
  }
  const std::size_t d = c.transformer.d_model;
  if (c.has_bridge()) n += d * c.bridge_in_dim() + d;
  if (c.uses_transformer()) {
    const std::size_t ff = c.transformer.d_ff;
    n += c.transformer.layers * (4 * d + 4 * (d * d + d) + ff * d + ff + d * ff + d);
    if (c.transformer.pos_encoding == PosEncoding::learned) n += c.num_tokens() * d;
  }
  n += c.num_classes * c.head_input_dim() + c.num_classes;
  return n;
}

inline std::vector<Image> tiny_dataset(std::size_t per_class, std::uint64_t seed = 3) {
  return gen_synthetic(2, per_class, 16, seed, 1, 4).images;
}

}  // namespace sagvit::testing
