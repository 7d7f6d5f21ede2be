#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sagvit/backbone.hpp"
#include "sagvit/gat.hpp"
#include "sagvit/graph.hpp"
#include "sagvit/patching.hpp"
#include "sagvit/transformer.hpp"

namespace sagvit {

enum class Ablation { full, no_transformer, no_gat, no_backbone };

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& s);

// Complete architecture description. gat.d_in == 0 means "derive from the patch width".
struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t num_classes = 2;
  BackboneConfig backbone = BackboneConfig::desk_default(3);
  std::size_t patch_size = 4;
  NeighborhoodSpec neighborhood;
  std::optional<double> sigma_sq;  // unset: median heuristic
  GatStackConfig gat;
  TransformerConfig transformer;
  Ablation ablation = Ablation::full;
  bool pool_first = false;

  bool uses_backbone() const { return ablation != Ablation::no_backbone; }
  bool uses_gat() const { return ablation != Ablation::no_gat; }
  bool uses_transformer() const { return ablation != Ablation::no_transformer; }

  // Raw-image patching is pinned to 4x4 patches without a backbone.
  std::size_t effective_patch_size() const { return uses_backbone() ? patch_size : 4; }
  std::size_t feature_channels() const;
  std::size_t feature_height() const;
  std::size_t feature_width() const;
  PatchGrid patch_grid() const;
  std::size_t num_nodes() const { return patch_grid().num_patches(); }
  std::size_t node_feature_dim() const { return patch_grid().feature_dim(); }
  // Tokens entering the transformer (1 when pooling precedes it).
  std::size_t num_tokens() const { return pool_first ? 1 : num_nodes(); }
  // Width of the vector entering the classifier head.
  std::size_t head_input_dim() const;
  bool has_bridge() const;
  std::size_t bridge_in_dim() const;

  // Fills gat.d_in and backbone.in_channels, then checks every dimension link.
  ModelConfig resolved() const;
  void validate() const;
};

struct ForwardTrace {
  std::optional<FeatureMap> features;
  PatchMatrix patches;
  PatchGraph graph;
  std::vector<GatAttentionOutput> gat;
  std::vector<std::vector<Tensor>> attention;
  Tensor tokens;  // final token matrix before pooling (or the pooled row with pool_first)
  Tensor pooled;  // z
};

class SagVitModel {
 public:
  SagVitModel(const ModelConfig& config, std::uint64_t seed);
  SagVitModel(const SagVitModel&) = delete;
  SagVitModel& operator=(const SagVitModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  std::uint64_t seed() const { return seed_; }

  // Fresh model with identical config and parameter values.
  std::unique_ptr<SagVitModel> replicate() const;

  PatchMatrix patches(const Image& image, std::optional<FeatureMap>* features = nullptr) const;
  PatchGraph graph(const PatchMatrix& patches) const;

  // [1 x C] classification logits.
  Tensor logits(const Image& image, ForwardTrace* trace = nullptr) const;
  // Graph-level part of the pipeline (GAT onward) for an already-built graph.
  Tensor logits_from_graph(const PatchGraph& graph, ForwardTrace* trace = nullptr) const;

 private:
  ModelConfig config_;
  std::uint64_t seed_;
  ParameterStore store_;
  std::optional<Backbone> backbone_;
  std::optional<GatStack> gat_;
  std::optional<Tensor> bridge_weight_, bridge_bias_;
  std::optional<TransformerEncoder> encoder_;
  HeadParams head_;
};

struct ForwardResult {
  Tensor probs;  // [C]
  ForwardTrace trace;
};

// Image -> class probabilities with every intermediate recorded.
ForwardResult forward_full(const SagVitModel& model, const Image& image);

int argmax(const Tensor& t);

}  // namespace sagvit
