#include "sagvit/model.hpp"

#include "sagvit/ops.hpp"

namespace sagvit {

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_transformer: return "no_transformer";
    case Ablation::no_gat: return "no_gat";
    case Ablation::no_backbone: return "no_backbone";
  }
  return "full";
}

Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "no_transformer") return Ablation::no_transformer;
  if (s == "no_gat") return Ablation::no_gat;
  if (s == "no_backbone") return Ablation::no_backbone;
  throw ConfigError("ablation: unknown value '" + s + "' (expected full, no_transformer, no_gat, no_backbone)");
}

std::size_t ModelConfig::feature_channels() const {
  return uses_backbone() ? backbone.out_channels() : in_channels;
}

std::size_t ModelConfig::feature_height() const {
  return uses_backbone() ? image_height / backbone.total_stride() : image_height;
}

std::size_t ModelConfig::feature_width() const {
  return uses_backbone() ? image_width / backbone.total_stride() : image_width;
}

PatchGrid ModelConfig::patch_grid() const {
  return make_patch_grid(feature_channels(), feature_height(), feature_width(), effective_patch_size());
}

std::size_t ModelConfig::head_input_dim() const {
  return uses_transformer() ? transformer.d_model : gat.d_out;
}

bool ModelConfig::has_bridge() const {
  if (!uses_transformer()) return false;
  if (!uses_gat()) return true;
  return gat.d_out != transformer.d_model;
}

std::size_t ModelConfig::bridge_in_dim() const { return uses_gat() ? gat.d_out : node_feature_dim(); }

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  c.backbone.in_channels = c.in_channels;
  if (c.in_channels == 0) throw ConfigError("model.in_channels must be positive");
  if (c.uses_backbone()) c.backbone.validate(c.image_height, c.image_width);
  const std::size_t d_in = c.patch_grid().feature_dim();
  if (c.gat.d_in == 0) {
    c.gat.d_in = d_in;
  } else if (c.gat.d_in != d_in) {
    throw ConfigError("gat.d_in=" + std::to_string(c.gat.d_in) + " does not match patch width D*k^2=" +
                      std::to_string(d_in));
  }
  c.validate();
  return c;
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw ConfigError("data.classes must be >= 2");
  if (uses_backbone()) {
    if (backbone.layers.empty()) throw ConfigError("backbone.channels must list at least one layer");
    backbone.validate(image_height, image_width);
  }
  const PatchGrid grid = patch_grid();
  if (gat.d_in != grid.feature_dim()) {
    throw ConfigError("gat.d_in=" + std::to_string(gat.d_in) + " does not match patch width " +
                      std::to_string(grid.feature_dim()));
  }
  if (uses_gat()) gat.validate();
  if (uses_transformer()) transformer.validate();
  if (neighborhood.mode == Connectivity::knn && (neighborhood.k < 1 || neighborhood.k >= grid.num_patches())) {
    throw ConfigError("graph.knn_k=" + std::to_string(neighborhood.k) + " must satisfy 1 <= k < |V|=" +
                      std::to_string(grid.num_patches()));
  }
  if (sigma_sq && !(*sigma_sq > 0.0)) throw ConfigError("graph.sigma_sq must be positive or \"auto\"");
}

SagVitModel::SagVitModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config.resolved()), seed_(seed), store_(seed) {
  if (config_.uses_backbone()) backbone_.emplace(config_.backbone, store_, "backbone");
  if (config_.uses_gat()) gat_.emplace(config_.gat, store_, "gat");
  if (config_.has_bridge()) {
    const std::size_t in = config_.bridge_in_dim(), out = config_.transformer.d_model;
    bridge_weight_ = store_.create("bridge.weight", Shape{out, in}, Init::xavier_uniform, in, out);
    bridge_bias_ = store_.create("bridge.bias", Shape{out}, Init::zeros);
  }
  if (config_.uses_transformer()) encoder_.emplace(config_.transformer, config_.num_tokens(), store_, "encoder");
  head_ = make_head(store_, "head", config_.head_input_dim(), config_.num_classes);
}

std::unique_ptr<SagVitModel> SagVitModel::replicate() const {
  auto copy = std::make_unique<SagVitModel>(config_, seed_);
  copy->store_.copy_values_from(store_);
  return copy;
}

PatchMatrix SagVitModel::patches(const Image& image, std::optional<FeatureMap>* features) const {
  if (image.channels() != config_.in_channels || image.height() != config_.image_height ||
      image.width() != config_.image_width) {
    throw DimensionError("image " + shape_string(image.data.shape()) + " does not match model input [" +
                         std::to_string(config_.in_channels) + "x" + std::to_string(config_.image_height) + "x" +
                         std::to_string(config_.image_width) + "]");
  }
  FeatureMap map = backbone_ ? backbone_->extract(image) : FeatureMap{image.data, 1};
  PatchMatrix pm = unfold(map, config_.effective_patch_size());
  if (features) *features = map;
  return pm;
}

PatchGraph SagVitModel::graph(const PatchMatrix& patches) const {
  return build_graph(patches, config_.neighborhood, config_.sigma_sq);
}

Tensor SagVitModel::logits(const Image& image, ForwardTrace* trace) const {
  std::optional<FeatureMap> features;
  PatchMatrix pm = patches(image, trace ? &features : nullptr);
  // Without a GAT the graph only feeds diagnostics.
  PatchGraph g = (gat_ || trace) ? graph(pm) : PatchGraph{pm.grid.num_patches(), {}, pm.features, 1.0, pm.grid};
  if (trace) {
    trace->features = features;
    trace->patches = pm;
  }
  return logits_from_graph(g, trace);
}

Tensor SagVitModel::logits_from_graph(const PatchGraph& graph, ForwardTrace* trace) const {
  Tensor h = graph.node_features;
  if (gat_) h = gat_->forward(graph, h, trace ? &trace->gat : nullptr);
  if (config_.pool_first) h = global_mean_pool(h).reshaped(Shape{1, h.cols()});
  if (bridge_weight_) h = linear(h, *bridge_weight_, *bridge_bias_);
  if (encoder_) {
    h = encoder_->add_positions(h);
    h = encoder_->forward(h, trace ? &trace->attention : nullptr);
  }
  const Tensor z = global_mean_pool(h);
  if (trace) {
    trace->graph = graph;
    trace->tokens = h;
    trace->pooled = z;
  }
  return classifier_logits(z, head_);
}

ForwardResult forward_full(const SagVitModel& model, const Image& image) {
  ForwardResult r;
  const Tensor logits = model.logits(image, &r.trace);
  r.probs = softmax(logits, 1).reshaped(Shape{logits.cols()});
  return r;
}

int argmax(const Tensor& t) {
  Eigen::Index best = 0;
  t.values().maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace sagvit
