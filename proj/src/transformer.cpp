#include "sagvit/transformer.hpp"

#include <cmath>

#include "sagvit/ops.hpp"

namespace sagvit {

void TransformerConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("transformer.d_model=" + std::to_string(d_model) + " must be divisible by transformer.heads=" +
                      std::to_string(n_heads));
  }
  if (d_ff == 0) throw ConfigError("transformer.d_ff must be positive");
  if (pos_encoding == PosEncoding::sinusoidal && d_model % 2 != 0) {
    throw ConfigError("sinusoidal positional encoding requires even d_model, got " + std::to_string(d_model));
  }
}

Tensor sinusoidal_encoding(std::size_t num_tokens, std::size_t d_model) {
  if (d_model % 2 != 0) {
    throw ConfigError("sinusoidal positional encoding requires even d_model, got " + std::to_string(d_model));
  }
  Tensor p(Shape{num_tokens, d_model});
  auto P = p.as_matrix();
  for (std::size_t pos = 0; pos < num_tokens; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      P(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(2 * i)) = std::sin(angle);
      P(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(2 * i + 1)) = std::cos(angle);
    }
  }
  return p;
}

Tensor positional_encoding(std::size_t num_tokens, std::size_t d_model, PosEncoding mode,
                           const std::optional<Tensor>& learned) {
  switch (mode) {
    case PosEncoding::sinusoidal:
      return sinusoidal_encoding(num_tokens, d_model);
    case PosEncoding::learned:
      if (!learned || learned->shape() != Shape{num_tokens, d_model}) {
        throw ConfigError("learned positional encoding needs a [" + std::to_string(num_tokens) + "x" +
                          std::to_string(d_model) + "] table");
      }
      return *learned;
    case PosEncoding::none:
      break;
  }
  return Tensor(Shape{num_tokens, d_model});
}

AttentionParams make_attention(ParameterStore& store, const std::string& prefix, std::size_t d_model,
                               std::size_t n_heads) {
  AttentionParams p;
  p.n_heads = n_heads;
  auto proj = [&](const std::string& name, Tensor& w, Tensor& b) {
    w = store.create(prefix + "." + name + ".weight", Shape{d_model, d_model}, Init::xavier_uniform, d_model, d_model);
    b = store.create(prefix + "." + name + ".bias", Shape{d_model}, Init::zeros);
  };
  proj("q", p.wq, p.bq);
  proj("k", p.wk, p.bk);
  proj("v", p.wv, p.bv);
  proj("out", p.wo, p.bo);
  return p;
}

EncoderBlockParams make_encoder_block(ParameterStore& store, const std::string& prefix, const TransformerConfig& cfg) {
  EncoderBlockParams b;
  const std::size_t d = cfg.d_model;
  b.ln1_gain = store.create(prefix + ".ln1.gain", Shape{d}, Init::ones);
  b.ln1_bias = store.create(prefix + ".ln1.bias", Shape{d}, Init::zeros);
  b.attention = make_attention(store, prefix + ".attn", d, cfg.n_heads);
  b.ln2_gain = store.create(prefix + ".ln2.gain", Shape{d}, Init::ones);
  b.ln2_bias = store.create(prefix + ".ln2.bias", Shape{d}, Init::zeros);
  b.ff1_weight = store.create(prefix + ".ff1.weight", Shape{cfg.d_ff, d}, Init::xavier_uniform, d, cfg.d_ff);
  b.ff1_bias = store.create(prefix + ".ff1.bias", Shape{cfg.d_ff}, Init::zeros);
  b.ff2_weight = store.create(prefix + ".ff2.weight", Shape{d, cfg.d_ff}, Init::xavier_uniform, cfg.d_ff, d);
  b.ff2_bias = store.create(prefix + ".ff2.bias", Shape{d}, Init::zeros);
  return b;
}

Tensor self_attention(const Tensor& x, const AttentionParams& params, std::vector<Tensor>* weights) {
  const std::size_t d_model = params.wq.dim(0);
  if (x.rank() != 2 || x.cols() != d_model) {
    throw DimensionError("self_attention: input " + shape_string(x.shape()) + " for d_model " + std::to_string(d_model));
  }
  const std::size_t dk = d_model / params.n_heads;
  const Tensor q = linear(x, params.wq, params.bq);
  const Tensor k = linear(x, params.wk, params.bk);
  const Tensor v = linear(x, params.wv, params.bv);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  heads.reserve(params.n_heads);
  for (std::size_t h = 0; h < params.n_heads; ++h) {
    const Tensor qh = slice_cols(q, h * dk, dk);
    const Tensor kh = slice_cols(k, h * dk, dk);
    const Tensor vh = slice_cols(v, h * dk, dk);
    const Tensor attn = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dk), 1);
    if (weights) weights->push_back(attn);
    heads.push_back(matmul(attn, vh));
  }
  const Tensor merged = heads.size() == 1 ? heads.front() : concat_cols(heads);
  return linear(merged, params.wo, params.bo);
}

Tensor encoder_block(const Tensor& x, const EncoderBlockParams& p, std::vector<Tensor>* weights) {
  const Tensor y = add(x, self_attention(layer_norm(x, p.ln1_gain, p.ln1_bias), p.attention, weights));
  const Tensor hidden = relu(linear(layer_norm(y, p.ln2_gain, p.ln2_bias), p.ff1_weight, p.ff1_bias));
  return add(y, linear(hidden, p.ff2_weight, p.ff2_bias));
}

Tensor global_mean_pool(const Tensor& x) { return mean_rows(x); }

HeadParams make_head(ParameterStore& store, const std::string& prefix, std::size_t d_model, std::size_t classes) {
  if (classes < 2) throw ConfigError("classifier needs at least 2 classes, got " + std::to_string(classes));
  HeadParams h;
  h.weight = store.create(prefix + ".weight", Shape{classes, d_model}, Init::xavier_uniform, d_model, classes);
  h.bias = store.create(prefix + ".bias", Shape{classes}, Init::zeros);
  return h;
}

Tensor classifier_logits(const Tensor& z, const HeadParams& head) {
  if (z.size() != head.weight.dim(1)) {
    throw DimensionError("classify: embedding " + shape_string(z.shape()) + " vs head " +
                         shape_string(head.weight.shape()));
  }
  return linear(z.reshaped(Shape{1, z.size()}), head.weight, head.bias);
}

Tensor classify(const Tensor& z, const HeadParams& head) {
  const Tensor logits = classifier_logits(z, head);
  return softmax(logits, 1).reshaped(Shape{head.num_classes()});
}

Tensor token_correlation(const Tensor& x) {
  const std::size_t n = x.rows();
  RowMatrix centered = x.as_matrix();
  centered.colwise() -= centered.rowwise().mean();
  const Eigen::VectorXd norms = centered.rowwise().norm();
  Tensor c(Shape{n, n});
  auto C = c.as_matrix();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      if (i == j) {
        C(ii, jj) = 1.0;
      } else if (norms[ii] == 0.0 || norms[jj] == 0.0) {
        C(ii, jj) = 0.0;
      } else {
        C(ii, jj) = centered.row(ii).dot(centered.row(jj)) / (norms[ii] * norms[jj]);
      }
    }
  }
  return c;
}

TransformerEncoder::TransformerEncoder(TransformerConfig config, std::size_t num_tokens, ParameterStore& store,
                                       const std::string& prefix)
    : config_(config), num_tokens_(num_tokens) {
  config_.validate();
  if (config_.pos_encoding == PosEncoding::learned) {
    learned_positions_ = store.create(prefix + ".pos", Shape{num_tokens, config_.d_model}, Init::normal_002);
  }
  for (std::size_t l = 0; l < config_.layers; ++l) {
    blocks_.push_back(make_encoder_block(store, prefix + ".block" + std::to_string(l), config_));
  }
}

Tensor TransformerEncoder::add_positions(const Tensor& x) const {
  if (config_.pos_encoding == PosEncoding::none) return x;
  if (x.rows() != num_tokens_) {
    throw DimensionError("positional encoding sized for " + std::to_string(num_tokens_) + " tokens, got " +
                         std::to_string(x.rows()));
  }
  return add(x, positional_encoding(num_tokens_, config_.d_model, config_.pos_encoding, learned_positions_));
}

Tensor TransformerEncoder::forward(const Tensor& x, std::vector<std::vector<Tensor>>* attention) const {
  Tensor h = x;
  for (const auto& block : blocks_) {
    std::vector<Tensor> weights;
    h = encoder_block(h, block, attention ? &weights : nullptr);
    if (attention) attention->push_back(std::move(weights));
  }
  return h;
}

}  // namespace sagvit
