#pragma once

#include <optional>
#include <vector>

#include "sagvit/parameter.hpp"

namespace sagvit {

enum class PosEncoding { sinusoidal, learned, none };

struct TransformerConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t layers = 2;  // L_T
  std::size_t d_ff = 128;
  PosEncoding pos_encoding = PosEncoding::sinusoidal;

  std::size_t d_k() const { return d_model / n_heads; }
  void validate() const;
};

// P[pos][2i] = sin(pos / 10000^(2i/d)), P[pos][2i+1] = cos(...).
Tensor sinusoidal_encoding(std::size_t num_tokens, std::size_t d_model);
// `learned` must be supplied (shape [num_tokens x d_model]) in learned mode.
Tensor positional_encoding(std::size_t num_tokens, std::size_t d_model, PosEncoding mode,
                           const std::optional<Tensor>& learned = std::nullopt);

struct AttentionParams {
  std::size_t n_heads = 1;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderBlockParams {
  Tensor ln1_gain, ln1_bias;
  AttentionParams attention;
  Tensor ln2_gain, ln2_bias;
  Tensor ff1_weight, ff1_bias, ff2_weight, ff2_bias;
};

AttentionParams make_attention(ParameterStore& store, const std::string& prefix, std::size_t d_model,
                               std::size_t n_heads);
EncoderBlockParams make_encoder_block(ParameterStore& store, const std::string& prefix, const TransformerConfig& cfg);

// Multi-head softmax(Q K^T / sqrt(d_k)) V over per-head column slices, then W_O.
// `weights`, if given, receives one [n x n] attention matrix per head.
Tensor self_attention(const Tensor& x, const AttentionParams& params, std::vector<Tensor>* weights = nullptr);

// Pre-norm residual block: Y = X + Attn(LN(X)); Z = Y + FFN(LN(Y)).
Tensor encoder_block(const Tensor& x, const EncoderBlockParams& params, std::vector<Tensor>* weights = nullptr);

Tensor global_mean_pool(const Tensor& x);

struct HeadParams {
  Tensor weight;  // [C x d_model]
  Tensor bias;    // [C]
  std::size_t num_classes() const { return weight.dim(0); }
};

HeadParams make_head(ParameterStore& store, const std::string& prefix, std::size_t d_model, std::size_t classes);

// Logits W_out z + b_out as a [1 x C] row.
Tensor classifier_logits(const Tensor& z, const HeadParams& head);
// softmax(W_out z + b_out), shape [C].
Tensor classify(const Tensor& z, const HeadParams& head);

// Pearson correlation between token rows; rows with zero variance correlate 0 off-diagonal.
Tensor token_correlation(const Tensor& x);

class TransformerEncoder {
 public:
  // `num_tokens` sizes the learned positional table.
  TransformerEncoder(TransformerConfig config, std::size_t num_tokens, ParameterStore& store,
                     const std::string& prefix = "encoder");

  const TransformerConfig& config() const { return config_; }
  const std::vector<EncoderBlockParams>& blocks() const { return blocks_; }

  Tensor add_positions(const Tensor& x) const;
  // `attention`, if given, receives per-block per-head attention matrices.
  Tensor forward(const Tensor& x, std::vector<std::vector<Tensor>>* attention = nullptr) const;

 private:
  TransformerConfig config_;
  std::size_t num_tokens_;
  std::optional<Tensor> learned_positions_;
  std::vector<EncoderBlockParams> blocks_;
};

}  // namespace sagvit
