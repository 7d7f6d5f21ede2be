#pragma once

#include <vector>

#include "sagvit/graph.hpp"
#include "sagvit/parameter.hpp"

namespace sagvit {

// Compressed per-node neighbor lists (CSR) derived from a PatchGraph.
struct Neighborhoods {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> offsets;  // size num_nodes + 1
  std::vector<std::size_t> nodes;
  std::vector<double> log_weights;

  std::size_t num_entries() const { return nodes.size(); }
  std::size_t degree(std::size_t u) const { return offsets[u + 1] - offsets[u]; }
};

// `self_loops` prepends each node to its own list with weight 1.
Neighborhoods make_neighborhoods(const PatchGraph& graph, bool self_loops);

// Fused GAT scoring + aggregation for one head:
//   e_uv = LeakyReLU(a[:F].h_u + a[F:].h_v) (+ ln w_uv), alpha = softmax over N(u),
//   out_u = sum_v alpha_uv h_v   (zero for nodes with empty N(u)).
// `alphas`, if given, receives alpha per CSR entry.
Tensor attention_aggregate(const Tensor& h, const Tensor& attn, const Neighborhoods& nbhd, double leaky_slope,
                           bool use_log_weights, std::vector<double>* alphas = nullptr);

// out_u = mean of x_v over N(u) plus u itself (rows), no parameters.
Tensor neighbor_mean(const Tensor& x, const Neighborhoods& nbhd_with_self);

struct GatLayerParams {
  std::vector<Tensor> weights;    // per head [F' x D_in]
  std::vector<Tensor> attention;  // per head [2F']
  double leaky_slope = 0.2;
  bool self_loops = false;
  bool use_edge_weight_bias = false;

  std::size_t heads() const { return weights.size(); }
  std::size_t head_dim() const { return weights.front().dim(0); }
  std::size_t in_dim() const { return weights.front().dim(1); }
};

GatLayerParams make_gat_layer(ParameterStore& store, const std::string& prefix, std::size_t in_dim,
                              std::size_t head_dim, std::size_t heads, double leaky_slope, bool self_loops,
                              bool use_edge_weight_bias);

struct GatAttentionOutput {
  Tensor features;                          // [|V| x heads*F']
  std::vector<std::vector<double>> alphas;  // [head][CSR entry]
  Neighborhoods neighborhoods;
};

// Multi-head graph attention with ReLU per head, heads concatenated.
GatAttentionOutput gat_attention(const PatchGraph& graph, const Tensor& x, const GatLayerParams& params);

// W . mean(x_v : v in N(u) or v == u), weight [d_out x d_in].
Tensor graph_conv(const PatchGraph& graph, const Tensor& x, const Tensor& weight);

enum class FirstLayer { graphconv, gat };

struct GatStackConfig {
  std::size_t d_in = 0;
  std::size_t d_hidden = 64;
  std::size_t d_out = 64;
  std::size_t layers = 2;  // L_GAT
  std::size_t heads = 4;
  FirstLayer first_layer = FirstLayer::graphconv;
  double leaky_slope = 0.2;
  bool self_loops = false;
  bool use_edge_weight_bias = false;

  void validate() const;
};

// graphconv mode: GraphConv(d_in->d_hidden), L_GAT-1 multi-head GAT layers, single-head GAT to d_out.
// gat mode:       L_GAT-1 multi-head GAT layers starting from d_in, single-head GAT to d_out.
class GatStack {
 public:
  GatStack(GatStackConfig config, ParameterStore& store, const std::string& prefix = "gat");

  const GatStackConfig& config() const { return config_; }
  const std::vector<GatLayerParams>& layers() const { return layers_; }

  // Returns [|V| x d_out]. `trace`, if given, receives each GAT layer's output and attention.
  Tensor forward(const PatchGraph& graph, const Tensor& x, std::vector<GatAttentionOutput>* trace = nullptr) const;
  Tensor forward(const PatchGraph& graph, std::vector<GatAttentionOutput>* trace = nullptr) const {
    return forward(graph, graph.node_features, trace);
  }

 private:
  GatStackConfig config_;
  Tensor conv_weight_;
  std::vector<GatLayerParams> layers_;
};

}  // namespace sagvit
