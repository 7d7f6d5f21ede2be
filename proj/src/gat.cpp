#include "sagvit/gat.hpp"

#include <cmath>
#include <limits>

#include "sagvit/ops.hpp"

namespace sagvit {

Neighborhoods make_neighborhoods(const PatchGraph& graph, bool self_loops) {
  Neighborhoods n;
  n.num_nodes = graph.num_nodes;
  std::vector<std::vector<std::pair<std::size_t, double>>> lists(graph.num_nodes);
  for (const auto& e : graph.edges) lists.at(e.src).emplace_back(e.dst, std::log(e.weight));
  n.offsets.reserve(graph.num_nodes + 1);
  n.offsets.push_back(0);
  for (std::size_t u = 0; u < graph.num_nodes; ++u) {
    if (self_loops) {
      n.nodes.push_back(u);
      n.log_weights.push_back(0.0);
    }
    for (const auto& [v, lw] : lists[u]) {
      n.nodes.push_back(v);
      n.log_weights.push_back(lw);
    }
    n.offsets.push_back(n.nodes.size());
  }
  return n;
}

Tensor attention_aggregate(const Tensor& h, const Tensor& attn, const Neighborhoods& nbhd, double leaky_slope,
                           bool use_log_weights, std::vector<double>* alphas) {
  const std::size_t n = h.rows(), f = h.cols();
  if (n != nbhd.num_nodes || attn.size() != 2 * f) {
    throw DimensionError("attention_aggregate: features " + shape_string(h.shape()) + ", attention vector " +
                         shape_string(attn.shape()) + ", " + std::to_string(nbhd.num_nodes) + " nodes");
  }
  const auto H = h.as_matrix();
  const Eigen::Map<const Eigen::VectorXd> a_src(attn.values().data(), static_cast<Eigen::Index>(f));
  const Eigen::Map<const Eigen::VectorXd> a_dst(attn.values().data() + f, static_cast<Eigen::Index>(f));
  const Eigen::VectorXd s_src = H * a_src;
  const Eigen::VectorXd s_dst = H * a_dst;

  const std::size_t m = nbhd.num_entries();
  auto pre = std::make_shared<std::vector<double>>(m);    // e_uv before LeakyReLU
  auto alpha = std::make_shared<std::vector<double>>(m);
  Tensor out(Shape{n, f});
  auto O = out.as_matrix();
  for (std::size_t u = 0; u < n; ++u) {
    const std::size_t begin = nbhd.offsets[u], end = nbhd.offsets[u + 1];
    if (begin == end) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = begin; j < end; ++j) {
      const std::size_t v = nbhd.nodes[j];
      const double e = s_src[static_cast<Eigen::Index>(u)] + s_dst[static_cast<Eigen::Index>(v)];
      (*pre)[j] = e;
      double z = e > 0.0 ? e : leaky_slope * e;
      if (use_log_weights) z += nbhd.log_weights[j];
      (*alpha)[j] = z;
      mx = std::max(mx, z);
    }
    double total = 0.0;
    for (std::size_t j = begin; j < end; ++j) {
      (*alpha)[j] = std::exp((*alpha)[j] - mx);
      total += (*alpha)[j];
    }
    for (std::size_t j = begin; j < end; ++j) {
      (*alpha)[j] /= total;
      O.row(static_cast<Eigen::Index>(u)) += (*alpha)[j] * H.row(static_cast<Eigen::Index>(nbhd.nodes[j]));
    }
  }
  if (alphas) *alphas = *alpha;

  auto hs = h.storage(), as = attn.storage();
  auto csr = std::make_shared<Neighborhoods>(nbhd);
  const double flops = 4.0 * static_cast<double>(n * f) + 2.0 * static_cast<double>(m * f);
  return record_op(
      "gat_aggregate", {h, attn}, out,
      [hs, as, csr, pre, alpha, n, f, leaky_slope](const Eigen::VectorXd& g) {
        const ConstMatrixMap G(g.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
        const ConstMatrixMap Hm(hs->data.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
        const Eigen::Map<const Eigen::VectorXd> a_s(as->data.data(), static_cast<Eigen::Index>(f));
        const Eigen::Map<const Eigen::VectorXd> a_d(as->data.data() + f, static_cast<Eigen::Index>(f));
        RowMatrix dH = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
        Eigen::VectorXd ds_src = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        Eigen::VectorXd ds_dst = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        std::vector<double> dalpha;
        for (std::size_t u = 0; u < n; ++u) {
          const std::size_t begin = csr->offsets[u], end = csr->offsets[u + 1];
          if (begin == end) continue;
          const auto gu = G.row(static_cast<Eigen::Index>(u));
          dalpha.assign(end - begin, 0.0);
          double weighted = 0.0;
          for (std::size_t j = begin; j < end; ++j) {
            const auto v = static_cast<Eigen::Index>(csr->nodes[j]);
            dH.row(v) += (*alpha)[j] * gu;
            dalpha[j - begin] = gu.dot(Hm.row(v));
            weighted += (*alpha)[j] * dalpha[j - begin];
          }
          for (std::size_t j = begin; j < end; ++j) {
            const double dz = (*alpha)[j] * (dalpha[j - begin] - weighted);
            const double de = (*pre)[j] > 0.0 ? dz : leaky_slope * dz;
            ds_src[static_cast<Eigen::Index>(u)] += de;
            ds_dst[static_cast<Eigen::Index>(csr->nodes[j])] += de;
          }
        }
        if (hs->requires_grad) {
          dH += ds_src * a_s.transpose() + ds_dst * a_d.transpose();
          accumulate_grad(hs, Eigen::Map<const Eigen::VectorXd>(dH.data(), dH.size()));
        }
        if (as->requires_grad) {
          Eigen::VectorXd da(static_cast<Eigen::Index>(2 * f));
          da.head(static_cast<Eigen::Index>(f)) = Hm.transpose() * ds_src;
          da.tail(static_cast<Eigen::Index>(f)) = Hm.transpose() * ds_dst;
          accumulate_grad(as, da);
        }
      },
      flops);
}

Tensor neighbor_mean(const Tensor& x, const Neighborhoods& nbhd) {
  const std::size_t n = x.rows(), d = x.cols();
  if (n != nbhd.num_nodes) throw DimensionError("neighbor_mean: node count mismatch");
  Tensor out(Shape{n, d});
  auto O = out.as_matrix();
  const auto X = x.as_matrix();
  for (std::size_t u = 0; u < n; ++u) {
    const std::size_t deg = nbhd.degree(u);
    if (deg == 0) continue;
    for (std::size_t j = nbhd.offsets[u]; j < nbhd.offsets[u + 1]; ++j) {
      O.row(static_cast<Eigen::Index>(u)) += X.row(static_cast<Eigen::Index>(nbhd.nodes[j]));
    }
    O.row(static_cast<Eigen::Index>(u)) /= static_cast<double>(deg);
  }
  auto xs = x.storage();
  auto csr = std::make_shared<Neighborhoods>(nbhd);
  return record_op(
      "neighbor_mean", {x}, out,
      [xs, csr, n, d](const Eigen::VectorXd& g) {
        const ConstMatrixMap G(g.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
        RowMatrix dx = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
        for (std::size_t u = 0; u < n; ++u) {
          const std::size_t deg = csr->degree(u);
          if (deg == 0) continue;
          for (std::size_t j = csr->offsets[u]; j < csr->offsets[u + 1]; ++j) {
            dx.row(static_cast<Eigen::Index>(csr->nodes[j])) += G.row(static_cast<Eigen::Index>(u)) / static_cast<double>(deg);
          }
        }
        accumulate_grad(xs, Eigen::Map<const Eigen::VectorXd>(dx.data(), dx.size()));
      },
      2.0 * static_cast<double>(nbhd.num_entries() * d));
}

GatLayerParams make_gat_layer(ParameterStore& store, const std::string& prefix, std::size_t in_dim,
                              std::size_t head_dim, std::size_t heads, double leaky_slope, bool self_loops,
                              bool use_edge_weight_bias) {
  GatLayerParams p;
  p.leaky_slope = leaky_slope;
  p.self_loops = self_loops;
  p.use_edge_weight_bias = use_edge_weight_bias;
  for (std::size_t i = 0; i < heads; ++i) {
    const std::string base = prefix + ".head" + std::to_string(i);
    p.weights.push_back(store.create(base + ".W", Shape{head_dim, in_dim}, Init::xavier_uniform, in_dim, head_dim));
    p.attention.push_back(store.create(base + ".a", Shape{2 * head_dim}, Init::xavier_uniform, 2 * head_dim, 1));
  }
  return p;
}

GatAttentionOutput gat_attention(const PatchGraph& graph, const Tensor& x, const GatLayerParams& params) {
  if (params.heads() == 0) throw ConfigError("gat_attention: at least one head required");
  if (x.rank() != 2 || x.rows() != graph.num_nodes || x.cols() != params.in_dim()) {
    throw DimensionError("gat_attention: features " + shape_string(x.shape()) + " for " +
                         std::to_string(graph.num_nodes) + " nodes and input width " +
                         std::to_string(params.in_dim()));
  }
  GatAttentionOutput result;
  result.neighborhoods = make_neighborhoods(graph, params.self_loops);
  result.alphas.resize(params.heads());
  std::vector<Tensor> heads;
  heads.reserve(params.heads());
  for (std::size_t i = 0; i < params.heads(); ++i) {
    Tensor projected = linear(x, params.weights[i]);
    Tensor aggregated = attention_aggregate(projected, params.attention[i], result.neighborhoods, params.leaky_slope,
                                            params.use_edge_weight_bias, &result.alphas[i]);
    heads.push_back(relu(aggregated));
  }
  result.features = heads.size() == 1 ? heads.front() : concat_cols(heads);
  return result;
}

Tensor graph_conv(const PatchGraph& graph, const Tensor& x, const Tensor& weight) {
  return linear(neighbor_mean(x, make_neighborhoods(graph, true)), weight);
}

void GatStackConfig::validate() const {
  if (layers < 1) throw ConfigError("gat.layers must be >= 1");
  if (heads < 1) throw ConfigError("gat.heads must be >= 1");
  if (d_in < 1 || d_hidden < 1 || d_out < 1) throw ConfigError("gat dimensions must be positive");
  if (layers > 1 && d_hidden % heads != 0) {
    throw ConfigError("gat.hidden=" + std::to_string(d_hidden) + " must be divisible by gat.heads=" +
                      std::to_string(heads));
  }
  if (leaky_slope < 0.0) throw ConfigError("gat.leaky_slope must be non-negative");
}

GatStack::GatStack(GatStackConfig config, ParameterStore& store, const std::string& prefix)
    : config_(std::move(config)) {
  config_.validate();
  std::size_t width = config_.d_in;
  if (config_.first_layer == FirstLayer::graphconv) {
    conv_weight_ = store.create(prefix + ".graphconv.weight", Shape{config_.d_hidden, config_.d_in},
                                Init::xavier_uniform, config_.d_in, config_.d_hidden);
    width = config_.d_hidden;
  }
  for (std::size_t l = 0; l + 1 < config_.layers; ++l) {
    layers_.push_back(make_gat_layer(store, prefix + ".layer" + std::to_string(l), width,
                                     config_.d_hidden / config_.heads, config_.heads, config_.leaky_slope,
                                     config_.self_loops, config_.use_edge_weight_bias));
    width = config_.d_hidden;
  }
  layers_.push_back(make_gat_layer(store, prefix + ".layer" + std::to_string(config_.layers - 1), width,
                                   config_.d_out, 1, config_.leaky_slope, config_.self_loops,
                                   config_.use_edge_weight_bias));
}

Tensor GatStack::forward(const PatchGraph& graph, const Tensor& x, std::vector<GatAttentionOutput>* trace) const {
  Tensor h = x;
  if (config_.first_layer == FirstLayer::graphconv) h = graph_conv(graph, h, conv_weight_);
  for (const auto& layer : layers_) {
    // Each head already applies ReLU, so the stack's inter-layer ReLU is implied.
    GatAttentionOutput out = gat_attention(graph, h, layer);
    h = out.features;
    if (trace) trace->push_back(std::move(out));
  }
  return h;
}

}  // namespace sagvit
