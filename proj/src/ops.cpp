#include "sagvit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>
#include <limits>

namespace sagvit {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

ConstMatrixMap view(const Eigen::VectorXd& v, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Splits a shape around `axis` into (outer, axis extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(Shape{m, n});
  out.as_matrix().noalias() = a.as_matrix() * b.as_matrix();
  auto as = a.storage(), bs = b.storage();
  return record_op(
      "matmul", {a, b}, out,
      [as, bs, m, k, n](const Eigen::VectorXd& g) {
        auto G = view(g, m, n);
        if (as->requires_grad) {
          RowMatrix da = G * view(bs->data, k, n).transpose();
          accumulate_grad(as, Eigen::Map<const Eigen::VectorXd>(da.data(), da.size()));
        }
        if (bs->requires_grad) {
          RowMatrix db = view(as->data, m, k).transpose() * G;
          accumulate_grad(bs, Eigen::Map<const Eigen::VectorXd>(db.data(), db.size()));
        }
      },
      2.0 * static_cast<double>(m * n * k));
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out(Shape{n, m});
  out.as_matrix() = a.as_matrix().transpose();
  auto as = a.storage();
  return record_op("transpose", {a}, out, [as, m, n](const Eigen::VectorXd& g) {
    RowMatrix d = view(g, n, m).transpose();
    accumulate_grad(as, Eigen::Map<const Eigen::VectorXd>(d.data(), d.size()));
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape(), a.values() + b.values());
  auto as = a.storage(), bs = b.storage();
  return record_op("add", {a, b}, out, [as, bs](const Eigen::VectorXd& g) {
    accumulate_grad(as, g);
    accumulate_grad(bs, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape(), a.values() - b.values());
  auto as = a.storage(), bs = b.storage();
  return record_op("sub", {a, b}, out, [as, bs](const Eigen::VectorXd& g) {
    accumulate_grad(as, g);
    if (bs->requires_grad) accumulate_grad(bs, -g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape(), a.values().cwiseProduct(b.values()));
  auto as = a.storage(), bs = b.storage();
  return record_op("mul", {a, b}, out, [as, bs](const Eigen::VectorXd& g) {
    if (as->requires_grad) accumulate_grad(as, g.cwiseProduct(bs->data));
    if (bs->requires_grad) accumulate_grad(bs, g.cwiseProduct(as->data));
  });
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out(a.shape(), a.values() * factor);
  auto as = a.storage();
  return record_op("scale", {a}, out, [as, factor](const Eigen::VectorXd& g) { accumulate_grad(as, g * factor); });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.size() != x.cols()) {
    throw DimensionError("add_row: cannot broadcast " + shape_string(bias.shape()) + " over rows of " +
                         shape_string(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out(x.shape());
  out.as_matrix() = x.as_matrix().rowwise() + bias.values().transpose();
  auto xs = x.storage(), bs = bias.storage();
  return record_op("add_row", {x, bias}, out, [xs, bs, m, n](const Eigen::VectorXd& g) {
    accumulate_grad(xs, g);
    if (bs->requires_grad) accumulate_grad(bs, view(g, m, n).colwise().sum().transpose());
  });
}

Tensor linear(const Tensor& x, const Tensor& weight) {
  if (x.rank() != 2 || weight.rank() != 2 || x.cols() != weight.cols()) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
  }
  const std::size_t m = x.rows(), in = x.cols(), outw = weight.rows();
  Tensor out(Shape{m, outw});
  out.as_matrix().noalias() = x.as_matrix() * weight.as_matrix().transpose();
  auto xs = x.storage(), ws = weight.storage();
  return record_op(
      "linear", {x, weight}, out,
      [xs, ws, m, in, outw](const Eigen::VectorXd& g) {
        auto G = view(g, m, outw);
        if (xs->requires_grad) {
          RowMatrix dx = G * view(ws->data, outw, in);
          accumulate_grad(xs, Eigen::Map<const Eigen::VectorXd>(dx.data(), dx.size()));
        }
        if (ws->requires_grad) {
          RowMatrix dw = G.transpose() * view(xs->data, m, in);
          accumulate_grad(ws, Eigen::Map<const Eigen::VectorXd>(dw.data(), dw.size()));
        }
      },
      2.0 * static_cast<double>(m * in * outw));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_row(linear(x, weight), bias);
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

Tensor leaky_relu(const Tensor& x, double slope) {
  if (slope < 0.0) throw ConfigError("leaky_relu: slope must be non-negative");
  Tensor out(x.shape(), x.values().unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; }));
  auto xs = x.storage();
  return record_op(slope == 0.0 ? "relu" : "leaky_relu", {x}, out, [xs, slope](const Eigen::VectorXd& g) {
    Eigen::VectorXd d = g.binaryExpr(xs->data, [slope](double gi, double v) { return v > 0.0 ? gi : slope * gi; });
    accumulate_grad(xs, d);
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_string(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor out(x.shape());
  const double* in = x.values().data();
  double* y = out.values().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < s.extent; ++a) mx = std::max(mx, in[base + a * s.inner]);
      double total = 0.0;
      for (std::size_t a = 0; a < s.extent; ++a) {
        const double e = std::exp(in[base + a * s.inner] - mx);
        y[base + a * s.inner] = e;
        total += e;
      }
      for (std::size_t a = 0; a < s.extent; ++a) y[base + a * s.inner] /= total;
    }
  }
  auto xs = x.storage(), ys = out.storage();
  return record_op("softmax", {x}, out, [xs, ys, s](const Eigen::VectorXd& g) {
    Eigen::VectorXd d(g.size());
    const double* yv = ys->data.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t a = 0; a < s.extent; ++a) dot += g[base + a * s.inner] * yv[base + a * s.inner];
        for (std::size_t a = 0; a < s.extent; ++a) {
          const std::size_t idx = base + a * s.inner;
          d[idx] = yv[idx] * (g[idx] - dot);
        }
      }
    }
    accumulate_grad(xs, d);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.rank() == 1 ? x.size() : x.cols();
  const std::size_t rows = x.size() / std::max<std::size_t>(d, 1);
  if (d == 0 || gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                         " incompatible with input " + shape_string(x.shape()));
  }
  Tensor out(x.shape());
  auto normalized = std::make_shared<RowMatrix>(rows, d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(rows);
  auto X = view(x.values(), rows, d);
  MatrixMap Y(out.values().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = X.row(static_cast<Eigen::Index>(r));
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<Eigen::Index>(r)] = is;
    normalized->row(static_cast<Eigen::Index>(r)) = (row.array() - mean) * is;
    Y.row(static_cast<Eigen::Index>(r)) = normalized->row(static_cast<Eigen::Index>(r)).cwiseProduct(gain.values().transpose()) +
                                          bias.values().transpose();
  }
  auto xs = x.storage(), gs = gain.storage(), bs = bias.storage();
  return record_op("layer_norm", {x, gain, bias}, out,
                   [xs, gs, bs, normalized, inv_std, rows, d](const Eigen::VectorXd& g) {
                     auto G = view(g, rows, d);
                     if (gs->requires_grad) {
                       Eigen::VectorXd dg = (G.array() * normalized->array()).colwise().sum().transpose();
                       accumulate_grad(gs, dg);
                     }
                     if (bs->requires_grad) accumulate_grad(bs, G.colwise().sum().transpose());
                     if (xs->requires_grad) {
                       RowMatrix dx(rows, d);
                       const double dd = static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const auto ri = static_cast<Eigen::Index>(r);
                         Eigen::RowVectorXd dxhat = G.row(ri).cwiseProduct(gs->data.transpose());
                         const double mean_dxhat = dxhat.sum() / dd;
                         const double mean_dxhat_xhat = dxhat.dot(normalized->row(ri)) / dd;
                         dx.row(ri) = (*inv_std)[ri] *
                                      (dxhat.array() - mean_dxhat - normalized->row(ri).array() * mean_dxhat_xhat).matrix();
                       }
                       accumulate_grad(xs, Eigen::Map<const Eigen::VectorXd>(dx.data(), dx.size()));
                     }
                   });
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::scalar(x.values().sum());
  auto xs = x.storage();
  const auto n = static_cast<Eigen::Index>(x.size());
  return record_op("sum", {x}, out,
                   [xs, n](const Eigen::VectorXd& g) { accumulate_grad(xs, Eigen::VectorXd::Constant(n, g[0])); });
}

Tensor mean_rows(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("mean_rows: expected a matrix, got " + shape_string(x.shape()));
  const std::size_t n = x.rows(), d = x.cols();
  if (n == 0) throw ContractError("mean_rows: cannot pool zero tokens");
  // Summing each column in sorted order makes the result independent of row order, bit for bit.
  const auto X = x.as_matrix();
  Tensor out(Shape{d});
  std::vector<double> column(n);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t r = 0; r < n; ++r) column[r] = X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    std::sort(column.begin(), column.end());
    double total = 0.0;
    for (double v : column) total += v;
    out.values()[static_cast<Eigen::Index>(c)] = total / static_cast<double>(n);
  }
  auto xs = x.storage();
  return record_op("mean_rows", {x}, out, [xs, n](const Eigen::VectorXd& g) {
    RowMatrix dx = (g.transpose() / static_cast<double>(n)).replicate(static_cast<Eigen::Index>(n), 1);
    accumulate_grad(xs, Eigen::Map<const Eigen::VectorXd>(dx.data(), dx.size()));
  });
}

Tensor gather(const Tensor& x, std::span<const std::size_t> indices, Shape shape) {
  if (shape_size(shape) != indices.size()) {
    throw DimensionError("gather: " + std::to_string(indices.size()) + " indices for shape " + shape_string(shape));
  }
  Tensor out(std::move(shape));
  auto idx = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
  for (std::size_t i = 0; i < idx->size(); ++i) {
    if ((*idx)[i] >= x.size()) throw DimensionError("gather: index out of range");
    out.values()[static_cast<Eigen::Index>(i)] = x[(*idx)[i]];
  }
  auto xs = x.storage();
  return record_op("gather", {x}, out, [xs, idx](const Eigen::VectorXd& g) {
    if (!xs->requires_grad) return;
    Eigen::VectorXd d = Eigen::VectorXd::Zero(xs->data.size());
    for (std::size_t i = 0; i < idx->size(); ++i) d[static_cast<Eigen::Index>((*idx)[i])] += g[static_cast<Eigen::Index>(i)];
    accumulate_grad(xs, d);
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row count mismatch " + shape_string(p.shape()));
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out(Shape{m, total});
  auto O = out.as_matrix();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    O.middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(p.cols())) = p.as_matrix();
    offset += p.cols();
  }
  std::vector<std::shared_ptr<TensorStorage>> stores;
  for (const auto& p : parts) stores.push_back(p.storage());
  return record_op("concat_cols", parts, out, [stores, widths, m, total](const Eigen::VectorXd& g) {
    auto G = view(g, m, total);
    std::size_t off = 0;
    for (std::size_t i = 0; i < stores.size(); ++i) {
      if (stores[i]->requires_grad) {
        RowMatrix part = G.middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(widths[i]));
        accumulate_grad(stores[i], Eigen::Map<const Eigen::VectorXd>(part.data(), part.size()));
      }
      off += widths[i];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t m = x.rows(), n = x.cols();
  if (start + count > n) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_string(x.shape()));
  }
  Tensor out(Shape{m, count});
  out.as_matrix() = x.as_matrix().middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count));
  auto xs = x.storage();
  return record_op("slice_cols", {x}, out, [xs, m, n, start, count](const Eigen::VectorXd& g) {
    RowMatrix d = RowMatrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    d.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) = view(g, m, count);
    accumulate_grad(xs, Eigen::Map<const Eigen::VectorXd>(d.data(), d.size()));
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t batch = logits.rows(), classes = logits.cols();
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(batch) +
                         " rows");
  }
  if (batch == 0) throw ContractError("cross_entropy: empty batch");
  auto probs = std::make_shared<RowMatrix>(batch, classes);
  double loss = 0.0;
  auto L = logits.as_matrix();
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ContractError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
    const auto bi = static_cast<Eigen::Index>(b);
    const double mx = L.row(bi).maxCoeff();
    const double lse = mx + std::log((L.row(bi).array() - mx).exp().sum());
    loss += lse - L(bi, label);
    probs->row(bi) = (L.row(bi).array() - lse).exp();
  }
  loss /= static_cast<double>(batch);
  auto ls = logits.storage();
  std::vector<int> labs(labels.begin(), labels.end());
  return record_op("cross_entropy", {logits}, Tensor::scalar(loss),
                   [ls, probs, labs, batch](const Eigen::VectorXd& g) {
                     RowMatrix d = *probs;
                     for (std::size_t b = 0; b < batch; ++b) d(static_cast<Eigen::Index>(b), labs[b]) -= 1.0;
                     d *= g[0] / static_cast<double>(batch);
                     accumulate_grad(ls, Eigen::Map<const Eigen::VectorXd>(d.data(), d.size()));
                   });
}

}  // namespace sagvit
