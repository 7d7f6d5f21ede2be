#include "sagvit/backbone.hpp"

#include "sagvit/ops.hpp"
#include "sagvit/sgt.hpp"

namespace sagvit {

BackboneConfig BackboneConfig::desk_default(std::size_t in_channels) {
  BackboneConfig cfg;
  cfg.in_channels = in_channels;
  cfg.layers = {{16, 3, 2, 1, Activation::relu}, {32, 3, 2, 1, Activation::relu}, {64, 3, 1, 1, Activation::relu}};
  return cfg;
}

std::size_t BackboneConfig::total_stride() const {
  std::size_t s = 1;
  for (const auto& l : layers) s *= l.stride;
  return s;
}

std::size_t BackboneConfig::out_channels() const {
  return layers.empty() ? in_channels : layers.back().out_channels;
}

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (kernel == 0 || kernel > extent + 2 * padding) {
    throw ConfigError("conv2d: kernel " + std::to_string(kernel) + " does not fit extent " + std::to_string(extent) +
                      " with padding " + std::to_string(padding));
  }
  return (extent + 2 * padding - kernel) / stride + 1;
}

void BackboneConfig::validate(std::size_t height, std::size_t width) const {
  const std::size_t s = total_stride();
  if (s == 0 || height % s != 0 || width % s != 0) {
    throw ConfigError("backbone: input " + std::to_string(height) + "x" + std::to_string(width) +
                      " not divisible by total stride " + std::to_string(s));
  }
  std::size_t h = height, w = width;
  for (const auto& l : layers) {
    if (l.out_channels == 0) throw ConfigError("backbone: layer with zero output channels");
    h = conv_output_extent(h, l.kernel, l.stride, l.padding);
    w = conv_output_extent(w, l.kernel, l.stride, l.padding);
  }
  if (h != height / s || w != width / s) {
    throw ConfigError("backbone: layer stack maps " + std::to_string(height) + "x" + std::to_string(width) + " to " +
                      std::to_string(h) + "x" + std::to_string(w) + ", expected H/s x W/s with s=" +
                      std::to_string(s));
  }
}

namespace {

// Patch matrix [Cin*k*k x Ho*Wo] for x[Cin x H x W].
RowMatrix im2col(const double* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                 std::size_t pad, std::size_t ho, std::size_t wo) {
  RowMatrix cols = RowMatrix::Zero(static_cast<Eigen::Index>(cin * k * k), static_cast<Eigen::Index>(ho * wo));
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = cols.row(static_cast<Eigen::Index>((c * k + ki) * k + kj)).data();
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            row[oy * wo + ox] = x[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const RowMatrix& cols, double* dx, std::size_t cin, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo) {
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols.row(static_cast<Eigen::Index>((c * k + ki) * k + kj)).data();
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            dx[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, std::size_t stride, std::size_t padding) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0) || weight.dim(2) != weight.dim(3)) {
    throw DimensionError("conv2d: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
  }
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  const std::size_t ho = conv_output_extent(h, k, stride, padding);
  const std::size_t wo = conv_output_extent(w, k, stride, padding);
  auto cols = std::make_shared<RowMatrix>(im2col(x.values().data(), cin, h, w, k, stride, padding, ho, wo));
  Tensor out(Shape{cout, ho, wo});
  const ConstMatrixMap W(weight.values().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cin * k * k));
  MatrixMap(out.values().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(ho * wo)).noalias() =
      W * *cols;
  auto xs = x.storage(), ws = weight.storage();
  const double flops = 2.0 * static_cast<double>(cout * cin * k * k * ho * wo);
  return record_op(
      "conv2d", {x, weight}, out,
      [xs, ws, cols, cin, h, w, cout, k, stride, padding, ho, wo](const Eigen::VectorXd& g) {
        const ConstMatrixMap G(g.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(ho * wo));
        const ConstMatrixMap Wm(ws->data.data(), static_cast<Eigen::Index>(cout),
                                static_cast<Eigen::Index>(cin * k * k));
        if (ws->requires_grad) {
          RowMatrix dw = G * cols->transpose();
          accumulate_grad(ws, Eigen::Map<const Eigen::VectorXd>(dw.data(), dw.size()));
        }
        if (xs->requires_grad) {
          RowMatrix dcols = Wm.transpose() * G;
          Eigen::VectorXd dx = Eigen::VectorXd::Zero(xs->data.size());
          col2im(dcols, dx.data(), cin, h, w, k, stride, padding, ho, wo);
          accumulate_grad(xs, dx);
        }
      },
      flops);
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  Tensor y = conv2d(x, weight, stride, padding);
  const std::size_t cout = y.dim(0), hw = y.dim(1) * y.dim(2);
  if (bias.size() != cout) throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " for " +
                                                std::to_string(cout) + " output channels");
  Tensor out(y.shape());
  MatrixMap(out.values().data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw)) =
      y.values().reshaped<Eigen::RowMajor>(static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw)).colwise() +
      bias.values();
  auto ys = y.storage(), bs = bias.storage();
  return record_op("channel_bias", {y, bias}, out, [ys, bs, cout, hw](const Eigen::VectorXd& g) {
    accumulate_grad(ys, g);
    if (bs->requires_grad) {
      accumulate_grad(bs, ConstMatrixMap(g.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(hw))
                              .rowwise()
                              .sum());
    }
  });
}

Backbone::Backbone(BackboneConfig config, ParameterStore& store, const std::string& prefix)
    : config_(std::move(config)) {
  std::size_t cin = config_.in_channels;
  for (std::size_t i = 0; i < config_.layers.size(); ++i) {
    const auto& l = config_.layers[i];
    const std::string base = prefix + ".conv" + std::to_string(i);
    weights_.push_back(store.create(base + ".weight", Shape{l.out_channels, cin, l.kernel, l.kernel}, Init::he_normal,
                                    cin * l.kernel * l.kernel));
    biases_.push_back(store.create(base + ".bias", Shape{l.out_channels}, Init::zeros));
    cin = l.out_channels;
  }
}

FeatureMap Backbone::extract(const Image& image) const {
  if (image.channels() != config_.in_channels) {
    throw DimensionError("backbone: image has " + std::to_string(image.channels()) + " channels, expected " +
                         std::to_string(config_.in_channels));
  }
  config_.validate(image.height(), image.width());
  Tensor x = image.data;
  for (std::size_t i = 0; i < config_.layers.size(); ++i) {
    const auto& l = config_.layers[i];
    x = conv2d(x, weights_[i], biases_[i], l.stride, l.padding);
    if (l.activation == Activation::relu) x = relu(x);
  }
  return FeatureMap{x, config_.total_stride()};
}

FeatureMap load_feature_map(const std::filesystem::path& path, std::size_t stride) {
  Tensor t = read_sgt(path);
  if (t.rank() != 3) {
    throw FormatError(path.string() + ": feature map must be rank 3, got shape " + shape_string(t.shape()));
  }
  if (stride == 0) throw ConfigError("feature map stride must be positive");
  return FeatureMap{t, stride};
}

void save_feature_map(const std::filesystem::path& path, const FeatureMap& map) { write_sgt(path, map.data); }

}  // namespace sagvit
