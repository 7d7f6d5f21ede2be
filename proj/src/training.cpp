#include "sagvit/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

#include "sagvit/ops.hpp"

namespace sagvit {

void OptimSpec::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("optim.lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("optim.weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optim.beta1/beta2 must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optim.eps must be positive");
  if (!(total_epochs >= 1.0)) throw ConfigError("optim.epochs must be >= 1");
  if (warmup_epochs < 0.0 || warmup_epochs > total_epochs) {
    throw ConfigError("optim.warmup_epochs must lie in [0, epochs]");
  }
  if (!(clip_norm > 0.0)) throw ConfigError("optim.clip_norm must be positive");
  if (batch_size == 0) throw ConfigError("optim.batch_size must be positive");
}

double lr_at(double epoch, const OptimSpec& spec) {
  if (epoch < spec.warmup_epochs) return spec.lr0 * epoch / spec.warmup_epochs;
  const double span = spec.total_epochs - spec.warmup_epochs;
  if (span <= 0.0) return spec.lr0;
  const double progress = std::clamp((epoch - spec.warmup_epochs) / span, 0.0, 1.0);
  return spec.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adam_step(TrainState& state, const OptimSpec& spec, ParameterStore& params, double lr) {
  auto& list = params.parameters();
  if (state.first_moment.size() != list.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const auto& p : list) {
      state.first_moment.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.tensor.size())));
      state.second_moment.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.tensor.size())));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(spec.beta1, t);
  const double correction2 = 1.0 - std::pow(spec.beta2, t);
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto& value = list[i].tensor.values();
    Eigen::VectorXd grad = list[i].tensor.has_grad() ? list[i].tensor.grad()
                                                     : Eigen::VectorXd::Zero(value.size());
    if (spec.weight_decay != 0.0) {
      if (spec.decoupled_weight_decay) {
        value -= lr * spec.weight_decay * value;
      } else {
        grad += spec.weight_decay * value;
      }
    }
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = spec.beta1 * m + (1.0 - spec.beta1) * grad;
    v = spec.beta2 * v + (1.0 - spec.beta2) * grad.cwiseProduct(grad);
    value.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + spec.eps);
  }
}

double global_grad_norm(const ParameterStore& params) {
  double sq = 0.0;
  for (const auto& p : params.parameters()) {
    if (p.tensor.has_grad()) sq += p.tensor.grad().squaredNorm();
  }
  return std::sqrt(sq);
}

double clip_gradients(std::span<Eigen::VectorXd> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) g *= factor;
  }
  return norm;
}

double clip_gradients(ParameterStore& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params.parameters()) {
      if (p.tensor.has_grad()) p.tensor.mutable_grad() *= factor;
    }
  }
  return norm;
}

namespace {

void check_prediction_inputs(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw ContractError("predictions and labels differ in length");
  if (preds.empty()) throw ContractError("F1 of an empty prediction set is undefined");
}

}  // namespace

double macro_f1(std::span<const int> preds, std::span<const int> labels, std::size_t classes) {
  check_prediction_inputs(preds, labels);
  std::vector<double> tp(classes, 0.0), fp(classes, 0.0), fn(classes, 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto p = static_cast<std::size_t>(preds[i]), l = static_cast<std::size_t>(labels[i]);
    if (p >= classes || l >= classes) throw ContractError("class index outside [0, C)");
    if (p == l) {
      tp[p] += 1;
    } else {
      fp[p] += 1;
      fn[l] += 1;
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double precision = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    const double recall = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    total += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return total / static_cast<double>(classes);
}

double micro_f1(std::span<const int> preds, std::span<const int> labels, std::size_t classes) {
  check_prediction_inputs(preds, labels);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (static_cast<std::size_t>(preds[i]) >= classes || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ContractError("class index outside [0, C)");
    }
  }
  // Single-label: micro precision == micro recall == accuracy.
  return accuracy(preds, labels);
}

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_prediction_inputs(preds, labels);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double throughput(std::size_t images, double seconds) {
  if (images == 0) throw ContractError("throughput needs at least one image");
  if (!(seconds > 0.0)) throw ContractError("throughput needs a positive duration");
  return static_cast<double>(images) / seconds;
}

double measure_throughput(const SagVitModel& model, std::span<const Image> images, std::size_t batch_size,
                          std::size_t warmup_batches) {
  if (batch_size == 0) throw ContractError("batch size must be positive");
  const std::size_t batches = (images.size() + batch_size - 1) / batch_size;
  if (batches <= warmup_batches) throw ContractError("no timed batches remain after warmup");
  std::size_t timed_images = 0;
  double seconds = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    const auto batch = images.subspan(b * batch_size, std::min(batch_size, images.size() - b * batch_size));
    const auto start = std::chrono::steady_clock::now();
    for (const auto& img : batch) (void)model.logits(img);
    const auto stop = std::chrono::steady_clock::now();
    if (b >= warmup_batches) {
      timed_images += batch.size();
      seconds += std::chrono::duration<double>(stop - start).count();
    }
  }
  return throughput(timed_images, std::max(seconds, 1e-12));
}

std::size_t count_params(const ParameterStore& params) { return params.element_count(); }

namespace {

std::size_t directed_edge_count(const ModelConfig& c) {
  const PatchGrid g = c.patch_grid();
  if (c.neighborhood.mode == Connectivity::knn) return g.num_patches() * c.neighborhood.k;
  const std::size_t r = g.rows, k = g.cols;
  const std::size_t undirected = r * (k - 1) + (r - 1) * k + 2 * (r - 1) * (k - 1);
  return 2 * undirected;
}

}  // namespace

double estimate_flops(const ModelConfig& config) {
  const ModelConfig c = config.resolved();
  double flops = 0.0;
  if (c.uses_backbone()) {
    std::size_t h = c.image_height, w = c.image_width, cin = c.in_channels;
    for (const auto& l : c.backbone.layers) {
      h = conv_output_extent(h, l.kernel, l.stride, l.padding);
      w = conv_output_extent(w, l.kernel, l.stride, l.padding);
      flops += 2.0 * static_cast<double>(l.out_channels * cin * l.kernel * l.kernel * h * w);
      cin = l.out_channels;
    }
  }
  const auto n = static_cast<double>(c.num_nodes());
  if (c.uses_gat()) {
    const auto edges = static_cast<double>(directed_edge_count(c));
    const double entries = edges + (c.gat.self_loops ? n : 0.0);
    auto width = static_cast<double>(c.gat.d_in);
    if (c.gat.first_layer == FirstLayer::graphconv) {
      flops += 2.0 * (edges + n) * width + 2.0 * n * width * static_cast<double>(c.gat.d_hidden);
      width = static_cast<double>(c.gat.d_hidden);
    }
    auto gat_layer = [&](double heads, double head_dim) {
      flops += heads * (2.0 * n * width * head_dim + 4.0 * n * head_dim + 2.0 * entries * head_dim);
    };
    for (std::size_t l = 0; l + 1 < c.gat.layers; ++l) {
      gat_layer(static_cast<double>(c.gat.heads), static_cast<double>(c.gat.d_hidden / c.gat.heads));
      width = static_cast<double>(c.gat.d_hidden);
    }
    gat_layer(1.0, static_cast<double>(c.gat.d_out));
  }
  const auto tokens = static_cast<double>(c.num_tokens());
  if (c.has_bridge()) {
    flops += 2.0 * tokens * static_cast<double>(c.bridge_in_dim()) * static_cast<double>(c.transformer.d_model);
  }
  if (c.uses_transformer()) {
    const auto d = static_cast<double>(c.transformer.d_model);
    const auto ff = static_cast<double>(c.transformer.d_ff);
    const double per_block = 8.0 * tokens * d * d + 4.0 * tokens * tokens * d + 4.0 * tokens * d * ff;
    flops += per_block * static_cast<double>(c.transformer.layers);
  }
  flops += 2.0 * static_cast<double>(c.head_input_dim() * c.num_classes);
  return flops;
}

double tape_flops(const SagVitModel& model, const Image& image) {
  Tape tape;
  TapeScope scope(tape);
  (void)model.logits(image);
  return tape.counted_flops();
}

ModelStats model_stats(const SagVitModel& model) {
  ModelStats s;
  s.param_count = count_params(model.parameters());
  s.param_count_millions = static_cast<double>(s.param_count) / 1e6;
  s.flops = estimate_flops(model.config());
  s.flops_giga = s.flops / 1e9;
  return s;
}

int label_of(const Image& image) {
  if (!image.label) throw ContractError("image has no label");
  return *image.label;
}

double sample_loss(const SagVitModel& model, const Image& image) {
  const int label = label_of(image);
  return cross_entropy(model.logits(image), std::span<const int>(&label, 1)).item();
}

double dataset_loss(const SagVitModel& model, std::span<const Image> images) {
  if (images.empty()) throw ContractError("loss over an empty dataset");
  double total = 0.0;
  for (const auto& img : images) total += sample_loss(model, img);
  return total / static_cast<double>(images.size());
}

std::vector<int> predict(const SagVitModel& model, std::span<const Image> images) {
  std::vector<int> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(argmax(model.logits(img)));
  return out;
}

Tensor loss_landscape_scan(SagVitModel& model, std::span<const Image> batch, std::size_t grid, double radius,
                           std::uint64_t seed) {
  if (grid == 0 || grid % 2 == 0) {
    throw ContractError("loss landscape grid must be odd so the centre is the unperturbed model, got " +
                        std::to_string(grid));
  }
  if (radius < 0.0) throw ContractError("loss landscape radius must be non-negative");
  auto& params = model.parameters().parameters();
  std::vector<Eigen::VectorXd> origin, dir1, dir2;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](const Eigen::VectorXd& theta) {
    Eigen::VectorXd d(theta.size());
    for (auto& x : d) x = normal(rng);
    const double dn = d.norm();
    // Filter normalization: each tensor's direction gets that tensor's norm.
    if (dn > 0.0) d *= theta.norm() / dn;
    return d;
  };
  for (const auto& p : params) origin.push_back(p.tensor.values());
  for (const auto& theta : origin) dir1.push_back(draw(theta));
  for (const auto& theta : origin) dir2.push_back(draw(theta));

  Tensor surface(Shape{grid, grid});
  const double half = static_cast<double>(grid - 1);
  auto coordinate = [&](std::size_t i) {
    return grid == 1 ? 0.0 : radius * (2.0 * static_cast<double>(i) - half) / half;
  };
  for (std::size_t i = 0; i < grid; ++i) {
    for (std::size_t j = 0; j < grid; ++j) {
      const double alpha = coordinate(i), beta = coordinate(j);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto& v = params[p].tensor.values();
        v = origin[p];
        if (alpha != 0.0) v += alpha * dir1[p];
        if (beta != 0.0) v += beta * dir2[p];
      }
      surface.values()[static_cast<Eigen::Index>(i * grid + j)] = dataset_loss(model, batch);
    }
  }
  for (std::size_t p = 0; p < params.size(); ++p) params[p].tensor.values() = origin[p];
  return surface;
}

std::size_t default_thread_count() {
  if (const char* env = std::getenv("SAGVIT_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

struct ChunkResult {
  std::vector<Eigen::VectorXd> grads;
  double loss_sum = 0.0;
  std::vector<int> preds;
  bool finite = true;
};

// Forward/backward over one chunk on a replica; loss terms are pre-scaled by 1/batch.
ChunkResult run_chunk(SagVitModel& replica, std::span<const Image> dataset, std::span<const std::size_t> indices,
                      double batch_scale) {
  ChunkResult r;
  auto& store = replica.parameters();
  for (auto& p : store.parameters()) p.tensor.clear_grad();
  for (std::size_t idx : indices) {
    const Image& img = dataset[idx];
    const int label = label_of(img);
    Tape tape;
    TapeScope scope(tape);
    const Tensor logits = replica.logits(img);
    const Tensor loss = cross_entropy(logits, std::span<const int>(&label, 1));
    r.loss_sum += loss.item();
    r.finite = r.finite && std::isfinite(loss.item());
    r.preds.push_back(argmax(logits));
    tape.backward(scale(loss, batch_scale));
  }
  for (auto& p : store.parameters()) {
    r.grads.push_back(p.tensor.has_grad() ? p.tensor.grad() : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.tensor.size())));
  }
  return r;
}

}  // namespace

TrainResult train_loop(SagVitModel& model, std::span<const Image> dataset, const OptimSpec& spec,
                       const TrainOptions& options) {
  spec.validate();
  if (dataset.empty()) throw ContractError("training dataset is empty");
  const std::size_t classes = model.config().num_classes;
  for (const auto& img : dataset) {
    const int l = label_of(img);
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw ContractError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const std::size_t threads = std::max<std::size_t>(1, options.threads ? options.threads : default_thread_count());
  const std::size_t chunk_size = std::max<std::size_t>(1, options.chunk_size);

  std::vector<std::unique_ptr<SagVitModel>> replicas;
  for (std::size_t t = 0; t < threads; ++t) replicas.push_back(model.replicate());

  TrainResult result;
  TrainState& state = result.state;
  state.seed = options.seed;
  auto& params = model.parameters().parameters();

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(options.seed);
  const std::size_t batch_size = std::min(spec.batch_size, dataset.size());
  const std::size_t batches = (dataset.size() + batch_size - 1) / batch_size;
  const auto epochs = static_cast<std::size_t>(std::ceil(spec.total_epochs));

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::vector<int> preds, labels;
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * batch_size, end = std::min(dataset.size(), begin + batch_size);
      const std::span<const std::size_t> batch(order.data() + begin, end - begin);
      const double batch_scale = 1.0 / static_cast<double>(batch.size());
      const std::size_t chunks = (batch.size() + chunk_size - 1) / chunk_size;
      std::vector<ChunkResult> results(chunks);
      for (auto& r : replicas) r->parameters().copy_values_from(model.parameters());
      auto work = [&](std::size_t worker) {
        for (std::size_t c = worker; c < chunks; c += threads) {
          const std::size_t cb = c * chunk_size;
          results[c] = run_chunk(*replicas[worker], dataset, batch.subspan(cb, std::min(chunk_size, batch.size() - cb)),
                                 batch_scale);
        }
      };
      if (threads == 1 || chunks == 1) {
        work(0);
      } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(threads, chunks); ++t) pool.emplace_back(work, t);
      }
      // Ordered reduction keeps results independent of the thread count.
      for (std::size_t p = 0; p < params.size(); ++p) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params[p].tensor.size()));
        for (const auto& r : results) g += r.grads[p];
        params[p].tensor.mutable_grad() = g;
      }
      bool finite = true;
      for (const auto& r : results) {
        loss_sum += r.loss_sum;
        finite = finite && r.finite;
        preds.insert(preds.end(), r.preds.begin(), r.preds.end());
      }
      for (std::size_t idx : batch) labels.push_back(label_of(dataset[idx]));
      if (!finite) {
        throw NonFiniteLossError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(state.step + 1),
                                 state.step + 1);
      }
      lr = lr_at(static_cast<double>(epoch) + static_cast<double>(b + 1) / static_cast<double>(batches), spec);
      clip_gradients(model.parameters(), spec.clip_norm);
      adam_step(state, spec, model.parameters(), lr);
    }
    state.epoch = epoch + 1;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    MetricsReport report;
    report.epoch = epoch + 1;
    report.loss = loss_sum / static_cast<double>(dataset.size());
    report.macro_f1 = macro_f1(preds, labels, classes);
    report.micro_f1 = micro_f1(preds, labels, classes);
    report.accuracy = accuracy(preds, labels);
    report.lr = lr;
    report.seconds = seconds;
    report.throughput = throughput(dataset.size(), std::max(seconds, 1e-12));
    if (report.macro_f1 > state.best_macro_f1) {
      state.best_macro_f1 = report.macro_f1;
      state.best_epoch = report.epoch;
      state.best_parameters.clear();
      for (const auto& p : params) state.best_parameters.push_back(p.tensor.values());
    }
    result.history.push_back(report);
    if (options.on_epoch) options.on_epoch(report);
    if (options.target_macro_f1 && report.macro_f1 >= *options.target_macro_f1) break;
  }
  for (auto& p : params) p.tensor.clear_grad();
  return result;
}

}  // namespace sagvit
