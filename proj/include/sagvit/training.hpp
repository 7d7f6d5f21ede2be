#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sagvit/model.hpp"

namespace sagvit {

struct OptimSpec {
  double lr0 = 0.001;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double warmup_epochs = 10;
  double total_epochs = 128;
  double clip_norm = 1.0;
  std::size_t batch_size = 128;
  bool decoupled_weight_decay = true;

  void validate() const;
};

struct TrainState {
  long step = 0;
  std::size_t epoch = 0;
  std::vector<Eigen::VectorXd> first_moment;
  std::vector<Eigen::VectorXd> second_moment;
  std::uint64_t seed = 0;
  double best_macro_f1 = -1.0;
  std::size_t best_epoch = 0;
  std::vector<Eigen::VectorXd> best_parameters;  // snapshot at best_macro_f1
};

// Linear warmup to lr0, then cosine decay to 0 at total_epochs.
double lr_at(double epoch, const OptimSpec& spec);

// Adam with bias correction. Decoupled mode shrinks p by lr*wd before the update;
// otherwise wd*p is folded into the gradient.
void adam_step(TrainState& state, const OptimSpec& spec, ParameterStore& params, double lr);

double global_grad_norm(const ParameterStore& params);
// Rescales all gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_gradients(ParameterStore& params, double max_norm);
double clip_gradients(std::span<Eigen::VectorXd> grads, double max_norm);

double macro_f1(std::span<const int> preds, std::span<const int> labels, std::size_t classes);
double micro_f1(std::span<const int> preds, std::span<const int> labels, std::size_t classes);
double accuracy(std::span<const int> preds, std::span<const int> labels);

struct MetricsReport {
  std::size_t epoch = 0;
  double loss = 0.0;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  double throughput = 0.0;  // images / second
  double seconds = 0.0;
};

double throughput(std::size_t images, double seconds);
// Inference throughput over `images`, excluding the first `warmup_batches` batches from timing.
double measure_throughput(const SagVitModel& model, std::span<const Image> images, std::size_t batch_size,
                          std::size_t warmup_batches);

struct ModelStats {
  std::size_t param_count = 0;
  double param_count_millions = 0.0;
  double flops = 0.0;
  double flops_giga = 0.0;
};

std::size_t count_params(const ParameterStore& params);
// Analytic forward FLOPs for one image: 2mnk per product, 2*Cout*Cin*k^2*H*W per convolution,
// graph aggregations as sparse products; elementwise work is not counted.
double estimate_flops(const ModelConfig& config);
// Sum of FLOP annotations on the tape of one forward pass.
double tape_flops(const SagVitModel& model, const Image& image);
ModelStats model_stats(const SagVitModel& model);

int label_of(const Image& image);
double sample_loss(const SagVitModel& model, const Image& image);
// Mean cross-entropy over `images`, accumulated in order.
double dataset_loss(const SagVitModel& model, std::span<const Image> images);
std::vector<int> predict(const SagVitModel& model, std::span<const Image> images);

// Loss over the (alpha, beta) grid in [-radius, radius]^2 along two seeded, filter-normalized
// random directions. Parameters are restored bitwise afterwards.
Tensor loss_landscape_scan(SagVitModel& model, std::span<const Image> batch, std::size_t grid, double radius,
                           std::uint64_t seed);

struct TrainOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 0;     // 0: SAGVIT_THREADS or hardware concurrency
  std::size_t chunk_size = 8;  // samples per deterministic gradient chunk
  std::optional<double> target_macro_f1;  // stop once an epoch reaches it
  std::function<void(const MetricsReport&)> on_epoch;
};

struct TrainResult {
  TrainState state;
  std::vector<MetricsReport> history;
};

TrainResult train_loop(SagVitModel& model, std::span<const Image> dataset, const OptimSpec& spec,
                       const TrainOptions& options = {});

std::size_t default_thread_count();

}  // namespace sagvit
