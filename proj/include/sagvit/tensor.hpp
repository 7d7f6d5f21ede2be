#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sagvit/errors.hpp"

namespace sagvit {

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorStorage {
  Shape shape;
  Eigen::VectorXd data;
  Eigen::VectorXd grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
};

// Dense row-major double tensor. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Eigen::VectorXd data);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }
  static Tensor matrix(const RowMatrix& m);

  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t size() const { return static_cast<std::size_t>(storage_->data.size()); }
  std::size_t dim(std::size_t axis) const;
  std::size_t rows() const;
  std::size_t cols() const;

  Eigen::VectorXd& values() { return storage_->data; }
  const Eigen::VectorXd& values() const { return storage_->data; }
  double operator[](std::size_t i) const { return storage_->data[static_cast<Eigen::Index>(i)]; }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  // Rank-2 views over the row-major buffer.
  MatrixMap as_matrix();
  ConstMatrixMap as_matrix() const;

  bool requires_grad() const { return storage_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return storage_->grad.size() > 0; }
  const Eigen::VectorXd& grad() const { return storage_->grad; }
  Eigen::VectorXd& mutable_grad();
  void zero_grad();
  void clear_grad() { storage_->grad.resize(0); }

  Tensor clone() const;
  Tensor detach() const;
  Tensor reshaped(Shape shape) const;  // differentiable

  bool shares_storage(const Tensor& other) const { return storage_ == other.storage_; }
  const std::shared_ptr<TensorStorage>& storage() const { return storage_; }

 private:
  std::shared_ptr<TensorStorage> storage_;
};

// Adjoint callback: receives the output gradient and accumulates into inputs.
using BackwardFn = std::function<void(const Eigen::VectorXd& output_grad)>;

struct TapeRecord {
  std::string op;
  std::vector<std::shared_ptr<TensorStorage>> inputs;
  std::shared_ptr<TensorStorage> output;
  BackwardFn backward;
  double flops = 0.0;
};

// Ordered log of differentiable operations executed while the tape is active.
class Tape {
 public:
  void record(TapeRecord record) { records_.push_back(std::move(record)); }
  std::span<const TapeRecord> records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays adjoints in reverse order.
  void backward(const Tensor& loss);

  // Sum of the FLOP annotations over all recorded operations.
  double counted_flops() const;

 private:
  std::vector<TapeRecord> records_;
};

// Makes a tape active on the current thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Builds the result of an operation and records it on the active tape when any
// input participates in differentiation. `backward` may be empty for
// non-differentiable results.
Tensor record_op(std::string_view op, std::initializer_list<Tensor> inputs, Tensor result,
                 BackwardFn backward, double flops = 0.0);
Tensor record_op(std::string_view op, std::span<const Tensor> inputs, Tensor result,
                 BackwardFn backward, double flops = 0.0);

// Adds `delta` into the gradient buffer of `t` if it requires a gradient.
void accumulate_grad(const std::shared_ptr<TensorStorage>& t, const Eigen::Ref<const Eigen::VectorXd>& delta);

}  // namespace sagvit
