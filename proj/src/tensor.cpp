#include "sagvit/tensor.hpp"

#include <sstream>

namespace sagvit {

namespace {
thread_local Tape* current_tape = nullptr;
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : Tensor(Shape{0}) {}

Tensor::Tensor(Shape shape) : storage_(std::make_shared<TensorStorage>()) {
  storage_->data = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(shape_size(shape)));
  storage_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, Eigen::VectorXd data) : storage_(std::make_shared<TensorStorage>()) {
  if (static_cast<std::size_t>(data.size()) != shape_size(shape)) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_string(shape));
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(data);
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), Eigen::Map<const Eigen::VectorXd>(values.begin(),
                                                                 static_cast<Eigen::Index>(values.size()))) {}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.values().setConstant(value);
  return t;
}

Tensor Tensor::matrix(const RowMatrix& m) {
  Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.as_matrix() = m;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape()));
  }
  return shape()[axis];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got shape " + shape_string(shape()));
  return shape()[1];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return storage_->data[static_cast<Eigen::Index>(r * cols() + c)];
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return storage_->data[0];
}

MatrixMap Tensor::as_matrix() {
  return MatrixMap(storage_->data.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
}

ConstMatrixMap Tensor::as_matrix() const {
  return ConstMatrixMap(storage_->data.data(), static_cast<Eigen::Index>(rows()),
                        static_cast<Eigen::Index>(cols()));
}

Tensor& Tensor::set_requires_grad(bool flag) {
  storage_->requires_grad = flag;
  return *this;
}

Eigen::VectorXd& Tensor::mutable_grad() {
  if (!has_grad()) storage_->grad = Eigen::VectorXd::Zero(storage_->data.size());
  return storage_->grad;
}

void Tensor::zero_grad() {
  if (has_grad()) storage_->grad.setZero();
}

Tensor Tensor::clone() const {
  Tensor t(shape(), values());
  t.set_requires_grad(requires_grad());
  return t;
}

Tensor Tensor::detach() const { return Tensor(shape(), values()); }

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_size(new_shape) != size()) {
    throw DimensionError("cannot reshape " + shape_string(shape()) + " to " + shape_string(new_shape));
  }
  auto in = storage_;
  return record_op("reshape", {*this}, Tensor(std::move(new_shape), values()),
                   [in](const Eigen::VectorXd& g) { accumulate_grad(in, g); });
}

void accumulate_grad(const std::shared_ptr<TensorStorage>& t, const Eigen::Ref<const Eigen::VectorXd>& delta) {
  if (!t->requires_grad) return;
  if (t->grad.size() == 0) {
    t->grad = delta;
  } else {
    t->grad += delta;
  }
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that does not depend on any differentiable input");
  }
  accumulate_grad(loss.storage(), Eigen::VectorXd::Ones(1));
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.size() == 0 || !it->backward) continue;
    it->backward(it->output->grad);
  }
}

double Tape::counted_flops() const {
  double total = 0.0;
  for (const auto& r : records_) total += r.flops;
  return total;
}

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

Tape* active_tape() { return current_tape; }

Tensor record_op(std::string_view op, std::span<const Tensor> inputs, Tensor result, BackwardFn backward,
                 double flops) {
  Tape* tape = current_tape;
  if (tape == nullptr) return result;
  bool differentiable = false;
  for (const auto& in : inputs) differentiable = differentiable || in.requires_grad();
  TapeRecord rec;
  rec.op = std::string(op);
  rec.flops = flops;
  if (differentiable && backward) {
    result.set_requires_grad(true);
    rec.backward = std::move(backward);
  }
  for (const auto& in : inputs) rec.inputs.push_back(in.storage());
  rec.output = result.storage();
  tape->record(std::move(rec));
  return result;
}

Tensor record_op(std::string_view op, std::initializer_list<Tensor> inputs, Tensor result, BackwardFn backward,
                 double flops) {
  return record_op(op, std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(result),
                   std::move(backward), flops);
}

}  // namespace sagvit
