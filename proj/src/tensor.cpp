#include "m4/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "m4/errors.hpp"

namespace m4::ad {

namespace {

std::atomic<std::uint64_t> next_tape_id{1};

void require(const void* p) {
  if (!p) throw AutodiffError("use of an undefined tensor");
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  std::vector<double> values;
  std::size_t width = rows.size() ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != width) throw ShapeError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), width}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  require(impl_.get());
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::size() const { return values().size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("expected a matrix, got " + shape_str(shape()));
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("expected a matrix, got " + shape_str(shape()));
  return impl_->shape[1];
}

std::span<const double> Tensor::values() const {
  require(impl_.get());
  return impl_->values;
}

std::span<double> Tensor::mutable_values() {
  require(impl_.get());
  return impl_->values;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

bool Tensor::requires_grad() const {
  require(impl_.get());
  return impl_->requires_grad;
}

void Tensor::set_requires_grad(bool flag) {
  require(impl_.get());
  impl_->requires_grad = flag;
}

bool Tensor::has_grad() const {
  require(impl_.get());
  return !impl_->grad.empty();
}

std::span<const double> Tensor::grad() const {
  require(impl_.get());
  return impl_->grad;
}

std::span<double> Tensor::grad_buffer() const {
  require(impl_.get());
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() const {
  require(impl_.get());
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

std::uint64_t Tensor::tape_id() const {
  require(impl_.get());
  return impl_->tape_id;
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(shape(), std::vector<double>(values().begin(), values().end()), requires_grad);
}

Tape::Tape(Mode mode) : mode_(mode), id_(next_tape_id.fetch_add(1)) {}

bool Tape::tracks(std::initializer_list<const Tensor*> inputs) const {
  if (!recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

bool Tape::tracks(std::span<const Tensor> inputs) const {
  if (!recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

Tensor Tape::emit(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                  BackwardFn backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value produced in forward pass");
  }
  Tensor out(std::move(shape), std::move(values));
  if (!tracks(std::span<const Tensor>(inputs))) return out;
  if (consumed_) throw AutodiffError("recording onto a tape that already ran backward; reset it first");
  out.impl_->requires_grad = true;
  out.impl_->tape_id = id_;
  nodes_.push_back(Node{std::move(inputs), out, std::move(backward)});
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw AutodiffError("backward on an undefined tensor");
  if (loss.size() != 1) {
    throw AutodiffError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (loss.tape_id() != id_) throw AutodiffError("loss was not produced on this tape (detached tensor)");
  if (consumed_) throw AutodiffError("backward already ran on this tape; call reset() before reuse");
  consumed_ = true;

  Tensor seed = loss;
  seed.grad_buffer()[0] = 1.0;

  std::unordered_set<const Tensor::Impl*> leaves;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // unreachable from the loss
    it->backward(it->output.grad());
    for (auto& in : it->inputs) {
      if (in.impl_->requires_grad && in.impl_->tape_id == 0) leaves.insert(in.impl_.get());
    }
  }
  for (const Tensor::Impl* leaf : leaves) {
    for (double g : leaf->grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient reached a parameter");
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

}  // namespace m4::ad
