#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace m4::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float64 array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, which is what
/// lets the tape write gradients back into parameters held elsewhere. Use
/// clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  // Gradient storage, allocated as zeros on first use.
  std::span<double> grad_buffer() const;
  void zero_grad() const;

  // Id of the tape that produced this tensor; 0 for leaves.
  std::uint64_t tape_id() const;

  Tensor clone(bool requires_grad = false) const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Tape;

  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    std::uint64_t tape_id = 0;
  };

  std::shared_ptr<Impl> impl_;
};

/// Ordered record of primitive applications for one forward pass.
///
/// Every op that touches a tensor requiring gradients appends a node holding
/// its inputs, its output and a closure that maps the output gradient onto
/// the input gradients. backward() replays the nodes once in reverse.
class Tape {
 public:
  enum class Mode { Record, Inference };

  explicit Tape(Mode mode = Mode::Record);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  bool recording() const { return mode_ == Mode::Record; }
  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }

  // True when any input requires gradients and the tape is recording.
  bool tracks(std::initializer_list<const Tensor*> inputs) const;
  bool tracks(std::span<const Tensor> inputs) const;

  // Creates the output tensor of an op. When tracked, the output is marked
  // as produced by this tape and the node is appended.
  Tensor emit(Shape shape, std::vector<double> values,
              std::vector<Tensor> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  void backward(const Tensor& loss);

  // Drops all nodes so the tape may be reused for another pass.
  void reset();

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  Mode mode_;
  std::uint64_t id_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace m4::ad
