#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace attnas {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Global storage precision. In f32 mode every op output and optimizer update
/// is rounded to single precision; arithmetic itself stays in double.
enum class Precision { kF64, kF32 };
void set_precision(Precision p);
Precision precision();
/// Reads ATTNAS_PRECISION ("f32" / "f64"); unknown values are rejected.
void init_precision_from_env();
void round_to_precision(std::span<double> v);

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::int64_t node_id = -1;
  std::uint64_t generation = 0;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->values.size(); }

  std::span<const double> values() const { return impl_->values; }
  std::span<double> mutable_values() { return impl_->values; }
  double item() const;
  double at(std::size_t i) const { return impl_->values.at(i); }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  /// Deep copy of values only; the result is a fresh leaf.
  Tensor detach() const;
  /// Deep copy that keeps requires_grad.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Records differentiable operations executed while it is the active tape on
/// this thread. Nodes are appended in execution order, so the list is already
/// topologically sorted. Tensors produced with no active tape carry no graph.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::vector<std::shared_ptr<TensorImpl>> inputs,
              std::shared_ptr<TensorImpl> output, std::function<void()> backward_fn);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once in
  /// reverse order. Throws ContractError unless loss is a scalar on this tape.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }

 private:
  struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
  std::uint64_t generation_;
  Tape* previous_;
};

/// Convenience wrapper around the active tape.
void backward(const Tensor& loss);

/// Gradient buffer of t for accumulation, allocated on demand. Empty span when
/// t does not require grad.
std::span<double> grad_sink(TensorImpl& t);

}  // namespace attnas
