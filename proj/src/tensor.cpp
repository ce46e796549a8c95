#include "attnas/tensor.hpp"

#include <atomic>
#include <cstdlib>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "attnas/error.hpp"

namespace attnas {

namespace {

// Activation buffers run to tens of megabytes. glibc would hand each one back
// to the kernel on free and page-fault it in again on the next step.
[[maybe_unused]] const bool kAllocatorTuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return true;
}();
std::atomic<Precision> g_precision{Precision::kF64};
std::atomic<std::uint64_t> g_generation{1};
thread_local Tape* t_active = nullptr;
}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

void set_precision(Precision p) { g_precision.store(p); }
Precision precision() { return g_precision.load(); }

void init_precision_from_env() {
  const char* v = std::getenv("ATTNAS_PRECISION");
  if (!v || !*v) return;
  std::string s(v);
  if (s == "f64") {
    set_precision(Precision::kF64);
  } else if (s == "f32") {
    set_precision(Precision::kF32);
  } else {
    throw ConfigError("ATTNAS_PRECISION must be f32 or f64, got '" + s + "'");
  }
}

void round_to_precision(std::span<double> v) {
  if (precision() != Precision::kF32) return;
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->values.assign(shape_numel(shape), v);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                     " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->values[0];
}

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), impl_->values, false); }

Tensor Tensor::clone() const { return from(shape(), impl_->values, impl_->requires_grad); }

std::span<double> grad_sink(TensorImpl& t) {
  if (!t.requires_grad) return {};
  if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
  return t.grad;
}

Tape::Tape() : generation_(g_generation.fetch_add(1)), previous_(t_active) { t_active = this; }

Tape::~Tape() { t_active = previous_; }

Tape* Tape::active() { return t_active; }

void Tape::record(std::vector<std::shared_ptr<TensorImpl>> inputs, std::shared_ptr<TensorImpl> output,
                  std::function<void()> backward_fn) {
  output->node_id = static_cast<std::int64_t>(nodes_.size());
  output->generation = generation_;
  output->requires_grad = true;
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  TensorImpl& l = *loss.impl();
  if (l.generation != generation_ || l.node_id < 0) {
    throw ContractError("backward: loss was not recorded on this tape");
  }
  l.grad.assign(1, 1.0);
  for (std::int64_t i = l.node_id; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.output->grad.empty()) continue;
    node.backward_fn();
  }
}

void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (!t) throw ContractError("backward called with no active tape");
  t->backward(loss);
}

}  // namespace attnas
