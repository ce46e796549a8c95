#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "attnas/tensor.hpp"

namespace attnas {

/// Weight decay is coupled (L2 term added to the gradient) for both
/// optimizers. Parameters without an allocated gradient are skipped.
struct SgdOptions {
  double lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
};

class Sgd {
 public:
  Sgd(std::vector<Tensor> params, SgdOptions opts);

  void step();
  void zero_grad();
  void set_lr(double lr) { opts_.lr = lr; }
  const SgdOptions& options() const { return opts_; }

  const std::vector<Tensor>& params() const { return params_; }
  std::vector<std::vector<double>>& momentum_buffers() { return momentum_; }
  const std::vector<std::vector<double>>& momentum_buffers() const { return momentum_; }

 private:
  std::vector<Tensor> params_;
  SgdOptions opts_;
  std::vector<std::vector<double>> momentum_;
};

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions opts);

  void step();
  void zero_grad();
  void set_lr(double lr) { opts_.lr = lr; }
  const AdamOptions& options() const { return opts_; }

  std::uint64_t step_count() const { return steps_; }
  void set_step_count(std::uint64_t n) { steps_ = n; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opts_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct LrSchedule {
  enum class Kind { kConstant, kCosine };
  Kind kind = Kind::kCosine;
  double base_lr = 0.025;
  std::size_t total_steps = 1;

  /// Cosine: base_lr * (1 + cos(pi * step / total)) / 2, clamped to 0 past total.
  double at(std::size_t step) const;
};

}  // namespace attnas
