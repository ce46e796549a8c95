#include "attnas/optim.hpp"

#include <cmath>
#include <numbers>

#include "attnas/error.hpp"

namespace attnas {

Sgd::Sgd(std::vector<Tensor> params, SgdOptions opts) : params_(std::move(params)), opts_(opts) {
  momentum_.reserve(params_.size());
  for (const auto& p : params_) momentum_.emplace_back(p.numel(), 0.0);
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto w = p.mutable_values();
    auto g = p.grad();
    auto& buf = momentum_[i];
    for (std::size_t e = 0; e < w.size(); ++e) {
      const double d = g[e] + opts_.weight_decay * w[e];
      buf[e] = opts_.momentum * buf[e] + d;
      w[e] -= opts_.lr * buf[e];
    }
    round_to_precision(w);
    round_to_precision(buf);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++steps_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto w = p.mutable_values();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t e = 0; e < w.size(); ++e) {
      const double d = g[e] + opts_.weight_decay * w[e];
      m[e] = opts_.beta1 * m[e] + (1.0 - opts_.beta1) * d;
      v[e] = opts_.beta2 * v[e] + (1.0 - opts_.beta2) * d * d;
      const double mhat = m[e] / bc1;
      const double vhat = v[e] / bc2;
      w[e] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
    }
    round_to_precision(w);
    round_to_precision(m);
    round_to_precision(v);
  }
}

double LrSchedule::at(std::size_t step) const {
  if (kind == Kind::kConstant) return base_lr;
  if (total_steps == 0) throw ConfigError("cosine schedule needs total_steps > 0");
  if (step >= total_steps) return 0.0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace attnas
