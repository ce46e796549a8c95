#include "attnas/params.hpp"

#include <cmath>

namespace attnas {

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  const double s = gain / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-s, s);
  for (auto& v : t.mutable_values()) v = dist(rng);
  round_to_precision(t.mutable_values());
  return t;
}

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

std::size_t count_scalars(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void set_requires_grad(const ParamList& params, bool on) {
  for (const auto& p : params) p.tensor.impl()->requires_grad = on;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace attnas
