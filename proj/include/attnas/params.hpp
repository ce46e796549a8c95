#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "attnas/tensor.hpp"

namespace attnas {

using Rng = std::mt19937_64;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

/// uniform(-gain/sqrt(fan_in), gain/sqrt(fan_in)) as a trainable leaf.
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0);

// variance-preserving gains: layer followed by a ReLU (He), plain linear map
inline const double kReluGain = std::sqrt(6.0);
inline const double kLinearGain = std::sqrt(3.0);
// last layer of a residual branch: starts the branch small next to its shortcut
inline constexpr double kBranchGain = 0.3;

std::vector<Tensor> tensors_of(const ParamList& params);
std::size_t count_scalars(const ParamList& params);
void set_requires_grad(const ParamList& params, bool on);

/// Stable seed mixing (splitmix64) for deriving independent streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace attnas
