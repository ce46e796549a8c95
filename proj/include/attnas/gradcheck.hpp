#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "attnas/tensor.hpp"

namespace attnas {

/// Central-difference check of d(loss)/d(input) for every input. Returns the
/// largest per-tensor error ||analytic - numeric|| / max(||analytic||,
/// ||numeric||, 1e-12). loss_fn must build the graph from the inputs' current
/// values each call.
double max_gradient_error(const std::function<Tensor()>& loss_fn, std::span<Tensor> inputs, double h);

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 20;
  double h = 1e-6;
  double tolerance = 1e-5;
};

struct GradcheckRow {
  std::string op;
  double max_rel_error = 0.0;
  std::size_t trials = 0;
  bool pass = false;
};

std::vector<std::string> gradcheck_ops();
/// Runs in 64-bit mode regardless of the global precision setting.
std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& opts, const std::vector<std::string>& only = {});

}  // namespace attnas
