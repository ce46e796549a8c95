#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "attnas/tensor.hpp"

namespace testing {

using attnas::Shape;
using attnas::Tensor;

inline Tensor randn(Shape shape, std::mt19937_64& rng, bool grad = false, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(attnas::shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Straight per-pixel loop over the k x k window; padded positions contribute
// zero keys (logit q.rel only) and zero values.
inline std::vector<double> local_attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                                                  const Tensor& rel, std::size_t window, std::size_t heads) {
  const std::size_t H = q.dim(0), W = q.dim(1), C = q.dim(2), d = C / heads;
  const long r = static_cast<long>(window / 2);
  std::vector<double> out(H * W * C, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t h = 0; h < heads; ++h) {
        std::vector<double> logits;
        std::vector<std::vector<double>> vals;
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            const bool inside = yy >= 0 && xx >= 0 && yy < static_cast<long>(H) && xx < static_cast<long>(W);
            const std::size_t slot = static_cast<std::size_t>((dy + r) * static_cast<long>(window) + (dx + r));
            double s = 0.0;
            std::vector<double> val(d, 0.0);
            for (std::size_t c = 0; c < d; ++c) {
              const double qc = q.at((y * W + x) * C + h * d + c);
              double kc = rel.at(slot * d + c);
              if (inside) {
                const std::size_t p = (static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * C + h * d + c;
                kc += k.at(p);
                val[c] = v.at(p);
              }
              s += qc * kc;
            }
            logits.push_back(s / std::sqrt(static_cast<double>(d)));
            vals.push_back(val);
          }
        double mx = -1e300;
        for (double l : logits) mx = std::max(mx, l);
        double z = 0.0;
        for (double& l : logits) z += (l = std::exp(l - mx));
        for (std::size_t j = 0; j < logits.size(); ++j)
          for (std::size_t c = 0; c < d; ++c) out[(y * W + x) * C + h * d + c] += logits[j] / z * vals[j][c];
      }
  return out;
}

// Every (query, key) token pair of a single [H, W, C] image.
inline std::vector<double> nonlocal_attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t N = q.dim(0) * q.dim(1), C = q.dim(2);
  std::vector<double> out(N * C, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<double> w(N);
    double mx = -1e300;
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += q.at(i * C + c) * k.at(j * C + c);
      w[j] = s / std::sqrt(static_cast<double>(C));
      mx = std::max(mx, w[j]);
    }
    double z = 0.0;
    for (double& x : w) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t c = 0; c < C; ++c) out[i * C + c] += w[j] / z * v.at(j * C + c);
  }
  return out;
}

// Central differences of a scalar function of one tensor's values.
inline std::vector<double> numeric_grad(const std::function<double()>& f, Tensor& x, double h = 1e-6) {
  std::vector<double> g(x.numel());
  auto vals = x.mutable_values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double keep = vals[i];
    vals[i] = keep + h;
    const double up = f();
    vals[i] = keep - h;
    const double down = f();
    vals[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_error(std::span<const double> a, std::span<const double> b) {
  double num = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(num) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

}  // namespace testing
