#include "attnas/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "attnas/error.hpp"

namespace attnas::ops {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

bool tracking(std::initializer_list<const Tensor*> ts) {
  if (!Tape::active()) return false;
  for (const Tensor* t : ts) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void record(const Tensor& out, std::initializer_list<const Tensor*> ins, std::function<void()> fn) {
  std::vector<ImplPtr> v;
  for (const Tensor* t : ins) {
    if (t->defined()) v.push_back(t->impl_ptr());
  }
  Tape::active()->record(std::move(v), out.impl_ptr(), std::move(fn));
}

void finish(Tensor& out) { round_to_precision(out.mutable_values()); }

struct Spatial {
  std::size_t b, h, w, c;
};

Spatial spatial(const Tensor& x, const char* op) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  throw ShapeError(std::string(op) + ": expected [H,W,C] or [B,H,W,C], got " + shape_str(x.shape()));
}

Shape spatial_shape(const Tensor& like, std::size_t b, std::size_t h, std::size_t w, std::size_t c) {
  if (like.rank() == 3) return {h, w, c};
  return {b, h, w, c};
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0)), k = static_cast<Eigen::Index>(a.dim(1)),
             n = static_cast<Eigen::Index>(b.dim(1));
  Tensor out = Tensor::zeros({a.dim(0), b.dim(1)});
  MatMap(out.mutable_values().data(), m, n).noalias() = CMatMap(a.values().data(), m, k) * CMatMap(b.values().data(), k, n);
  finish(out);
  if (tracking({&a, &b})) {
    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    record(out, {&a, &b}, [ai, bi, oi, m, k, n] {
      const CMatMap G(oi->grad.data(), m, n);
      if (auto da = grad_sink(*ai); !da.empty())
        MatMap(da.data(), m, k).noalias() += G * CMatMap(bi->values.data(), k, n).transpose();
      if (auto db = grad_sink(*bi); !db.empty())
        MatMap(db.data(), k, n).noalias() += CMatMap(ai->values.data(), m, k).transpose() * G;
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t na = a.numel(), nb = b.numel();
  bool ok = a.shape() == b.shape() || nb == 1;
  if (!ok && b.rank() <= a.rank()) {
    ok = std::equal(b.shape().begin(), b.shape().end(), a.shape().end() - static_cast<long>(b.rank()));
  }
  if (!ok) throw ShapeError("add: cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
  Tensor out = Tensor::from(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
  {
    auto o = out.mutable_values();
    auto bv = b.values();
    for (std::size_t i = 0; i < na; ++i) o[i] += bv[i % nb];
  }
  finish(out);
  if (tracking({&a, &b})) {
    ImplPtr ai = a.impl_ptr(), bi = b.impl_ptr(), oi = out.impl_ptr();
    record(out, {&a, &b}, [ai, bi, oi, na, nb] {
      const auto& g = oi->grad;
      if (auto da = grad_sink(*ai); !da.empty())
        for (std::size_t i = 0; i < na; ++i) da[i] += g[i];
      if (auto db = grad_sink(*bi); !db.empty())
        for (std::size_t i = 0; i < na; ++i) db[i % nb] += g[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * xv[i];
  }
  finish(out);
  if (tracking({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = out.impl_ptr();
    record(out, {&x}, [xi, oi, c] {
      if (auto dx = grad_sink(*xi); !dx.empty())
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += c * oi->grad[i];
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  {
    auto o = out.mutable_values();
    auto xv = x.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  }
  if (tracking({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = out.impl_ptr();
    record(out, {&x}, [xi, oi] {
      if (auto dx = grad_sink(*xi); !dx.empty())
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (xi->values[i] > 0.0) dx[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  Tensor out = Tensor::zeros(x.shape());
  {
    auto xv = x.values();
    auto o = out.mutable_values();
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t c = 0; c < inner; ++c) {
        const std::size_t base = a * n * inner + c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double e = std::exp(xv[base + j * inner] - mx);
          o[base + j * inner] = e;
          s += e;
        }
        for (std::size_t j = 0; j < n; ++j) o[base + j * inner] /= s;
      }
  }
  finish(out);
  if (tracking({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = out.impl_ptr();
    record(out, {&x}, [xi, oi, outer, inner, n] {
      auto dx = grad_sink(*xi);
      if (dx.empty()) return;
      const auto& y = oi->values;
      const auto& g = oi->grad;
      for (std::size_t a = 0; a < outer; ++a)
        for (std::size_t c = 0; c < inner; ++c) {
          const std::size_t base = a * n * inner + c;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            dx[idx] += y[idx] * (g[idx] - dot);
          }
        }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  finish(out);
  if (tracking({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = out.impl_ptr();
    record(out, {&x}, [xi, oi] {
      if (auto dx = grad_sink(*xi); !dx.empty())
        for (auto& d : dx) d += oi->grad[0];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = Tensor::from(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  if (tracking({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = out.impl_ptr();
    record(out, {&x}, [xi, oi] {
      if (auto dx = grad_sink(*xi); !dx.empty())
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.rank() != 2 || x.rank() == 0 || x.shape().back() != w.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  }
  const std::size_t cout_sz = w.dim(1);
  if (bias.defined() && (bias.numel() != cout_sz)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(cout_sz) +
                     " outputs");
  }
  const auto cin = static_cast<Eigen::Index>(w.dim(0)), cout = static_cast<Eigen::Index>(cout_sz);
  const auto rows = static_cast<Eigen::Index>(x.numel()) / cin;
  Shape os = x.shape();
  os.back() = cout_sz;
  Tensor out = Tensor::zeros(os);
  {
    MatMap O(out.mutable_values().data(), rows, cout);
    O.noalias() = CMatMap(x.values().data(), rows, cin) * CMatMap(w.values().data(), cin, cout);
    if (bias.defined()) O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), cout);
  }
  finish(out);
  if (tracking({&x, &w, &bias})) {
    ImplPtr xi = x.impl_ptr(), wi = w.impl_ptr(), oi = out.impl_ptr();
    ImplPtr bi = bias.defined() ? bias.impl_ptr() : nullptr;
    record(out, {&x, &w, &bias}, [xi, wi, bi, oi, rows, cin, cout] {
      const CMatMap G(oi->grad.data(), rows, cout);
      if (auto dx = grad_sink(*xi); !dx.empty())
        MatMap(dx.data(), rows, cin).noalias() += G * CMatMap(wi->values.data(), cin, cout).transpose();
      if (auto dw = grad_sink(*wi); !dw.empty())
        MatMap(dw.data(), cin, cout).noalias() += CMatMap(xi->values.data(), rows, cin).transpose() * G;
      if (bi) {
        // plain loop: Eigen's packet column sum pairs rows differently from its scalar peel
        if (auto db = grad_sink(*bi); !db.empty())
          for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cout; ++c) db[static_cast<std::size_t>(c)] += G(r, c);
      }
    });
  }
  return out;
}

Tensor avgpool2d(const Tensor& x) {
  const Spatial s = spatial(x, "avgpool2d");
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("avgpool2d: spatial extents must be even, got " + shape_str(x.shape()));
  }
  const std::size_t oh = s.h / 2, ow = s.w / 2, C = s.c;
  Tensor out = Tensor::zeros(spatial_shape(x, s.b, oh, ow, C));
  {
    auto xv = x.values();
    auto o = out.mutable_values();
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx)
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t src = (((b * s.h) + 2 * y + dy) * s.w + 2 * xx + dx) * C;
              const std::size_t dst = ((b * oh + y) * ow + xx) * C;
              for (std::size_t c = 0; c < C; ++c) o[dst + c] += 0.25 * xv[src + c];
            }
  }
  finish(out);
  if (tracking({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = out.impl_ptr();
    record(out, {&x}, [xi, oi, s, oh, ow, C] {
      auto dxs = grad_sink(*xi);
      if (dxs.empty()) return;
      const auto& g = oi->grad;
      for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx)
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t src = (((b * s.h) + 2 * y + dy) * s.w + 2 * xx + dx) * C;
                const std::size_t dst = ((b * oh + y) * ow + xx) * C;
                for (std::size_t c = 0; c < C; ++c) dxs[src + c] += 0.25 * g[dst + c];
              }
    });
  }
  return out;
}

Tensor global_avgpool(const Tensor& x) {
  const Spatial s = spatial(x, "global_avgpool");
  const std::size_t hw = s.h * s.w;
  Tensor out = x.rank() == 3 ? Tensor::zeros({s.c}) : Tensor::zeros({s.b, s.c});
  {
    auto xv = x.values();
    auto o = out.mutable_values();
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < s.c; ++c) o[b * s.c + c] += xv[(b * hw + p) * s.c + c];
    for (auto& v : o) v /= static_cast<double>(hw);
  }
  finish(out);
  if (tracking({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = out.impl_ptr();
    record(out, {&x}, [xi, oi, s, hw] {
      auto dx = grad_sink(*xi);
      if (dx.empty()) return;
      const double inv = 1.0 / static_cast<double>(hw);
      for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t c = 0; c < s.c; ++c) dx[(b * hw + p) * s.c + c] += inv * oi->grad[b * s.c + c];
    });
  }
  return out;
}

Tensor unfold(const Tensor& x, std::size_t k) {
  const Spatial s = spatial(x, "unfold");
  if (k == 0 || k % 2 == 0) throw ShapeError("unfold: window must be odd, got " + std::to_string(k));
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t kk = k * k, C = s.c;
  Shape os = x.rank() == 3 ? Shape{s.h, s.w, kk, C} : Shape{s.b, s.h, s.w, kk, C};
  Tensor out = Tensor::zeros(os);
  // Maps each output slot to its source offset, or -1 for padding.
  auto index = std::make_shared<std::vector<std::ptrdiff_t>>(s.b * s.h * s.w * kk, -1);
  {
    auto xv = x.values();
    auto o = out.mutable_values();
    std::size_t slot = 0;
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < s.w; ++xx)
          for (std::size_t j = 0; j < kk; ++j, ++slot) {
            const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(j / k) - half;
            const std::ptrdiff_t xs = static_cast<std::ptrdiff_t>(xx) + static_cast<std::ptrdiff_t>(j % k) - half;
            if (yy < 0 || xs < 0 || yy >= static_cast<std::ptrdiff_t>(s.h) || xs >= static_cast<std::ptrdiff_t>(s.w))
              continue;
            const std::size_t src = ((b * s.h + static_cast<std::size_t>(yy)) * s.w + static_cast<std::size_t>(xs)) * C;
            (*index)[slot] = static_cast<std::ptrdiff_t>(src);
            for (std::size_t c = 0; c < C; ++c) o[slot * C + c] = xv[src + c];
          }
  }
  if (tracking({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = out.impl_ptr();
    record(out, {&x}, [xi, oi, index, C] {
      auto dx = grad_sink(*xi);
      if (dx.empty()) return;
      for (std::size_t slot = 0; slot < index->size(); ++slot) {
        const std::ptrdiff_t src = (*index)[slot];
        if (src < 0) continue;
        for (std::size_t c = 0; c < C; ++c) dx[static_cast<std::size_t>(src) + c] += oi->grad[slot * C + c];
      }
    });
  }
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  const Spatial s = spatial(x, "upsample_nearest2x");
  const std::size_t oh = 2 * s.h, ow = 2 * s.w, C = s.c;
  Tensor out = Tensor::zeros(spatial_shape(x, s.b, oh, ow, C));
  {
    auto xv = x.values();
    auto o = out.mutable_values();
    for (std::size_t b = 0; b < s.b; ++b)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const std::size_t src = ((b * s.h + y / 2) * s.w + xx / 2) * C;
          const std::size_t dst = ((b * oh + y) * ow + xx) * C;
          for (std::size_t c = 0; c < C; ++c) o[dst + c] = xv[src + c];
        }
  }
  if (tracking({&x})) {
    ImplPtr xi = x.impl_ptr(), oi = out.impl_ptr();
    record(out, {&x}, [xi, oi, s, oh, ow, C] {
      auto dx = grad_sink(*xi);
      if (dx.empty()) return;
      for (std::size_t b = 0; b < s.b; ++b)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx) {
            const std::size_t src = ((b * s.h + y / 2) * s.w + xx / 2) * C;
            const std::size_t dst = ((b * oh + y) * ow + xx) * C;
            for (std::size_t c = 0; c < C; ++c) dx[src + c] += oi->grad[dst + c];
          }
    });
  }
  return out;
}

Tensor weighted_sum(std::span<const Tensor> xs, const Tensor& weights, std::size_t row) {
  if (xs.empty()) throw ShapeError("weighted_sum: no inputs");
  if (weights.rank() != 2 || weights.dim(1) != xs.size() || row >= weights.dim(0)) {
    throw ShapeError("weighted_sum: weights " + shape_str(weights.shape()) + " incompatible with " +
                     std::to_string(xs.size()) + " inputs at row " + std::to_string(row));
  }
  for (const auto& t : xs) require_same(t, xs[0], "weighted_sum");
  const std::size_t n = xs.size(), numel = xs[0].numel();
  Tensor out = Tensor::zeros(xs[0].shape());
  {
    auto o = out.mutable_values();
    auto wv = weights.values();
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = wv[row * n + i];
      auto xv = xs[i].values();
      for (std::size_t e = 0; e < numel; ++e) o[e] += wi * xv[e];
    }
  }
  finish(out);
  bool any = Tape::active() && weights.requires_grad();
  for (const auto& t : xs) any = any || (Tape::active() && t.requires_grad());
  if (any) {
    std::vector<ImplPtr> ins;
    for (const auto& t : xs) ins.push_back(t.impl_ptr());
    ins.push_back(weights.impl_ptr());
    ImplPtr oi = out.impl_ptr();
    std::vector<ImplPtr> xis(ins.begin(), ins.end() - 1);
    ImplPtr wi = weights.impl_ptr();
    Tape::active()->record(std::move(ins), oi, [xis, wi, oi, row, n, numel] {
      const auto& g = oi->grad;
      auto dw = grad_sink(*wi);
      for (std::size_t i = 0; i < n; ++i) {
        const double w = wi->values[row * n + i];
        if (auto dx = grad_sink(*xis[i]); !dx.empty())
          for (std::size_t e = 0; e < numel; ++e) dx[e] += w * g[e];
        if (!dw.empty()) {
          double s = 0.0;
          const auto& xv = xis[i]->values;
          for (std::size_t e = 0; e < numel; ++e) s += g[e] * xv[e];
          dw[row * n + i] += s;
        }
      }
    });
  }
  return out;
}

namespace {

struct LocalGeom {
  std::size_t npix, C, heads, d, kk;
  double inv;
};

// Neighbour source pixel per (pixel, slot), -1 when the slot is padding.
std::vector<std::ptrdiff_t> neighbour_table(const Spatial& s, std::size_t window) {
  const std::size_t kk = window * window;
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const auto H = static_cast<std::ptrdiff_t>(s.h), W = static_cast<std::ptrdiff_t>(s.w);
  std::vector<std::ptrdiff_t> nbr(s.b * s.h * s.w * kk, -1);
  std::size_t p = 0;
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(s.b); ++b)
    for (std::ptrdiff_t y = 0; y < H; ++y)
      for (std::ptrdiff_t x = 0; x < W; ++x, ++p)
        for (std::size_t j = 0; j < kk; ++j) {
          const std::ptrdiff_t yy = y + static_cast<std::ptrdiff_t>(j / window) - half;
          const std::ptrdiff_t xx = x + static_cast<std::ptrdiff_t>(j % window) - half;
          if (yy < 0 || xx < 0 || yy >= H || xx >= W) continue;
          nbr[p * kk + j] = (b * H + yy) * W + xx;
        }
  return nbr;
}

// Eigen peels unaligned destinations up to the first aligned address, and its
// packet exp differs from std::exp in the last bit. Going through an aligned
// buffer keeps results independent of where the heap put the data.
void exp_inplace(double* p, std::size_t n) {
  thread_local Eigen::ArrayXd scratch;
  const auto len = static_cast<Eigen::Index>(n);
  if (scratch.size() < len) scratch.resize(len);
  Eigen::Map<Eigen::ArrayXd> data(p, len);
  scratch.head(len) = data.exp();
  data = scratch.head(len);
}

// Row-wise softmax over a contiguous [rows, n] buffer, in place.
void softmax_rows(double* buf, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = buf + r * n;
    const double mx = *std::max_element(row, row + n);
    for (std::size_t j = 0; j < n; ++j) row[j] -= mx;
  }
  exp_inplace(buf, rows * n);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = buf + r * n;
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += row[j];
    const double iz = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) row[j] *= iz;
  }
}

// Attention weights are stored as [pixel, slot, head]; every loop runs over
// all C channels at once, channel c belonging to head c / d.
template <std::size_t D>
void local_forward(const LocalGeom& g, const std::ptrdiff_t* nbr, const double* Q, const double* K,
                   const double* V, const double* R, double* O, double* attn) {
  const std::size_t d = D ? D : g.d;
  const std::size_t kk = g.kk, C = g.C, H = g.heads;
  std::vector<double> relx(kk * C), t(C);
  for (std::size_t j = 0; j < kk; ++j)
    for (std::size_t c = 0; c < C; ++c) relx[j * C + c] = R[j * d + c % d];
  std::vector<double> mx(H), z(H);
  for (std::size_t p = 0; p < g.npix; ++p) {
    const std::ptrdiff_t* np = nbr + p * kk;
    const double* qp = Q + p * C;
    double* lp = attn + p * kk * H;
    std::fill(mx.begin(), mx.end(), -std::numeric_limits<double>::infinity());
    for (std::size_t j = 0; j < kk; ++j) {
      const double* rj = relx.data() + j * C;
      if (np[j] >= 0) {
        const double* kp = K + static_cast<std::size_t>(np[j]) * C;
        for (std::size_t c = 0; c < C; ++c) t[c] = qp[c] * (kp[c] + rj[c]);
      } else {
        for (std::size_t c = 0; c < C; ++c) t[c] = qp[c] * rj[c];
      }
      double* lj = lp + j * H;
      if constexpr (D == 1) {
        for (std::size_t c = 0; c < C; ++c) lj[c] = t[c] * g.inv;
      } else {
        for (std::size_t h = 0; h < H; ++h) {
          double sdot = 0.0;
          for (std::size_t c = h * d; c < (h + 1) * d; ++c) sdot += t[c];
          lj[h] = sdot * g.inv;
        }
      }
      for (std::size_t h = 0; h < H; ++h) mx[h] = std::max(mx[h], lj[h]);
    }
    for (std::size_t j = 0; j < kk; ++j)
      for (std::size_t h = 0; h < H; ++h) lp[j * H + h] -= mx[h];
    exp_inplace(lp, kk * H);
    std::fill(z.begin(), z.end(), 0.0);
    for (std::size_t j = 0; j < kk; ++j)
      for (std::size_t h = 0; h < H; ++h) z[h] += lp[j * H + h];
    for (std::size_t h = 0; h < H; ++h) z[h] = 1.0 / z[h];
    for (std::size_t j = 0; j < kk; ++j)
      for (std::size_t h = 0; h < H; ++h) lp[j * H + h] *= z[h];
    double* op = O + p * C;
    for (std::size_t j = 0; j < kk; ++j) {
      if (np[j] < 0) continue;
      const double* vp = V + static_cast<std::size_t>(np[j]) * C;
      const double* aj = lp + j * H;
      for (std::size_t c = 0; c < C; ++c) op[c] += aj[c / d] * vp[c];
    }
  }
}

template <std::size_t D>
void local_backward(const LocalGeom& g, const std::ptrdiff_t* nbr, const double* attn, const double* Q,
                    const double* K, const double* V, const double* R, const double* G, std::span<double> dq,
                    std::span<double> dk, std::span<double> dv, std::span<double> dr) {
  const std::size_t d = D ? D : g.d;
  const std::size_t kk = g.kk, C = g.C, H = g.heads;
  std::vector<double> relx(kk * C), drelx(kk * C, 0.0), t(C), dl(kk * H), dot(H), ax(C), dlx(C);
  for (std::size_t j = 0; j < kk; ++j)
    for (std::size_t c = 0; c < C; ++c) relx[j * C + c] = R[j * d + c % d];
  for (std::size_t p = 0; p < g.npix; ++p) {
    const std::ptrdiff_t* np = nbr + p * kk;
    const double* a = attn + p * kk * H;
    const double* gp = G + p * C;
    const double* qp = Q + p * C;
    std::fill(dot.begin(), dot.end(), 0.0);
    for (std::size_t j = 0; j < kk; ++j) {
      double* dj = dl.data() + j * H;
      const double* aj = a + j * H;
      if (np[j] < 0) {
        for (std::size_t h = 0; h < H; ++h) dj[h] = 0.0;
        continue;
      }
      const std::size_t off = static_cast<std::size_t>(np[j]) * C;
      for (std::size_t c = 0; c < C; ++c) t[c] = gp[c] * V[off + c];
      if constexpr (D == 1) {
        for (std::size_t c = 0; c < C; ++c) dj[c] = t[c];
      } else {
        for (std::size_t h = 0; h < H; ++h) {
          double s = 0.0;
          for (std::size_t c = h * d; c < (h + 1) * d; ++c) s += t[c];
          dj[h] = s;
        }
      }
      for (std::size_t h = 0; h < H; ++h) dot[h] += aj[h] * dj[h];
      if (!dv.empty()) {
        for (std::size_t c = 0; c < C; ++c) ax[c] = aj[c / d];
        for (std::size_t c = 0; c < C; ++c) dv[off + c] += ax[c] * gp[c];
      }
    }
    for (std::size_t j = 0; j < kk; ++j)
      for (std::size_t h = 0; h < H; ++h) dl[j * H + h] = a[j * H + h] * (dl[j * H + h] - dot[h]) * g.inv;
    double* dqp = dq.empty() ? nullptr : dq.data() + p * C;
    for (std::size_t j = 0; j < kk; ++j) {
      const double* dj = dl.data() + j * H;
      for (std::size_t c = 0; c < C; ++c) dlx[c] = dj[c / d];
      const double* rj = relx.data() + j * C;
      if (np[j] >= 0) {
        const std::size_t off = static_cast<std::size_t>(np[j]) * C;
        if (dqp)
          for (std::size_t c = 0; c < C; ++c) dqp[c] += dlx[c] * (K[off + c] + rj[c]);
        if (!dk.empty())
          for (std::size_t c = 0; c < C; ++c) dk[off + c] += dlx[c] * qp[c];
      } else if (dqp) {
        for (std::size_t c = 0; c < C; ++c) dqp[c] += dlx[c] * rj[c];
      }
      if (!dr.empty()) {
        double* drj = drelx.data() + j * C;
        for (std::size_t c = 0; c < C; ++c) drj[c] += dlx[c] * qp[c];
      }
    }
  }
  if (!dr.empty())
    for (std::size_t j = 0; j < kk; ++j)
      for (std::size_t c = 0; c < C; ++c) dr[j * d + c % d] += drelx[j * C + c];
}

template <typename Fn>
void dispatch_width(std::size_t d, Fn&& fn) {
  switch (d) {
    case 1: fn(std::integral_constant<std::size_t, 1>{}); break;
    case 2: fn(std::integral_constant<std::size_t, 2>{}); break;
    case 4: fn(std::integral_constant<std::size_t, 4>{}); break;
    case 8: fn(std::integral_constant<std::size_t, 8>{}); break;
    case 16: fn(std::integral_constant<std::size_t, 16>{}); break;
    default: fn(std::integral_constant<std::size_t, 0>{}); break;
  }
}

}  // namespace

Tensor local_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& rel,
                       std::size_t window, std::size_t heads) {
  const Spatial s = spatial(q, "local_attention");
  require_same(q, k, "local_attention");
  require_same(q, v, "local_attention");
  if (heads == 0 || s.c % heads != 0) {
    throw ConfigError("local_attention: channels " + std::to_string(s.c) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (window == 0 || window % 2 == 0) throw ConfigError("local_attention: window must be odd");
  const std::size_t d = s.c / heads, kk = window * window;
  if (rel.shape() != Shape{window, window, d}) {
    throw ShapeError("local_attention: positional table " + shape_str(rel.shape()) + " expected " +
                     shape_str({window, window, d}));
  }
  const LocalGeom g{s.b * s.h * s.w, s.c, heads, d, kk, 1.0 / std::sqrt(static_cast<double>(d))};
  auto nbr = std::make_shared<std::vector<std::ptrdiff_t>>(neighbour_table(s, window));
  auto attn = std::make_shared<std::vector<double>>(g.npix * heads * kk, 0.0);
  Tensor out = Tensor::zeros(q.shape());
  dispatch_width(d, [&](auto D) {
    local_forward<D()>(g, nbr->data(), q.values().data(), k.values().data(), v.values().data(),
                       rel.values().data(), out.mutable_values().data(), attn->data());
  });
  finish(out);
  if (tracking({&q, &k, &v, &rel})) {
    ImplPtr qi = q.impl_ptr(), ki = k.impl_ptr(), vi = v.impl_ptr(), ri = rel.impl_ptr(), oi = out.impl_ptr();
    record(out, {&q, &k, &v, &rel}, [=] {
      auto dq = grad_sink(*qi);
      auto dk = grad_sink(*ki);
      auto dv = grad_sink(*vi);
      auto dr = grad_sink(*ri);
      dispatch_width(g.d, [&](auto D) {
        local_backward<D()>(g, nbr->data(), attn->data(), qi->values.data(), ki->values.data(),
                            vi->values.data(), ri->values.data(), oi->grad.data(), dq, dk, dv, dr);
      });
    });
  }
  return out;
}

Tensor nonlocal_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const Spatial s = spatial(q, "nonlocal_attention");
  require_same(q, k, "nonlocal_attention");
  require_same(q, v, "nonlocal_attention");
  const auto N = static_cast<Eigen::Index>(s.h * s.w), C = static_cast<Eigen::Index>(s.c);
  const double inv = 1.0 / std::sqrt(static_cast<double>(s.c));
  const std::size_t nb = s.b;
  auto attn = std::make_shared<std::vector<double>>(nb * static_cast<std::size_t>(N * N), 0.0);
  Tensor out = Tensor::zeros(q.shape());
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t base = b * static_cast<std::size_t>(N * C);
    MatMap A(attn->data() + b * static_cast<std::size_t>(N * N), N, N);
    A.noalias() = CMatMap(q.values().data() + base, N, C) * CMatMap(k.values().data() + base, N, C).transpose();
    A *= inv;
    softmax_rows(A.data(), static_cast<std::size_t>(N), static_cast<std::size_t>(N));
    MatMap(out.mutable_values().data() + base, N, C).noalias() = A * CMatMap(v.values().data() + base, N, C);
  }
  finish(out);
  if (tracking({&q, &k, &v})) {
    ImplPtr qi = q.impl_ptr(), ki = k.impl_ptr(), vi = v.impl_ptr(), oi = out.impl_ptr();
    record(out, {&q, &k, &v}, [=] {
      auto dq = grad_sink(*qi);
      auto dk = grad_sink(*ki);
      auto dv = grad_sink(*vi);
      RowMat dS(N, N);
      for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t base = b * static_cast<std::size_t>(N * C);
        const CMatMap A(attn->data() + b * static_cast<std::size_t>(N * N), N, N);
        const CMatMap G(oi->grad.data() + base, N, C);
        if (!dv.empty()) MatMap(dv.data() + base, N, C).noalias() += A.transpose() * G;
        if (dq.empty() && dk.empty()) continue;
        dS.noalias() = G * CMatMap(vi->values.data() + base, N, C).transpose();
        const Eigen::VectorXd dot = (A.array() * dS.array()).rowwise().sum();
        dS = (A.array() * (dS.array().colwise() - dot.array())) * inv;
        if (!dq.empty()) MatMap(dq.data() + base, N, C).noalias() += dS * CMatMap(ki->values.data() + base, N, C);
        if (!dk.empty())
          MatMap(dk.data() + base, N, C).noalias() += dS.transpose() * CMatMap(qi->values.data() + base, N, C);
      }
    });
  }
  return out;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "l1_loss");
  const std::size_t n = pred.numel();
  double s = 0.0;
  auto p = pred.values();
  auto t = target.values();
  for (std::size_t i = 0; i < n; ++i) s += std::abs(p[i] - t[i]);
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  finish(out);
  if (tracking({&pred, &target})) {
    ImplPtr pi = pred.impl_ptr(), ti = target.impl_ptr(), oi = out.impl_ptr();
    record(out, {&pred, &target}, [pi, ti, oi, n] {
      const double g = oi->grad[0] / static_cast<double>(n);
      auto dp = grad_sink(*pi);
      auto dt = grad_sink(*ti);
      for (std::size_t i = 0; i < n; ++i) {
        const double diff = pi->values[i] - ti->values[i];
        const double sg = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        if (!dp.empty()) dp[i] += g * sg;
        if (!dt.empty()) dt[i] -= g * sg;
      }
    });
  }
  return out;
}

Tensor l1_loss_masked(const Tensor& pred, const Tensor& target, std::span<const double> mask) {
  require_same(pred, target, "l1_loss_masked");
  const std::size_t n = pred.numel();
  if (mask.size() != n) throw ShapeError("l1_loss_masked: mask size does not match prediction");
  double s = 0.0;
  std::size_t count = 0;
  auto p = pred.values();
  auto t = target.values();
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] == 0.0) continue;
    s += std::abs(p[i] - t[i]);
    ++count;
  }
  const double denom = count ? static_cast<double>(count) : 1.0;
  Tensor out = Tensor::scalar(s / denom);
  finish(out);
  if (tracking({&pred, &target})) {
    auto m = std::make_shared<std::vector<double>>(mask.begin(), mask.end());
    ImplPtr pi = pred.impl_ptr(), ti = target.impl_ptr(), oi = out.impl_ptr();
    record(out, {&pred, &target}, [pi, ti, oi, m, n, denom] {
      const double g = oi->grad[0] / denom;
      auto dp = grad_sink(*pi);
      auto dt = grad_sink(*ti);
      for (std::size_t i = 0; i < n; ++i) {
        if ((*m)[i] == 0.0) continue;
        const double diff = pi->values[i] - ti->values[i];
        const double sg = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        if (!dp.empty()) dp[i] += g * sg;
        if (!dt.empty()) dt[i] -= g * sg;
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, double smoothing) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw InputError("cross_entropy: smoothing must lie in [0,1)");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(K) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<double>>(B * K);
  auto lv = logits.values();
  double total = 0.0;
  const double off = smoothing / static_cast<double>(K);
  for (std::size_t b = 0; b < B; ++b) {
    const double* z = lv.data() + b * K;
    const double mx = *std::max_element(z, z + K);
    double se = 0.0;
    for (std::size_t j = 0; j < K; ++j) se += std::exp(z[j] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t j = 0; j < K; ++j) {
      const double logp = z[j] - lse;
      (*probs)[b * K + j] = std::exp(logp);
      const double qk = off + (static_cast<int>(j) == labels[b] ? 1.0 - smoothing : 0.0);
      if (qk != 0.0) total -= qk * logp;
    }
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(B));
  finish(out);
  if (tracking({&logits})) {
    auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
    ImplPtr li = logits.impl_ptr(), oi = out.impl_ptr();
    record(out, {&logits}, [li, oi, probs, lab, B, K, smoothing, off] {
      auto dz = grad_sink(*li);
      if (dz.empty()) return;
      const double g = oi->grad[0] / static_cast<double>(B);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < K; ++j) {
          const double qk = off + (static_cast<int>(j) == (*lab)[b] ? 1.0 - smoothing : 0.0);
          dz[b * K + j] += g * ((*probs)[b * K + j] - qk);
        }
    });
  }
  return out;
}

}  // namespace attnas::ops
