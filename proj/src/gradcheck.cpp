#include "attnas/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "attnas/attention.hpp"
#include "attnas/error.hpp"
#include "attnas/ops.hpp"
#include "attnas/params.hpp"
#include "attnas/search_space.hpp"

namespace attnas {

double max_gradient_error(const std::function<Tensor()>& loss_fn, std::span<Tensor> inputs, double h) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    tape.backward(loss_fn());
  }
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    double diff = 0.0, na = 0.0, nn = 0.0;
    auto v = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = loss_fn().item();
      v[i] = keep - h;
      const double down = loss_fn().item();
      v[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      diff += (numeric - analytic[i]) * (numeric - analytic[i]);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    worst = std::max(worst, std::sqrt(diff) / scale);
    t.zero_grad();
  }
  return worst;
}

namespace {

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// Values bounded away from zero so kinks stay out of the difference stencil.
Tensor away_from_zero(Shape shape, Rng& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// Scalar probe <r, y> so every output element contributes a distinct weight.
Tensor probe(const Tensor& y, const Tensor& r) {
  return ops::sum(ops::matmul(ops::reshape(y, {1, y.numel()}), r));
}

Tensor probe_weights(const Tensor& like, Rng& rng) { return uniform({like.numel(), 1}, rng); }

using Case = std::function<double(Rng&, double)>;

Tensor block_input_probe(const Block& blk, const Tensor& x, Rng& rng) {
  return probe_weights(blk.forward(x), rng);
}

double check_block(const CandidateOp& op, std::size_t cin, std::size_t cout, std::size_t stride, Rng& rng, double h) {
  Block blk(op, cin, cout, stride, rng);
  // fan-in init leaves biases at zero; randomise them so their paths are exercised
  ParamList params;
  blk.append_params("", params);
  for (auto& p : params) {
    auto v = p.tensor.mutable_values();
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto& x : v) x += u(rng);
  }
  Tensor x = uniform({1, 4, 4, cin}, rng);
  const Tensor r = block_input_probe(blk, x, rng);
  std::vector<Tensor> inputs{x};
  for (auto& p : params) inputs.push_back(p.tensor);
  return max_gradient_error([&] { return probe(blk.forward(x), r); }, inputs, h);
}

const std::map<std::string, Case>& cases() {
  static const std::map<std::string, Case> c = {
      {"matmul",
       [](Rng& rng, double h) {
         Tensor a = uniform({3, 4}, rng), b = uniform({4, 5}, rng);
         const Tensor r = uniform({15, 1}, rng);
         std::vector<Tensor> in{a, b};
         return max_gradient_error([&] { return probe(ops::matmul(a, b), r); }, in, h);
       }},
      {"add",
       [](Rng& rng, double h) {
         Tensor a = uniform({2, 3, 4}, rng), b = uniform({2, 3, 4}, rng), bias = uniform({4}, rng),
                s = uniform({1}, rng);
         const Tensor r = uniform({24, 1}, rng);
         std::vector<Tensor> in{a, b, bias, s};
         return max_gradient_error(
             [&] { return probe(ops::add(ops::add(ops::add(a, b), bias), s), r); }, in, h);
       }},
      {"scale",
       [](Rng& rng, double h) {
         Tensor a = uniform({3, 4}, rng);
         const Tensor r = uniform({12, 1}, rng);
         std::vector<Tensor> in{a};
         return max_gradient_error([&] { return probe(ops::scale(a, -1.7), r); }, in, h);
       }},
      {"relu",
       [](Rng& rng, double h) {
         Tensor a = away_from_zero({4, 5}, rng);
         const Tensor r = uniform({20, 1}, rng);
         std::vector<Tensor> in{a};
         return max_gradient_error([&] { return probe(ops::relu(a), r); }, in, h);
       }},
      {"softmax",
       [](Rng& rng, double h) {
         Tensor a = uniform({3, 5}, rng, -2.0, 2.0), b = uniform({2, 3, 4}, rng, -2.0, 2.0);
         const Tensor r = uniform({15, 1}, rng), rb = uniform({24, 1}, rng);
         std::vector<Tensor> in{a, b};
         return max_gradient_error(
             [&] { return ops::add(probe(ops::softmax(a, 1), r), probe(ops::softmax(b, 0), rb)); }, in, h);
       }},
      {"sum",
       [](Rng& rng, double h) {
         Tensor a = uniform({3, 4}, rng);
         std::vector<Tensor> in{a};
         return max_gradient_error([&] { return ops::scale(ops::sum(ops::relu(ops::add(a, Tensor::scalar(2.0)))), 0.5); },
                                   in, h);
       }},
      {"reshape",
       [](Rng& rng, double h) {
         Tensor a = uniform({2, 6}, rng), w = uniform({4, 2}, rng);
         const Tensor r = uniform({6, 1}, rng);
         std::vector<Tensor> in{a, w};
         return max_gradient_error([&] { return probe(ops::matmul(ops::reshape(a, {3, 4}), w), r); }, in, h);
       }},
      {"linear",
       [](Rng& rng, double h) {
         Tensor x = uniform({2, 3, 3, 4}, rng), w = uniform({4, 5}, rng), b = uniform({5}, rng),
                w2 = uniform({5, 3}, rng);
         const Tensor r = uniform({54, 1}, rng);
         std::vector<Tensor> in{x, w, b, w2};
         return max_gradient_error(
             [&] { return probe(ops::linear(ops::linear(x, w, b), w2, Tensor()), r); }, in, h);
       }},
      {"avgpool2d",
       [](Rng& rng, double h) {
         Tensor x = uniform({2, 4, 6, 3}, rng);
         const Tensor r = uniform({36, 1}, rng);
         std::vector<Tensor> in{x};
         return max_gradient_error([&] { return probe(ops::avgpool2d(x), r); }, in, h);
       }},
      {"global_avgpool",
       [](Rng& rng, double h) {
         Tensor x = uniform({2, 3, 4, 5}, rng);
         const Tensor r = uniform({10, 1}, rng);
         std::vector<Tensor> in{x};
         return max_gradient_error([&] { return probe(ops::global_avgpool(x), r); }, in, h);
       }},
      {"unfold",
       [](Rng& rng, double h) {
         Tensor x = uniform({1, 3, 4, 2}, rng);
         const Tensor r = uniform({3 * 4 * 9 * 2, 1}, rng);
         std::vector<Tensor> in{x};
         return max_gradient_error([&] { return probe(ops::unfold(x, 3), r); }, in, h);
       }},
      {"upsample_nearest2x",
       [](Rng& rng, double h) {
         Tensor x = uniform({2, 2, 3, 2}, rng);
         const Tensor r = uniform({96, 1}, rng);
         std::vector<Tensor> in{x};
         return max_gradient_error([&] { return probe(ops::upsample_nearest2x(x), r); }, in, h);
       }},
      {"weighted_sum",
       [](Rng& rng, double h) {
         Tensor a = uniform({2, 3}, rng), b = uniform({2, 3}, rng), c = uniform({2, 3}, rng),
                w = uniform({2, 3}, rng);
         const Tensor r = uniform({6, 1}, rng);
         std::vector<Tensor> in{a, b, c, w};
         return max_gradient_error(
             [&] {
               const Tensor xs[] = {a, b, c};
               return probe(ops::weighted_sum(xs, w, 1), r);
             },
             in, h);
       }},
      {"local_attention",
       [](Rng& rng, double h) {
         Tensor q = uniform({2, 4, 4, 4}, rng), k = uniform({2, 4, 4, 4}, rng), v = uniform({2, 4, 4, 4}, rng),
                rel = uniform({3, 3, 2}, rng), rel5 = uniform({5, 5, 1}, rng);
         const Tensor r = uniform({128, 1}, rng), r5 = uniform({128, 1}, rng);
         std::vector<Tensor> in{q, k, v, rel, rel5};
         return max_gradient_error(
             [&] {
               return ops::add(probe(ops::local_attention(q, k, v, rel, 3, 2), r),
                               probe(ops::local_attention(q, k, v, rel5, 5, 4), r5));
             },
             in, h);
       }},
      {"nonlocal_attention",
       [](Rng& rng, double h) {
         Tensor q = uniform({2, 3, 3, 4}, rng), k = uniform({2, 3, 3, 4}, rng), v = uniform({2, 3, 3, 4}, rng);
         const Tensor r = uniform({72, 1}, rng);
         std::vector<Tensor> in{q, k, v};
         return max_gradient_error([&] { return probe(ops::nonlocal_attention(q, k, v), r); }, in, h);
       }},
      {"l1_loss",
       [](Rng& rng, double h) {
         Tensor p = uniform({2, 3, 3}, rng), t = uniform({2, 3, 3}, rng);
         // keep |p - t| clear of the kink
         auto pv = p.mutable_values();
         const auto tv = t.values();
         for (std::size_t i = 0; i < pv.size(); ++i)
           if (std::abs(pv[i] - tv[i]) < 0.05) pv[i] = tv[i] + 0.1;
         std::vector<Tensor> in{p, t};
         return max_gradient_error([&] { return ops::l1_loss(p, t); }, in, h);
       }},
      {"l1_loss_masked",
       [](Rng& rng, double h) {
         Tensor p = uniform({2, 3, 3}, rng), t = uniform({2, 3, 3}, rng);
         auto pv = p.mutable_values();
         const auto tv = t.values();
         for (std::size_t i = 0; i < pv.size(); ++i)
           if (std::abs(pv[i] - tv[i]) < 0.05) pv[i] = tv[i] + 0.1;
         std::vector<double> mask(18);
         std::bernoulli_distribution on(0.5);
         for (auto& m : mask) m = on(rng);
         mask[0] = 1.0;
         std::vector<Tensor> in{p, t};
         return max_gradient_error([&] { return ops::l1_loss_masked(p, t, mask); }, in, h);
       }},
      {"cross_entropy",
       [](Rng& rng, double h) {
         Tensor z = uniform({4, 5}, rng, -2.0, 2.0);
         std::uniform_int_distribution<int> lab(0, 4);
         std::vector<int> y(4);
         for (auto& l : y) l = lab(rng);
         std::vector<Tensor> in{z};
         return max_gradient_error(
             [&] { return ops::add(ops::cross_entropy(z, y, 0.0), ops::cross_entropy(z, y, 0.1)); }, in, h);
       }},
      {"block_local",
       [](Rng& rng, double h) {
         return std::max(check_block(CandidateOp::local(3, 4), 4, 8, 2, rng, h),
                         check_block(CandidateOp::local(5, 8), 8, 8, 1, rng, h));
       }},
      {"block_nonlocal",
       [](Rng& rng, double h) {
         return std::max(check_block(CandidateOp::nonlocal(), 8, 8, 1, rng, h),
                         check_block(CandidateOp::nonlocal(), 4, 8, 2, rng, h));
       }},
      {"mixed_op",
       [](Rng& rng, double h) {
         MacroConfig cfg = MacroConfig::ladder(4, 8, 1, 1, 2);
         cfg.stem_channels = 8;
         Supernet net(cfg, rng());
         ArchParams a = ArchParams::zeros(1);
         a.alpha = uniform({1, kNumCandidates}, rng);
         Tensor x = uniform({1, 4, 4, 8}, rng);
         const Tensor r = uniform({128, 1}, rng);
         std::vector<Tensor> in{a.alpha, x};
         return max_gradient_error([&] { return probe(net.mixed_forward(0, x, a.mixing_weights(), 0), r); }, in,
                                   h);
       }},
  };
  return c;
}

class PrecisionGuard {
 public:
  PrecisionGuard() : saved_(precision()) { set_precision(Precision::kF64); }
  ~PrecisionGuard() { set_precision(saved_); }

 private:
  Precision saved_;
};

}  // namespace

std::vector<std::string> gradcheck_ops() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : cases()) names.push_back(name);
  return names;
}

std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& opts, const std::vector<std::string>& only) {
  if (opts.trials == 0) throw ConfigError("gradcheck needs at least one trial");
  if (!(opts.h > 0.0)) throw ConfigError("gradcheck step must be positive");
  for (const auto& name : only)
    if (!cases().count(name)) throw ConfigError("unknown gradcheck op '" + name + "'");
  PrecisionGuard guard;
  std::vector<GradcheckRow> rows;
  for (const auto& [name, fn] : cases()) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    GradcheckRow row{name, 0.0, opts.trials, false};
    for (std::size_t t = 0; t < opts.trials; ++t) {
      Rng rng(mix_seed(opts.seed, t));
      row.max_rel_error = std::max(row.max_rel_error, fn(rng, opts.h));
    }
    row.pass = row.max_rel_error <= opts.tolerance;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace attnas
