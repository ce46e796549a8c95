#include "attnas/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "attnas/error.hpp"
#include "attnas/ops.hpp"

namespace attnas {

EvalResult evaluate(const LogitsFn& model, const ImageDataset& data, const Normalization& norm,
                    std::size_t batch_size) {
  if (!data.labeled()) throw InputError("evaluation needs labelled data");
  if (data.count == 0) throw InputError("evaluation on an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  EvalResult r;
  std::size_t wrong1 = 0, wrong5 = 0;
  double loss = 0.0;
  std::size_t classes = 0;
  for (std::size_t lo = 0; lo < data.count; lo += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, data.count - lo));
    std::iota(idx.begin(), idx.end(), lo);
    const auto labels = data.batch_labels(idx);
    const Tensor logits = model(data.batch(idx, norm));
    classes = logits.dim(1);
    loss += ops::cross_entropy(logits, labels, 0.0).item() * static_cast<double>(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = logits.values().subspan(b * classes, classes);
      const auto y = static_cast<std::size_t>(labels[b]);
      // classes ranked ahead of the label: larger logit, or equal logit at a lower index
      std::size_t ahead = 0;
      for (std::size_t j = 0; j < classes; ++j) ahead += row[j] > row[y] || (row[j] == row[y] && j < y);
      wrong1 += ahead >= 1;
      wrong5 += ahead >= 5;
    }
  }
  const auto n = static_cast<double>(data.count);
  r.count = data.count;
  r.loss = loss / n;
  r.top1_error = static_cast<double>(wrong1) / n;
  r.top5_error = classes >= 5 ? static_cast<double>(wrong5) / n : std::numeric_limits<double>::quiet_NaN();
  return r;
}

EvalResult evaluate(const Network& net, const ImageDataset& data, std::size_t batch_size) {
  if (data.image_size != net.config().image_size) {
    throw ConfigError("dataset images are " + std::to_string(data.image_size) + "px, network expects " +
                      std::to_string(net.config().image_size));
  }
  for (int y : data.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= net.config().num_classes)
      throw InputError("label " + std::to_string(y) + " outside the network's " +
                       std::to_string(net.config().num_classes) + " classes");
  return evaluate([&](const Tensor& x) { return net.logits(x); }, data, net.normalization, batch_size);
}

Tensor augment_batch(const Tensor& batch, Rng& rng, std::size_t pad, bool flip) {
  if (batch.rank() != 4) throw ShapeError("augment_batch expects [B, H, W, C]");
  const std::size_t B = batch.dim(0), H = batch.dim(1), W = batch.dim(2), C = batch.dim(3);
  Tensor out = Tensor::zeros(batch.shape());
  const double* in = batch.values().data();
  double* o = out.mutable_values().data();
  const auto p = static_cast<std::ptrdiff_t>(pad);
  std::uniform_int_distribution<std::ptrdiff_t> shift(-p, p);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t b = 0; b < B; ++b) {
    const std::ptrdiff_t dy = shift(rng), dx = shift(rng);
    const bool mirror = flip && coin(rng);
    for (std::size_t y = 0; y < H; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t fx = mirror ? W - 1 - x : x;
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(fx) + dx;
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
        const double* src = in + ((b * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)) * C;
        std::copy(src, src + C, o + ((b * H + y) * W + x) * C);
      }
    }
  }
  return out;
}

namespace {

std::vector<std::vector<double>> snapshot(const ParamList& params) {
  std::vector<std::vector<double>> s;
  s.reserve(params.size());
  for (const auto& p : params) s.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return s;
}

void restore(const ParamList& params, const std::vector<std::vector<double>>& s) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(s[i].begin(), s[i].end(), t.mutable_values().begin());
  }
}

}  // namespace

TrainResult train_final(const Architecture& arch, const TrainConfig& cfg, const ImageDataset& train,
                        const ImageDataset& test) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!train.labeled() || !test.labeled()) throw ConfigError("training needs labelled train and test data");
  for (const auto* d : {&train, &test}) {
    if (d->class_count != arch.macro.num_classes) {
      throw ConfigError("dataset has " + std::to_string(d->class_count) + " classes, architecture head has " +
                        std::to_string(arch.macro.num_classes));
    }
    if (d->image_size != arch.macro.image_size) {
      throw ConfigError("dataset images are " + std::to_string(d->image_size) + "px, architecture expects " +
                        std::to_string(arch.macro.image_size));
    }
  }
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");

  ImageDataset fit = train, holdout;
  if (cfg.select_on_validation) {
    auto [a, b] = split(train, SplitSpec{1.0 - cfg.validation_ratio, mix_seed(cfg.seed, 0x7B)});
    fit = std::move(a);
    holdout = std::move(b);
  }
  const ImageDataset& selector = cfg.select_on_validation ? holdout : test;

  TrainResult res{Network::instantiate(arch, cfg.initial_channels, mix_seed(cfg.seed, 0x7A)), {}, 0, {}, 0.0};
  Network& net = res.network;
  net.normalization = train.stats;
  const ParamList params = net.params();
  Sgd opt(tensors_of(params), cfg.sgd);
  const LrSchedule sched{cfg.cosine ? LrSchedule::Kind::kCosine : LrSchedule::Kind::kConstant, cfg.sgd.lr,
                         std::max<std::size_t>(cfg.epochs, 1)};

  auto record = [&](std::size_t epoch, double train_loss) {
    const EvalResult t = evaluate(net, test);
    res.metrics.push_back({epoch, train_loss, 1.0 - t.top1_error,
                           std::isnan(t.top5_error) ? t.top5_error : 1.0 - t.top5_error});
    const EvalResult s = cfg.select_on_validation ? evaluate(net, selector) : t;
    return s;
  };

  auto best_state = snapshot(params);
  res.best = record(0, evaluate(net, fit).loss);
  res.best_epoch = 0;

  std::vector<std::size_t> order(fit.count);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    Rng rng(mix_seed(mix_seed(cfg.seed, 0x7C), e));
    opt.set_lr(sched.at(e));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<long>(lo),
                                         order.begin() + static_cast<long>(std::min(order.size(), lo + cfg.batch_size)));
      Tensor x = fit.batch(idx, net.normalization);
      if (cfg.augment) x = augment_batch(x, rng, cfg.pad, cfg.flip);
      const auto labels = fit.batch_labels(idx);
      Tape tape;
      const Tensor loss = ops::cross_entropy(net.logits(x), labels, cfg.label_smoothing);
      const double lv = loss.item();
      if (!std::isfinite(lv)) throw NumericError("training loss became non-finite at epoch " + std::to_string(e + 1));
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
      total += lv * static_cast<double>(idx.size());
    }
    const EvalResult s = record(e + 1, total / static_cast<double>(fit.count));
    if (s.top1_error < res.best.top1_error) {
      res.best = s;
      res.best_epoch = e + 1;
      best_state = snapshot(params);
    }
  }
  restore(params, best_state);
  res.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

std::size_t count_params(const Network& net) { return count_scalars(net.params()); }

std::size_t count_params(const Architecture& arch, std::size_t initial_channels) {
  Architecture scaled = arch;
  scaled.macro = arch.macro.scaled(initial_channels);
  return Network::analytic_param_count(scaled);
}

}  // namespace attnas
