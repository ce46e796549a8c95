#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "attnas/error.hpp"
#include "attnas/ops.hpp"
#include "attnas/plot.hpp"
#include "attnas/scale.hpp"
#include "attnas/trainer.hpp"

using namespace attnas;

namespace {

Architecture tiny_arch() {
  Architecture a;
  a.macro = MacroConfig::ladder(8, 8, 2, 1, 3);
  a.choices = {CandidateOp::local(3, 4), CandidateOp::nonlocal()};
  return a;
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("evaluation breaks ties toward the lowest class") {
  const ImageDataset d = synth_shapes(1, 60, 8, 6);
  // constant logits: every image is predicted as class 0, top-5 misses only class 5
  LogitsFn flat = [](const Tensor& x) { return Tensor::zeros({x.dim(0), 6}); };
  const EvalResult r = evaluate(flat, d, d.stats, 7);
  CHECK(r.count == 60);
  CHECK(r.top1_error == doctest::Approx(5.0 / 6.0));
  CHECK(r.top5_error == doctest::Approx(1.0 / 6.0));
  CHECK(r.loss == doctest::Approx(std::log(6.0)));

  const ImageDataset three = synth_shapes(1, 30, 8, 3);
  LogitsFn flat3 = [](const Tensor& x) { return Tensor::zeros({x.dim(0), 3}); };
  CHECK(std::isnan(evaluate(flat3, three, three.stats).top5_error));
  CHECK_THROWS_AS(evaluate(flat3, three, three.stats, 0), ConfigError);
}

TEST_CASE("evaluation checks data against the network") {
  const Network net(tiny_arch(), 0);
  CHECK_THROWS_AS(evaluate(net, synth_shapes(0, 6, 16, 3)), ConfigError);
  CHECK_THROWS_AS(evaluate(net, synth_shapes(0, 8, 8, 4)), InputError);
  CHECK(evaluate(net, synth_shapes(0, 6, 8, 3)).count == 6);
}

TEST_CASE("augmentation without pad or flip is the identity") {
  Rng rng(1);
  const ImageDataset d = synth_shapes(2, 4, 8, 2);
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const Tensor x = d.batch(idx, d.stats);
  const Tensor y = augment_batch(x, rng, 0, false);
  CHECK(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
  CHECK_THROWS_AS(augment_batch(Tensor::zeros({8, 8, 3}), rng, 1, false), ShapeError);
}

TEST_CASE("flip-only augmentation mirrors whole images") {
  Rng rng(2);
  const ImageDataset d = synth_shapes(3, 16, 8, 2);
  std::vector<std::size_t> idx(16);
  for (std::size_t i = 0; i < 16; ++i) idx[i] = i;
  const Tensor x = d.batch(idx, d.stats);
  const Tensor y = augment_batch(x, rng, 0, true);
  std::size_t flipped = 0;
  for (std::size_t b = 0; b < 16; ++b) {
    bool same = true, mirrored = true;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        for (std::size_t c = 0; c < 3; ++c) {
          const double out = y.at(((b * 8 + i) * 8 + j) * 3 + c);
          same = same && out == x.at(((b * 8 + i) * 8 + j) * 3 + c);
          mirrored = mirrored && out == x.at(((b * 8 + i) * 8 + (7 - j)) * 3 + c);
        }
    CHECK((same || mirrored));
    flipped += !same;
  }
  CHECK(flipped > 0);
  CHECK(flipped < 16);
}

TEST_CASE("padded crops keep the shape and only add zeros") {
  Rng rng(3);
  const Tensor x = Tensor::full({4, 8, 8, 3}, 1.0);
  const Tensor y = augment_batch(x, rng, 2, false);
  CHECK(y.shape() == x.shape());
  for (double v : y.values()) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("final training is seeded and restores the best epoch") {
  const ImageDataset train = synth_shapes(4, 48, 8, 3), test = synth_shapes(5, 24, 8, 3);
  TrainConfig c;
  c.epochs = 2;
  c.initial_channels = 8;
  c.batch_size = 16;
  c.seed = 3;
  const TrainResult a = train_final(tiny_arch(), c, train, test);
  const TrainResult b = train_final(tiny_arch(), c, train, test);
  REQUIRE(a.metrics.size() == 3);
  CHECK(a.metrics[0].epoch == 0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.metrics[i].train_loss == b.metrics[i].train_loss);
    CHECK(a.metrics[i].test_top1 == b.metrics[i].test_top1);
    CHECK(std::isnan(a.metrics[i].test_top5));
  }
  CHECK(a.best_epoch == b.best_epoch);
  CHECK(1.0 - a.best.top1_error == doctest::Approx(a.metrics[a.best_epoch].test_top1));
  for (const auto& m : a.metrics) CHECK(m.test_top1 <= 1.0 - a.best.top1_error + 1e-12);
  // the returned weights are the selected epoch's
  CHECK(evaluate(a.network, test).top1_error == doctest::Approx(a.best.top1_error));

  TrainConfig bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(train_final(tiny_arch(), bad, train, test), ConfigError);
  CHECK_THROWS_AS(train_final(tiny_arch(), c, synth_shapes(0, 12, 16, 3), test), ConfigError);
}

TEST_CASE("desk training descends, and only real labels are predictable") {
  const ImageDataset train = synth_shapes(0, 600, 16, 3), test = synth_shapes(1, 300, 16, 3);
  Architecture a;
  a.macro = MacroConfig::desk();
  a.choices.assign(a.macro.num_layers(), CandidateOp::local(3, 4));
  TrainConfig c;
  c.epochs = 5;
  c.initial_channels = 16;
  c.batch_size = 32;
  const TrainResult r = train_final(a, c, train, test);
  CHECK(r.metrics[5].train_loss < r.metrics[0].train_loss);

  // binomial 3 sigma around chance for 300 images
  const double chance = 1.0 / 3.0, band = 3.0 * std::sqrt(chance * (1.0 - chance) / 300.0);
  CHECK(std::abs(r.metrics[0].test_top1 - chance) <= band);
  ImageDataset permuted = test;
  Rng rng(9);
  std::shuffle(permuted.labels.begin(), permuted.labels.end(), rng);
  CHECK(std::abs(1.0 - evaluate(r.network, permuted).top1_error - chance) <= band);
}

TEST_CASE("parameter counts agree between network and architecture") {
  const Network n = Network::instantiate(tiny_arch(), 16, 0);
  CHECK(count_params(n) == count_params(tiny_arch(), 16));
  CHECK(count_params(tiny_arch(), 16) > count_params(tiny_arch(), 8));
}

TEST_CASE("plots carry one polyline per series") {
  const std::vector<HistoryRow> h{{"car_search", 1, "train", 0.5, std::nan("")},
                                  {"car_search", 1, "val", 0.6, std::nan("")},
                                  {"finetune", 1, "train", 1.1, 0.3},
                                  {"finetune", 1, "val", 1.0, 0.4}};
  const std::string loss = plot_csv(history_to_csv(h), "loss");
  CHECK(loss.rfind("<svg", 0) == 0);
  CHECK(count_of(loss, "<polyline") == 4);
  // accuracy is NaN in the car rows, so those series vanish
  CHECK(count_of(plot_csv(history_to_csv(h), "acc"), "<polyline") == 2);
  const std::vector<MetricsRow> m{{0, 1.1, 0.3, std::nan("")}, {1, 0.9, 0.5, std::nan("")}};
  CHECK(count_of(plot_csv(metrics_to_csv(m), "loss"), "<polyline") == 2);
  CHECK_THROWS_AS(plot_csv(history_to_csv(h), "f1"), ConfigError);
  CHECK_THROWS_AS(plot_csv("a,b\n1,2\n", "loss"), ParseError);
}

TEST_CASE("scale sweep parameters grow with width and depth") {
  ScaleConfig c;
  c.channels = {8, 16, 24};
  c.stages = {2, 3};
  c.layers_per_stage = 1;
  c.train.epochs = 0;
  const ImageDataset d = synth_shapes(6, 12, 8, 3);
  const auto rows = scale_sweep(c, std::nullopt, d, d);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].channels == 8);
  CHECK(rows[1].stages == 3);
  for (std::size_t i = 0; i < 6; ++i) {
    if (i % 2 == 1) CHECK(rows[i].params > rows[i - 1].params);
    if (i >= 2) CHECK(rows[i].params > rows[i - 2].params);
    CHECK(rows[i].top1_acc >= 0.0);
    CHECK(rows[i].top1_acc <= 1.0);
  }
  const Architecture s = scaled_architecture(tiny_arch(), 8, 3, 16, 3, 1);
  CHECK(s.choices.size() == 3);
  CHECK(s.choices[2] == tiny_arch().choices[0]);
  c.channels.clear();
  CHECK_THROWS_AS(scale_sweep(c, std::nullopt, d, d), ConfigError);
}
