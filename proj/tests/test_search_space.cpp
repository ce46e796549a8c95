#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>

#include "attnas/error.hpp"
#include "attnas/ops.hpp"
#include "attnas/search_space.hpp"
#include "support.hpp"

using namespace attnas;
using testing::randn;

namespace {

MacroConfig tiny() { return MacroConfig::ladder(8, 8, 2, 1, 3); }

}  // namespace

TEST_CASE("default macro rows and layer geometry") {
  const MacroConfig m = MacroConfig::table1();
  CHECK(m.image_size == 32);
  CHECK(m.stem_channels == 16);
  CHECK(m.num_layers() == 15);
  CHECK(m.feature_size() == 8);
  CHECK(m.feature_channels() == 64);
  CHECK(m.downsampling_stages() == 2);
  const auto layers = m.layers();
  CHECK(layers[3].stage == 1);
  CHECK(layers[3].stride == 2);
  CHECK(layers[3].in_channels == 16);
  CHECK(layers[3].out_channels == 32);
  CHECK(layers[4].stride == 1);
  CHECK(layers[4].in_size == 16);
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("macro validation rejects bad geometry") {
  MacroConfig m = tiny();
  m.image_size = 6;
  m.stages[1].stride = 2;
  m.stages.push_back({16, 1, 2});
  CHECK_THROWS_AS(m.validate_structure(), ConfigError);
  MacroConfig h = tiny();
  h.stages[0].channels = 40;  // bottleneck 10 is not divisible by 4 or 8 heads
  CHECK_THROWS_AS(h.validate(), ConfigError);
  MacroConfig z = tiny();
  z.stages[0].layers = 0;
  CHECK_THROWS_AS(z.validate_structure(), ConfigError);
}

TEST_CASE("space size is exact") {
  CHECK(space_size(1) == "7");
  CHECK(space_size(15) == "4747561509943");
  CHECK(space_size(MacroConfig::table1()) == "4747561509943");
  CHECK(space_size(30) == "22539340290692258087863249");
}

TEST_CASE("argmax rows tie to the lowest index") {
  const std::vector<double> a{0, 1, 1, 0, 0, 0, 0,  //
                              2, 2, 2, 2, 2, 2, 2,  //
                              -1, -1, -1, -1, -1, -1, 0};
  CHECK(argmax_rows(a, 3) == std::vector<std::size_t>{1, 0, 6});
}

TEST_CASE("discretize follows the row map") {
  ArchParams p = ArchParams::zeros(4);
  p.alpha.mutable_values()[2 * 7 + 5] = 1.0;
  const Architecture a = discretize(p, MacroConfig::ladder(8, 8, 2, 2, 3));
  REQUIRE(a.choices.size() == 4);
  CHECK(a.choices[0] == CandidateOp::all()[0]);
  CHECK(a.choices[2] == CandidateOp::all()[5]);
}

TEST_CASE("stage-tied layout shares rows across alternate stages") {
  const MacroConfig m = MacroConfig::ladder(32, 8, 5, 2, 10);
  const ArchParams p = ArchParams::stage_tied(m);
  CHECK(p.rows() == 4);
  CHECK(p.layers() == 10);
  const auto layers = m.layers();
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (std::size_t j = 0; j < layers.size(); ++j)
      if (layers[i].stage % 2 == layers[j].stage % 2 && layers[i].position == layers[j].position)
        CHECK(p.row_of_layer[i] == p.row_of_layer[j]);
  MacroConfig uneven = m;
  uneven.stages[2].layers = 3;
  CHECK_THROWS_AS(ArchParams::stage_tied(uneven), ConfigError);
}

TEST_CASE("uniform alpha initialisation stays within eps and is seeded") {
  const ArchParams layout = ArchParams::zeros(3);
  const ArchParams a = ArchParams::uniform_random(layout, 1e-3, 9);
  const ArchParams b = ArchParams::uniform_random(layout, 1e-3, 9);
  CHECK(std::equal(a.alpha.values().begin(), a.alpha.values().end(), b.alpha.values().begin()));
  for (double v : a.alpha.values()) CHECK(std::abs(v) <= 1e-3);
  CHECK(a.row_of_layer == layout.row_of_layer);
}

TEST_CASE("zero alpha mixes the candidates with equal weight") {
  Supernet net(tiny(), 4);
  ArchParams a = ArchParams::zeros(tiny().num_layers());
  std::mt19937_64 g(1);
  Tensor x = randn({2, 8, 8, 8}, g);
  Tensor mixed = net.mixed_forward(0, x, a.mixing_weights(), 0);
  std::vector<double> mean(mixed.numel(), 0.0);
  for (const auto& b : net.candidates(0)) {
    Tensor y = b.forward(x);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += y.at(i) / 7.0;
  }
  CHECK(testing::max_abs_diff(mixed.values(), mean) < 1e-12);
}

TEST_CASE("mixed output lies within the candidates' elementwise range") {
  Supernet net(tiny(), 5);
  std::mt19937_64 g(2);
  ArchParams a = ArchParams::zeros(tiny().num_layers());
  for (double& v : a.alpha.mutable_values()) v = std::normal_distribution<double>(0, 2)(g);
  Tensor x = randn({1, 8, 8, 8}, g);
  Tensor mixed = net.mixed_forward(0, x, a.mixing_weights(), 0);
  std::vector<double> lo(mixed.numel(), 1e300), hi(mixed.numel(), -1e300);
  for (const auto& b : net.candidates(0)) {
    Tensor y = b.forward(x);
    for (std::size_t i = 0; i < lo.size(); ++i) {
      lo[i] = std::min(lo[i], y.at(i));
      hi[i] = std::max(hi[i], y.at(i));
    }
  }
  for (std::size_t i = 0; i < lo.size(); ++i) {
    CHECK(mixed.at(i) >= lo[i] - 1e-12);
    CHECK(mixed.at(i) <= hi[i] + 1e-12);
  }
}

TEST_CASE("supernet and network parameter counts") {
  const MacroConfig m = MacroConfig::ladder(16, 16, 3, 2, 3);
  Supernet net(m, 1);
  CHECK(count_scalars(net.weights()) == Supernet::analytic_param_count(m));
  Architecture arch;
  arch.macro = m;
  for (std::size_t i = 0; i < m.num_layers(); ++i) arch.choices.push_back(CandidateOp::all()[(i * 3) % 7]);
  Network n(arch, 2);
  CHECK(count_scalars(n.params()) == Network::analytic_param_count(arch));
}

TEST_CASE("network instantiation widens channels proportionally") {
  Architecture arch;
  arch.macro = MacroConfig::ladder(16, 16, 2, 1, 3);
  arch.choices = {CandidateOp::local(3, 4), CandidateOp::nonlocal()};
  Network n = Network::instantiate(arch, 32, 0);
  CHECK(n.config().stem_channels == 32);
  CHECK(n.config().stages[1].channels == 64);
  Tensor logits = n.logits(Tensor::zeros({2, 16, 16, 3}));
  CHECK(logits.shape() == Shape{2, 3});
  arch.choices.pop_back();
  CHECK_THROWS_AS(Network(arch, 0), ConfigError);
}

TEST_CASE("supernet weights are seeded") {
  Supernet a(tiny(), 7), b(tiny(), 7), c(tiny(), 8);
  const auto wa = a.weights(), wb = b.weights(), wc = c.weights();
  CHECK(std::equal(wa[0].tensor.values().begin(), wa[0].tensor.values().end(), wb[0].tensor.values().begin()));
  CHECK_FALSE(std::equal(wa[0].tensor.values().begin(), wa[0].tensor.values().end(), wc[0].tensor.values().begin()));
}
