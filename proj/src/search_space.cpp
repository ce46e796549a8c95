#include "attnas/search_space.hpp"

#include <algorithm>
#include <cmath>

#include "attnas/error.hpp"
#include "attnas/ops.hpp"

namespace attnas {

MacroConfig MacroConfig::table1() { return ladder(32, 16, 5, 3, 10); }

MacroConfig MacroConfig::ladder(std::size_t image_size, std::size_t initial_channels, std::size_t stage_count,
                                std::size_t layers_per_stage, std::size_t num_classes) {
  MacroConfig cfg;
  cfg.image_size = image_size;
  cfg.stem_channels = initial_channels;
  cfg.num_classes = num_classes;
  for (std::size_t i = 0; i < stage_count; ++i) {
    const std::size_t mult = std::size_t{1} << ((i + 1) / 2);
    cfg.stages.push_back({initial_channels * mult, layers_per_stage, i % 2 == 1 ? 2u : 1u});
  }
  return cfg;
}

MacroConfig MacroConfig::desk() { return ladder(16, 16, 2, 2, 3); }

MacroConfig MacroConfig::deepened() const {
  MacroConfig out = *this;
  out.stages.clear();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    out.stages.push_back(stages[i]);
    if (i % 2 == 0) {
      StageSpec rep = stages[i];
      rep.stride = 1;
      out.stages.push_back(rep);
    }
  }
  return out;
}

MacroConfig MacroConfig::scaled(std::size_t initial_channels) const {
  if (initial_channels == 0) throw ConfigError("initial channels must be positive");
  const double ratio = static_cast<double>(initial_channels) / static_cast<double>(stem_channels);
  auto scale = [ratio](std::size_t c) {
    const auto r = static_cast<std::size_t>(std::llround(static_cast<double>(c) * ratio / 8.0)) * 8;
    return std::max<std::size_t>(8, r);
  };
  MacroConfig out = *this;
  out.stem_channels = scale(stem_channels);
  for (auto& s : out.stages) s.channels = scale(s.channels);
  return out;
}

std::size_t MacroConfig::num_layers() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.layers;
  return n;
}

std::vector<LayerSpec> MacroConfig::layers() const {
  std::vector<LayerSpec> out;
  std::size_t c = stem_channels, size = image_size;
  for (std::size_t si = 0; si < stages.size(); ++si) {
    for (std::size_t j = 0; j < stages[si].layers; ++j) {
      LayerSpec l;
      l.stage = si;
      l.position = j;
      l.in_channels = c;
      l.out_channels = stages[si].channels;
      l.stride = j == 0 ? stages[si].stride : 1;
      l.in_size = size;
      out.push_back(l);
      c = l.out_channels;
      size /= l.stride;
    }
  }
  return out;
}

std::size_t MacroConfig::feature_size() const {
  std::size_t size = image_size;
  for (const auto& s : stages)
    if (s.layers > 0) size /= s.stride;
  return size;
}

std::size_t MacroConfig::feature_channels() const {
  std::size_t c = stem_channels;
  for (const auto& s : stages)
    if (s.layers > 0) c = s.channels;
  return c;
}

std::size_t MacroConfig::downsampling_stages() const {
  return static_cast<std::size_t>(
      std::count_if(stages.begin(), stages.end(), [](const StageSpec& s) { return s.stride == 2 && s.layers > 0; }));
}

void MacroConfig::validate_structure() const {
  if (image_size == 0 || in_channels == 0 || stem_channels == 0 || num_classes == 0) {
    throw ConfigError("macro config: sizes and channel counts must be positive");
  }
  for (const auto& s : stages) {
    if (s.stride != 1 && s.stride != 2) throw ConfigError("stage stride must be 1 or 2");
    if (s.channels == 0) throw ConfigError("stage channels must be positive");
    if (s.layers == 0) throw ConfigError("every stage needs at least one layer");
  }
  if (stages.empty()) throw ConfigError("macro config needs at least one stage");
  std::size_t idx = 0;
  for (const auto& l : layers()) {
    if (l.stride == 2 && l.in_size % 2 != 0) {
      throw ConfigError("layer " + std::to_string(idx) + ": stride 2 on odd spatial size " +
                        std::to_string(l.in_size));
    }
    ++idx;
  }
}

void MacroConfig::validate() const {
  validate_structure();
  if (bottleneck_width(stem_channels) % 8 != 0) {
    throw ConfigError("stem: bottleneck width " + std::to_string(bottleneck_width(stem_channels)) +
                      " not divisible by 8 heads");
  }
  std::size_t idx = 0;
  for (const auto& l : layers()) {
    const std::size_t m = bottleneck_width(l.out_channels);
    for (const auto& op : CandidateOp::all()) {
      if (op.kind == OpKind::kLocal && m % op.heads != 0) {
        throw ConfigError("layer " + std::to_string(idx) + " (stage " + std::to_string(l.stage + 1) +
                          "): bottleneck width " + std::to_string(m) + " not divisible by " +
                          std::to_string(op.heads) + " heads for " + op.name());
      }
    }
    ++idx;
  }
}

ArchParams ArchParams::zeros(std::size_t layers) {
  if (layers == 0) throw ConfigError("architecture parameters need at least one layer");
  ArchParams a;
  a.alpha = Tensor::zeros({layers, kNumCandidates}, true);
  a.row_of_layer.resize(layers);
  for (std::size_t i = 0; i < layers; ++i) a.row_of_layer[i] = i;
  return a;
}

ArchParams ArchParams::stage_tied(const MacroConfig& cfg) {
  // group 0: stages 1, 3, 5, ...; group 1: stages 2, 4, ...
  std::array<std::size_t, 2> group_layers{0, 0};
  std::array<bool, 2> seen{false, false};
  for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
    const std::size_t g = si % 2;
    if (!seen[g]) {
      group_layers[g] = cfg.stages[si].layers;
      seen[g] = true;
    } else if (cfg.stages[si].layers != group_layers[g]) {
      throw ConfigError("stage-tied space needs equal layer counts in stages " + std::to_string(g + 1) + " and " +
                        std::to_string(si + 1));
    }
  }
  ArchParams a;
  const std::size_t rows = group_layers[0] + group_layers[1];
  a.alpha = Tensor::zeros({rows, kNumCandidates}, true);
  for (const auto& l : cfg.layers()) {
    a.row_of_layer.push_back((l.stage % 2 == 0 ? 0 : group_layers[0]) + l.position);
  }
  return a;
}

ArchParams ArchParams::uniform_random(const ArchParams& layout, double eps, std::uint64_t seed) {
  ArchParams a;
  a.row_of_layer = layout.row_of_layer;
  a.alpha = Tensor::zeros(layout.alpha.shape(), true);
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-eps, eps);
  for (auto& v : a.alpha.mutable_values()) v = dist(rng);
  return a;
}

Tensor ArchParams::mixing_weights() const { return ops::softmax(alpha, 1); }

Supernet::Supernet(const MacroConfig& cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      rng_(seed),
      stem_(CandidateOp::local(3, 8), cfg.in_channels, cfg.stem_channels, 1, rng_) {
  for (const auto& l : cfg_.layers()) {
    std::vector<Block> blocks;
    blocks.reserve(kNumCandidates);
    for (const auto& op : CandidateOp::all()) blocks.emplace_back(op, l.in_channels, l.out_channels, l.stride, rng_);
    layers_.push_back(std::move(blocks));
  }
  const std::size_t c = cfg_.feature_channels();
  head_w_ = fan_in_uniform({c, cfg_.num_classes}, c, rng_);
  head_b_ = Tensor::zeros({cfg_.num_classes}, true);
}

Tensor Supernet::mixed_forward(std::size_t layer, const Tensor& x, const Tensor& mix_weights, std::size_t row) const {
  const auto& blocks = layers_.at(layer);
  std::vector<Tensor> outs;
  outs.reserve(blocks.size());
  for (const auto& b : blocks) outs.push_back(b.forward(x));
  return ops::weighted_sum(outs, mix_weights, row);
}

Tensor Supernet::features(const Tensor& x, const ArchParams& alpha) const {
  if (alpha.layers() != layers_.size()) {
    throw ConfigError("architecture parameters cover " + std::to_string(alpha.layers()) + " layers, network has " +
                      std::to_string(layers_.size()));
  }
  const Tensor w = alpha.mixing_weights();
  Tensor h = stem_.forward(x);
  for (std::size_t i = 0; i < layers_.size(); ++i) h = mixed_forward(i, h, w, alpha.row_of_layer[i]);
  return h;
}

Tensor Supernet::logits(const Tensor& x, const ArchParams& alpha) const {
  return ops::linear(ops::global_avgpool(features(x, alpha)), head_w_, head_b_);
}

std::vector<std::pair<std::string, Shape>> Supernet::shape_trace(const ArchParams& alpha) const {
  std::vector<std::pair<std::string, Shape>> rows;
  Tensor x = Tensor::zeros({cfg_.image_size, cfg_.image_size, cfg_.in_channels});
  rows.emplace_back("Stem", x.shape());
  const Tensor w = alpha.mixing_weights();
  Tensor h = stem_.forward(x);
  const auto specs = cfg_.layers();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (specs[i].position == 0) rows.emplace_back("Stage " + std::to_string(specs[i].stage + 1), h.shape());
    h = mixed_forward(i, h, w, alpha.row_of_layer[i]);
  }
  rows.emplace_back("Pooling layer", h.shape());
  const Tensor pooled = ops::global_avgpool(h);
  rows.emplace_back("Output", Shape{1, 1, pooled.numel()});
  return rows;
}

ParamList Supernet::weights() const {
  ParamList out;
  stem_.append_params("stem.", out);
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (std::size_t b = 0; b < layers_[i].size(); ++b)
      layers_[i][b].append_params("layer" + std::to_string(i) + "." + layers_[i][b].op().name() + ".", out);
  out.push_back({"head.w", head_w_});
  out.push_back({"head.b", head_b_});
  return out;
}

std::size_t Supernet::analytic_param_count(const MacroConfig& cfg) {
  std::size_t n = Block::analytic_param_count(CandidateOp::local(3, 8), cfg.in_channels, cfg.stem_channels);
  for (const auto& l : cfg.layers())
    for (const auto& op : CandidateOp::all()) n += Block::analytic_param_count(op, l.in_channels, l.out_channels);
  n += cfg.feature_channels() * cfg.num_classes + cfg.num_classes;
  return n;
}

std::vector<std::size_t> argmax_rows(std::span<const double> alpha, std::size_t rows) {
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = alpha.data() + r * kNumCandidates;
    std::size_t best = 0;
    for (std::size_t j = 1; j < kNumCandidates; ++j)
      if (row[j] > row[best]) best = j;
    out[r] = best;
  }
  return out;
}

Architecture discretize(const ArchParams& alpha, const MacroConfig& cfg) {
  if (alpha.layers() != cfg.num_layers()) {
    throw ConfigError("architecture parameters cover " + std::to_string(alpha.layers()) + " layers, config has " +
                      std::to_string(cfg.num_layers()));
  }
  const auto best = argmax_rows(alpha.alpha.values(), alpha.rows());
  Architecture arch;
  arch.macro = cfg;
  for (std::size_t l = 0; l < alpha.layers(); ++l) arch.choices.push_back(CandidateOp::all()[best[alpha.row_of_layer[l]]]);
  return arch;
}

std::string space_size(std::size_t layers) {
  // little-endian base 1e9 limbs
  std::vector<std::uint64_t> limbs{1};
  constexpr std::uint64_t kBase = 1000000000ULL;
  for (std::size_t i = 0; i < layers; ++i) {
    std::uint64_t carry = 0;
    for (auto& limb : limbs) {
      const std::uint64_t v = limb * 7 + carry;
      limb = v % kBase;
      carry = v / kBase;
    }
    if (carry) limbs.push_back(carry);
  }
  std::string out = std::to_string(limbs.back());
  for (std::size_t i = limbs.size() - 1; i-- > 0;) {
    std::string part = std::to_string(limbs[i]);
    out += std::string(9 - part.size(), '0') + part;
  }
  return out;
}

std::string space_size(const MacroConfig& cfg) { return space_size(cfg.num_layers()); }

Network::Network(const Architecture& arch, std::uint64_t seed)
    : arch_((arch.macro.validate_structure(), arch)),
      rng_(seed),
      stem_(CandidateOp::local(3, 8), arch.macro.in_channels, arch.macro.stem_channels, 1, rng_) {
  const auto specs = arch_.macro.layers();
  if (arch_.choices.size() != specs.size()) {
    throw ConfigError("architecture has " + std::to_string(arch_.choices.size()) + " choices for " +
                      std::to_string(specs.size()) + " layers");
  }
  blocks_.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i)
    blocks_.emplace_back(arch_.choices[i], specs[i].in_channels, specs[i].out_channels, specs[i].stride, rng_);
  const std::size_t c = arch_.macro.feature_channels();
  head_w_ = fan_in_uniform({c, arch_.macro.num_classes}, c, rng_);
  head_b_ = Tensor::zeros({arch_.macro.num_classes}, true);
}

Network Network::instantiate(const Architecture& arch, std::size_t initial_channels, std::uint64_t seed) {
  Architecture scaled = arch;
  scaled.macro = arch.macro.scaled(initial_channels);
  return Network(scaled, seed);
}

Tensor Network::features(const Tensor& x) const {
  Tensor h = stem_.forward(x);
  for (const auto& b : blocks_) h = b.forward(h);
  return h;
}

Tensor Network::logits(const Tensor& x) const {
  return ops::linear(ops::global_avgpool(features(x)), head_w_, head_b_);
}

ParamList Network::params() const {
  ParamList out;
  stem_.append_params("stem.", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].append_params("layer" + std::to_string(i) + ".", out);
  out.push_back({"head.w", head_w_});
  out.push_back({"head.b", head_b_});
  return out;
}

std::size_t Network::analytic_param_count(const Architecture& arch) {
  const auto& cfg = arch.macro;
  std::size_t n = Block::analytic_param_count(CandidateOp::local(3, 8), cfg.in_channels, cfg.stem_channels);
  const auto specs = cfg.layers();
  for (std::size_t i = 0; i < specs.size(); ++i)
    n += Block::analytic_param_count(arch.choices.at(i), specs[i].in_channels, specs[i].out_channels);
  n += cfg.feature_channels() * cfg.num_classes + cfg.num_classes;
  return n;
}

}  // namespace attnas
