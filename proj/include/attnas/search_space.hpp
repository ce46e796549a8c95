#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attnas/attention.hpp"
#include "attnas/params.hpp"
#include "attnas/tensor.hpp"

namespace attnas {

struct StageSpec {
  std::size_t channels = 16;
  std::size_t layers = 3;
  std::size_t stride = 1;
  bool operator==(const StageSpec&) const = default;
};

/// Where one searchable layer sits in the macro-architecture.
struct LayerSpec {
  std::size_t stage = 0;
  std::size_t position = 0;  // index inside the stage
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t in_size = 0;  // spatial extent entering the layer
};

/// Stage-wise macro-architecture: a fixed LocalSA_k3_h8 stem, searchable
/// stages, then global average pooling and a fully connected classifier.
struct MacroConfig {
  std::size_t image_size = 32;
  std::size_t in_channels = 3;
  std::size_t stem_channels = 16;
  std::vector<StageSpec> stages;
  std::size_t num_classes = 10;

  /// Five stages of three layers: channels 16,32,32,64,64; strides 1,2,1,2,1.
  static MacroConfig table1();
  /// First `stage_count` stages of the default ladder (C, 2C, 2C, 4C, 4C, ...)
  /// with strides alternating 1, 2.
  static MacroConfig ladder(std::size_t image_size, std::size_t initial_channels, std::size_t stage_count,
                            std::size_t layers_per_stage, std::size_t num_classes);
  /// 16x16 inputs, two stages of two layers (16 then 32 channels), 3 classes.
  static MacroConfig desk();

  /// Repeats every odd-numbered stage (1st, 3rd, ...) once, with stride 1.
  MacroConfig deepened() const;
  /// Scales every channel count by initial_channels / stem_channels, rounded
  /// to the nearest multiple of 8 (minimum 8).
  MacroConfig scaled(std::size_t initial_channels) const;

  std::size_t num_layers() const;
  std::vector<LayerSpec> layers() const;
  std::size_t feature_size() const;
  std::size_t feature_channels() const;
  std::size_t downsampling_stages() const;

  /// Spatial divisibility, strides and positive sizes.
  void validate_structure() const;
  /// validate_structure() plus: every candidate fits every layer.
  void validate() const;
  bool operator==(const MacroConfig&) const = default;
};

/// Architecture parameters: one row of 7 logits per distinct row group.
/// row_of_layer maps each searchable layer to its row; untied spaces use the
/// identity map.
struct ArchParams {
  Tensor alpha;
  std::vector<std::size_t> row_of_layer;

  static ArchParams zeros(std::size_t layers);
  /// Ties layer j of every odd-numbered stage together, and likewise for the
  /// even-numbered stages. Tied stages need equal layer counts.
  static ArchParams stage_tied(const MacroConfig& cfg);
  static ArchParams uniform_random(const ArchParams& layout, double eps, std::uint64_t seed);

  std::size_t rows() const { return alpha.dim(0); }
  std::size_t layers() const { return row_of_layer.size(); }
  Tensor mixing_weights() const;
};

/// Weight-sharing search network. Every searchable layer holds one
/// independently initialised block per candidate.
class Supernet {
 public:
  Supernet(const MacroConfig& cfg, std::uint64_t seed);

  /// Output of the last searchable layer, before pooling.
  Tensor features(const Tensor& x, const ArchParams& alpha) const;
  Tensor logits(const Tensor& x, const ArchParams& alpha) const;

  /// softmax(alpha_row)-weighted sum of the seven candidate outputs.
  Tensor mixed_forward(std::size_t layer, const Tensor& x, const Tensor& mix_weights, std::size_t row) const;

  /// (row label, input shape) for Stem, each stage, the pooling layer and the
  /// output layer, from an actual forward pass on a single image.
  std::vector<std::pair<std::string, Shape>> shape_trace(const ArchParams& alpha) const;

  ParamList weights() const;
  const MacroConfig& config() const { return cfg_; }
  const Block& stem() const { return stem_; }
  const std::vector<Block>& candidates(std::size_t layer) const { return layers_.at(layer); }
  std::vector<Block>& candidates(std::size_t layer) { return layers_.at(layer); }
  std::size_t num_layers() const { return layers_.size(); }

  static std::size_t analytic_param_count(const MacroConfig& cfg);

 private:
  MacroConfig cfg_;
  Rng rng_;
  Block stem_;
  std::vector<std::vector<Block>> layers_;
  Tensor head_w_, head_b_;
};

struct Architecture {
  MacroConfig macro;
  std::vector<CandidateOp> choices;
  std::uint64_t seed = 0;
  std::string config_hash;
  int version = 1;
};

/// Per-layer argmax of alpha, ties to the lowest candidate index.
Architecture discretize(const ArchParams& alpha, const MacroConfig& cfg);
std::vector<std::size_t> argmax_rows(std::span<const double> alpha, std::size_t rows);

/// 7^layers as an exact decimal string.
std::string space_size(std::size_t layers);
std::string space_size(const MacroConfig& cfg);

/// Per-channel input normalisation carried with a trained network.
struct Normalization {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

/// Stand-alone network with exactly one block per layer.
class Network {
 public:
  /// Builds the architecture at the channel widths stored in arch.macro.
  Network(const Architecture& arch, std::uint64_t seed);
  /// Widens the architecture so the stem has `initial_channels` channels.
  static Network instantiate(const Architecture& arch, std::size_t initial_channels, std::uint64_t seed);

  Tensor features(const Tensor& x) const;
  Tensor logits(const Tensor& x) const;

  ParamList params() const;
  const Architecture& architecture() const { return arch_; }
  const MacroConfig& config() const { return arch_.macro; }
  const std::vector<Block>& blocks() const { return blocks_; }

  Normalization normalization;

  static std::size_t analytic_param_count(const Architecture& arch);

 private:
  Architecture arch_;
  Rng rng_;
  Block stem_;
  std::vector<Block> blocks_;
  Tensor head_w_, head_b_;
};

}  // namespace attnas
