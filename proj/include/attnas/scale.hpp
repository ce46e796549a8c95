#pragma once

#include <optional>
#include <vector>

#include "attnas/data.hpp"
#include "attnas/search_space.hpp"
#include "attnas/trainer.hpp"

namespace attnas {

struct ScaleConfig {
  std::vector<std::size_t> channels{8, 16};
  std::vector<std::size_t> stages{2, 3};
  std::size_t layers_per_stage = 2;
  TrainConfig train;
};

struct ScaleRow {
  std::size_t channels = 0;
  std::size_t stages = 0;
  std::size_t params = 0;
  double top1_acc = 0.0;
};

/// Architecture for one grid point: the ladder macro at the given width and
/// depth, with the base choices repeated layer by layer (LocalSA_k3_h4
/// throughout when there is no base).
Architecture scaled_architecture(const std::optional<Architecture>& base, std::size_t image_size,
                                 std::size_t num_classes, std::size_t channels, std::size_t stages,
                                 std::size_t layers_per_stage);

/// Width-major grid; with train.epochs == 0 the accuracy column is the
/// untrained network's.
std::vector<ScaleRow> scale_sweep(const ScaleConfig& cfg, const std::optional<Architecture>& base,
                                  const ImageDataset& train, const ImageDataset& test);

}  // namespace attnas
