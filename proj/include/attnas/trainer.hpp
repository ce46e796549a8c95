#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "attnas/data.hpp"
#include "attnas/optim.hpp"
#include "attnas/search_space.hpp"

namespace attnas {

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t initial_channels = 96;
  std::size_t batch_size = 96;
  SgdOptions sgd{0.04, 0.9, 4e-4};
  bool cosine = true;
  bool augment = true;
  std::size_t pad = 4;  // random-crop padding
  bool flip = true;
  double label_smoothing = 0.0;
  std::uint64_t seed = 0;
  // Pick the best epoch on a slice of the training set instead of the test set.
  bool select_on_validation = false;
  double validation_ratio = 0.1;
};

struct EvalResult {
  double top1_error = 0.0;
  double top5_error = 0.0;  // NaN below 5 classes
  double loss = 0.0;
  std::size_t count = 0;
};

using LogitsFn = std::function<Tensor(const Tensor&)>;

/// No augmentation; argmax ties go to the lowest class index.
EvalResult evaluate(const LogitsFn& model, const ImageDataset& data, const Normalization& norm,
                    std::size_t batch_size = 128);
EvalResult evaluate(const Network& net, const ImageDataset& data, std::size_t batch_size = 128);

struct TrainResult {
  Network network;
  std::vector<MetricsRow> metrics;  // row 0 is the untrained network
  std::size_t best_epoch = 0;
  EvalResult best;
  double wall_clock_s = 0.0;
};

/// Pad-and-crop translation plus horizontal flip on a normalised
/// [B, H, W, C] batch; padding reads as zero.
Tensor augment_batch(const Tensor& batch, Rng& rng, std::size_t pad, bool flip);

/// Trains a freshly initialised network; the weights of the best epoch are
/// restored before returning.
TrainResult train_final(const Architecture& arch, const TrainConfig& cfg, const ImageDataset& train,
                        const ImageDataset& test);

std::size_t count_params(const Network& net);
std::size_t count_params(const Architecture& arch, std::size_t initial_channels);

}  // namespace attnas
