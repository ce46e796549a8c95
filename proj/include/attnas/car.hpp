#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "attnas/params.hpp"
#include "attnas/tensor.hpp"

// Context auto-regression: mask random rectangles, encode, decode back to the
// input resolution and score the reconstruction with L1.
namespace attnas {

struct MaskRect {
  std::size_t top = 0, left = 0, height = 0, width = 0;
  bool operator==(const MaskRect&) const = default;
};

struct MaskSpec {
  std::size_t image_size = 0;
  std::vector<MaskRect> rects;

  /// Fraction of pixels covered by the union of the rectangles.
  double coverage() const;
  /// H*W indicator of the union, row-major.
  std::vector<unsigned char> pixel_mask() const;
  bool operator==(const MaskSpec&) const = default;
};

inline constexpr double kMaxMaskCoverage = 0.25;

enum class MaskFill { kMean, kZero };
enum class LossRegion { kAll, kMasked };

struct CarConfig {
  std::pair<std::size_t, std::size_t> count_range{2, 5};
  // side lengths as fractions of the image side
  std::pair<double, double> size_range{1.0 / 8.0, 1.0 / 3.0};
  MaskFill fill = MaskFill::kMean;
  LossRegion loss_region = LossRegion::kAll;
};

/// Count and side lengths are drawn first; a rectangle that would push the
/// union past 25% of the image is dropped.
MaskSpec generate_masks(Rng& rng, std::size_t image_size, std::pair<std::size_t, std::size_t> count_range,
                        std::pair<double, double> size_range);

/// Sets masked pixels of an [H, W, C] image to fill[c]. Not differentiable.
Tensor apply_masks(const Tensor& image, const MaskSpec& m, std::span<const double> fill);
/// Batched variant, one mask per image of a [B, H, W, C] tensor.
Tensor apply_masks(const Tensor& batch, std::span<const MaskSpec> masks, std::span<const double> fill);

/// upsample -> linear -> relu per step (channels halve, at least 8), then a
/// linear map to the output channels.
class Decoder {
 public:
  Decoder(std::size_t in_channels, std::size_t steps, std::size_t out_channels, Rng& rng);

  Tensor forward(const Tensor& features) const;
  ParamList params() const;
  std::size_t steps() const { return ws_.size(); }

 private:
  std::vector<Tensor> ws_, bs_;
  Tensor out_w_, out_b_;
};

using Encoder = std::function<Tensor(const Tensor&)>;

Tensor car_forward(const Encoder& encoder, const Decoder& decoder, const Tensor& masked);

/// Mean absolute error against the unmasked input; with kMasked only pixels
/// under the masks count.
Tensor car_loss(const Tensor& recon, const Tensor& original, LossRegion region = LossRegion::kAll,
                std::span<const MaskSpec> masks = {});

}  // namespace attnas
