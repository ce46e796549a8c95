#include "attnas/car.hpp"

#include <algorithm>

#include "attnas/error.hpp"
#include "attnas/ops.hpp"

namespace attnas {

double MaskSpec::coverage() const {
  if (image_size == 0) return 0.0;
  const auto m = pixel_mask();
  return static_cast<double>(std::count(m.begin(), m.end(), 1)) / static_cast<double>(m.size());
}

std::vector<unsigned char> MaskSpec::pixel_mask() const {
  std::vector<unsigned char> m(image_size * image_size, 0);
  for (const auto& r : rects)
    for (std::size_t y = r.top; y < r.top + r.height; ++y)
      for (std::size_t x = r.left; x < r.left + r.width; ++x) m[y * image_size + x] = 1;
  return m;
}

MaskSpec generate_masks(Rng& rng, std::size_t image_size, std::pair<std::size_t, std::size_t> count_range,
                        std::pair<double, double> size_range) {
  if (image_size == 0) throw ConfigError("mask image size must be positive");
  if (count_range.first > count_range.second) throw ConfigError("mask count range is empty");
  if (!(size_range.first > 0.0 && size_range.first <= size_range.second && size_range.second <= 1.0)) {
    throw ConfigError("mask size range must satisfy 0 < lo <= hi <= 1");
  }
  const double s = static_cast<double>(image_size);
  const auto lo = std::max<std::size_t>(1, static_cast<std::size_t>(size_range.first * s));
  const auto hi = std::max(lo, static_cast<std::size_t>(size_range.second * s));

  std::uniform_int_distribution<std::size_t> count_dist(count_range.first, count_range.second);
  std::uniform_int_distribution<std::size_t> side(lo, hi);
  const std::size_t count = count_dist(rng);
  std::vector<MaskRect> drawn;
  for (std::size_t i = 0; i < count; ++i) {
    MaskRect r;
    r.height = side(rng);
    r.width = side(rng);
    r.top = std::uniform_int_distribution<std::size_t>(0, image_size - r.height)(rng);
    r.left = std::uniform_int_distribution<std::size_t>(0, image_size - r.width)(rng);
    drawn.push_back(r);
  }

  MaskSpec m;
  m.image_size = image_size;
  std::vector<unsigned char> covered(image_size * image_size, 0);
  std::size_t total = 0;
  const auto cap = static_cast<std::size_t>(kMaxMaskCoverage * s * s);
  for (const auto& r : drawn) {
    std::size_t fresh = 0;
    for (std::size_t y = r.top; y < r.top + r.height; ++y)
      for (std::size_t x = r.left; x < r.left + r.width; ++x) fresh += covered[y * image_size + x] == 0;
    if (total + fresh > cap) continue;
    for (std::size_t y = r.top; y < r.top + r.height; ++y)
      for (std::size_t x = r.left; x < r.left + r.width; ++x) covered[y * image_size + x] = 1;
    total += fresh;
    m.rects.push_back(r);
  }
  return m;
}

namespace {

void fill_one(std::span<double> img, std::size_t size, std::size_t channels, const MaskSpec& m,
              std::span<const double> fill) {
  if (m.image_size != size) {
    throw InputError("mask drawn for " + std::to_string(m.image_size) + "px images applied to " +
                     std::to_string(size) + "px image");
  }
  for (const auto& r : m.rects)
    for (std::size_t y = r.top; y < r.top + r.height; ++y)
      for (std::size_t x = r.left; x < r.left + r.width; ++x)
        for (std::size_t c = 0; c < channels; ++c) img[(y * size + x) * channels + c] = fill[c];
}

void check_fill(std::size_t channels, std::span<const double> fill) {
  if (fill.size() != channels) throw InputError("fill has " + std::to_string(fill.size()) + " channels, image has " + std::to_string(channels));
}

}  // namespace

Tensor apply_masks(const Tensor& image, const MaskSpec& m, std::span<const double> fill) {
  if (image.rank() != 3 || image.dim(0) != image.dim(1)) {
    throw InputError("apply_masks expects a square [H, W, C] image, got " + shape_str(image.shape()));
  }
  check_fill(image.dim(2), fill);
  Tensor out = image.detach();
  fill_one(out.mutable_values(), image.dim(0), image.dim(2), m, fill);
  return out;
}

Tensor apply_masks(const Tensor& batch, std::span<const MaskSpec> masks, std::span<const double> fill) {
  if (batch.rank() != 4 || batch.dim(1) != batch.dim(2)) {
    throw InputError("apply_masks expects a square [B, H, W, C] batch, got " + shape_str(batch.shape()));
  }
  if (masks.size() != batch.dim(0)) throw InputError("one mask per image required");
  check_fill(batch.dim(3), fill);
  Tensor out = batch.detach();
  const std::size_t per = batch.numel() / batch.dim(0);
  for (std::size_t b = 0; b < masks.size(); ++b) {
    fill_one(out.mutable_values().subspan(b * per, per), batch.dim(1), batch.dim(3), masks[b], fill);
  }
  return out;
}

Decoder::Decoder(std::size_t in_channels, std::size_t steps, std::size_t out_channels, Rng& rng) {
  std::size_t c = in_channels;
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t next = std::max<std::size_t>(8, c / 2);
    ws_.push_back(fan_in_uniform({c, next}, c, rng));
    bs_.push_back(Tensor::zeros({next}, true));
    c = next;
  }
  out_w_ = fan_in_uniform({c, out_channels}, c, rng);
  out_b_ = Tensor::zeros({out_channels}, true);
}

Tensor Decoder::forward(const Tensor& features) const {
  Tensor h = features;
  for (std::size_t i = 0; i < ws_.size(); ++i) h = ops::relu(ops::linear(ops::upsample_nearest2x(h), ws_[i], bs_[i]));
  return ops::linear(h, out_w_, out_b_);
}

ParamList Decoder::params() const {
  ParamList out;
  for (std::size_t i = 0; i < ws_.size(); ++i) {
    out.push_back({"decoder" + std::to_string(i) + ".w", ws_[i]});
    out.push_back({"decoder" + std::to_string(i) + ".b", bs_[i]});
  }
  out.push_back({"decoder.out.w", out_w_});
  out.push_back({"decoder.out.b", out_b_});
  return out;
}

Tensor car_forward(const Encoder& encoder, const Decoder& decoder, const Tensor& masked) {
  Tensor recon = decoder.forward(encoder(masked));
  if (recon.shape() != masked.shape()) {
    throw ShapeError("decoder produced " + shape_str(recon.shape()) + " for input " + shape_str(masked.shape()));
  }
  return recon;
}

Tensor car_loss(const Tensor& recon, const Tensor& original, LossRegion region, std::span<const MaskSpec> masks) {
  if (region == LossRegion::kAll) return ops::l1_loss(recon, original);
  const std::size_t r = original.rank();
  if (r != 3 && r != 4) throw ShapeError("car_loss expects [H, W, C] or [B, H, W, C]");
  const std::size_t batch = r == 4 ? original.dim(0) : 1;
  if (masks.size() != batch) throw InputError("masked loss needs one mask per image");
  const std::size_t channels = original.shape().back();
  std::vector<double> weight;
  weight.reserve(original.numel());
  for (const auto& m : masks) {
    for (unsigned char on : m.pixel_mask())
      for (std::size_t c = 0; c < channels; ++c) weight.push_back(on);
  }
  if (weight.size() != original.numel()) throw InputError("mask size does not match the image");
  return ops::l1_loss_masked(recon, original, weight);
}

}  // namespace attnas
