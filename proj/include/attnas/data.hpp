#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnas/search_space.hpp"
#include "attnas/tensor.hpp"

namespace attnas {

/// Square RGB images, channels-last, pixel values in [0, 1].
struct ImageDataset {
  std::size_t image_size = 0;
  std::size_t count = 0;
  std::vector<double> pixels;  // count * image_size^2 * 3
  std::vector<int> labels;     // empty for unlabeled data
  std::size_t class_count = 0;
  Normalization stats;         // from the full training set; subsets inherit
  std::string split_tag;

  bool labeled() const { return !labels.empty(); }
  std::size_t pixels_per_image() const { return image_size * image_size * 3; }
  std::span<const double> image(std::size_t i) const;

  void compute_stats();
  ImageDataset subset(std::span<const std::size_t> indices, const std::string& tag) const;

  /// Normalised [B, H, W, 3] tensor for the given images.
  Tensor batch(std::span<const std::size_t> indices, const Normalization& norm) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

/// Standard CIFAR-10 binary batch: per record one label byte, then 1024 R,
/// 1024 G and 1024 B bytes in row-major order. expected_records = 0 accepts
/// any whole number of records.
ImageDataset load_cifar_binary(const std::filesystem::path& path, std::size_t expected_records = 0);
std::vector<std::uint8_t> encode_cifar_records(const ImageDataset& ds);

/// Procedural shapes on textured noise; label i % classes for image i.
ImageDataset synth_shapes(std::uint64_t seed, std::size_t n, std::size_t size, std::size_t classes);

struct SplitSpec {
  double ratio = 0.5;
  std::uint64_t seed = 0;
};

/// Seeded index partition; part a gets round(ratio * n) items.
struct SplitIndices {
  std::vector<std::size_t> a, b;
};
SplitIndices split_indices(std::size_t n, const SplitSpec& spec);
std::pair<ImageDataset, ImageDataset> split(const ImageDataset& ds, const SplitSpec& spec);

/// Little-endian container of named blobs:
///   "ATNSCKPT" | u32 version | u32 entry count | entries
///   entry: u8 type | u32 name length | name | payload
///   type 0 tensor: u32 rank | u64 dims[rank] | f64 values
///   type 1 string: u64 length | bytes
///   type 2 int:    i64
class Checkpoint {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  struct Entry {
    enum class Type : std::uint8_t { kTensor = 0, kString = 1, kInt = 2 };
    Type type = Type::kTensor;
    std::string name;
    Shape shape;
    std::vector<double> values;
    std::string text;
    std::int64_t integer = 0;
  };

  void put_tensor(const std::string& name, const Shape& shape, std::span<const double> values);
  void put_string(const std::string& name, const std::string& text);
  void put_int(const std::string& name, std::int64_t v);

  bool has(const std::string& name) const;
  const Entry& get(const std::string& name) const;
  std::vector<double> tensor_values(const std::string& name) const;
  /// Copies the named blob into t; shapes must agree.
  void read_into(const std::string& name, Tensor& t) const;
  void read_into(const std::string& name, std::vector<double>& v) const;
  std::string string_value(const std::string& name) const;
  std::int64_t int_value(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(std::span<const std::uint8_t> bytes);
  /// Writes to a temporary sibling and renames it into place.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<Entry> entries_;
};

inline constexpr int kArchFormatVersion = 1;
std::string arch_to_json(const Architecture& arch);
Architecture arch_from_json(const std::string& text);
void save_arch(const Architecture& arch, const std::filesystem::path& path);
Architecture load_arch(const std::filesystem::path& path);

struct HistoryRow {
  std::string phase;  // car_search | finetune
  std::size_t epoch = 0;
  std::string split;  // train | val
  double loss = 0.0;
  double acc = 0.0;  // NaN when not applicable
};
std::string history_to_csv(std::span<const HistoryRow> rows);
std::vector<HistoryRow> history_from_csv(const std::string& text);

struct MetricsRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_top1 = 0.0;
  double test_top5 = 0.0;  // NaN when fewer than 5 classes
};
std::string metrics_to_csv(std::span<const MetricsRow> rows);
std::vector<MetricsRow> metrics_from_csv(const std::string& text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace attnas
