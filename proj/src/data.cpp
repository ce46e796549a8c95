#include "attnas/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "attnas/error.hpp"

namespace attnas {

std::span<const double> ImageDataset::image(std::size_t i) const {
  if (i >= count) throw InputError("image index " + std::to_string(i) + " out of range");
  return std::span<const double>(pixels).subspan(i * pixels_per_image(), pixels_per_image());
}

void ImageDataset::compute_stats() {
  std::array<double, 3> sum{}, sq{};
  const std::size_t n = count * image_size * image_size;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = pixels[p * 3 + c];
      sum[c] += v;
      sq[c] += v * v;
    }
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = n ? sum[c] / static_cast<double>(n) : 0.0;
    const double var = n ? sq[c] / static_cast<double>(n) - mean * mean : 1.0;
    stats.mean[c] = mean;
    stats.std[c] = std::sqrt(std::max(var, 1e-12));
  }
}

ImageDataset ImageDataset::subset(std::span<const std::size_t> indices, const std::string& tag) const {
  ImageDataset out;
  out.image_size = image_size;
  out.class_count = class_count;
  out.stats = stats;
  out.split_tag = tag;
  out.count = indices.size();
  out.pixels.reserve(indices.size() * pixels_per_image());
  for (auto i : indices) {
    auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    if (labeled()) out.labels.push_back(labels[i]);
  }
  return out;
}

Tensor ImageDataset::batch(std::span<const std::size_t> indices, const Normalization& norm) const {
  if (indices.empty()) throw InputError("empty batch");
  Tensor t = Tensor::zeros({indices.size(), image_size, image_size, 3});
  auto out = t.mutable_values();
  const std::size_t ppi = pixels_per_image();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    auto img = image(indices[b]);
    for (std::size_t p = 0; p < ppi; ++p) {
      const std::size_t c = p % 3;
      out[b * ppi + p] = (img[p] - norm.mean[c]) / norm.std[c];
    }
  }
  round_to_precision(out);
  return t;
}

std::vector<int> ImageDataset::batch_labels(std::span<const std::size_t> indices) const {
  if (!labeled()) throw InputError("dataset has no labels");
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

ImageDataset load_cifar_binary(const std::filesystem::path& path, std::size_t expected_records) {
  constexpr std::size_t kRecord = 1 + 3072;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw IoError(path.string() + ": empty file");
  if (bytes.size() % kRecord != 0) {
    const std::size_t offset = (bytes.size() / kRecord) * kRecord;
    throw IoError(path.string() + ": truncated record at byte offset " + std::to_string(offset) + " (" +
                  std::to_string(bytes.size() - offset) + " of " + std::to_string(kRecord) + " bytes)");
  }
  const std::size_t n = bytes.size() / kRecord;
  if (expected_records && n != expected_records) {
    throw IoError(path.string() + ": expected " + std::to_string(expected_records) + " records, found " +
                  std::to_string(n));
  }
  ImageDataset ds;
  ds.image_size = 32;
  ds.count = n;
  ds.class_count = 10;
  ds.split_tag = "cifar";
  ds.pixels.resize(n * 3072);
  ds.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kRecord;
    if (rec[0] > 9) {
      throw ParseError(path.string() + ": corrupt label " + std::to_string(rec[0]) + " at byte offset " +
                       std::to_string(r * kRecord));
    }
    ds.labels[r] = rec[0];
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 1024; ++p) ds.pixels[r * 3072 + p * 3 + c] = rec[1 + c * 1024 + p] / 255.0;
  }
  ds.compute_stats();
  return ds;
}

std::vector<std::uint8_t> encode_cifar_records(const ImageDataset& ds) {
  if (ds.image_size != 32) throw InputError("CIFAR records hold 32x32 images");
  std::vector<std::uint8_t> out;
  out.reserve(ds.count * 3073);
  for (std::size_t r = 0; r < ds.count; ++r) {
    out.push_back(static_cast<std::uint8_t>(ds.labeled() ? ds.labels[r] : 0));
    auto img = ds.image(r);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 1024; ++p)
        out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(img[p * 3 + c], 0.0, 1.0) * 255.0)));
  }
  return out;
}

namespace {

bool shape_covers(std::size_t kind, double u, double v, double aspect) {
  const double au = std::abs(u), av = std::abs(v);
  const double r = std::sqrt(u * u + v * v);
  switch (kind) {
    case 0:  // rectangle
      return au <= aspect && av <= 1.7 - aspect;
    case 1:  // disc
      return r <= 1.0;
    case 2:  // plus
      return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);
    case 3:  // triangle
      return v >= -1.0 && v <= 1.0 && au <= (v + 1.0) / 2.0;
    case 4:  // ring
      return r <= 1.0 && r >= 0.55;
    case 5:  // diamond
      return au + av <= 1.0;
    case 6:  // diagonal cross
      return au <= 1.0 && av <= 1.0 && (std::abs(u - v) <= 0.4 || std::abs(u + v) <= 0.4);
    case 7:  // two bars
      return au <= 1.0 && (std::abs(v - 0.55) <= 0.25 || std::abs(v + 0.55) <= 0.25);
    case 8:  // L
      return (std::abs(u + 0.7) <= 0.3 && av <= 1.0) || (std::abs(v - 0.7) <= 0.3 && au <= 1.0);
    default:  // hollow square
      return std::max(au, av) <= 1.0 && std::max(au, av) >= 0.6;
  }
}

}  // namespace

ImageDataset synth_shapes(std::uint64_t seed, std::size_t n, std::size_t size, std::size_t classes) {
  if (classes < 2 || classes > 10) throw ConfigError("synth_shapes: classes must lie in [2, 10]");
  if (size < 4) throw ConfigError("synth_shapes: image size must be at least 4");
  ImageDataset ds;
  ds.image_size = size;
  ds.count = n;
  ds.class_count = classes;
  ds.split_tag = "synth";
  ds.pixels.resize(n * size * size * 3);
  ds.labels.resize(n);
  const double s = static_cast<double>(size);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, i));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.05);
    const std::size_t label = i % classes;
    ds.labels[i] = static_cast<int>(label);
    std::array<double, 3> bg{}, fg{};
    for (auto& c : bg) c = 0.05 + 0.4 * unit(rng);
    for (auto& c : fg) c = 0.55 + 0.4 * unit(rng);
    const double fx = 0.3 + 0.9 * unit(rng), fy = 0.3 + 0.9 * unit(rng), phase = 6.283 * unit(rng);
    const double cx = s / 2.0 + (unit(rng) - 0.5) * 0.24 * s;
    const double cy = s / 2.0 + (unit(rng) - 0.5) * 0.24 * s;
    const double radius = (0.3 + 0.15 * unit(rng)) * s;
    const double aspect = 0.6 + 0.5 * unit(rng);
    double* img = ds.pixels.data() + i * size * size * 3;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double u = (static_cast<double>(x) + 0.5 - cx) / radius;
        const double v = (static_cast<double>(y) + 0.5 - cy) / radius;
        const bool on = shape_covers(label, u, v, aspect);
        const double tex = 0.08 * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
        for (std::size_t c = 0; c < 3; ++c) {
          double val = on ? fg[c] : bg[c] + tex;
          val += noise(rng);
          img[(y * size + x) * 3 + c] = std::clamp(val, 0.0, 1.0);
        }
      }
  }
  ds.compute_stats();
  return ds;
}

SplitIndices split_indices(std::size_t n, const SplitSpec& spec) {
  if (!(spec.ratio > 0.0 && spec.ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(spec.seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto na = static_cast<std::size_t>(std::llround(spec.ratio * static_cast<double>(n)));
  SplitIndices out;
  out.a.assign(perm.begin(), perm.begin() + static_cast<long>(na));
  out.b.assign(perm.begin() + static_cast<long>(na), perm.end());
  std::sort(out.a.begin(), out.a.end());
  std::sort(out.b.begin(), out.b.end());
  return out;
}

std::pair<ImageDataset, ImageDataset> split(const ImageDataset& ds, const SplitSpec& spec) {
  const auto idx = split_indices(ds.count, spec);
  return {ds.subset(idx.a, ds.split_tag + "/a"), ds.subset(idx.b, ds.split_tag + "/b")};
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[8] = {'A', 'T', 'N', 'S', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw IoError("checkpoint truncated at byte offset " + std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put_tensor(const std::string& name, const Shape& shape, std::span<const double> values) {
  if (shape_numel(shape) != values.size()) throw ShapeError("checkpoint blob " + name + ": shape/value mismatch");
  Entry e;
  e.type = Entry::Type::kTensor;
  e.name = name;
  e.shape = shape;
  e.values.assign(values.begin(), values.end());
  entries_.push_back(std::move(e));
}

void Checkpoint::put_string(const std::string& name, const std::string& text) {
  Entry e;
  e.type = Entry::Type::kString;
  e.name = name;
  e.text = text;
  entries_.push_back(std::move(e));
}

void Checkpoint::put_int(const std::string& name, std::int64_t v) {
  Entry e;
  e.type = Entry::Type::kInt;
  e.name = name;
  e.integer = v;
  entries_.push_back(std::move(e));
}

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

const Checkpoint::Entry& Checkpoint::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw InputError("checkpoint has no entry '" + name + "'");
}

std::vector<double> Checkpoint::tensor_values(const std::string& name) const {
  const auto& e = get(name);
  if (e.type != Entry::Type::kTensor) throw InputError("checkpoint entry '" + name + "' is not a tensor");
  return e.values;
}

void Checkpoint::read_into(const std::string& name, Tensor& t) const {
  const auto& e = get(name);
  if (e.type != Entry::Type::kTensor || e.shape != t.shape()) {
    throw ShapeError("checkpoint entry '" + name + "' has shape " + shape_str(e.shape) + ", expected " +
                     shape_str(t.shape()));
  }
  std::copy(e.values.begin(), e.values.end(), t.mutable_values().begin());
}

void Checkpoint::read_into(const std::string& name, std::vector<double>& v) const {
  const auto& e = get(name);
  if (e.type != Entry::Type::kTensor || e.values.size() != v.size()) {
    throw ShapeError("checkpoint entry '" + name + "' has " + std::to_string(e.values.size()) +
                     " values, expected " + std::to_string(v.size()));
  }
  v = e.values;
}

std::string Checkpoint::string_value(const std::string& name) const {
  const auto& e = get(name);
  if (e.type != Entry::Type::kString) throw InputError("checkpoint entry '" + name + "' is not a string");
  return e.text;
}

std::int64_t Checkpoint::int_value(const std::string& name) const {
  const auto& e = get(name);
  if (e.type != Entry::Type::kInt) throw InputError("checkpoint entry '" + name + "' is not an integer");
  return e.integer;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    out.push_back(static_cast<std::uint8_t>(e.type));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    switch (e.type) {
      case Entry::Type::kTensor:
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) put_le<std::uint64_t>(out, d);
        for (double v : e.values) put_le<double>(out, v);
        break;
      case Entry::Type::kString:
        put_le<std::uint64_t>(out, e.text.size());
        out.insert(out.end(), e.text.begin(), e.text.end());
        break;
      case Entry::Type::kInt:
        put_le<std::int64_t>(out, e.integer);
        break;
    }
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.bytes(8) != std::string(kMagic, 8)) throw ParseError("not a checkpoint file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw VersionError("checkpoint format version " + std::to_string(version) + " is incompatible with " +
                       std::to_string(kFormatVersion));
  }
  const auto n = r.get<std::uint32_t>();
  Checkpoint ck;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto type = r.get<std::uint8_t>();
    const auto name = r.bytes(r.get<std::uint32_t>());
    switch (type) {
      case 0: {
        const auto rank = r.get<std::uint32_t>();
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.get<std::uint64_t>());
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = r.get<double>();
        ck.put_tensor(name, shape, values);
        break;
      }
      case 1: {
        const auto len = r.get<std::uint64_t>();
        ck.put_string(name, r.bytes(len));
        break;
      }
      case 2:
        ck.put_int(name, r.get<std::int64_t>());
        break;
      default:
        throw ParseError("checkpoint entry '" + name + "' has unknown type " + std::to_string(type) +
                         " at byte offset " + std::to_string(r.pos()));
    }
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint entries at offset " + std::to_string(r.pos()));
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

// -------------------------------------------------------------- architecture

std::string arch_to_json(const Architecture& arch) {
  nlohmann::ordered_json macro;
  macro["image_size"] = arch.macro.image_size;
  macro["in_channels"] = arch.macro.in_channels;
  macro["stem_channels"] = arch.macro.stem_channels;
  macro["stem_op"] = "LocalSA_k3_h8";
  auto stages = nlohmann::ordered_json::array();
  for (const auto& s : arch.macro.stages) {
    nlohmann::ordered_json st;
    st["channels"] = s.channels;
    st["layers"] = s.layers;
    st["stride"] = s.stride;
    stages.push_back(st);
  }
  macro["stages"] = stages;
  macro["num_classes"] = arch.macro.num_classes;
  nlohmann::ordered_json doc;
  doc["macro"] = macro;
  auto choices = nlohmann::ordered_json::array();
  for (const auto& c : arch.choices) choices.push_back(c.name());
  doc["choices"] = choices;
  doc["seed"] = arch.seed;
  doc["config_hash"] = arch.config_hash;
  doc["version"] = arch.version;
  return doc.dump(2) + "\n";
}

Architecture arch_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("architecture JSON: parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  try {
    const int version = doc.at("version").get<int>();
    if (version != kArchFormatVersion) {
      throw VersionError("architecture format version " + std::to_string(version) + " is incompatible with " +
                         std::to_string(kArchFormatVersion));
    }
    Architecture arch;
    arch.version = version;
    const auto& m = doc.at("macro");
    arch.macro.image_size = m.at("image_size").get<std::size_t>();
    arch.macro.in_channels = m.value("in_channels", std::size_t{3});
    arch.macro.stem_channels = m.at("stem_channels").get<std::size_t>();
    arch.macro.num_classes = m.at("num_classes").get<std::size_t>();
    for (const auto& s : m.at("stages")) {
      arch.macro.stages.push_back(
          {s.at("channels").get<std::size_t>(), s.at("layers").get<std::size_t>(), s.at("stride").get<std::size_t>()});
    }
    for (const auto& c : doc.at("choices")) arch.choices.push_back(CandidateOp::parse(c.get<std::string>()));
    if (arch.choices.size() != arch.macro.num_layers()) {
      throw ParseError("architecture JSON: " + std::to_string(arch.choices.size()) + " choices for " +
                       std::to_string(arch.macro.num_layers()) + " layers");
    }
    arch.seed = doc.value("seed", std::uint64_t{0});
    arch.config_hash = doc.value("config_hash", std::string());
    arch.macro.validate_structure();
    return arch;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("architecture JSON: ") + e.what());
  }
}

void save_arch(const Architecture& arch, const std::filesystem::path& path) { write_text_file(path, arch_to_json(arch)); }

Architecture load_arch(const std::filesystem::path& path) { return arch_from_json(read_text_file(path)); }

// ---------------------------------------------------------------------- csv

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, std::size_t line) {
  if (s == "nan" || s.empty()) return std::nan("");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ParseError("csv line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text, const std::string& header, std::size_t cols) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) throw ParseError("csv: expected header '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  std::size_t no = 1;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != cols) throw ParseError("csv line " + std::to_string(no) + ": expected " + std::to_string(cols) + " fields");
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

std::string history_to_csv(std::span<const HistoryRow> rows) {
  std::string out = "phase,epoch,split,loss,acc\n";
  for (const auto& r : rows) {
    out += r.phase + "," + std::to_string(r.epoch) + "," + r.split + "," + fmt_double(r.loss) + "," + fmt_double(r.acc) + "\n";
  }
  return out;
}

std::vector<HistoryRow> history_from_csv(const std::string& text) {
  std::vector<HistoryRow> out;
  std::size_t line = 1;
  for (const auto& f : csv_rows(text, "phase,epoch,split,loss,acc", 5)) {
    ++line;
    HistoryRow r;
    r.phase = f[0];
    r.epoch = static_cast<std::size_t>(parse_double(f[1], line));
    r.split = f[2];
    r.loss = parse_double(f[3], line);
    r.acc = parse_double(f[4], line);
    out.push_back(r);
  }
  return out;
}

std::string metrics_to_csv(std::span<const MetricsRow> rows) {
  std::string out = "epoch,train_loss,test_top1,test_top5\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + fmt_double(r.train_loss) + "," + fmt_double(r.test_top1) + "," +
           fmt_double(r.test_top5) + "\n";
  }
  return out;
}

std::vector<MetricsRow> metrics_from_csv(const std::string& text) {
  std::vector<MetricsRow> out;
  std::size_t line = 1;
  for (const auto& f : csv_rows(text, "epoch,train_loss,test_top1,test_top5", 4)) {
    ++line;
    out.push_back({static_cast<std::size_t>(parse_double(f[0], line)), parse_double(f[1], line),
                   parse_double(f[2], line), parse_double(f[3], line)});
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace attnas
