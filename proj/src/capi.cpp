#include "attnas/attnas.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <new>
#include <sstream>
#include <string>

#include "json.hpp"

#include "attnas/config.hpp"
#include "attnas/data.hpp"
#include "attnas/error.hpp"
#include "attnas/gradcheck.hpp"
#include "attnas/plot.hpp"
#include "attnas/scale.hpp"
#include "attnas/search.hpp"
#include "attnas/trainer.hpp"

#ifndef ATTNAS_VERSION
#define ATTNAS_VERSION "0.0.0"
#endif

struct attnas_dataset {
  attnas::ImageDataset ds;
};
struct attnas_arch {
  attnas::Architecture arch;
};
struct attnas_network {
  attnas::Network net;
};

namespace {

using Json = nlohmann::ordered_json;

thread_local std::string g_last_error;

attnas_status status_of(attnas::ErrorKind k) {
  using attnas::ErrorKind;
  switch (k) {
    case ErrorKind::kShape: return ATTNAS_ERR_SHAPE;
    case ErrorKind::kConfig: return ATTNAS_ERR_CONFIG;
    case ErrorKind::kInput: return ATTNAS_ERR_INPUT;
    case ErrorKind::kContract: return ATTNAS_ERR_CONTRACT;
    case ErrorKind::kIo: return ATTNAS_ERR_IO;
    case ErrorKind::kParse: return ATTNAS_ERR_PARSE;
    case ErrorKind::kVersion: return ATTNAS_ERR_VERSION;
    case ErrorKind::kNumeric: return ATTNAS_ERR_NUMERIC;
  }
  return ATTNAS_ERR_INTERNAL;
}

template <typename F>
attnas_status guard(F&& f) {
  g_last_error.clear();
  try {
    f();
    return ATTNAS_OK;
  } catch (const attnas::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return ATTNAS_ERR_INTERNAL;
}

char* dup(const std::string& s) {
  char* p = new char[s.size() + 1];
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

template <typename T>
void need(const T* p, const char* what) {
  if (!p) throw attnas::InputError(std::string(what) + " must not be null");
}

struct Fnv {
  std::uint64_t h = 14695981039346656037ull;
  void feed(const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

Json num(double v) { return std::isnan(v) ? Json(nullptr) : Json(v); }

}  // namespace

extern "C" {

const char* attnas_version(void) { return ATTNAS_VERSION; }
const char* attnas_last_error(void) { return g_last_error.c_str(); }

const char* attnas_status_name(attnas_status s) {
  switch (s) {
    case ATTNAS_OK: return "ok";
    case ATTNAS_ERR_CONFIG: return "config error";
    case ATTNAS_ERR_SHAPE: return "shape error";
    case ATTNAS_ERR_INPUT: return "input error";
    case ATTNAS_ERR_IO: return "i/o error";
    case ATTNAS_ERR_PARSE: return "parse error";
    case ATTNAS_ERR_VERSION: return "version error";
    case ATTNAS_ERR_NUMERIC: return "numeric error";
    case ATTNAS_ERR_CONTRACT: return "contract violation";
    case ATTNAS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void attnas_free_string(char* s) { delete[] s; }

attnas_status attnas_set_precision(const char* name) {
  return guard([&] {
    need(name, "precision");
    const std::string s(name);
    if (s == "f64") attnas::set_precision(attnas::Precision::kF64);
    else if (s == "f32") attnas::set_precision(attnas::Precision::kF32);
    else throw attnas::ConfigError("precision must be f32 or f64, got '" + s + "'");
  });
}

const char* attnas_precision(void) { return attnas::precision() == attnas::Precision::kF32 ? "f32" : "f64"; }

attnas_status attnas_init_precision_from_env(void) { return guard([] { attnas::init_precision_from_env(); }); }

attnas_status attnas_digest_text(const char* text, char** out) {
  return guard([&] {
    need(text, "text");
    need(out, "out");
    Fnv f;
    f.feed(text, std::strlen(text));
    *out = dup(f.hex());
  });
}

attnas_status attnas_digest_file(const char* path, char** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw attnas::IoError(std::string("cannot open ") + path);
    Fnv f;
    char buf[1 << 16];
    while (in) {
      in.read(buf, sizeof buf);
      f.feed(buf, static_cast<std::size_t>(in.gcount()));
    }
    *out = dup(f.hex());
  });
}

// ---- datasets

attnas_status attnas_dataset_synth(uint64_t seed, size_t count, size_t image_size, size_t classes,
                                   attnas_dataset** out) {
  return guard([&] {
    need(out, "out");
    *out = new attnas_dataset{attnas::synth_shapes(seed, count, image_size, classes)};
  });
}

attnas_status attnas_dataset_load_cifar(const char* const* paths, size_t n_paths, size_t expected_records,
                                        attnas_dataset** out) {
  return guard([&] {
    need(paths, "paths");
    need(out, "out");
    if (n_paths == 0) throw attnas::InputError("no CIFAR files given");
    attnas::ImageDataset all;
    for (size_t i = 0; i < n_paths; ++i) {
      need(paths[i], "path");
      attnas::ImageDataset part = attnas::load_cifar_binary(paths[i], expected_records);
      if (i == 0) {
        all = std::move(part);
        continue;
      }
      all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
      all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
      all.count += part.count;
    }
    if (n_paths > 1) all.compute_stats();
    *out = new attnas_dataset{std::move(all)};
  });
}

attnas_status attnas_dataset_save_cifar(const attnas_dataset* ds, const char* path) {
  return guard([&] {
    need(ds, "dataset");
    need(path, "path");
    const auto bytes = attnas::encode_cifar_records(ds->ds);
    std::ofstream o(path, std::ios::binary);
    if (!o) throw attnas::IoError(std::string("cannot write ") + path);
    o.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!o) throw attnas::IoError(std::string("short write to ") + path);
  });
}

attnas_status attnas_dataset_info(const attnas_dataset* ds, size_t* count, size_t* image_size, size_t* classes) {
  return guard([&] {
    need(ds, "dataset");
    if (count) *count = ds->ds.count;
    if (image_size) *image_size = ds->ds.image_size;
    if (classes) *classes = ds->ds.class_count;
  });
}

attnas_status attnas_dataset_digest(const attnas_dataset* ds, char** out) {
  return guard([&] {
    need(ds, "dataset");
    need(out, "out");
    Fnv f;
    f.feed(ds->ds.pixels.data(), ds->ds.pixels.size() * sizeof(double));
    f.feed(ds->ds.labels.data(), ds->ds.labels.size() * sizeof(int));
    *out = dup(f.hex());
  });
}

void attnas_dataset_free(attnas_dataset* ds) { delete ds; }

// ---- architectures

attnas_status attnas_arch_load(const char* path, attnas_arch** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new attnas_arch{attnas::load_arch(path)};
  });
}

attnas_status attnas_arch_from_json(const char* text, attnas_arch** out) {
  return guard([&] {
    need(text, "text");
    need(out, "out");
    *out = new attnas_arch{attnas::arch_from_json(text)};
  });
}

attnas_status attnas_arch_save(const attnas_arch* arch, const char* path) {
  return guard([&] {
    need(arch, "arch");
    need(path, "path");
    attnas::save_arch(arch->arch, path);
  });
}

attnas_status attnas_arch_to_json(const attnas_arch* arch, char** out) {
  return guard([&] {
    need(arch, "arch");
    need(out, "out");
    *out = dup(attnas::arch_to_json(arch->arch));
  });
}

attnas_status attnas_arch_layer_table(const attnas_arch* arch, char** out) {
  return guard([&] {
    need(arch, "arch");
    need(out, "out");
    const auto layers = arch->arch.macro.layers();
    std::ostringstream s;
    s << "layer,stage,position,in_size,in_channels,out_channels,stride,op\n";
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      s << i << ',' << l.stage + 1 << ',' << l.position << ',' << l.in_size << ',' << l.in_channels << ','
        << l.out_channels << ',' << l.stride << ',' << arch->arch.choices.at(i).name() << '\n';
    }
    *out = dup(s.str());
  });
}

attnas_status attnas_arch_param_count(const attnas_arch* arch, size_t initial_channels, size_t* out) {
  return guard([&] {
    need(arch, "arch");
    need(out, "out");
    *out = initial_channels == 0 ? attnas::Network::analytic_param_count(arch->arch)
                                 : attnas::count_params(arch->arch, initial_channels);
  });
}

void attnas_arch_free(attnas_arch* arch) { delete arch; }

// ---- configuration

namespace {

std::string merged(const std::string& kind, const char* base, const char* overlay) {
  if (kind == "search") {
    attnas::PipelineConfig c;
    if (base) c = attnas::pipeline_from_json(base, c);
    if (overlay) c = attnas::pipeline_from_json(overlay, c);
    return attnas::pipeline_to_json(c);
  }
  if (kind == "train") {
    attnas::TrainConfig c;
    if (base) c = attnas::train_from_json(base, c);
    if (overlay) c = attnas::train_from_json(overlay, c);
    return attnas::train_to_json(c);
  }
  if (kind == "scale") {
    attnas::ScaleConfig c;
    if (base) c = attnas::scale_from_json(base, c);
    if (overlay) c = attnas::scale_from_json(overlay, c);
    return attnas::scale_to_json(c);
  }
  throw attnas::ConfigError("unknown config kind '" + kind + "' (expected search, train or scale)");
}

}  // namespace

attnas_status attnas_default_config(const char* kind, char** out) {
  return guard([&] {
    need(kind, "kind");
    need(out, "out");
    *out = dup(merged(kind, nullptr, nullptr));
  });
}

attnas_status attnas_config_merge(const char* kind, const char* base, const char* overlay, char** out) {
  return guard([&] {
    need(kind, "kind");
    need(out, "out");
    *out = dup(merged(kind, base, overlay));
  });
}

attnas_status attnas_macro_ladder(size_t image_size, size_t channels, size_t stages, size_t layers_per_stage,
                                  size_t classes, char** out) {
  return guard([&] {
    need(out, "out");
    const auto m = attnas::MacroConfig::ladder(image_size, channels, stages, layers_per_stage, classes);
    m.validate();
    *out = dup(attnas::macro_to_json(m));
  });
}

attnas_status attnas_macro_table1(size_t image_size, size_t classes, char** out) {
  return guard([&] {
    need(out, "out");
    auto m = attnas::MacroConfig::table1();
    m.image_size = image_size;
    m.num_classes = classes;
    m.validate();
    *out = dup(attnas::macro_to_json(m));
  });
}

attnas_status attnas_macro_space_size(const char* macro_json, char** out) {
  return guard([&] {
    need(macro_json, "macro_json");
    need(out, "out");
    const auto m = attnas::macro_from_json(macro_json, attnas::MacroConfig{});
    m.validate();
    *out = dup(attnas::space_size(m));
  });
}

// ---- search

attnas_status attnas_search(const char* config_json, const attnas_dataset* data, attnas_arch** arch_out,
                            char** history_csv, char** summary_json) {
  return guard([&] {
    need(data, "dataset");
    need(arch_out, "arch_out");
    attnas::PipelineConfig cfg;
    if (config_json) cfg = attnas::pipeline_from_json(config_json, cfg);
    auto r = attnas::run_full_pipeline(cfg, data->ds);
    r.arch.config_hash = attnas::config_digest(attnas::pipeline_to_json(cfg));

    Json summary;
    summary["seed"] = r.seed;
    summary["final_val_loss"] = num(r.final_val_loss);
    Json seeds = Json::array();
    for (const auto& [s, l] : r.seed_losses) seeds.push_back({{"seed", s}, {"final_val_loss", num(l)}});
    summary["seeds"] = seeds;
    Json choices = Json::array();
    for (const auto& c : r.arch.choices) choices.push_back(c.name());
    summary["choices"] = choices;
    summary["config_hash"] = r.arch.config_hash;

    std::string hist = attnas::history_to_csv(r.history);
    std::string sum = summary.dump(2);
    *arch_out = new attnas_arch{std::move(r.arch)};
    if (history_csv) *history_csv = dup(hist);
    if (summary_json) *summary_json = dup(sum);
  });
}

// ---- training and evaluation

attnas_status attnas_train(const attnas_arch* arch, const char* config_json, const attnas_dataset* train,
                           const attnas_dataset* test, attnas_network** net_out, char** metrics_csv,
                           char** report_json) {
  return guard([&] {
    need(arch, "arch");
    need(train, "train dataset");
    need(test, "test dataset");
    attnas::TrainConfig cfg;
    if (config_json) cfg = attnas::train_from_json(config_json, cfg);
    auto r = attnas::train_final(arch->arch, cfg, train->ds, test->ds);
    Json report;
    report["params"] = attnas::count_params(r.network);
    report["best_epoch"] = r.best_epoch;
    report["top1_error"] = num(r.best.top1_error);
    report["top5_error"] = num(r.best.top5_error);
    report["loss"] = num(r.best.loss);
    report["wall_clock_s"] = r.wall_clock_s;
    if (metrics_csv) *metrics_csv = dup(attnas::metrics_to_csv(r.metrics));
    if (report_json) *report_json = dup(report.dump(2));
    if (net_out) *net_out = new attnas_network{std::move(r.network)};
  });
}

attnas_status attnas_evaluate(const attnas_network* net, const attnas_dataset* data, char** report_json) {
  return guard([&] {
    need(net, "network");
    need(data, "dataset");
    need(report_json, "report_json");
    const auto e = attnas::evaluate(net->net, data->ds);
    Json report;
    report["count"] = e.count;
    report["top1_error"] = num(e.top1_error);
    report["top5_error"] = num(e.top5_error);
    report["loss"] = num(e.loss);
    report["params"] = attnas::count_params(net->net);
    *report_json = dup(report.dump(2));
  });
}

attnas_status attnas_network_save(const attnas_network* net, const char* path) {
  return guard([&] {
    need(net, "network");
    need(path, "path");
    attnas::Checkpoint ck;
    ck.put_string("kind", "network");
    ck.put_string("arch", attnas::arch_to_json(net->net.architecture()));
    const auto& n = net->net.normalization;
    ck.put_tensor("norm.mean", {3}, n.mean);
    ck.put_tensor("norm.std", {3}, n.std);
    for (const auto& p : net->net.params()) ck.put_tensor("w/" + p.name, p.tensor.shape(), p.tensor.values());
    ck.save(path);
  });
}

attnas_status attnas_network_load(const char* path, attnas_network** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    const auto ck = attnas::Checkpoint::load(path);
    if (!ck.has("kind") || ck.string_value("kind") != "network")
      throw attnas::ParseError(std::string(path) + ": not a network checkpoint");
    attnas::Network net(attnas::arch_from_json(ck.string_value("arch")), 0);
    std::vector<double> v(3);
    ck.read_into("norm.mean", v);
    std::copy(v.begin(), v.end(), net.normalization.mean.begin());
    ck.read_into("norm.std", v);
    std::copy(v.begin(), v.end(), net.normalization.std.begin());
    for (auto& p : net.params()) ck.read_into("w/" + p.name, p.tensor);
    *out = new attnas_network{std::move(net)};
  });
}

attnas_status attnas_network_arch(const attnas_network* net, attnas_arch** out) {
  return guard([&] {
    need(net, "network");
    need(out, "out");
    *out = new attnas_arch{net->net.architecture()};
  });
}

void attnas_network_free(attnas_network* net) { delete net; }

// ---- diagnostics

attnas_status attnas_gradcheck_ops(char** out) {
  return guard([&] {
    need(out, "out");
    std::string s;
    for (const auto& op : attnas::gradcheck_ops()) s += op + "\n";
    *out = dup(s);
  });
}

attnas_status attnas_gradcheck(uint64_t seed, size_t trials, const char* only, char** table_csv, size_t* failed) {
  return guard([&] {
    need(table_csv, "table_csv");
    attnas::GradcheckOptions opts;
    opts.seed = seed;
    if (trials) opts.trials = trials;
    std::vector<std::string> ops;
    if (only) {
      std::stringstream ss(only);
      std::string tok;
      while (std::getline(ss, tok, ','))
        if (!tok.empty()) ops.push_back(tok);
    }
    const auto rows = attnas::run_gradcheck(opts, ops);
    std::ostringstream s;
    s << "op,max_rel_error,trials,pass\n";
    size_t bad = 0;
    char buf[32];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%.3e", r.max_rel_error);
      s << r.op << ',' << buf << ',' << r.trials << ',' << (r.pass ? "yes" : "no") << '\n';
      if (!r.pass) ++bad;
    }
    *table_csv = dup(s.str());
    if (failed) *failed = bad;
  });
}

attnas_status attnas_plot_svg(const char* csv, const char* metric, char** svg) {
  return guard([&] {
    need(csv, "csv");
    need(svg, "svg");
    *svg = dup(attnas::plot_csv(csv, metric ? metric : "loss"));
  });
}

attnas_status attnas_scale(const char* config_json, const attnas_arch* base, const attnas_dataset* train,
                           const attnas_dataset* test, char** table_csv) {
  return guard([&] {
    need(train, "train dataset");
    need(test, "test dataset");
    need(table_csv, "table_csv");
    attnas::ScaleConfig cfg;
    if (config_json) cfg = attnas::scale_from_json(config_json, cfg);
    std::optional<attnas::Architecture> b;
    if (base) b = base->arch;
    const auto rows = attnas::scale_sweep(cfg, b, train->ds, test->ds);
    std::ostringstream s;
    s << "channels,stages,params,top1_acc\n";
    char buf[32];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%.4f", r.top1_acc);
      s << r.channels << ',' << r.stages << ',' << r.params << ',' << buf << '\n';
    }
    *table_csv = dup(s.str());
  });
}

}  // extern "C"
