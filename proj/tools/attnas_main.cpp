// attnas command-line driver. Talks to the library only through attnas.h.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "attnas/attnas.h"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumeric = 2, kIo = 3 };

struct Failure {
  int code;
  std::string message;
};

int exit_for(attnas_status s) {
  switch (s) {
    case ATTNAS_OK: return kOk;
    case ATTNAS_ERR_NUMERIC: return kNumeric;
    case ATTNAS_ERR_IO:
    case ATTNAS_ERR_PARSE:
    case ATTNAS_ERR_VERSION: return kIo;
    default: return kUsage;
  }
}

void check(attnas_status s, const std::string& what) {
  if (s != ATTNAS_OK) throw Failure{exit_for(s), what + ": " + attnas_status_name(s) + ": " + attnas_last_error()};
}

// Owns a string returned by the library.
struct Str {
  char* p = nullptr;
  Str() = default;
  Str(const Str&) = delete;
  Str& operator=(const Str&) = delete;
  ~Str() { attnas_free_string(p); }
  char** out() { return &p; }
  std::string str() const { return p ? p : ""; }
};

template <typename T, void (*F)(T*)>
struct Deleter {
  void operator()(T* p) const { F(p); }
};
using Dataset = std::unique_ptr<attnas_dataset, Deleter<attnas_dataset, attnas_dataset_free>>;
using Arch = std::unique_ptr<attnas_arch, Deleter<attnas_arch, attnas_arch_free>>;
using Net = std::unique_ptr<attnas_network, Deleter<attnas_network, attnas_network_free>>;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kIo, "cannot open " + path};
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream o(path, std::ios::binary);
  o << text;
  if (!o) throw Failure{kIo, "cannot write " + path.string()};
}

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Failure{kIo, what + ": " + e.what()};
  }
}

std::string default_config(const char* kind) {
  Str s;
  check(attnas_default_config(kind, s.out()), "default config");
  return s.str();
}

std::string digest_file(const std::string& path) {
  Str s;
  check(attnas_digest_file(path.c_str(), s.out()), "digest " + path);
  return s.str();
}

// ---- shared options

struct Common {
  std::string out_dir = "out";
  std::string config;
  std::string precision;
};

void add_common(CLI::App* cmd, Common& c, bool with_config) {
  cmd->add_option("--out", c.out_dir, "Output directory")->capture_default_str();
  if (with_config) cmd->add_option("--config", c.config, "JSON config file applied over the defaults")->check(CLI::ExistingFile);
  cmd->add_option("--precision", c.precision, "Numeric precision (overrides ATTNAS_PRECISION)")
      ->check(CLI::IsMember({"f32", "f64"}));
}

struct DataOpts {
  std::string data = "synth";
  std::string test_data;
  std::size_t train_size = 600;
  std::size_t test_size = 300;
  std::size_t image_size = 16;
  std::size_t classes = 3;
  std::uint64_t data_seed = 0;
};

void add_data(CLI::App* cmd, DataOpts& d, bool search_corpus = false) {
  cmd->add_option(search_corpus ? "--data,--search-data" : "--data", d.data,
                  "'synth' for generated shapes, a CIFAR-10 binary directory (data_batch_*.bin + test_batch.bin) "
                  "or a single CIFAR-10 binary file used for training")
      ->capture_default_str();
  cmd->add_option("--test-data", d.test_data, "CIFAR-10 binary file for testing when --data is a file");
  cmd->add_option("--train-size", d.train_size, "Synthetic training images")->capture_default_str();
  cmd->add_option("--test-size", d.test_size, "Synthetic test images")->capture_default_str();
  cmd->add_option("--image-size", d.image_size, "Synthetic image side")->capture_default_str();
  cmd->add_option("--classes", d.classes, "Synthetic class count")->capture_default_str();
  cmd->add_option("--data-seed", d.data_seed, "Synthetic data seed (test set uses data-seed + 1)")->capture_default_str();
}

struct Data {
  Dataset train, test;
  Json inputs = Json::object();
};

Dataset load_cifar(const std::vector<std::string>& files) {
  std::vector<const char*> ptrs;
  for (const auto& f : files) ptrs.push_back(f.c_str());
  attnas_dataset* d = nullptr;
  check(attnas_dataset_load_cifar(ptrs.data(), ptrs.size(), 0, &d), "load CIFAR data");
  return Dataset(d);
}

Data load_data(const DataOpts& o, bool want_train, bool want_test) {
  Data r;
  if (o.data == "synth") {
    auto gen = [&](std::uint64_t seed, std::size_t n, const char* name) {
      attnas_dataset* d = nullptr;
      check(attnas_dataset_synth(seed, n, o.image_size, o.classes, &d), "generate synthetic data");
      Dataset ds(d);
      Str h;
      check(attnas_dataset_digest(d, h.out()), "digest data");
      r.inputs[name] = {{"source", "synth"}, {"seed", seed}, {"count", n}, {"image_size", o.image_size},
                        {"classes", o.classes}, {"digest", h.str()}};
      return ds;
    };
    if (want_train) r.train = gen(o.data_seed, o.train_size, "train");
    if (want_test) r.test = gen(o.data_seed + 1, o.test_size, "test");
    return r;
  }
  std::vector<std::string> train_files, test_files;
  if (fs::is_directory(o.data)) {
    for (const auto& e : fs::directory_iterator(o.data)) {
      const auto name = e.path().filename().string();
      if (name.rfind("data_batch_", 0) == 0 && e.path().extension() == ".bin") train_files.push_back(e.path().string());
    }
    std::sort(train_files.begin(), train_files.end());
    const auto t = fs::path(o.data) / "test_batch.bin";
    if (fs::exists(t)) test_files.push_back(t.string());
  } else if (fs::exists(o.data)) {
    train_files.push_back(o.data);
  } else {
    throw Failure{kIo, "data path not found: " + o.data};
  }
  if (!o.test_data.empty()) test_files = {o.test_data};
  auto describe = [&](const std::vector<std::string>& files) {
    Json j = Json::array();
    for (const auto& f : files) j.push_back({{"path", f}, {"digest", digest_file(f)}});
    return j;
  };
  if (want_train) {
    if (train_files.empty()) throw Failure{kIo, "no CIFAR training batches under " + o.data};
    r.train = load_cifar(train_files);
    r.inputs["train"] = describe(train_files);
  }
  if (want_test) {
    if (test_files.empty()) throw Failure{kUsage, "no test data: pass a CIFAR directory or --test-data"};
    r.test = load_cifar(test_files);
    r.inputs["test"] = describe(test_files);
  }
  return r;
}

void dataset_info(const attnas_dataset* d, std::size_t& size, std::size_t& classes) {
  check(attnas_dataset_info(d, nullptr, &size, &classes), "dataset info");
}

Arch load_arch(const std::string& path) {
  attnas_arch* a = nullptr;
  check(attnas_arch_load(path.c_str(), &a), "load architecture " + path);
  return Arch(a);
}

// ---- manifest

struct Manifest {
  std::string command;
  Json config = Json::object();
  Json seeds = Json::array();
  Json inputs = Json::object();
  std::vector<std::string> outputs;
  std::vector<std::string> argv;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const fs::path& dir) {
    const fs::path path = dir / "manifest.json";
    Json j;
    j["command"] = command;
    j["version"] = attnas_version();
    j["precision"] = attnas_precision();
    j["argv"] = argv;
    j["config"] = config;
    j["seeds"] = seeds;
    j["inputs"] = inputs;
    outputs.push_back(path.string());
    j["outputs"] = outputs;
    j["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_file(path, j.dump(2) + "\n");
  }
};

fs::path prepare_out(const Common& c) {
  std::error_code ec;
  fs::create_directories(c.out_dir, ec);
  if (ec) throw Failure{kIo, "cannot create " + c.out_dir + ": " + ec.message()};
  if (!c.precision.empty()) check(attnas_set_precision(c.precision.c_str()), "precision");
  return c.out_dir;
}

std::string emit(Manifest& m, const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  write_file(p, text);
  m.outputs.push_back(p.string());
  return p.string();
}

std::string resolve(const char* kind, const Common& c, const Json& overlay) {
  std::string base;
  if (!c.config.empty()) base = read_file(c.config);
  Str s;
  const std::string ov = overlay.dump();
  check(attnas_config_merge(kind, base.empty() ? nullptr : base.c_str(), ov.c_str(), s.out()), "config");
  return s.str();
}

// ---- search

struct SearchOpts {
  Common common;
  DataOpts data;
  Json defaults;
  std::size_t car_epochs = 0, epochs = 0, batch_size = 0, seeds = 1, channels = 16, stages = 2, layers = 2;
  double w_lr = 0, car_alpha_lr = 0, alpha_lr = 0, alpha_init_eps = 0, split_ratio = 0;
  std::uint64_t seed = 0;
  bool no_car = false, uniform_space = false, warm_start_weights = false;
  std::string alpha_init = "zeros", loss_region = "all", mask_fill = "mean", macro = "ladder";
};

void setup_search(CLI::App& app, SearchOpts& o, Manifest& m, int& rc) {
  o.defaults = parse_json(default_config("search"), "default search config");
  const Json& d = o.defaults;
  o.car_epochs = d["car"]["epochs"];
  o.epochs = d["finetune"]["epochs"];
  o.batch_size = d["finetune"]["batch_size"];
  o.w_lr = d["finetune"]["w_lr"];
  o.car_alpha_lr = d["car"]["alpha_lr"];
  o.alpha_lr = d["finetune"]["alpha_lr"];
  o.alpha_init_eps = d["alpha_init_eps"];
  o.split_ratio = d["finetune"]["split_ratio"];
  o.seed = d["seed"];
  o.seeds = d["seeds"];
  o.channels = d["macro"]["stem_channels"];
  o.stages = d["macro"]["stages"].size();
  o.layers = d["macro"]["stages"][0]["layers"];
  o.loss_region = d["car"]["loss_region"];
  o.mask_fill = d["car"]["mask_fill"];

  auto* cmd = app.add_subcommand("search", "Two-phase architecture search: CAR pre-search, then classification fine-tune");
  add_common(cmd, o.common, true);
  add_data(cmd, o.data, true);
  auto* car_epochs = cmd->add_option("--car-epochs", o.car_epochs, "CAR search epochs")->capture_default_str();
  cmd->add_option("--epochs", o.epochs, "Fine-tune epochs")->capture_default_str();
  cmd->add_option("--batch-size", o.batch_size, "Batch size for both phases")->capture_default_str();
  cmd->add_option("--w-lr", o.w_lr, "Initial SGD learning rate for supernet weights (both phases)")->capture_default_str();
  auto* car_alpha = cmd->add_option("--car-alpha-lr", o.car_alpha_lr, "Adam learning rate for alpha in the CAR phase")
                        ->capture_default_str();
  cmd->add_option("--alpha-lr", o.alpha_lr, "Adam learning rate for alpha in the fine-tune phase")->capture_default_str();
  cmd->add_option("--split-ratio", o.split_ratio, "Fraction of the data used for weights (rest tunes alpha)")
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "Run seed")->capture_default_str();
  cmd->add_option("--seeds", o.seeds, "Independent runs on consecutive seeds; lowest validation loss wins")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  cmd->add_option("--macro", o.macro, "Macro-architecture: ladder (sized by --channels/--stages/--layers) or table1")
      ->capture_default_str()
      ->check(CLI::IsMember({"ladder", "table1"}));
  auto* channels = cmd->add_option("--channels", o.channels, "Initial channels of the ladder macro")->capture_default_str();
  auto* stages = cmd->add_option("--stages", o.stages, "Stages of the ladder macro")->capture_default_str();
  auto* layers = cmd->add_option("--layers", o.layers, "Layers per stage of the ladder macro")->capture_default_str();
  auto* no_car = cmd->add_flag("--no-car", o.no_car, "Skip the CAR phase and fine-tune from --alpha-init");
  cmd->add_flag("--uniform-space", o.uniform_space,
                "Tie alpha across stages (1,3,5 share rows; 2,4 share rows) instead of per-stage choices");
  auto* alpha_init = cmd->add_option("--alpha-init", o.alpha_init, "Alpha initialisation without CAR")
                         ->capture_default_str()
                         ->check(CLI::IsMember({"zeros", "uniform"}));
  auto* eps = cmd->add_option("--alpha-init-eps", o.alpha_init_eps, "Half-width of the uniform alpha initialisation")
                  ->capture_default_str();
  auto* region = cmd->add_option("--loss-region", o.loss_region, "CAR reconstruction loss over all pixels or masked only")
                     ->capture_default_str()
                     ->check(CLI::IsMember({"all", "masked"}));
  auto* fill = cmd->add_option("--mask-fill", o.mask_fill, "Value written into masked regions")
                   ->capture_default_str()
                   ->check(CLI::IsMember({"mean", "zero"}));
  auto* warm = cmd->add_flag("--warm-start-weights", o.warm_start_weights,
                             "Fine-tune from the CAR phase's supernet weights instead of fresh ones");
  no_car->excludes(car_epochs)->excludes(car_alpha)->excludes(region)->excludes(fill)->excludes(warm);
  alpha_init->needs(no_car);
  eps->needs(alpha_init);
  cmd->footer("Config file keys (defaults):\n" + o.defaults.dump(2));

  cmd->callback([&o, &m, &rc, cmd, channels, stages, layers] {
    const fs::path dir = prepare_out(o.common);
    Data data = load_data(o.data, true, false);
    std::size_t image = 0, classes = 0;
    dataset_info(data.train.get(), image, classes);

    Json ov = Json::object();
    auto given = [cmd](const char* name) { return cmd->count(name) > 0; };
    for (const char* phase : {"car", "finetune"}) {
      if (given("--batch-size")) ov[phase]["batch_size"] = o.batch_size;
      if (given("--w-lr")) ov[phase]["w_lr"] = o.w_lr;
      if (given("--split-ratio")) ov[phase]["split_ratio"] = o.split_ratio;
    }
    if (given("--car-epochs")) ov["car"]["epochs"] = o.car_epochs;
    if (given("--epochs")) ov["finetune"]["epochs"] = o.epochs;
    if (given("--car-alpha-lr")) ov["car"]["alpha_lr"] = o.car_alpha_lr;
    if (given("--alpha-lr")) ov["finetune"]["alpha_lr"] = o.alpha_lr;
    if (given("--loss-region")) ov["car"]["loss_region"] = o.loss_region;
    if (given("--mask-fill")) ov["car"]["mask_fill"] = o.mask_fill;
    if (given("--seed")) ov["seed"] = o.seed;
    if (given("--seeds")) ov["seeds"] = o.seeds;
    if (o.no_car) ov["use_car"] = false;
    if (o.uniform_space) ov["uniform_space"] = true;
    if (o.warm_start_weights) ov["warm_start_weights"] = true;
    if (given("--alpha-init")) ov["alpha_init"] = o.alpha_init;
    if (given("--alpha-init-eps")) ov["alpha_init_eps"] = o.alpha_init_eps;

    Str macro;
    if (o.macro == "table1") {
      check(attnas_macro_table1(image, classes, macro.out()), "macro");
      ov["macro"] = parse_json(macro.str(), "macro");
    } else if (channels->count() || stages->count() || layers->count()) {
      check(attnas_macro_ladder(image, o.channels, o.stages, o.layers, classes, macro.out()), "macro");
      ov["macro"] = parse_json(macro.str(), "macro");
    } else {
      ov["macro"] = {{"image_size", image}, {"num_classes", classes}};
    }

    m.command = "search";
    const std::string cfg = resolve("search", o.common, ov);
    m.config = parse_json(cfg, "resolved config");
    m.inputs = data.inputs;
    if (!o.common.config.empty()) m.inputs["config"] = {{"path", o.common.config}, {"digest", digest_file(o.common.config)}};
    const std::uint64_t seed0 = m.config["seed"];
    const std::size_t k = m.config["seeds"];
    for (std::size_t i = 0; i < k; ++i) m.seeds.push_back(seed0 + i);

    Str space;
    const std::string macro_text = m.config["macro"].dump();
    check(attnas_macro_space_size(macro_text.c_str(), space.out()), "macro");
    std::cout << "search space: " << space.str() << " architectures\n" << std::flush;

    attnas_arch* a = nullptr;
    Str hist, summary;
    check(attnas_search(cfg.c_str(), data.train.get(), &a, hist.out(), summary.out()), "search");
    Arch arch(a);
    const std::string arch_path = (dir / "arch.json").string();
    check(attnas_arch_save(arch.get(), arch_path.c_str()), "save architecture");
    m.outputs.push_back(arch_path);
    emit(m, dir, "history.csv", hist.str());
    emit(m, dir, "summary.json", summary.str() + "\n");
    std::cout << summary.str() << "\n";
    m.write(dir);
    rc = kOk;
  });
}

// ---- train

struct TrainOpts {
  Common common;
  DataOpts data;
  std::string arch;
  std::size_t epochs = 0, channels = 0, batch_size = 0;
  double lr = 0, label_smoothing = 0;
  std::uint64_t seed = 0;
  bool no_augment = false, select_on_validation = false;
};

void setup_train(CLI::App& app, TrainOpts& o, Manifest& m, int& rc) {
  const Json d = parse_json(default_config("train"), "default train config");
  o.epochs = d["epochs"];
  o.channels = d["initial_channels"];
  o.batch_size = d["batch_size"];
  o.lr = d["lr"];
  o.label_smoothing = d["label_smoothing"];
  o.seed = d["seed"];

  auto* cmd = app.add_subcommand("train", "Train a discrete architecture from scratch and report test error");
  add_common(cmd, o.common, true);
  add_data(cmd, o.data);
  cmd->add_option("--arch", o.arch, "Architecture JSON from `search`")->required()->check(CLI::ExistingFile);
  cmd->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--channels", o.channels, "Initial channels")->capture_default_str();
  cmd->add_option("--batch-size", o.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--lr", o.lr, "Initial SGD learning rate (cosine decay)")->capture_default_str();
  cmd->add_option("--label-smoothing", o.label_smoothing, "Cross-entropy label smoothing")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Run seed")->capture_default_str();
  cmd->add_flag("--no-augment", o.no_augment, "Disable crop and flip augmentation");
  cmd->add_flag("--select-on-validation", o.select_on_validation,
                "Pick the best epoch on a held-out slice of the training data instead of the test set");
  cmd->footer("Config file keys (defaults):\n" + d.dump(2));

  cmd->callback([&o, &m, &rc, cmd] {
    const fs::path dir = prepare_out(o.common);
    Data data = load_data(o.data, true, true);
    Arch arch = load_arch(o.arch);
    Json ov = Json::object();
    auto given = [cmd](const char* name) { return cmd->count(name) > 0; };
    if (given("--epochs")) ov["epochs"] = o.epochs;
    if (given("--channels")) ov["initial_channels"] = o.channels;
    if (given("--batch-size")) ov["batch_size"] = o.batch_size;
    if (given("--lr")) ov["lr"] = o.lr;
    if (given("--label-smoothing")) ov["label_smoothing"] = o.label_smoothing;
    if (given("--seed")) ov["seed"] = o.seed;
    if (o.no_augment) ov["augment"] = false;
    if (o.select_on_validation) ov["select_on_validation"] = true;

    m.command = "train";
    const std::string cfg = resolve("train", o.common, ov);
    m.config = parse_json(cfg, "resolved config");
    m.seeds.push_back(m.config["seed"]);
    m.inputs = data.inputs;
    m.inputs["arch"] = {{"path", o.arch}, {"digest", digest_file(o.arch)}};
    if (!o.common.config.empty()) m.inputs["config"] = {{"path", o.common.config}, {"digest", digest_file(o.common.config)}};

    attnas_network* n = nullptr;
    Str metrics, report;
    check(attnas_train(arch.get(), cfg.c_str(), data.train.get(), data.test.get(), &n, metrics.out(), report.out()),
          "train");
    Net net(n);
    const std::string ck = (dir / "network.ckpt").string();
    check(attnas_network_save(net.get(), ck.c_str()), "save network");
    m.outputs.push_back(ck);
    emit(m, dir, "metrics.csv", metrics.str());
    emit(m, dir, "report.json", report.str() + "\n");
    std::cout << report.str() << "\n";
    m.write(dir);
    rc = kOk;
  });
}

// ---- eval

struct EvalOpts {
  Common common;
  DataOpts data;
  std::string checkpoint;
};

void setup_eval(CLI::App& app, EvalOpts& o, Manifest& m, int& rc) {
  auto* cmd = app.add_subcommand("eval", "Evaluate a trained network checkpoint on the test data");
  add_common(cmd, o.common, false);
  add_data(cmd, o.data);
  cmd->add_option("--checkpoint", o.checkpoint, "Network checkpoint from `train`")->required()->check(CLI::ExistingFile);
  cmd->callback([&o, &m, &rc] {
    const fs::path dir = prepare_out(o.common);
    Data data = load_data(o.data, false, true);
    attnas_network* n = nullptr;
    check(attnas_network_load(o.checkpoint.c_str(), &n), "load checkpoint");
    Net net(n);
    Str report;
    check(attnas_evaluate(net.get(), data.test.get(), report.out()), "evaluate");
    m.command = "eval";
    m.inputs = data.inputs;
    m.inputs["checkpoint"] = {{"path", o.checkpoint}, {"digest", digest_file(o.checkpoint)}};
    emit(m, dir, "eval.json", report.str() + "\n");
    std::cout << report.str() << "\n";
    m.write(dir);
    rc = kOk;
  });
}

// ---- gradcheck

struct GradOpts {
  Common common;
  std::uint64_t seed = 0;
  std::size_t trials = 20;
  std::string ops;
};

void setup_gradcheck(CLI::App& app, GradOpts& o, Manifest& m, int& rc) {
  Str list;
  check(attnas_gradcheck_ops(list.out()), "gradcheck ops");
  auto* cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op (64-bit, h=1e-6)");
  add_common(cmd, o.common, false);
  cmd->add_option("--seed", o.seed, "Base seed")->capture_default_str();
  cmd->add_option("--trials", o.trials, "Random trials per op")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--ops", o.ops, "Comma-separated subset of ops (default all)");
  cmd->footer("Ops:\n" + list.str());
  cmd->callback([&o, &m, &rc] {
    const fs::path dir = prepare_out(o.common);
    Str table;
    std::size_t failed = 0;
    check(attnas_gradcheck(o.seed, o.trials, o.ops.c_str(), table.out(), &failed), "gradcheck");
    m.command = "gradcheck";
    m.config = {{"seed", o.seed}, {"trials", o.trials}, {"ops", o.ops}, {"h", 1e-6}, {"tolerance", 1e-5}};
    m.seeds.push_back(o.seed);
    emit(m, dir, "gradcheck.csv", table.str());
    std::cout << table.str();
    m.write(dir);
    if (failed) {
      std::string bad;
      std::istringstream s(table.str());
      std::string line;
      while (std::getline(s, line))
        if (line.size() > 3 && line.compare(line.size() - 3, 3, ",no") == 0) bad += " " + line.substr(0, line.find(','));
      std::cerr << "gradcheck failed for" << bad << "\n";
      rc = kNumeric;
      return;
    }
    rc = kOk;
  });
}

// ---- plot

struct PlotOpts {
  Common common;
  std::string input, output, metric = "loss";
};

void setup_plot(CLI::App& app, PlotOpts& o, Manifest& m, int& rc) {
  auto* cmd = app.add_subcommand("plot", "Render a search history or training metrics CSV as an SVG line chart");
  add_common(cmd, o.common, false);
  cmd->add_option("--input", o.input, "history.csv or metrics.csv")->required()->check(CLI::ExistingFile);
  cmd->add_option("--output", o.output, "SVG path (default <out>/<input stem>_<metric>.svg)");
  cmd->add_option("--metric", o.metric, "Series plotted from a search history")
      ->capture_default_str()
      ->check(CLI::IsMember({"loss", "acc"}));
  cmd->callback([&o, &m, &rc] {
    const fs::path dir = prepare_out(o.common);
    Str svg;
    check(attnas_plot_svg(read_file(o.input).c_str(), o.metric.c_str(), svg.out()), "plot");
    const fs::path path = o.output.empty() ? dir / (fs::path(o.input).stem().string() + "_" + o.metric + ".svg")
                                           : fs::path(o.output);
    write_file(path, svg.str());
    m.command = "plot";
    m.config = {{"metric", o.metric}};
    m.inputs["csv"] = {{"path", o.input}, {"digest", digest_file(o.input)}};
    m.outputs.push_back(path.string());
    std::cout << path.string() << "\n";
    m.write(dir);
    rc = kOk;
  });
}

// ---- scale

struct ScaleOpts {
  Common common;
  DataOpts data;
  std::string arch;
  std::vector<std::size_t> channels, stages;
  std::size_t layers = 2, epochs = 0, batch_size = 0;
  std::uint64_t seed = 0;
};

void setup_scale(CLI::App& app, ScaleOpts& o, Manifest& m, int& rc) {
  const Json d = parse_json(default_config("scale"), "default scale config");
  o.channels = d["channels"].get<std::vector<std::size_t>>();
  o.stages = d["stages"].get<std::vector<std::size_t>>();
  o.layers = d["layers_per_stage"];
  o.epochs = d["train"]["epochs"];
  o.batch_size = d["train"]["batch_size"];
  o.seed = d["train"]["seed"];

  auto* cmd = app.add_subcommand("scale", "Width x depth sweep: train each grid point and tabulate params and accuracy");
  add_common(cmd, o.common, true);
  add_data(cmd, o.data);
  cmd->add_option("--arch", o.arch, "Base architecture whose choices are repeated (default LocalSA_k3_h4)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--channels", o.channels, "Initial channel counts")->capture_default_str()->delimiter(',');
  cmd->add_option("--stages", o.stages, "Stage counts")->capture_default_str()->delimiter(',');
  cmd->add_option("--layers", o.layers, "Layers per stage")->capture_default_str();
  cmd->add_option("--epochs", o.epochs, "Training epochs per grid point")->capture_default_str();
  cmd->add_option("--batch-size", o.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Training seed")->capture_default_str();
  cmd->footer("Config file keys (defaults):\n" + d.dump(2));
  cmd->callback([&o, &m, &rc, cmd] {
    const fs::path dir = prepare_out(o.common);
    Data data = load_data(o.data, true, true);
    Arch base;
    if (!o.arch.empty()) base = load_arch(o.arch);
    Json ov = Json::object();
    auto given = [cmd](const char* name) { return cmd->count(name) > 0; };
    if (given("--channels")) ov["channels"] = o.channels;
    if (given("--stages")) ov["stages"] = o.stages;
    if (given("--layers")) ov["layers_per_stage"] = o.layers;
    if (given("--epochs")) ov["train"]["epochs"] = o.epochs;
    if (given("--batch-size")) ov["train"]["batch_size"] = o.batch_size;
    if (given("--seed")) ov["train"]["seed"] = o.seed;
    m.command = "scale";
    const std::string cfg = resolve("scale", o.common, ov);
    m.config = parse_json(cfg, "resolved config");
    m.seeds.push_back(m.config["train"]["seed"]);
    m.inputs = data.inputs;
    if (!o.arch.empty()) m.inputs["arch"] = {{"path", o.arch}, {"digest", digest_file(o.arch)}};
    if (!o.common.config.empty()) m.inputs["config"] = {{"path", o.common.config}, {"digest", digest_file(o.common.config)}};
    Str table;
    check(attnas_scale(cfg.c_str(), base.get(), data.train.get(), data.test.get(), table.out()), "scale");
    emit(m, dir, "scale.csv", table.str());
    std::cout << table.str();
    m.write(dir);
    rc = kOk;
  });
}

// ---- export

struct ExportOpts {
  Common common;
  DataOpts data;
  std::string kind = "dataset", arch;
};

void setup_export(CLI::App& app, ExportOpts& o, Manifest& m, int& rc) {
  auto* cmd = app.add_subcommand("export",
                                 "Write the train/test data as CIFAR-10 binary files, or an architecture as a layer table");
  add_common(cmd, o.common, false);
  add_data(cmd, o.data);
  cmd->add_option("--kind", o.kind, "What to export")->capture_default_str()->check(CLI::IsMember({"dataset", "arch"}));
  cmd->add_option("--arch", o.arch, "Architecture JSON (for --kind arch)")->check(CLI::ExistingFile);
  cmd->callback([&o, &m, &rc] {
    const fs::path dir = prepare_out(o.common);
    m.command = "export";
    m.config = {{"kind", o.kind}};
    if (o.kind == "arch") {
      if (o.arch.empty()) throw Failure{kUsage, "export --kind arch needs --arch"};
      Arch arch = load_arch(o.arch);
      Str table;
      check(attnas_arch_layer_table(arch.get(), table.out()), "layer table");
      std::size_t params = 0;
      check(attnas_arch_param_count(arch.get(), 0, &params), "param count");
      m.inputs["arch"] = {{"path", o.arch}, {"digest", digest_file(o.arch)}};
      emit(m, dir, "layers.csv", table.str());
      std::cout << table.str() << "params: " << params << "\n";
    } else {
      Data data = load_data(o.data, true, true);
      m.inputs = data.inputs;
      for (auto [name, ds] : {std::pair{"train.bin", data.train.get()}, std::pair{"test.bin", data.test.get()}}) {
        const std::string p = (dir / name).string();
        check(attnas_dataset_save_cifar(ds, p.c_str()), "export " + p);
        m.outputs.push_back(p);
        std::cout << p << "\n";
      }
    }
    m.write(dir);
    rc = kOk;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attnas: full-attention architecture search with context auto-regression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(attnas_version()));
  app.footer("Exit codes: 0 success, 1 usage or validation error, 2 numerical check failure, 3 I/O error.\n"
             "ATTNAS_PRECISION=f32|f64 selects the numeric precision (default f64).");

  int rc = kOk;
  Manifest manifest;
  for (int i = 0; i < argc; ++i) manifest.argv.emplace_back(argv[i]);

  SearchOpts search;
  TrainOpts train;
  EvalOpts eval;
  GradOpts grad;
  PlotOpts plot;
  ScaleOpts scale;
  ExportOpts exp;
  try {
    check(attnas_init_precision_from_env(), "ATTNAS_PRECISION");
    setup_search(app, search, manifest, rc);
    setup_train(app, train, manifest, rc);
    setup_eval(app, eval, manifest, rc);
    setup_gradcheck(app, grad, manifest, rc);
    setup_plot(app, plot, manifest, rc);
    setup_scale(app, scale, manifest, rc);
    setup_export(app, exp, manifest, rc);
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return rc;
}
