#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "attnas/car.hpp"
#include "attnas/data.hpp"
#include "attnas/optim.hpp"
#include "attnas/search_space.hpp"

namespace attnas {

enum class SearchPhase { kCarSearch, kFinetune };
std::string phase_name(SearchPhase p);

struct SearchConfig {
  SearchPhase phase = SearchPhase::kCarSearch;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  SgdOptions w_opt{0.025, 0.9, 3e-4};
  bool w_cosine = true;
  AdamOptions alpha_opt{3e-4, 0.9, 0.999, 1e-8, 1e-3};
  double split_ratio = 0.5;
  std::uint64_t seed = 0;
  CarConfig car;
  double label_smoothing = 0.0;

  static SearchConfig car_search_defaults();
  static SearchConfig finetune_defaults();
};

enum class AlphaInit { kZeros, kUniform };

/// Supernet weights, alpha, both optimizers and the loss history of one
/// search phase. Epochs are the unit of progress and of checkpointing.
class SearchSession {
 public:
  SearchSession(const MacroConfig& macro, const SearchConfig& cfg, const ImageDataset& data, ArchParams alpha);

  /// One pass of paired steps: an alpha step on a validation batch with w
  /// frozen, then a w step on a training batch with alpha frozen. The shorter
  /// split is cycled.
  void run_epoch();
  /// Runs epochs until cfg.epochs; after each one calls on_epoch if set.
  void run(const std::function<void(const SearchSession&)>& on_epoch = {});

  std::size_t epoch() const { return epoch_; }
  const ArchParams& alpha() const { return alpha_; }
  const Supernet& supernet() const { return net_; }
  const SearchConfig& config() const { return cfg_; }
  const std::vector<HistoryRow>& history() const { return history_; }
  /// Validation loss of the most recent epoch (NaN before the first).
  double last_val_loss() const;

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ck);
  /// Copies supernet weights from another session's network of the same
  /// macro config. Only before the first epoch.
  void load_weights(const Supernet& from);

 private:
  struct StepStats {
    double loss = 0.0;
    std::size_t correct = 0;
  };
  StepStats step(const std::vector<std::size_t>& indices, const ImageDataset& split, Rng& rng, bool alpha_step);
  ParamList w_params() const;

  MacroConfig macro_;
  SearchConfig cfg_;
  ImageDataset train_, val_;
  Normalization norm_;
  std::array<double, 3> fill_{};
  Supernet net_;
  ArchParams alpha_;
  std::unique_ptr<Decoder> decoder_;
  std::unique_ptr<Sgd> w_opt_;
  std::unique_ptr<Adam> alpha_opt_;
  LrSchedule schedule_;
  std::size_t epoch_ = 0;
  std::vector<HistoryRow> history_;
};

struct PhaseResult {
  ArchParams alpha;
  std::vector<HistoryRow> history;
  double final_val_loss = 0.0;
};

PhaseResult run_car_search(const MacroConfig& macro, const SearchConfig& cfg, const ImageDataset& data,
                           const ArchParams& layout);
/// Fresh supernet weights, alpha warm-started from alpha_init.
PhaseResult run_finetune(const MacroConfig& macro, const SearchConfig& cfg, const ImageDataset& data,
                         const ArchParams& alpha_init);

struct PipelineConfig {
  MacroConfig macro = MacroConfig::desk();
  SearchConfig car = SearchConfig::car_search_defaults();
  SearchConfig finetune = SearchConfig::finetune_defaults();
  bool use_car = true;
  bool uniform_space = false;
  // fine-tune from the CAR phase's supernet weights instead of fresh ones
  bool warm_start_weights = false;
  AlphaInit alpha_init = AlphaInit::kZeros;
  double alpha_init_eps = 1e-3;
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
};

struct PipelineResult {
  Architecture arch;
  ArchParams alpha;
  std::vector<HistoryRow> history;
  double final_val_loss = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::uint64_t, double>> seed_losses;  // every run, in seed order
};

/// CAR search (unless disabled), fine-tuning and discretisation. With
/// seeds > 1 the runs use consecutive seeds and the lowest final validation
/// loss wins.
PipelineResult run_full_pipeline(const PipelineConfig& cfg, const ImageDataset& data);

/// Stable hex digest of a configuration string.
std::string config_digest(const std::string& text);

}  // namespace attnas
