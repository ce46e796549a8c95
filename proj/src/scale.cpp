#include "attnas/scale.hpp"

#include "attnas/error.hpp"

namespace attnas {

Architecture scaled_architecture(const std::optional<Architecture>& base, std::size_t image_size,
                                 std::size_t num_classes, std::size_t channels, std::size_t stages,
                                 std::size_t layers_per_stage) {
  Architecture arch;
  arch.macro = MacroConfig::ladder(image_size, channels, stages, layers_per_stage, num_classes);
  const std::size_t n = arch.macro.num_layers();
  for (std::size_t i = 0; i < n; ++i) {
    if (base && !base->choices.empty()) {
      arch.choices.push_back(base->choices[i % base->choices.size()]);
    } else {
      arch.choices.push_back(CandidateOp::local(3, 4));
    }
  }
  if (base) arch.seed = base->seed;
  return arch;
}

std::vector<ScaleRow> scale_sweep(const ScaleConfig& cfg, const std::optional<Architecture>& base,
                                  const ImageDataset& train, const ImageDataset& test) {
  if (cfg.channels.empty() || cfg.stages.empty()) throw ConfigError("scale sweep needs channel and stage lists");
  std::vector<ScaleRow> rows;
  for (std::size_t c : cfg.channels)
    for (std::size_t s : cfg.stages) {
      const Architecture arch =
          scaled_architecture(base, train.image_size, train.class_count, c, s, cfg.layers_per_stage);
      TrainConfig tc = cfg.train;
      tc.initial_channels = c;
      const TrainResult r = train_final(arch, tc, train, test);
      rows.push_back({c, s, count_params(r.network), 1.0 - r.best.top1_error});
    }
  return rows;
}

}  // namespace attnas
