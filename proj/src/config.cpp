#include "attnas/config.hpp"

#include <functional>
#include <map>

#include "json.hpp"

#include "attnas/error.hpp"

namespace attnas {

using Json = nlohmann::ordered_json;

namespace {

Json parse_object(const std::string& text, const std::string& what) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(what + ": parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  return j;
}

using Setter = std::function<void(const Json&)>;

// Applies each key through its setter; unknown keys and type errors name the key.
void apply(const Json& j, const std::map<std::string, Setter>& setters, const std::string& what) {
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError(what + ": unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(what + ": bad value for '" + key + "': " + e.what());
    }
  }
}

template <typename T>
Setter set(T& field) {
  return [&field](const Json& v) { field = v.get<T>(); };
}

Json macro_json(const MacroConfig& m) {
  Json j;
  j["image_size"] = m.image_size;
  j["in_channels"] = m.in_channels;
  j["stem_channels"] = m.stem_channels;
  Json stages = Json::array();
  for (const auto& s : m.stages) stages.push_back({{"channels", s.channels}, {"layers", s.layers}, {"stride", s.stride}});
  j["stages"] = stages;
  j["num_classes"] = m.num_classes;
  return j;
}

void apply_macro(const Json& j, MacroConfig& m) {
  apply(j,
        {{"image_size", set(m.image_size)},
         {"in_channels", set(m.in_channels)},
         {"stem_channels", set(m.stem_channels)},
         {"num_classes", set(m.num_classes)},
         {"stages",
          [&m](const Json& v) {
            m.stages.clear();
            for (const auto& s : v) {
              m.stages.push_back({s.at("channels").get<std::size_t>(), s.at("layers").get<std::size_t>(),
                                  s.at("stride").get<std::size_t>()});
            }
          }}},
        "macro");
}

std::string fill_name(MaskFill f) { return f == MaskFill::kMean ? "mean" : "zero"; }
std::string region_name(LossRegion r) { return r == LossRegion::kAll ? "all" : "masked"; }

Json search_json(const SearchConfig& c) {
  Json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["w_lr"] = c.w_opt.lr;
  j["w_momentum"] = c.w_opt.momentum;
  j["w_weight_decay"] = c.w_opt.weight_decay;
  j["w_cosine"] = c.w_cosine;
  j["alpha_lr"] = c.alpha_opt.lr;
  j["alpha_beta1"] = c.alpha_opt.beta1;
  j["alpha_beta2"] = c.alpha_opt.beta2;
  j["alpha_eps"] = c.alpha_opt.eps;
  j["alpha_weight_decay"] = c.alpha_opt.weight_decay;
  j["split_ratio"] = c.split_ratio;
  j["label_smoothing"] = c.label_smoothing;
  j["clip_norm"] = "off";
  j["mask_count_range"] = {c.car.count_range.first, c.car.count_range.second};
  j["mask_size_range"] = {c.car.size_range.first, c.car.size_range.second};
  j["mask_fill"] = fill_name(c.car.fill);
  j["loss_region"] = region_name(c.car.loss_region);
  return j;
}

void apply_search(const Json& j, SearchConfig& c, const std::string& what) {
  apply(j,
        {{"epochs", set(c.epochs)},
         {"batch_size", set(c.batch_size)},
         {"w_lr", set(c.w_opt.lr)},
         {"w_momentum", set(c.w_opt.momentum)},
         {"w_weight_decay", set(c.w_opt.weight_decay)},
         {"w_cosine", set(c.w_cosine)},
         {"alpha_lr", set(c.alpha_opt.lr)},
         {"alpha_beta1", set(c.alpha_opt.beta1)},
         {"alpha_beta2", set(c.alpha_opt.beta2)},
         {"alpha_eps", set(c.alpha_opt.eps)},
         {"alpha_weight_decay", set(c.alpha_opt.weight_decay)},
         {"split_ratio", set(c.split_ratio)},
         {"label_smoothing", set(c.label_smoothing)},
         {"clip_norm",
          [what](const Json& v) {
            if (v.get<std::string>() != "off") throw ConfigError(what + ": gradient clipping is not supported");
          }},
         {"mask_count_range",
          [&c](const Json& v) {
            c.car.count_range = {v.at(0).get<std::size_t>(), v.at(1).get<std::size_t>()};
          }},
         {"mask_size_range",
          [&c](const Json& v) { c.car.size_range = {v.at(0).get<double>(), v.at(1).get<double>()}; }},
         {"mask_fill",
          [&c, what](const Json& v) {
            const auto s = v.get<std::string>();
            if (s == "mean") c.car.fill = MaskFill::kMean;
            else if (s == "zero") c.car.fill = MaskFill::kZero;
            else throw ConfigError(what + ": mask_fill must be 'mean' or 'zero'");
          }},
         {"loss_region",
          [&c, what](const Json& v) {
            const auto s = v.get<std::string>();
            if (s == "all") c.car.loss_region = LossRegion::kAll;
            else if (s == "masked") c.car.loss_region = LossRegion::kMasked;
            else throw ConfigError(what + ": loss_region must be 'all' or 'masked'");
          }}},
        what);
}

Json train_json(const TrainConfig& c) {
  Json j;
  j["epochs"] = c.epochs;
  j["initial_channels"] = c.initial_channels;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.sgd.lr;
  j["momentum"] = c.sgd.momentum;
  j["weight_decay"] = c.sgd.weight_decay;
  j["cosine"] = c.cosine;
  j["augment"] = c.augment;
  j["pad"] = c.pad;
  j["flip"] = c.flip;
  j["label_smoothing"] = c.label_smoothing;
  j["seed"] = c.seed;
  j["select_on_validation"] = c.select_on_validation;
  j["validation_ratio"] = c.validation_ratio;
  return j;
}

void apply_train(const Json& j, TrainConfig& c) {
  apply(j,
        {{"epochs", set(c.epochs)},
         {"initial_channels", set(c.initial_channels)},
         {"batch_size", set(c.batch_size)},
         {"lr", set(c.sgd.lr)},
         {"momentum", set(c.sgd.momentum)},
         {"weight_decay", set(c.sgd.weight_decay)},
         {"cosine", set(c.cosine)},
         {"augment", set(c.augment)},
         {"pad", set(c.pad)},
         {"flip", set(c.flip)},
         {"label_smoothing", set(c.label_smoothing)},
         {"seed", set(c.seed)},
         {"select_on_validation", set(c.select_on_validation)},
         {"validation_ratio", set(c.validation_ratio)}},
        "train");
}

}  // namespace

std::string macro_to_json(const MacroConfig& m) { return macro_json(m).dump(2); }

MacroConfig macro_from_json(const std::string& text, const MacroConfig& base) {
  MacroConfig m = base;
  apply_macro(parse_object(text, "macro"), m);
  return m;
}

std::string pipeline_to_json(const PipelineConfig& c) {
  Json j;
  j["macro"] = macro_json(c.macro);
  j["use_car"] = c.use_car;
  j["uniform_space"] = c.uniform_space;
  j["warm_start_weights"] = c.warm_start_weights;
  j["alpha_init"] = c.alpha_init == AlphaInit::kZeros ? "zeros" : "uniform";
  j["alpha_init_eps"] = c.alpha_init_eps;
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  j["car"] = search_json(c.car);
  j["finetune"] = search_json(c.finetune);
  return j.dump(2);
}

PipelineConfig pipeline_from_json(const std::string& text, const PipelineConfig& base) {
  PipelineConfig c = base;
  apply(parse_object(text, "search config"),
        {{"macro", [&c](const Json& v) { apply_macro(v, c.macro); }},
         {"use_car", set(c.use_car)},
         {"uniform_space", set(c.uniform_space)},
         {"warm_start_weights", set(c.warm_start_weights)},
         {"alpha_init",
          [&c](const Json& v) {
            const auto s = v.get<std::string>();
            if (s == "zeros") c.alpha_init = AlphaInit::kZeros;
            else if (s == "uniform") c.alpha_init = AlphaInit::kUniform;
            else throw ConfigError("alpha_init must be 'zeros' or 'uniform'");
          }},
         {"alpha_init_eps", set(c.alpha_init_eps)},
         {"seed", set(c.seed)},
         {"seeds", set(c.seeds)},
         {"car", [&c](const Json& v) { apply_search(v, c.car, "car"); }},
         {"finetune", [&c](const Json& v) { apply_search(v, c.finetune, "finetune"); }}},
        "search config");
  c.car.phase = SearchPhase::kCarSearch;
  c.finetune.phase = SearchPhase::kFinetune;
  return c;
}

std::string train_to_json(const TrainConfig& c) { return train_json(c).dump(2); }

TrainConfig train_from_json(const std::string& text, const TrainConfig& base) {
  TrainConfig c = base;
  apply_train(parse_object(text, "train config"), c);
  return c;
}

std::string scale_to_json(const ScaleConfig& c) {
  Json j;
  j["channels"] = c.channels;
  j["stages"] = c.stages;
  j["layers_per_stage"] = c.layers_per_stage;
  j["train"] = train_json(c.train);
  return j.dump(2);
}

ScaleConfig scale_from_json(const std::string& text, const ScaleConfig& base) {
  ScaleConfig c = base;
  apply(parse_object(text, "scale config"),
        {{"channels", set(c.channels)},
         {"stages", set(c.stages)},
         {"layers_per_stage", set(c.layers_per_stage)},
         {"train", [&c](const Json& v) { apply_train(v, c.train); }}},
        "scale config");
  return c;
}

}  // namespace attnas
