#pragma once

#include <string>

#include "attnas/scale.hpp"
#include "attnas/search.hpp"
#include "attnas/trainer.hpp"

// JSON views of the run configurations. The *_from_json functions apply only
// the keys present in the text on top of `base`; unknown keys are rejected.
namespace attnas {

std::string macro_to_json(const MacroConfig& m);
MacroConfig macro_from_json(const std::string& text, const MacroConfig& base);

std::string pipeline_to_json(const PipelineConfig& c);
PipelineConfig pipeline_from_json(const std::string& text, const PipelineConfig& base = {});

std::string train_to_json(const TrainConfig& c);
TrainConfig train_from_json(const std::string& text, const TrainConfig& base = {});

std::string scale_to_json(const ScaleConfig& c);
ScaleConfig scale_from_json(const std::string& text, const ScaleConfig& base = {});

}  // namespace attnas
