#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merbench/backend.hpp"
#include "merbench/dataset.hpp"
#include "merbench/prompt.hpp"
#include "merbench/sampling.hpp"

namespace merbench {

struct ModalitySet {
  bool text = false;
  bool video = false;
  bool audio = false;

  bool any() const { return text || video || audio; }
  std::size_t count() const { return text + video + audio; }
  // "t", "v", "a", "tv", "ta", "va", "tva"
  std::string label() const;
  static ModalitySet parse(std::string_view label);
  // The seven non-empty subsets in the order unimodal, bimodal, trimodal.
  static std::vector<ModalitySet> all();

  friend bool operator==(const ModalitySet&, const ModalitySet&) = default;
};

enum class PipelineVariant { ClueTwoStage, ObjectiveTwoStage, VideoOnlyOneStage };

std::string_view to_string(PipelineVariant v);
PipelineVariant pipeline_variant_from_string(std::string_view s);

struct PipelineBindings {
  std::optional<BackendBinding> llm;
  std::optional<BackendBinding> video;
  std::optional<BackendBinding> audio;
};

// Returns the violated rule, or nullopt when the combination is runnable.
std::optional<std::string> validate_configuration(PipelineVariant variant, const ModalitySet& modalities,
                                                  const PipelineBindings& bindings, const CompositeStrategy& strategy);

struct UnitSettings {
  PipelineVariant variant = PipelineVariant::ClueTwoStage;
  ModalitySet modalities{true, true, true};
  PipelineBindings bindings;
  HardPrompt design = HardPrompt::Std;
  CompositeStrategy strategy;
  ContextLevel context = ContextLevel::SubtitleOnly;
  SamplingPolicy sampling = SamplingPolicy::fixed(24);
  int repeat = 0;
  std::string spec_id;
  // Re-issue Stage-1 calls on every repeat instead of reusing the cached clues.
  bool rerun_stage1 = false;
};

struct Prediction {
  std::string sample_id;
  std::string spec_id;
  int repeat = 0;
  bool valid = false;
  EmotionLabelSet labels;
  std::map<std::string, std::string> stage1_texts;  // keyed by "video" / "audio"
  std::string stage2_text;
  std::vector<std::string> deviations;
  std::string error;  // set when !valid

  nlohmann::json to_json() const;
  static Prediction from_json(const nlohmann::json& j);
};

class GroupingOracle;

struct PipelineEnv {
  Backend& backend;
  const TemplateStore& templates;
  GroupingOracle* grouping = nullptr;  // needed by group_majority self-consistency
  ExtractorConfig extractor;
};

// Stage 1 per active non-text modality, then Stage 2 with the composite
// strategy. Backend failures propagate as Error with the stage in the message;
// an unparseable final answer yields an invalid Prediction.
Prediction run_two_stage(const PipelineEnv& env, const Sample& sample, const UnitSettings& settings);

// One Video-LLM call with frames, optional subtitle and the design's instruction.
Prediction run_one_stage(const PipelineEnv& env, const Sample& sample, const UnitSettings& settings);

Prediction run_unit(const PipelineEnv& env, const Sample& sample, const UnitSettings& settings);

}  // namespace merbench
