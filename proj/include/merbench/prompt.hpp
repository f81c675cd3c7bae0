#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "merbench/backend.hpp"
#include "merbench/dataset.hpp"
#include "merbench/labels.hpp"

namespace merbench {

class GroupingOracle;

enum class HardPrompt { Std, ZeroShotCot, HandcraftedZeroShot, HandcraftedFewShot, Multipersona };
enum class Stage1Mode { EmotionalClue, ObjectiveDescription };
enum class ContextLevel { SubtitleOnly, PlusSourceAndNames, PlusTraitsAndExperiences };
enum class Modality { Video, Audio };

std::string_view to_string(HardPrompt p);
std::string_view to_string(Stage1Mode m);
std::string_view to_string(ContextLevel c);
std::string_view to_string(Modality m);
HardPrompt hard_prompt_from_string(std::string_view s);
ContextLevel context_level_from_string(std::string_view s);

std::string_view template_id(HardPrompt p);

struct CompositeStrategy {
  enum class Kind { None, SelfConsistency, SelfRefine, LeastToMost };
  enum class Selection { LlmSelect, GroupMajority };

  Kind kind = Kind::None;
  int k = 5;
  int iters = 2;
  Selection selection = Selection::LlmSelect;

  // Canonical label with inactive parameters dropped: "none", "sc-k5-llm_select",
  // "refine-i2", "ltm".
  std::string label() const;
};

CompositeStrategy::Kind strategy_kind_from_string(std::string_view s);

// ---------------------------------------------------------------------------

// Named templates with {placeholder} slots. Built-in texts are compiled in;
// a directory of <template_id>.txt files overrides them one by one.
class TemplateStore {
 public:
  static TemplateStore builtin();
  static TemplateStore with_overrides(const std::filesystem::path& dir);

  bool contains(std::string_view id) const;
  const std::string& get(std::string_view id) const;
  void set(std::string id, std::string text) { templates_[std::move(id)] = std::move(text); }

  // Single pass substitution: values are never re-scanned for placeholders.
  // An unknown {name} slot is a TEMPLATE_ERROR; braces around anything that
  // is not a lowercase identifier are left alone.
  std::string render(std::string_view id, const std::map<std::string, std::string>& vars) const;

 private:
  std::map<std::string, std::string, std::less<>> templates_;
};

// Per-modality evidence fed into the final inference prompt.
struct SceneEvidence {
  std::optional<std::string> video;
  std::optional<std::string> audio;
  std::string subtitle;  // empty when the text modality is off
  Stage1Mode mode = Stage1Mode::EmotionalClue;
  bool frames_attached = false;  // one-stage: the video itself is attached
};

std::string render_context_block(const Sample& sample, ContextLevel level);

std::string render_stage1(const TemplateStore& store, Modality modality, Stage1Mode mode, const Sample& sample,
                          ContextLevel context);

// Evidence blocks only (used by least-to-most and inside render_stage2).
std::string render_scene(const SceneEvidence& evidence, const Sample& sample, ContextLevel context);

std::string render_stage2(const TemplateStore& store, HardPrompt design, const SceneEvidence& evidence,
                          const Sample& sample, ContextLevel context);

// Prompt for the single Video-LLM call: frames are attached, the subtitle is
// included when non-empty.
std::string render_one_stage(const TemplateStore& store, HardPrompt design, const std::string& subtitle,
                             const Sample& sample, ContextLevel context);

// ---------------------------------------------------------------------------

// Tries, in order: the last bracketed comma-separated list, the last bracketed
// list of quoted strings, the last line of short comma-separated terms.
EmotionLabelSet parse_emotion_list(std::string_view text);

struct LlmCall {
  Backend& backend;
  BackendBinding binding;
  std::string tag_prefix;  // e.g. "s001/stage2"
  std::string tag_suffix;  // e.g. " spec=ab12 r=0"

  ModelResponse call(const std::string& step, const std::string& prompt) const;
  ModelResponse call(const std::string& step, const std::string& prompt, const BackendBinding& b) const;
};

struct StrategyResult {
  EmotionLabelSet labels;
  std::string final_text;
};

StrategyResult run_single(const LlmCall& llm, const std::string& prompt);

StrategyResult run_self_consistency(const LlmCall& llm, const TemplateStore& store, const std::string& base_prompt,
                                    int k, CompositeStrategy::Selection selection, GroupingOracle* oracle);

StrategyResult run_self_refine(const LlmCall& llm, const TemplateStore& store, const std::string& base_prompt,
                               int iters);

// `fallback_prompt` is issued as a single call when decomposition yields no
// subproblems.
StrategyResult run_least_to_most(const LlmCall& llm, const TemplateStore& store, const std::string& scene_description,
                                 const std::string& fallback_prompt);

// Numbered or bulleted lines, capped at five.
std::vector<std::string> parse_subproblems(std::string_view text);

}  // namespace merbench
