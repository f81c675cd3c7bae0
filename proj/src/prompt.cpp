#include "merbench/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "merbench/builtin_templates.hpp"
#include "merbench/error.hpp"
#include "merbench/eval.hpp"
#include "text_util.hpp"

namespace merbench {

namespace fs = std::filesystem;

std::string_view to_string(HardPrompt p) {
  switch (p) {
    case HardPrompt::Std: return "STD";
    case HardPrompt::ZeroShotCot: return "ZERO_SHOT_COT";
    case HardPrompt::HandcraftedZeroShot: return "HANDCRAFTED_ZERO_SHOT";
    case HardPrompt::HandcraftedFewShot: return "HANDCRAFTED_FEW_SHOT";
    case HardPrompt::Multipersona: return "MULTIPERSONA";
  }
  return "STD";
}

std::string_view to_string(Stage1Mode m) {
  return m == Stage1Mode::EmotionalClue ? "EMOTIONAL_CLUE" : "OBJECTIVE_DESCRIPTION";
}

std::string_view to_string(ContextLevel c) {
  switch (c) {
    case ContextLevel::SubtitleOnly: return "SUBTITLE_ONLY";
    case ContextLevel::PlusSourceAndNames: return "PLUS_SOURCE_AND_NAMES";
    case ContextLevel::PlusTraitsAndExperiences: return "PLUS_TRAITS_AND_EXPERIENCES";
  }
  return "SUBTITLE_ONLY";
}

std::string_view to_string(Modality m) { return m == Modality::Video ? "video" : "audio"; }

HardPrompt hard_prompt_from_string(std::string_view s) {
  for (auto p : {HardPrompt::Std, HardPrompt::ZeroShotCot, HardPrompt::HandcraftedZeroShot,
                 HardPrompt::HandcraftedFewShot, HardPrompt::Multipersona}) {
    if (to_string(p) == s) return p;
  }
  throw Error(ErrorCode::ConfigError, "unknown hard prompt design '" + std::string(s) + "'");
}

ContextLevel context_level_from_string(std::string_view s) {
  for (auto c : {ContextLevel::SubtitleOnly, ContextLevel::PlusSourceAndNames, ContextLevel::PlusTraitsAndExperiences}) {
    if (to_string(c) == s) return c;
  }
  throw Error(ErrorCode::ConfigError, "unknown context level '" + std::string(s) + "'");
}

std::string_view template_id(HardPrompt p) {
  switch (p) {
    case HardPrompt::Std: return "stage2_std";
    case HardPrompt::ZeroShotCot: return "stage2_zero_shot_cot";
    case HardPrompt::HandcraftedZeroShot: return "stage2_handcrafted_zero_shot";
    case HardPrompt::HandcraftedFewShot: return "stage2_handcrafted_few_shot";
    case HardPrompt::Multipersona: return "stage2_multipersona";
  }
  return "stage2_std";
}

std::string CompositeStrategy::label() const {
  switch (kind) {
    case Kind::None: return "none";
    case Kind::SelfConsistency:
      return "sc-k" + std::to_string(k) + (selection == Selection::LlmSelect ? "-llm_select" : "-group_majority");
    case Kind::SelfRefine: return "refine-i" + std::to_string(iters);
    case Kind::LeastToMost: return "ltm";
  }
  return "none";
}

CompositeStrategy::Kind strategy_kind_from_string(std::string_view s) {
  if (s == "NONE") return CompositeStrategy::Kind::None;
  if (s == "SELF_CONSISTENCY") return CompositeStrategy::Kind::SelfConsistency;
  if (s == "SELF_REFINE") return CompositeStrategy::Kind::SelfRefine;
  if (s == "LEAST_TO_MOST") return CompositeStrategy::Kind::LeastToMost;
  throw Error(ErrorCode::ConfigError, "unknown composite strategy '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------

TemplateStore TemplateStore::builtin() {
  TemplateStore store;
  for (const auto& [id, text] : detail::kBuiltinTemplates) store.templates_.emplace(id, text);
  return store;
}

TemplateStore TemplateStore::with_overrides(const fs::path& dir) {
  auto store = builtin();
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "template directory not found: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    store.templates_[entry.path().stem().string()] = ss.str();
  }
  return store;
}

bool TemplateStore::contains(std::string_view id) const { return templates_.find(id) != templates_.end(); }

const std::string& TemplateStore::get(std::string_view id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) throw Error(ErrorCode::TemplateError, "unknown template '" + std::string(id) + "'");
  return it->second;
}

namespace {

bool is_slot_char(char c) { return (c >= 'a' && c <= 'z') || c == '_' || (c >= '0' && c <= '9'); }

// Collapses runs of blank lines left by empty slots and trims the ends.
std::string tidy(const std::string& s) {
  std::string out;
  int newlines = 0;
  for (char c : s) {
    if (c == '\n') {
      if (++newlines > 2) continue;
    } else {
      newlines = 0;
    }
    out.push_back(c);
  }
  auto t = detail::trim(out);
  return std::string(t);
}

}  // namespace

std::string TemplateStore::render(std::string_view id, const std::map<std::string, std::string>& vars) const {
  const auto& tpl = get(id);
  std::string out;
  out.reserve(tpl.size() + 256);
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      std::size_t j = i + 1;
      while (j < tpl.size() && is_slot_char(tpl[j])) ++j;
      if (j < tpl.size() && tpl[j] == '}' && j > i + 1) {
        const std::string name = tpl.substr(i + 1, j - i - 1);
        auto it = vars.find(name);
        if (it == vars.end()) {
          throw Error(ErrorCode::TemplateError, "template '" + std::string(id) + "' has unbound slot {" + name + "}");
        }
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out.push_back(tpl[i++]);
  }
  return tidy(out);
}

// ---------------------------------------------------------------------------

std::string render_context_block(const Sample& sample, ContextLevel level) {
  if (level == ContextLevel::SubtitleOnly) return {};
  if (sample.characters.empty()) {
    throw Error(ErrorCode::MissingMetadata, "sample '" + sample.id + "' has no character profiles for context level " +
                                                std::string(to_string(level)));
  }
  const bool traits = level == ContextLevel::PlusTraitsAndExperiences;
  if (traits && std::none_of(sample.characters.begin(), sample.characters.end(),
                             [](const CharacterProfile& c) { return c.traits_and_experiences.has_value(); })) {
    throw Error(ErrorCode::MissingMetadata, "sample '" + sample.id + "' has no character traits or experiences");
  }
  std::string out;
  if (sample.title && !sample.title->empty()) out += "Video source: " + *sample.title + "\n";
  out += "Characters:\n";
  for (const auto& c : sample.characters) {
    out += "- " + c.name;
    if (!c.basic_info.empty()) out += ": " + c.basic_info;
    if (traits && c.traits_and_experiences && !c.traits_and_experiences->empty()) {
      out += " Personality and past experiences: " + *c.traits_and_experiences;
    }
    out += "\n";
  }
  return out;
}

std::string render_stage1(const TemplateStore& store, Modality modality, Stage1Mode mode, const Sample& sample,
                          ContextLevel context) {
  std::string id = modality == Modality::Video ? "stage1_video_" : "stage1_audio_";
  id += mode == Stage1Mode::EmotionalClue ? "clue" : "objective";
  return store.render(id, {{"context", render_context_block(sample, context)}});
}

std::string render_scene(const SceneEvidence& ev, const Sample& sample, ContextLevel context) {
  const bool clue = ev.mode == Stage1Mode::EmotionalClue;
  std::vector<std::string> blocks;
  if (auto ctx = render_context_block(sample, context); !ctx.empty()) blocks.emplace_back(detail::trim(ctx));
  if (ev.frames_attached) blocks.push_back("Video: the attached images are frames sampled from the clip in temporal order.");
  if (!ev.subtitle.empty()) blocks.push_back("Subtitle (what the character says): \"" + ev.subtitle + "\"");
  if (ev.video && !ev.video->empty()) {
    blocks.push_back(std::string(clue ? "Visual emotional clues from the video:\n" : "Objective description of the video:\n") +
                     std::string(detail::trim(*ev.video)));
  }
  if (ev.audio && !ev.audio->empty()) {
    blocks.push_back(std::string(clue ? "Vocal emotional clues from the audio:\n" : "Objective description of the audio:\n") +
                     std::string(detail::trim(*ev.audio)));
  }
  const bool has_evidence = ev.frames_attached || !ev.subtitle.empty() || (ev.video && !ev.video->empty()) ||
                            (ev.audio && !ev.audio->empty());
  if (!has_evidence) throw Error(ErrorCode::EmptyEvidence, "no clues and no subtitle for sample '" + sample.id + "'");
  std::string out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) out += "\n\n";
    out += blocks[i];
  }
  return out;
}

std::string render_stage2(const TemplateStore& store, HardPrompt design, const SceneEvidence& evidence,
                          const Sample& sample, ContextLevel context) {
  return store.render(template_id(design), {{"scene", render_scene(evidence, sample, context)}});
}

std::string render_one_stage(const TemplateStore& store, HardPrompt design, const std::string& subtitle,
                             const Sample& sample, ContextLevel context) {
  SceneEvidence ev;
  ev.subtitle = subtitle;
  ev.frames_attached = true;
  return render_stage2(store, design, ev, sample, context);
}

// ---------------------------------------------------------------------------

namespace {

std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    const bool space = std::isspace(static_cast<unsigned char>(c));
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

}  // namespace

EmotionLabelSet parse_emotion_list(std::string_view text) {
  const auto groups = detail::bracket_groups(text);
  // (1) unquoted bracketed list
  for (auto it = groups.rbegin(); it != groups.rend(); ++it) {
    if (it->find('"') != std::string_view::npos) continue;
    auto set = EmotionLabelSet::from_raw(detail::split_terms(*it));
    if (!set.empty()) return set;
  }
  // (2) bracketed array literal of quoted strings
  for (auto it = groups.rbegin(); it != groups.rend(); ++it) {
    auto set = EmotionLabelSet::from_raw(detail::quoted_strings(*it));
    if (!set.empty()) return set;
  }
  // (3) last non-empty line of comma-separated terms. Terms longer than four
  // words are prose, not labels.
  const auto lines = detail::split_lines(text);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    auto line = detail::trim(*it);
    if (line.empty()) continue;
    if (auto colon = line.rfind(':'); colon != std::string_view::npos) line = line.substr(colon + 1);
    const auto terms = detail::split_terms(line);
    const bool short_terms = std::all_of(terms.begin(), terms.end(), [](const std::string& t) { return word_count(t) <= 4; });
    auto set = EmotionLabelSet::from_raw(terms);
    if (short_terms && !set.empty()) return set;
    break;
  }
  throw Error(ErrorCode::Unparseable, "no emotion list found in model output");
}

std::vector<std::string> parse_subproblems(std::string_view text) {
  std::vector<std::string> out;
  for (auto line : detail::split_lines(text)) {
    auto t = detail::trim(line);
    std::size_t i = 0;
    if (!t.empty() && (t[0] == '-' || t[0] == '*')) {
      i = 1;
    } else {
      while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) ++i;
      if (i == 0 || i >= t.size() || (t[i] != '.' && t[i] != ')')) continue;
      ++i;
    }
    auto body = detail::trim(t.substr(i));
    if (body.empty()) continue;
    out.emplace_back(body);
    if (out.size() == 5) break;
  }
  return out;
}

ModelResponse LlmCall::call(const std::string& step, const std::string& prompt) const {
  return call(step, prompt, binding);
}

ModelResponse LlmCall::call(const std::string& step, const std::string& prompt, const BackendBinding& b) const {
  ModelRequest req;
  req.binding = b;
  req.prompt_text = prompt;
  req.tag = tag_prefix + step + tag_suffix;
  return backend.invoke(req);
}

StrategyResult run_single(const LlmCall& llm, const std::string& prompt) {
  auto resp = llm.call("", prompt);
  return {parse_emotion_list(resp.text), resp.text};
}

StrategyResult run_self_consistency(const LlmCall& llm, const TemplateStore& store, const std::string& base_prompt,
                                    int k, CompositeStrategy::Selection selection, GroupingOracle* oracle) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "self-consistency needs k >= 2");
  if (selection == CompositeStrategy::Selection::GroupMajority && !oracle) {
    throw Error(ErrorCode::InvalidArgument, "group_majority selection needs a grouping oracle");
  }
  std::vector<EmotionLabelSet> candidates;
  std::vector<std::string> raw;
  for (int i = 0; i < k; ++i) {
    BackendBinding b = llm.binding;
    if (b.decode.temperature <= 0.0) b.decode.temperature = 0.7;
    b.decode.seed = derive_seed(llm.binding.decode.seed, "self-consistency", i);
    auto resp = llm.call("/sc/" + std::to_string(i), base_prompt, b);
    try {
      candidates.push_back(parse_emotion_list(resp.text));
      raw.push_back(resp.text);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Unparseable) throw;
    }
  }
  if (candidates.empty()) throw Error(ErrorCode::Unparseable, "all self-consistency candidates were unparseable");

  if (selection == CompositeStrategy::Selection::LlmSelect) {
    std::string listing;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      listing += "Candidate " + std::to_string(i + 1) + ": " + candidates[i].to_list_string() + "\n";
    }
    auto prompt = store.render("sc_select", {{"task", base_prompt}, {"candidates", listing}});
    auto resp = llm.call("/sc/select", prompt);
    return {parse_emotion_list(resp.text), resp.text};
  }

  std::vector<std::string> all;
  for (const auto& c : candidates) all.insert(all.end(), c.labels().begin(), c.labels().end());
  const auto assignment = oracle->group_labels(all);

  struct Tally {
    int candidates = 0;
    std::map<std::string, int> label_counts;
  };
  std::map<int, Tally> tallies;
  for (const auto& c : candidates) {
    std::set<int> seen;
    for (const auto& l : c.labels()) {
      const int g = *assignment.group_of(l);
      ++tallies[g].label_counts[l];
      if (seen.insert(g).second) ++tallies[g].candidates;
    }
  }
  const int threshold = (k + 1) / 2;
  struct Winner {
    std::string label;
    int support;
  };
  std::vector<Winner> winners;
  for (const auto& [g, t] : tallies) {
    if (t.candidates < threshold) continue;
    // most frequent member, ties to the lexicographically smallest
    auto best = std::max_element(t.label_counts.begin(), t.label_counts.end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; });
    winners.push_back({best->first, t.candidates});
  }
  std::sort(winners.begin(), winners.end(), [](const Winner& a, const Winner& b) {
    return a.support != b.support ? a.support > b.support : a.label < b.label;
  });
  std::vector<std::string> labels;
  for (const auto& w : winners) labels.push_back(w.label);
  auto set = EmotionLabelSet::from_raw(labels);
  if (set.empty()) throw Error(ErrorCode::Unparseable, "no label group reached a majority");
  return {set, set.to_list_string()};
}

StrategyResult run_self_refine(const LlmCall& llm, const TemplateStore& store, const std::string& base_prompt,
                               int iters) {
  if (iters < 1) throw Error(ErrorCode::InvalidArgument, "self-refine needs iters >= 1");
  std::vector<std::string> answers;
  answers.push_back(llm.call("/refine/initial", base_prompt).text);
  // Earlier rounds stay in the context so each step sees the whole chain.
  std::string history;
  for (int i = 1; i <= iters; ++i) {
    const std::string current = answers.back();
    auto critique = llm.call("/refine/critique/" + std::to_string(i),
                             store.render("refine_critique",
                                          {{"task", base_prompt}, {"history", history}, {"answer", current}}))
                        .text;
    answers.push_back(llm.call("/refine/revise/" + std::to_string(i),
                               store.render("refine_revise", {{"task", base_prompt},
                                                              {"history", history},
                                                              {"answer", current},
                                                              {"critique", critique}}))
                          .text);
    history += "Round " + std::to_string(i) + " answer:\n" + current + "\nRound " + std::to_string(i) +
               " feedback:\n" + std::string(detail::trim(critique)) + "\n";
  }
  for (auto it = answers.rbegin(); it != answers.rend(); ++it) {
    try {
      return {parse_emotion_list(*it), *it};
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Unparseable) throw;
    }
  }
  throw Error(ErrorCode::Unparseable, "no self-refine answer was parseable");
}

StrategyResult run_least_to_most(const LlmCall& llm, const TemplateStore& store, const std::string& scene_description,
                                 const std::string& fallback_prompt) {
  if (detail::trim(scene_description).empty()) {
    throw Error(ErrorCode::EmptyEvidence, "least-to-most needs a scene description");
  }
  const auto decomposition = llm.call("/ltm/decompose", store.render("ltm_decompose", {{"scene", scene_description}}));
  const auto subproblems = parse_subproblems(decomposition.text);
  if (subproblems.empty()) {
    auto resp = llm.call("/ltm/fallback", fallback_prompt);
    return {parse_emotion_list(resp.text), resp.text};
  }
  std::string previous;
  for (std::size_t i = 0; i < subproblems.size(); ++i) {
    auto prompt = store.render("ltm_solve", {{"scene", scene_description},
                                             {"previous", previous.empty() ? "" : previous + "\n"},
                                             {"subproblem", subproblems[i]}});
    auto answer = llm.call("/ltm/solve/" + std::to_string(i + 1), prompt).text;
    if (previous.empty()) previous = "Answered subquestions:\n";
    previous += "Q" + std::to_string(i + 1) + ": " + subproblems[i] + "\nA" + std::to_string(i + 1) + ": " +
                std::string(detail::trim(answer)) + "\n";
  }
  auto resp = llm.call("/ltm/synthesize",
                       store.render("ltm_synthesize", {{"scene", scene_description}, {"previous", previous + "\n"}}));
  return {parse_emotion_list(resp.text), resp.text};
}

}  // namespace merbench
