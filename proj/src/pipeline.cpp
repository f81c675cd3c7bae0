#include "merbench/pipeline.hpp"

#include "merbench/error.hpp"
#include "merbench/eval.hpp"

namespace merbench {

using nlohmann::json;

std::string ModalitySet::label() const {
  std::string s;
  if (text) s += 't';
  if (video) s += 'v';
  if (audio) s += 'a';
  return s;
}

ModalitySet ModalitySet::parse(std::string_view label) {
  ModalitySet m;
  for (char c : label) {
    bool* slot = c == 't' ? &m.text : c == 'v' ? &m.video : c == 'a' ? &m.audio : nullptr;
    if (!slot || *slot) throw Error(ErrorCode::ConfigError, "bad modality set '" + std::string(label) + "'");
    *slot = true;
  }
  if (!m.any()) throw Error(ErrorCode::ConfigError, "modality set must not be empty");
  return m;
}

std::vector<ModalitySet> ModalitySet::all() {
  return {parse("t"), parse("v"), parse("a"), parse("tv"), parse("ta"), parse("va"), parse("tva")};
}

std::string_view to_string(PipelineVariant v) {
  switch (v) {
    case PipelineVariant::ClueTwoStage: return "CLUE_TWO_STAGE";
    case PipelineVariant::ObjectiveTwoStage: return "OBJECTIVE_TWO_STAGE";
    case PipelineVariant::VideoOnlyOneStage: return "VIDEO_ONLY_ONE_STAGE";
  }
  return "CLUE_TWO_STAGE";
}

PipelineVariant pipeline_variant_from_string(std::string_view s) {
  for (auto v : {PipelineVariant::ClueTwoStage, PipelineVariant::ObjectiveTwoStage, PipelineVariant::VideoOnlyOneStage}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::ConfigError, "unknown pipeline variant '" + std::string(s) + "'");
}

std::optional<std::string> validate_configuration(PipelineVariant variant, const ModalitySet& m,
                                                  const PipelineBindings& b, const CompositeStrategy& strategy) {
  if (!m.any()) return "at least one modality must be active";
  if (variant == PipelineVariant::VideoOnlyOneStage) {
    if (!m.video) return "one-stage variant requires the video modality";
    if (m.audio) return "one-stage variant cannot use the audio modality";
    if (!b.video) return "one-stage variant requires a video binding";
    if (b.video->capability != Capability::TextFrames) return "video binding must have text+frames capability";
    if (strategy.kind != CompositeStrategy::Kind::None) return "one-stage variant does not run composite strategies";
    return std::nullopt;
  }
  if (m.video) {
    if (!b.video) return "video modality requires a video binding";
    if (b.video->capability != Capability::TextFrames) return "video binding must have text+frames capability";
  }
  if (m.audio) {
    if (!b.audio) return "audio modality requires an audio binding";
    if (b.audio->capability != Capability::TextAudio) return "audio binding must have text+audio capability";
  }
  if (!b.llm) return "two-stage variants require a Stage-2 text LLM binding";
  if (b.llm->capability != Capability::Text) return "Stage-2 binding must have text capability";
  if (strategy.kind == CompositeStrategy::Kind::SelfConsistency && strategy.k < 2) return "self-consistency needs k >= 2";
  if (strategy.kind == CompositeStrategy::Kind::SelfRefine && strategy.iters < 1) return "self-refine needs iters >= 1";
  return std::nullopt;
}

json Prediction::to_json() const {
  return {{"sample_id", sample_id},       {"spec", spec_id},           {"repeat", repeat},
          {"valid", valid},               {"labels", labels.labels()}, {"stage1", stage1_texts},
          {"stage2", stage2_text},        {"deviations", deviations},  {"error", error}};
}

Prediction Prediction::from_json(const json& j) {
  Prediction p;
  p.sample_id = j.at("sample_id").get<std::string>();
  p.spec_id = j.at("spec").get<std::string>();
  p.repeat = j.at("repeat").get<int>();
  p.valid = j.at("valid").get<bool>();
  p.labels = EmotionLabelSet::from_raw(j.at("labels").get<std::vector<std::string>>());
  p.stage1_texts = j.value("stage1", std::map<std::string, std::string>{});
  p.stage2_text = j.value("stage2", "");
  p.deviations = j.value("deviations", std::vector<std::string>{});
  p.error = j.value("error", "");
  return p;
}

namespace {

std::string tag_suffix(const UnitSettings& s) {
  return " spec=" + s.spec_id + " r=" + std::to_string(s.repeat);
}

// Backend errors keep their code; the message gains the stage attribution.
template <typename F>
auto attributed(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), where + ": " + e.message());
  }
}

BackendBinding final_call_binding(const BackendBinding& b, int repeat) {
  BackendBinding out = b;
  out.decode.seed = derive_seed(b.decode.seed, "repeat", repeat);
  return out;
}

Prediction make_prediction(const Sample& sample, const UnitSettings& s) {
  Prediction p;
  p.sample_id = sample.id;
  p.spec_id = s.spec_id;
  p.repeat = s.repeat;
  return p;
}

}  // namespace

Prediction run_two_stage(const PipelineEnv& env, const Sample& sample, const UnitSettings& s) {
  if (s.variant == PipelineVariant::VideoOnlyOneStage) {
    throw Error(ErrorCode::InvalidArgument, "run_two_stage called with the one-stage variant");
  }
  if (auto err = validate_configuration(s.variant, s.modalities, s.bindings, s.strategy)) {
    throw Error(ErrorCode::ConfigError, *err);
  }
  auto pred = make_prediction(sample, s);
  const auto mode =
      s.variant == PipelineVariant::ClueTwoStage ? Stage1Mode::EmotionalClue : Stage1Mode::ObjectiveDescription;
  const auto suffix = tag_suffix(s);

  auto stage1_binding = [&](const BackendBinding& b) {
    return s.rerun_stage1 ? final_call_binding(b, s.repeat) : b;
  };

  SceneEvidence evidence;
  evidence.mode = mode;
  if (s.modalities.video) {
    evidence.video = attributed("stage1/video", [&] {
      const auto plan = plan_for(s.sampling, sample.duration_s, sample.native_fps);
      ModelRequest req;
      req.binding = stage1_binding(*s.bindings.video);
      req.prompt_text = render_stage1(env.templates, Modality::Video, mode, sample, s.context);
      req.frames = extract_frames(sample.video_ref, plan, env.extractor);
      req.tag = sample.id + "/stage1/video" + suffix;
      return env.backend.invoke(req).text;
    });
    pred.stage1_texts["video"] = *evidence.video;
  }
  if (s.modalities.audio) {
    if (!sample.audio_ref) {
      pred.deviations.push_back("audio modality skipped: sample has no audio track");
    } else {
      evidence.audio = attributed("stage1/audio", [&] {
        ModelRequest req;
        req.binding = stage1_binding(*s.bindings.audio);
        req.prompt_text = render_stage1(env.templates, Modality::Audio, mode, sample, s.context);
        req.audio = load_media_file(*sample.audio_ref);
        req.tag = sample.id + "/stage1/audio" + suffix;
        return env.backend.invoke(req).text;
      });
      pred.stage1_texts["audio"] = *evidence.audio;
    }
  }
  if (s.modalities.text) evidence.subtitle = sample.subtitle;

  const bool has_evidence =
      (evidence.video && !evidence.video->empty()) || (evidence.audio && !evidence.audio->empty()) ||
      (s.modalities.text && !sample.subtitle.empty());
  if (!has_evidence) {
    // Kept and scored as an empty answer so the sample still counts.
    pred.deviations.push_back("no evidence for the active modalities: empty prediction");
    pred.valid = true;
    return pred;
  }

  const LlmCall llm{env.backend, final_call_binding(*s.bindings.llm, s.repeat), sample.id + "/stage2", suffix};
  try {
    StrategyResult result = attributed("stage2", [&] {
      const auto prompt = render_stage2(env.templates, s.design, evidence, sample, s.context);
      switch (s.strategy.kind) {
        case CompositeStrategy::Kind::None: return run_single(llm, prompt);
        case CompositeStrategy::Kind::SelfConsistency:
          return run_self_consistency(llm, env.templates, prompt, s.strategy.k, s.strategy.selection, env.grouping);
        case CompositeStrategy::Kind::SelfRefine:
          return run_self_refine(llm, env.templates, prompt, s.strategy.iters);
        case CompositeStrategy::Kind::LeastToMost:
          return run_least_to_most(llm, env.templates, render_scene(evidence, sample, s.context), prompt);
      }
      throw Error(ErrorCode::InvalidArgument, "unknown strategy");
    });
    pred.labels = std::move(result.labels);
    pred.stage2_text = std::move(result.final_text);
    pred.valid = true;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Unparseable) throw;
    pred.valid = false;
    pred.error = e.what();
  }
  return pred;
}

Prediction run_one_stage(const PipelineEnv& env, const Sample& sample, const UnitSettings& s) {
  if (auto err = validate_configuration(PipelineVariant::VideoOnlyOneStage, s.modalities, s.bindings, s.strategy)) {
    throw Error(ErrorCode::ConfigError, *err);
  }
  auto pred = make_prediction(sample, s);
  const auto text = attributed("one-stage", [&] {
    const auto plan = plan_for(s.sampling, sample.duration_s, sample.native_fps);
    ModelRequest req;
    req.binding = final_call_binding(*s.bindings.video, s.repeat);
    req.prompt_text =
        render_one_stage(env.templates, s.design, s.modalities.text ? sample.subtitle : std::string(), sample, s.context);
    req.frames = extract_frames(sample.video_ref, plan, env.extractor);
    req.tag = sample.id + "/onestage" + tag_suffix(s);
    return env.backend.invoke(req).text;
  });
  pred.stage2_text = text;
  try {
    pred.labels = parse_emotion_list(text);
    pred.valid = true;
  } catch (const Error& e) {
    pred.error = e.what();
  }
  return pred;
}

Prediction run_unit(const PipelineEnv& env, const Sample& sample, const UnitSettings& settings) {
  if (settings.variant == PipelineVariant::VideoOnlyOneStage) return run_one_stage(env, sample, settings);
  return run_two_stage(env, sample, settings);
}

}  // namespace merbench
