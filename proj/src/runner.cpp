#include "merbench/runner.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <thread>

#include "merbench/error.hpp"

namespace merbench {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSentinel = "-";

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::ConfigError, what); }

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    config_error(std::string("field '") + key + "' has the wrong type");
  }
}

std::string selection_name(CompositeStrategy::Selection s) {
  return s == CompositeStrategy::Selection::LlmSelect ? "llm_select" : "group_majority";
}

CompositeStrategy parse_strategy(const json& j) {
  CompositeStrategy s;
  if (j.is_string()) {
    s.kind = strategy_kind_from_string(j.get<std::string>());
    return s;
  }
  if (!j.is_object()) config_error("strategy must be a string or an object");
  s.kind = strategy_kind_from_string(get_or<std::string>(j, "kind", "NONE"));
  s.k = get_or<int>(j, "k", 5);
  s.iters = get_or<int>(j, "iters", 2);
  const auto sel = get_or<std::string>(j, "selection", "llm_select");
  if (sel == "llm_select") {
    s.selection = CompositeStrategy::Selection::LlmSelect;
  } else if (sel == "group_majority") {
    s.selection = CompositeStrategy::Selection::GroupMajority;
  } else {
    config_error("unknown self-consistency selection '" + sel + "'");
  }
  return s;
}

json strategy_json(const CompositeStrategy& s) {
  static const char* names[] = {"NONE", "SELF_CONSISTENCY", "SELF_REFINE", "LEAST_TO_MOST"};
  return {{"kind", names[static_cast<int>(s.kind)]}, {"k", s.k}, {"iters", s.iters}, {"selection", selection_name(s.selection)}};
}

template <typename T, typename F>
std::vector<T> parse_axis(const json& axes, const char* key, std::vector<T> fallback, std::set<std::string>& declared,
                          F&& parse_one) {
  auto it = axes.find(key);
  if (it == axes.end()) return fallback;
  if (!it->is_array() || it->empty()) config_error(std::string("axis '") + key + "' must be a non-empty array");
  declared.insert(key);
  std::vector<T> out;
  for (const auto& v : *it) out.push_back(parse_one(v));
  return out;
}

std::string as_string(const json& v, const char* what) {
  if (!v.is_string()) config_error(std::string(what) + " entries must be strings");
  return v.get<std::string>();
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first
// exception after all threads stop.
template <typename F>
void parallel_for(std::size_t n, int workers, F&& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::atomic<bool> stop{false};
  auto body = [&] {
    while (!stop) {
      const auto i = next.fetch_add(1);
      if (i >= n) return;
      try {
        if (!fn(i)) stop = true;
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
    }
  };
  const auto count = static_cast<std::size_t>(std::max(1, workers));
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < std::min(count, n); ++t) threads.emplace_back(body);
  body();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

void append_line(const fs::path& file, const std::string& line) {
  std::ofstream out(file, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot append to " + file.string());
  out << line << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write failed on " + file.string());
}

template <typename F>
void for_each_json_line(const fs::path& file, F&& fn) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;  // torn write at the tail of an interrupted run
    fn(j);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base) {
  if (!j.is_object()) config_error("config must be an object");
  ExperimentConfig c;
  c.manifest_path = resolve(base, get_or<std::string>(j, "manifest", ""));
  if (c.manifest_path.empty()) config_error("'manifest' is required");
  c.run_dir = resolve(base, get_or<std::string>(j, "run_dir", ""));
  if (c.run_dir.empty()) config_error("'run_dir' is required");
  if (auto v = get_or<std::string>(j, "cache_dir", ""); !v.empty()) c.cache_dir = resolve(base, v);
  if (auto v = get_or<std::string>(j, "templates_dir", ""); !v.empty()) c.templates_dir = resolve(base, v);

  if (auto it = j.find("bindings"); it != j.end()) {
    if (!it->is_object()) config_error("'bindings' must be an object");
    for (const auto& [id, b] : it->items()) {
      BindingConfig bc;
      bc.binding.backend_id = id;
      bc.binding.model_id = get_or<std::string>(b, "model", id);
      bc.binding.capability = capability_from_string(get_or<std::string>(b, "capability", "text"));
      bc.binding.endpoint = get_or<std::string>(b, "endpoint", "");
      if (bc.binding.endpoint.empty()) config_error("binding '" + id + "' has no endpoint");
      bc.binding.auth_ref = get_or<std::string>(b, "auth_env", "");
      bc.binding.decode.temperature = get_or<double>(b, "temperature", 0.0);
      bc.binding.decode.max_output_tokens = get_or<int>(b, "max_output_tokens", 1024);
      if (b.contains("seed") && !b["seed"].is_null()) bc.binding.decode.seed = get_or<std::int64_t>(b, "seed", 0);
      if (bc.binding.decode.temperature < 0) config_error("binding '" + id + "': temperature must be >= 0");
      if (bc.binding.decode.max_output_tokens <= 0) config_error("binding '" + id + "': max_output_tokens must be > 0");
      if (b.contains("rate_limit_per_s")) {
        bc.rate_limit_per_s = get_or<int>(b, "rate_limit_per_s", 0);
        if (*bc.rate_limit_per_s <= 0) config_error("binding '" + id + "': rate_limit_per_s must be > 0");
      }
      c.bindings.emplace(id, std::move(bc));
    }
  }
  if (auto it = j.find("mock_scripts"); it != j.end()) {
    for (const auto& [id, p] : it->items()) c.mock_scripts[id] = resolve(base, as_string(p, "mock_scripts"));
  }

  const json axes = j.value("axes", json::object());
  auto& d = c.declared_axes;
  c.variants = parse_axis(axes, "variants", c.variants, d,
                          [](const json& v) { return pipeline_variant_from_string(as_string(v, "variants")); });
  c.modality_sets = parse_axis(axes, "modality_sets", c.modality_sets, d,
                               [](const json& v) { return ModalitySet::parse(as_string(v, "modality_sets")); });
  c.llm_bindings = parse_axis(axes, "llms", c.llm_bindings, d, [](const json& v) { return as_string(v, "llms"); });
  c.video_bindings =
      parse_axis(axes, "video_llms", c.video_bindings, d, [](const json& v) { return as_string(v, "video_llms"); });
  c.audio_bindings =
      parse_axis(axes, "audio_llms", c.audio_bindings, d, [](const json& v) { return as_string(v, "audio_llms"); });
  c.designs = parse_axis(axes, "designs", c.designs, d,
                         [](const json& v) { return hard_prompt_from_string(as_string(v, "designs")); });
  c.strategies = parse_axis(axes, "strategies", c.strategies, d, parse_strategy);
  c.context_levels = parse_axis(axes, "context_levels", c.context_levels, d,
                                [](const json& v) { return context_level_from_string(as_string(v, "context_levels")); });
  c.sampling_policies = parse_axis(axes, "sampling", c.sampling_policies, d,
                                   [](const json& v) { return SamplingPolicy::parse(as_string(v, "sampling")); });
  if (auto it = j.find("declared_axes"); it != j.end()) c.declared_axes = it->get<std::set<std::string>>();

  for (const auto* list : {&c.llm_bindings, &c.video_bindings, &c.audio_bindings}) {
    for (const auto& id : *list) {
      if (!c.bindings.count(id)) config_error("axis references unknown binding '" + id + "'");
    }
  }

  c.repeats = get_or<int>(j, "repeats", 5);
  if (c.repeats < 1) config_error("'repeats' must be >= 1");
  c.workers = get_or<int>(j, "workers", 4);
  if (c.workers < 1) config_error("'workers' must be >= 1");
  c.rerun_stage1 = get_or<bool>(j, "rerun_stage1", false);

  if (auto it = j.find("retry"); it != j.end()) {
    c.retry.max_attempts = get_or<int>(*it, "max_attempts", c.retry.max_attempts);
    c.retry.base_delay_ms = get_or<std::int64_t>(*it, "base_delay_ms", c.retry.base_delay_ms);
    c.retry.max_delay_ms = get_or<std::int64_t>(*it, "max_delay_ms", c.retry.max_delay_ms);
    if (c.retry.max_attempts < 1) config_error("retry.max_attempts must be >= 1");
  }

  const json grouping = j.value("grouping", json::object());
  const auto kind = get_or<std::string>(grouping, "kind", "lexicon");
  if (kind == "lexicon") {
    c.grouping.kind = GroupingConfig::Kind::Lexicon;
    c.grouping.lexicon_path = resolve(base, get_or<std::string>(grouping, "lexicon", ""));
    if (c.grouping.lexicon_path.empty()) config_error("grouping.lexicon is required for the lexicon oracle");
  } else if (kind == "llm") {
    c.grouping.kind = GroupingConfig::Kind::Llm;
    c.grouping.binding = get_or<std::string>(grouping, "binding", "");
    if (!c.bindings.count(c.grouping.binding)) config_error("grouping.binding must name a declared binding");
  } else {
    config_error("unknown grouping kind '" + kind + "'");
  }

  const auto averaging = get_or<std::string>(j, "averaging", "macro");
  if (averaging == "macro") {
    c.averaging = Averaging::Macro;
  } else if (averaging == "micro") {
    c.averaging = Averaging::Micro;
  } else {
    config_error("averaging must be 'macro' or 'micro'");
  }

  if (auto it = j.find("extractor"); it != j.end()) {
    c.extractor.command_template = get_or<std::string>(*it, "command", "");
    // {config_dir} lets presets ship a relative extractor script.
    const std::string token = "{config_dir}";
    for (auto pos = c.extractor.command_template.find(token); pos != std::string::npos;
         pos = c.extractor.command_template.find(token, pos)) {
      c.extractor.command_template.replace(pos, token.size(), base.string());
      pos += base.string().size();
    }
    if (auto s = get_or<std::string>(*it, "scratch_dir", ""); !s.empty()) c.extractor.scratch_dir = resolve(base, s);
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    config_error(path.string() + ": " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path());
}

json ExperimentConfig::to_json() const {
  json j;
  j["manifest"] = fs::absolute(manifest_path).string();
  j["run_dir"] = fs::absolute(run_dir).string();
  if (cache_dir) j["cache_dir"] = fs::absolute(*cache_dir).string();
  if (templates_dir) j["templates_dir"] = fs::absolute(*templates_dir).string();
  json b = json::object();
  for (const auto& [id, bc] : bindings) {
    json e = {{"model", bc.binding.model_id},
              {"capability", to_string(bc.binding.capability)},
              {"endpoint", bc.binding.endpoint},
              {"auth_env", bc.binding.auth_ref},
              {"temperature", bc.binding.decode.temperature},
              {"max_output_tokens", bc.binding.decode.max_output_tokens}};
    if (bc.binding.decode.seed) e["seed"] = *bc.binding.decode.seed;
    if (bc.rate_limit_per_s) e["rate_limit_per_s"] = *bc.rate_limit_per_s;
    b[id] = e;
  }
  j["bindings"] = b;
  json mocks = json::object();
  for (const auto& [id, p] : mock_scripts) mocks[id] = fs::absolute(p).string();
  j["mock_scripts"] = mocks;

  json axes;
  for (auto v : variants) axes["variants"].push_back(to_string(v));
  for (const auto& m : modality_sets) axes["modality_sets"].push_back(m.label());
  if (!llm_bindings.empty()) axes["llms"] = llm_bindings;
  if (!video_bindings.empty()) axes["video_llms"] = video_bindings;
  if (!audio_bindings.empty()) axes["audio_llms"] = audio_bindings;
  for (auto d : designs) axes["designs"].push_back(to_string(d));
  for (const auto& s : strategies) axes["strategies"].push_back(strategy_json(s));
  for (auto c : context_levels) axes["context_levels"].push_back(to_string(c));
  for (const auto& s : sampling_policies) axes["sampling"].push_back(s.label());
  j["axes"] = axes;
  j["declared_axes"] = declared_axes;

  j["repeats"] = repeats;
  j["workers"] = workers;
  j["rerun_stage1"] = rerun_stage1;
  j["retry"] = {{"max_attempts", retry.max_attempts},
                {"base_delay_ms", retry.base_delay_ms},
                {"max_delay_ms", retry.max_delay_ms}};
  if (grouping.kind == GroupingConfig::Kind::Lexicon) {
    j["grouping"] = {{"kind", "lexicon"}, {"lexicon", fs::absolute(grouping.lexicon_path).string()}};
  } else {
    j["grouping"] = {{"kind", "llm"}, {"binding", grouping.binding}};
  }
  j["averaging"] = averaging == Averaging::Macro ? "macro" : "micro";
  j["extractor"] = {{"command", extractor.command_template}, {"scratch_dir", extractor.scratch_dir.string()}};
  return j;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> ExperimentSpec::axes() const {
  return {{"variant", std::string(to_string(variant))},
          {"modality", modalities.label()},
          {"llm", llm.value_or(kSentinel)},
          {"video_llm", video.value_or(kSentinel)},
          {"audio_llm", audio.value_or(kSentinel)},
          {"design", std::string(to_string(design))},
          {"strategy", strategy.label()},
          {"context", std::string(to_string(context))},
          {"sampling", sampling ? sampling->label() : kSentinel}};
}

json ExperimentSpec::to_json() const {
  return {{"id", id}, {"cell", cell_id}, {"repeat", repeat}, {"axes", axes()}};
}

MatrixExpansion expand_matrix(const ExperimentConfig& c) {
  MatrixExpansion out;
  auto ids_or_sentinel = [](const std::vector<std::string>& v) {
    std::vector<std::optional<std::string>> out;
    for (const auto& s : v) out.emplace_back(s);
    if (out.empty()) out.emplace_back(std::nullopt);
    return out;
  };
  const auto llms = ids_or_sentinel(c.llm_bindings);
  const auto videos = ids_or_sentinel(c.video_bindings);
  const auto audios = ids_or_sentinel(c.audio_bindings);
  auto binding = [&](const std::optional<std::string>& id) -> std::optional<BackendBinding> {
    if (!id) return std::nullopt;
    return c.bindings.at(*id).binding;
  };

  std::set<std::string> seen_cells;
  std::vector<ExperimentSpec> cells;
  for (auto variant : c.variants)
    for (const auto& mods : c.modality_sets)
      for (const auto& llm : llms)
        for (const auto& video : videos)
          for (const auto& audio : audios)
            for (auto design : c.designs)
              for (const auto& strategy : c.strategies)
                for (auto context : c.context_levels)
                  for (const auto& sampling : c.sampling_policies) {
                    ExperimentSpec s;
                    s.variant = variant;
                    s.modalities = mods;
                    s.design = design;
                    s.strategy = strategy;
                    s.context = context;
                    const bool one_stage = variant == PipelineVariant::VideoOnlyOneStage;
                    s.llm = one_stage ? std::nullopt : llm;
                    s.video = mods.video ? video : std::nullopt;
                    s.audio = (mods.audio && !one_stage) ? audio : std::nullopt;
                    if (mods.video) s.sampling = sampling;

                    const auto axes = s.axes();
                    std::string where;
                    for (const auto& [k, v] : axes) where += k + "=" + v + " ";
                    if (auto err = validate_configuration(variant, mods, {binding(s.llm), binding(s.video), binding(s.audio)},
                                                          strategy)) {
                      out.pruned.push_back(where + ": " + *err);
                      continue;
                    }
                    s.cell_id = sha256_hex(json(axes).dump()).substr(0, 16);
                    if (!seen_cells.insert(s.cell_id).second) {
                      ++out.collapsed;
                      continue;
                    }
                    cells.push_back(std::move(s));
                  }

  for (const auto& cell : cells) {
    for (int r = 0; r < c.repeats; ++r) {
      ExperimentSpec s = cell;
      s.repeat = r;
      s.id = sha256_hex(json{{"axes", cell.axes()}, {"repeat", r}}.dump()).substr(0, 16);
      out.specs.push_back(std::move(s));
    }
  }
  if (out.specs.empty()) throw Error(ErrorCode::EmptyMatrix, "no runnable cells after pruning");
  return out;
}

UnitSettings unit_settings(const ExperimentSpec& spec, const ExperimentConfig& c) {
  UnitSettings u;
  u.variant = spec.variant;
  u.modalities = spec.modalities;
  if (spec.llm) u.bindings.llm = c.bindings.at(*spec.llm).binding;
  if (spec.video) u.bindings.video = c.bindings.at(*spec.video).binding;
  if (spec.audio) u.bindings.audio = c.bindings.at(*spec.audio).binding;
  u.design = spec.design;
  u.strategy = spec.strategy;
  u.context = spec.context;
  if (spec.sampling) u.sampling = *spec.sampling;
  u.repeat = spec.repeat;
  u.spec_id = spec.id;
  u.rerun_stage1 = c.rerun_stage1;
  return u;
}

// ---------------------------------------------------------------------------

RunState::RunState(const fs::path& run_dir) : dir_(run_dir) {
  fs::create_directories(dir_);
  for_each_json_line(dir_ / "completed.jsonl", [&](const json& j) {
    if (j.contains("unit")) complete_.insert(j["unit"].get<std::string>());
  });
}

std::string RunState::unit_key(const std::string& spec_id, const std::string& sample_id) {
  return spec_id + "/" + sample_id;
}

bool RunState::is_complete(const std::string& key) const {
  std::lock_guard lock(mu_);
  return complete_.count(key) > 0;
}

std::size_t RunState::completed_count() const {
  std::lock_guard lock(mu_);
  return complete_.size();
}

void RunState::commit(const Prediction& p) {
  const auto key = unit_key(p.spec_id, p.sample_id);
  std::lock_guard lock(mu_);
  append_line(dir_ / "predictions.jsonl", p.to_json().dump());
  append_line(dir_ / "completed.jsonl", json{{"unit", key}}.dump());
  complete_.insert(key);
}

void RunState::record_failure(const std::string& key, const std::string& error) {
  std::lock_guard lock(mu_);
  append_line(dir_ / "failures.jsonl", json{{"unit", key}, {"error", error}}.dump());
}

json CellSummary::to_json() const {
  return {{"cell", cell_id},
          {"axes", axes},
          {"precision_s", metrics.mean_precision_s},
          {"recall_s", metrics.mean_recall_s},
          {"f_s", metrics.mean_f_s},
          {"n_samples", metrics.n_samples},
          {"n_repeats", metrics.n_repeats},
          {"invalid_predictions", metrics.invalid_prediction_count},
          {"failed_units", failed_units},
          {"error", error}};
}

CellSummary CellSummary::from_json(const json& j) {
  CellSummary s;
  s.cell_id = j.at("cell").get<std::string>();
  s.axes = j.at("axes").get<std::map<std::string, std::string>>();
  s.metrics.mean_precision_s = j.value("precision_s", 0.0);
  s.metrics.mean_recall_s = j.value("recall_s", 0.0);
  s.metrics.mean_f_s = j.value("f_s", 0.0);
  s.metrics.n_samples = j.value("n_samples", std::size_t{0});
  s.metrics.n_repeats = j.value("n_repeats", std::size_t{0});
  s.metrics.invalid_prediction_count = j.value("invalid_predictions", std::size_t{0});
  s.failed_units = j.value("failed_units", std::size_t{0});
  s.error = j.value("error", "");
  return s;
}

// ---------------------------------------------------------------------------

Runner::Runner(ExperimentConfig config, std::shared_ptr<Clock> clock)
    : config_(std::move(config)),
      templates_(config_.templates_dir ? TemplateStore::with_overrides(*config_.templates_dir)
                                       : TemplateStore::builtin()) {
  samples_ = load_manifest(config_.manifest_path);
  fs::create_directories(config_.run_dir);

  BackendOptions opts;
  opts.cache_dir = config_.cache_dir.value_or(config_.run_dir / "cache");
  opts.transcript_file = config_.run_dir / "transcript.jsonl";
  opts.retry = config_.retry;
  opts.clock = std::move(clock);
  backend_ = std::make_unique<Backend>(std::move(opts));
  for (const auto& [id, path] : config_.mock_scripts) backend_->register_mock(id, MockScript::load(path));
  for (const auto& [id, bc] : config_.bindings) {
    if (bc.rate_limit_per_s) backend_->set_rate_limit(id, *bc.rate_limit_per_s);
  }

  if (config_.grouping.kind == GroupingConfig::Kind::Lexicon) {
    grouping_ = LexiconOracle::load(config_.grouping.lexicon_path);
  } else {
    grouping_ = std::make_unique<LlmGroupingOracle>(*backend_, config_.bindings.at(config_.grouping.binding).binding);
  }
  grouping_->attach_cache_file(config_.run_dir / "grouping_cache.jsonl");
}

RunResults Runner::execute(const std::vector<ExperimentSpec>& specs, RunState& state, const ExecuteOptions& opts) {
  struct Unit {
    const ExperimentSpec* spec;
    const Sample* sample;
  };
  RunResults results;
  std::vector<Unit> pending;
  for (const auto& spec : specs) {
    for (const auto& sample : samples_) {
      if (state.is_complete(RunState::unit_key(spec.id, sample.id))) {
        ++results.skipped;
      } else {
        pending.push_back({&spec, &sample});
      }
    }
  }

  const PipelineEnv env{*backend_, templates_, grouping_.get(), config_.extractor};
  std::atomic<std::size_t> started{0}, failed{0}, invalid{0}, processed{0};
  parallel_for(pending.size(), config_.workers, [&](std::size_t i) {
    if (opts.max_units && started.fetch_add(1) >= *opts.max_units) return false;
    const auto& unit = pending[i];
    const auto key = RunState::unit_key(unit.spec->id, unit.sample->id);
    Prediction pred;
    try {
      pred = run_unit(env, *unit.sample, unit_settings(*unit.spec, config_));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::IoError && std::string_view(e.what()).find("append") != std::string_view::npos) throw;
      state.record_failure(key, e.what());
      ++failed;
      ++processed;
      return true;
    } catch (const std::exception& e) {
      state.record_failure(key, e.what());
      ++failed;
      ++processed;
      return true;
    }
    if (!pred.valid) ++invalid;
    state.commit(pred);
    ++processed;
    return true;
  });
  results.processed = processed;
  results.failed = failed;
  results.invalid = invalid;
  if (opts.evaluate) results.summaries = evaluate();
  return results;
}

RunResults Runner::run(const ExecuteOptions& opts) {
  const auto expansion = expand_matrix(config_);
  {
    std::ofstream cfg(config_.run_dir / "config.json");
    cfg << config_.to_json().dump(2) << '\n';
    std::ofstream specs(config_.run_dir / "specs.jsonl");
    for (const auto& s : expansion.specs) specs << s.to_json().dump() << '\n';
    std::ofstream pruned(config_.run_dir / "pruned.log");
    for (const auto& p : expansion.pruned) pruned << p << '\n';
  }
  RunState state(config_.run_dir);
  return execute(expansion.specs, state, opts);
}

std::vector<Prediction> load_predictions(const fs::path& run_dir) {
  // Last record per unit wins; a unit re-run after a crash between the
  // prediction write and its marker appears twice.
  std::map<std::string, Prediction> by_unit;
  std::vector<std::string> order;
  for_each_json_line(run_dir / "predictions.jsonl", [&](const json& j) {
    auto p = Prediction::from_json(j);
    auto key = RunState::unit_key(p.spec_id, p.sample_id);
    if (!by_unit.count(key)) order.push_back(key);
    by_unit[key] = std::move(p);
  });
  std::vector<Prediction> out;
  for (const auto& k : order) out.push_back(std::move(by_unit[k]));
  return out;
}

std::vector<CellSummary> Runner::evaluate() {
  const auto expansion = expand_matrix(config_);
  std::map<std::string, const ExperimentSpec*> spec_by_id;
  for (const auto& s : expansion.specs) spec_by_id[s.id] = &s;
  std::map<std::string, const Sample*> sample_by_id;
  for (const auto& s : samples_) sample_by_id[s.id] = &s;

  auto predictions = load_predictions(config_.run_dir);
  std::erase_if(predictions, [&](const Prediction& p) {
    auto s = sample_by_id.find(p.sample_id);
    return !spec_by_id.count(p.spec_id) || s == sample_by_id.end() || s->second->labels.empty();
  });

  std::vector<std::optional<SetMetrics>> scored(predictions.size());
  parallel_for(predictions.size(), config_.workers, [&](std::size_t i) {
    const auto& p = predictions[i];
    if (p.valid) scored[i] = evaluate_sample(*grouping_, sample_by_id.at(p.sample_id)->labels, p.labels);
    return true;
  });

  const auto metrics_path = config_.run_dir / "metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  // cell -> repeat -> metrics
  std::map<std::string, std::map<int, RepeatMetrics>> per_cell;
  std::map<std::string, std::size_t> present;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    const auto* spec = spec_by_id.at(p.spec_id);
    auto& rep = per_cell[spec->cell_id][spec->repeat];
    ++present[spec->cell_id];
    json rec = {{"spec", p.spec_id}, {"cell", spec->cell_id}, {"repeat", spec->repeat},
                {"sample_id", p.sample_id}, {"valid", p.valid}};
    if (scored[i]) {
      rep.valid.push_back(*scored[i]);
      rec["precision_s"] = scored[i]->precision_s;
      rec["recall_s"] = scored[i]->recall_s;
      rec["f_s"] = scored[i]->f_s;
    } else {
      ++rep.invalid;
    }
    metrics << rec.dump() << '\n';
  }

  std::size_t evaluable = 0;
  for (const auto& s : samples_) evaluable += !s.labels.empty();

  std::vector<CellSummary> summaries;
  std::set<std::string> done;
  for (const auto& spec : expansion.specs) {
    if (!done.insert(spec.cell_id).second) continue;
    CellSummary cs;
    cs.cell_id = spec.cell_id;
    cs.axes = spec.axes();
    const auto expected = evaluable * static_cast<std::size_t>(config_.repeats);
    cs.failed_units = expected - std::min(expected, present[spec.cell_id]);
    std::vector<RepeatMetrics> reps;
    for (auto& [r, m] : per_cell[spec.cell_id]) reps.push_back(m);
    try {
      cs.metrics = aggregate(reps, config_.averaging);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyEvaluation) throw;
      cs.error = std::string(to_string(e.code()));
      cs.metrics.n_repeats = reps.size();
      for (const auto& r : reps) cs.metrics.invalid_prediction_count += r.invalid;
    }
    summaries.push_back(std::move(cs));
  }

  std::ofstream summary(config_.run_dir / "summary.jsonl", std::ios::trunc);
  for (const auto& s : summaries) summary << s.to_json().dump() << '\n';
  return summaries;
}

std::vector<CellSummary> load_summaries(const fs::path& run_dir) {
  std::vector<CellSummary> out;
  if (!fs::exists(run_dir / "summary.jsonl")) {
    throw Error(ErrorCode::IoError, "no summary.jsonl in " + run_dir.string() + " (run 'eval' first)");
  }
  for_each_json_line(run_dir / "summary.jsonl", [&](const json& j) { out.push_back(CellSummary::from_json(j)); });
  return out;
}

std::set<std::string> load_declared_axes(const fs::path& run_dir) {
  std::ifstream in(run_dir / "config.json");
  if (!in) throw Error(ErrorCode::IoError, "no config.json in " + run_dir.string());
  auto j = json::parse(in);
  return j.value("declared_axes", std::set<std::string>{});
}

}  // namespace merbench
