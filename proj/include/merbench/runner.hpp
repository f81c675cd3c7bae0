#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "merbench/backend.hpp"
#include "merbench/dataset.hpp"
#include "merbench/eval.hpp"
#include "merbench/pipeline.hpp"
#include "merbench/prompt.hpp"
#include "merbench/sampling.hpp"

namespace merbench {

struct BindingConfig {
  BackendBinding binding;
  std::optional<int> rate_limit_per_s;
};

struct GroupingConfig {
  enum class Kind { Lexicon, Llm };
  Kind kind = Kind::Lexicon;
  std::filesystem::path lexicon_path;
  std::string binding;  // llm kind
};

struct ExperimentConfig {
  std::filesystem::path manifest_path;
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> cache_dir;  // defaults to <run_dir>/cache
  std::optional<std::filesystem::path> templates_dir;

  std::map<std::string, BindingConfig> bindings;
  std::map<std::string, std::filesystem::path> mock_scripts;

  std::vector<PipelineVariant> variants{PipelineVariant::ClueTwoStage};
  std::vector<ModalitySet> modality_sets{ModalitySet{true, true, true}};
  std::vector<std::string> llm_bindings;
  std::vector<std::string> video_bindings;
  std::vector<std::string> audio_bindings;
  std::vector<HardPrompt> designs{HardPrompt::Std};
  std::vector<CompositeStrategy> strategies{CompositeStrategy{}};
  std::vector<ContextLevel> context_levels{ContextLevel::SubtitleOnly};
  std::vector<SamplingPolicy> sampling_policies{SamplingPolicy::fixed(24)};
  // Axis names given explicitly in the config file; reports check these.
  std::set<std::string> declared_axes;

  int repeats = 5;
  int workers = 4;
  bool rerun_stage1 = false;
  RetryPolicy retry;
  GroupingConfig grouping;
  Averaging averaging = Averaging::Macro;
  ExtractorConfig extractor;

  // Relative paths are resolved against `base_dir`.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static ExperimentConfig load(const std::filesystem::path& path);
  // Fully resolved form, written to <run_dir>/config.json.
  nlohmann::json to_json() const;
};

// Axis values of one cell. Optional fields hold the sentinel "-" when the axis
// does not apply (e.g. the audio binding while audio is inactive).
struct ExperimentSpec {
  std::string id;       // digest over all bound choices including the repeat
  std::string cell_id;  // same digest without the repeat
  PipelineVariant variant = PipelineVariant::ClueTwoStage;
  ModalitySet modalities;
  std::optional<std::string> llm;
  std::optional<std::string> video;
  std::optional<std::string> audio;
  HardPrompt design = HardPrompt::Std;
  CompositeStrategy strategy;
  ContextLevel context = ContextLevel::SubtitleOnly;
  std::optional<SamplingPolicy> sampling;
  int repeat = 0;

  // Canonical axis map (everything except the repeat).
  std::map<std::string, std::string> axes() const;
  nlohmann::json to_json() const;
};

struct MatrixExpansion {
  std::vector<ExperimentSpec> specs;
  std::vector<std::string> pruned;  // one reason per dropped cell
  std::size_t collapsed = 0;        // cells equal to an earlier cell after canonicalization
};

MatrixExpansion expand_matrix(const ExperimentConfig& config);

UnitSettings unit_settings(const ExperimentSpec& spec, const ExperimentConfig& config);

// Durable per-unit completion markers plus failure log.
class RunState {
 public:
  // Reads existing markers from <run_dir>/completed.jsonl.
  explicit RunState(const std::filesystem::path& run_dir);

  static std::string unit_key(const std::string& spec_id, const std::string& sample_id);

  bool is_complete(const std::string& key) const;
  std::size_t completed_count() const;

  // Appends the prediction record, then the completion marker.
  void commit(const Prediction& p);
  void record_failure(const std::string& key, const std::string& error);

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::set<std::string> complete_;
};

struct ExecuteOptions {
  // Stop after this many newly processed units (simulates an interrupted run).
  std::optional<std::size_t> max_units;
  bool evaluate = true;
};

struct CellSummary {
  std::string cell_id;
  std::map<std::string, std::string> axes;
  AggregateMetrics metrics;
  std::size_t failed_units = 0;
  std::string error;  // EMPTY_EVALUATION when no valid prediction exists

  nlohmann::json to_json() const;
  static CellSummary from_json(const nlohmann::json& j);
};

struct RunResults {
  std::size_t processed = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
  std::size_t invalid = 0;
  std::vector<CellSummary> summaries;
};

// Owns the backend, mocks, oracle and templates for one run directory.
class Runner {
 public:
  explicit Runner(ExperimentConfig config, std::shared_ptr<Clock> clock = nullptr);

  const ExperimentConfig& config() const { return config_; }
  Backend& backend() { return *backend_; }
  GroupingOracle& grouping() { return *grouping_; }
  const std::vector<Sample>& samples() const { return samples_; }

  RunResults execute(const std::vector<ExperimentSpec>& specs, RunState& state, const ExecuteOptions& opts = {});
  RunResults run(const ExecuteOptions& opts = {});

  // Scores every persisted prediction; writes metrics.jsonl and summary.jsonl.
  std::vector<CellSummary> evaluate();

 private:
  ExperimentConfig config_;
  std::vector<Sample> samples_;
  std::unique_ptr<Backend> backend_;
  std::unique_ptr<GroupingOracle> grouping_;
  TemplateStore templates_;
};

std::vector<Prediction> load_predictions(const std::filesystem::path& run_dir);
std::vector<CellSummary> load_summaries(const std::filesystem::path& run_dir);
std::set<std::string> load_declared_axes(const std::filesystem::path& run_dir);

}  // namespace merbench
