#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "merbench/dataset.hpp"
#include "merbench/error.hpp"
#include "merbench/report.hpp"
#include "merbench/runner.hpp"

namespace fs = std::filesystem;
using namespace merbench;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

bool is_config_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::ConfigError:
    case ErrorCode::EmptyMatrix:
    case ErrorCode::ManifestParse:
    case ErrorCode::DuplicateId:
    case ErrorCode::EmptyDataset:
    case ErrorCode::MockScriptParse:
    case ErrorCode::TemplateError:
    case ErrorCode::LayoutMismatch:
    case ErrorCode::InvalidArgument:
      return true;
    default:
      return false;
  }
}

void print_results(const RunResults& r) {
  std::printf("units: %zu processed, %zu skipped (already complete), %zu failed, %zu unparseable\n", r.processed,
              r.skipped, r.failed, r.invalid);
  for (const auto& s : r.summaries) {
    if (!s.error.empty()) {
      std::printf("  %s  %s\n", s.cell_id.c_str(), s.error.c_str());
    } else {
      std::printf("  %s  P=%.4f R=%.4f F=%.4f (samples=%zu repeats=%zu)\n", s.cell_id.c_str(),
                  s.metrics.mean_precision_s, s.metrics.mean_recall_s, s.metrics.mean_f_s, s.metrics.n_samples,
                  s.metrics.n_repeats);
    }
  }
}

ExperimentConfig load_run_config(const fs::path& run_dir) {
  const auto path = run_dir / "config.json";
  if (!fs::exists(path)) throw Error(ErrorCode::ConfigError, "no config.json in " + run_dir.string());
  return ExperimentConfig::load(path);
}

int cmd_validate(const fs::path& config_path) {
  int errors = 0;
  ExperimentConfig config;
  try {
    config = ExperimentConfig::load(config_path);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  }
  try {
    const auto samples = load_manifest(config.manifest_path);
    std::size_t warnings = 0;
    for (const auto& s : samples) {
      for (const auto& issue : validate_sample(s)) {
        std::printf("warning: sample '%s': %s %s\n", s.id.c_str(), issue.code.c_str(), issue.detail.c_str());
        ++warnings;
      }
    }
    std::printf("manifest: %zu samples, %zu warnings\n", samples.size(), warnings);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    ++errors;
  }
  for (const auto& [id, path] : config.mock_scripts) {
    try {
      MockScript::load(path);
    } catch (const Error& e) {
      std::fprintf(stderr, "error: mock script '%s': %s\n", id.c_str(), e.what());
      ++errors;
    }
  }
  if (config.templates_dir) {
    try {
      TemplateStore::with_overrides(*config.templates_dir);
    } catch (const Error& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      ++errors;
    }
  }
  try {
    const auto m = expand_matrix(config);
    for (const auto& p : m.pruned) std::printf("pruned: %s\n", p.c_str());
    std::printf("matrix: %zu specs (%zu cells pruned, %zu collapsed as duplicates)\n", m.specs.size(),
                m.pruned.size(), m.collapsed);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    ++errors;
  }
  return errors == 0 ? kOk : kConfigError;
}

int cmd_stats(const fs::path& manifest) {
  const auto samples = load_manifest(manifest);
  const auto s = dataset_stats(samples);
  std::map<std::string, std::size_t> issues;
  for (const auto& sample : samples) {
    for (const auto& i : validate_sample(sample)) ++issues[i.code];
  }
  std::printf("samples:              %zu\n", s.sample_count);
  std::printf("unique labels:        %zu\n", s.unique_label_count);
  std::printf("labels per sample:    %.2f\n", s.mean_labels_per_sample);
  std::printf("duration (s):         min %.2f  mean %.2f  max %.2f\n", s.duration_min_s, s.duration_mean_s,
              s.duration_max_s);
  std::printf("without audio:        %zu\n", s.audio_missing_count);
  for (const auto& [code, n] : issues) std::printf("issue %-16s %zu\n", code.c_str(), n);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Benchmark harness for open-vocabulary multimodal emotion recognition with LLMs"};
  app.require_subcommand(1);

  fs::path run_config, resume_dir, eval_dir, report_dir, validate_config, stats_manifest, diff_a, diff_b;
  std::optional<std::size_t> max_units;
  std::optional<int> workers;
  std::string layout = "raw", diff_layout = "raw";
  bool no_eval = false, quiet = false;

  auto* run = app.add_subcommand("run", "Expand the matrix and execute every unit");
  run->add_option("config", run_config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--max-units", max_units, "Stop after this many units (resume later)");
  run->add_option("--workers", workers, "Override the worker count");
  run->add_flag("--no-eval", no_eval, "Skip scoring after execution");

  auto* resume = app.add_subcommand("resume", "Continue an interrupted run");
  resume->add_option("run_dir", resume_dir)->required()->check(CLI::ExistingDirectory);
  resume->add_option("--max-units", max_units, "Stop after this many units");
  resume->add_option("--workers", workers, "Override the worker count");
  resume->add_flag("--no-eval", no_eval, "Skip scoring after execution");

  auto* eval = app.add_subcommand("eval", "Score persisted predictions");
  eval->add_option("run_dir", eval_dir)->required()->check(CLI::ExistingDirectory);

  auto* report = app.add_subcommand("report", "Write reports/<layout>.{md,csv,jsonl}");
  report->add_option("run_dir", report_dir)->required()->check(CLI::ExistingDirectory);
  report->add_option("--layout", layout)
      ->check(CLI::IsMember({"modality", "prompts", "models", "sampling", "context", "raw"}));
  report->add_flag("--quiet", quiet, "Do not print the markdown table");

  auto* validate = app.add_subcommand("validate", "Check a config without running it");
  validate->add_option("config", validate_config)->required()->check(CLI::ExistingFile);

  auto* stats = app.add_subcommand("stats", "Summarize a manifest");
  stats->add_option("manifest", stats_manifest)->required()->check(CLI::ExistingFile);

  auto* diff = app.add_subcommand("diff", "Per-cell deltas between two evaluated runs");
  diff->add_option("run_a", diff_a)->required()->check(CLI::ExistingDirectory);
  diff->add_option("run_b", diff_b)->required()->check(CLI::ExistingDirectory);
  diff->add_option("--layout", diff_layout)
      ->check(CLI::IsMember({"modality", "prompts", "models", "sampling", "context", "raw"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run || *resume) {
      auto config = *run ? ExperimentConfig::load(run_config) : load_run_config(resume_dir);
      if (workers) config.workers = *workers;
      Runner runner(std::move(config));
      ExecuteOptions opts;
      opts.max_units = max_units;
      opts.evaluate = !no_eval;
      print_results(runner.run(opts));
      std::printf("run dir: %s\n", runner.config().run_dir.c_str());
    } else if (*eval) {
      Runner runner(load_run_config(eval_dir));
      print_results(RunResults{0, 0, 0, 0, runner.evaluate()});
    } else if (*report) {
      const auto l = report_layout_from_string(layout);
      for (const auto& p : emit_report(report_dir, l)) std::fprintf(stderr, "wrote %s\n", p.c_str());
      if (!quiet) {
        std::cout << render_markdown(build_report(load_summaries(report_dir), load_declared_axes(report_dir), l));
      }
    } else if (*validate) {
      return cmd_validate(validate_config);
    } else if (*stats) {
      return cmd_stats(stats_manifest);
    } else if (*diff) {
      const auto l = report_layout_from_string(diff_layout);
      const auto a = build_report(load_summaries(diff_a), load_declared_axes(diff_a), l);
      const auto b = build_report(load_summaries(diff_b), load_declared_axes(diff_b), l);
      std::cout << render_diff_markdown(a, diff_reports(a, b));
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return is_config_error(e.code()) ? kConfigError : kRuntimeError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kOk;
}
