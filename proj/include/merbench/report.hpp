#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "merbench/runner.hpp"

namespace merbench {

enum class ReportLayout { Modality, Prompts, Models, Sampling, Context, Raw };
enum class ReportFormat { Markdown, Csv, JsonLines };

std::string_view to_string(ReportLayout l);
ReportLayout report_layout_from_string(std::string_view s);
std::string_view file_extension(ReportFormat f);

struct ReportRow {
  std::vector<std::string> keys;  // parallel to Report::key_columns
  std::string cell_id;
  double precision_s = 0.0;
  double recall_s = 0.0;
  double f_s = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_repeats = 0;
  std::size_t invalid_predictions = 0;
  std::size_t failed_units = 0;
  std::string error;
  bool best = false;  // highest F within its comparison group
};

struct Report {
  ReportLayout layout = ReportLayout::Raw;
  std::vector<std::string> key_columns;
  std::vector<ReportRow> rows;
};

// Groups summaries by the layout's axes. Axes outside the layout that still
// vary across cells become extra key columns so no two rows collide.
// Throws LAYOUT_MISMATCH when a required axis was not declared by the run.
Report build_report(const std::vector<CellSummary>& summaries, const std::set<std::string>& declared_axes,
                    ReportLayout layout);

// Markdown shows percentages with one decimal; csv and jsonl keep fractions
// at full precision.
std::string render_markdown(const Report& r);
std::string render_csv(const Report& r);
std::string render_jsonl(const Report& r);
std::string render(const Report& r, ReportFormat f);

// Writes <run_dir>/reports/<layout>.<ext> for each format; returns the paths.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& run_dir, ReportLayout layout,
                                               const std::vector<ReportFormat>& formats = {
                                                   ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::JsonLines});

struct ReportDelta {
  std::vector<std::string> keys;
  // Percentage points (b - a); empty when the cell is missing on one side or
  // either side failed evaluation.
  std::optional<double> d_precision;
  std::optional<double> d_recall;
  std::optional<double> d_f;
  bool missing_in_a = false;
  bool missing_in_b = false;
};

// Throws LAYOUT_MISMATCH when layouts or key columns differ.
std::vector<ReportDelta> diff_reports(const Report& a, const Report& b);
std::string render_diff_markdown(const Report& a, const std::vector<ReportDelta>& deltas);

}  // namespace merbench
