#include "merbench/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "merbench/error.hpp"

namespace merbench {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(ReportLayout l) {
  switch (l) {
    case ReportLayout::Modality: return "modality";
    case ReportLayout::Prompts: return "prompts";
    case ReportLayout::Models: return "models";
    case ReportLayout::Sampling: return "sampling";
    case ReportLayout::Context: return "context";
    case ReportLayout::Raw: return "raw";
  }
  return "raw";
}

ReportLayout report_layout_from_string(std::string_view s) {
  for (auto l : {ReportLayout::Modality, ReportLayout::Prompts, ReportLayout::Models, ReportLayout::Sampling,
                 ReportLayout::Context, ReportLayout::Raw}) {
    if (to_string(l) == s) return l;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown report layout '" + std::string(s) + "'");
}

std::string_view file_extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::Markdown: return "md";
    case ReportFormat::Csv: return "csv";
    case ReportFormat::JsonLines: return "jsonl";
  }
  return "md";
}

namespace {

// Summary axis column -> config axis name.
const std::vector<std::pair<std::string, std::string>> kAxisColumns = {
    {"variant", "variants"},       {"modality", "modality_sets"}, {"llm", "llms"},
    {"video_llm", "video_llms"},   {"audio_llm", "audio_llms"},   {"design", "designs"},
    {"strategy", "strategies"},    {"context", "context_levels"}, {"sampling", "sampling"},
};

std::vector<std::string> layout_columns(ReportLayout l) {
  switch (l) {
    case ReportLayout::Modality: return {"modality"};
    case ReportLayout::Prompts: return {"design", "llm"};
    case ReportLayout::Models: return {"llm", "video_llm", "audio_llm"};
    case ReportLayout::Sampling: return {"video_llm", "sampling"};
    case ReportLayout::Context: return {"llm", "context"};
    case ReportLayout::Raw: {
      std::vector<std::string> all;
      for (const auto& [col, _] : kAxisColumns) all.push_back(col);
      return all;
    }
  }
  return {};
}

void require_axes(ReportLayout l, const std::set<std::string>& declared) {
  auto has = [&](const char* a) { return declared.count(a) > 0; };
  const char* missing = nullptr;
  switch (l) {
    case ReportLayout::Modality: if (!has("modality_sets")) missing = "modality_sets"; break;
    case ReportLayout::Prompts: if (!has("designs")) missing = "designs"; break;
    case ReportLayout::Sampling: if (!has("sampling")) missing = "sampling"; break;
    case ReportLayout::Context: if (!has("context_levels")) missing = "context_levels"; break;
    case ReportLayout::Models:
      if (!has("llms") && !has("video_llms") && !has("audio_llms")) missing = "llms|video_llms|audio_llms";
      break;
    case ReportLayout::Raw: break;
  }
  if (missing) {
    throw Error(ErrorCode::LayoutMismatch,
                std::string("layout '") + std::string(to_string(l)) + "' needs axis " + missing + " in the run config");
  }
}

int modality_rank(const std::string& label) {
  const auto all = ModalitySet::all();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].label() == label) return static_cast<int>(i);
  }
  return static_cast<int>(all.size());
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v * 100.0);
  return buf;
}

std::string full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Rows that compete for the "best" mark share this key.
std::string comparison_group(const Report& r, const ReportRow& row) {
  std::string key;
  for (std::size_t i = 0; i < r.key_columns.size(); ++i) {
    const auto& col = r.key_columns[i];
    if (r.layout == ReportLayout::Modality && col == "modality") {
      key += std::to_string(ModalitySet::parse(row.keys[i]).count()) + "|";
    } else if (r.layout == ReportLayout::Prompts && col == "llm") {
      continue;
    } else if (r.layout == ReportLayout::Modality || r.layout == ReportLayout::Prompts) {
      key += row.keys[i] + "|";
    }
  }
  return key;
}

}  // namespace

Report build_report(const std::vector<CellSummary>& summaries, const std::set<std::string>& declared,
                    ReportLayout layout) {
  require_axes(layout, declared);
  Report r;
  r.layout = layout;
  r.key_columns = layout_columns(layout);
  for (const auto& [col, _] : kAxisColumns) {
    if (std::find(r.key_columns.begin(), r.key_columns.end(), col) != r.key_columns.end()) continue;
    // The sentinel alone does not distinguish cells: it only marks axes that
    // the modality set switched off.
    std::set<std::string> values;
    for (const auto& s : summaries) {
      auto it = s.axes.find(col);
      if (it != s.axes.end() && it->second != "-") values.insert(it->second);
    }
    if (values.size() > 1) r.key_columns.push_back(col);
  }

  for (const auto& s : summaries) {
    ReportRow row;
    for (const auto& col : r.key_columns) {
      auto it = s.axes.find(col);
      row.keys.push_back(it == s.axes.end() ? "-" : it->second);
    }
    row.cell_id = s.cell_id;
    row.precision_s = s.metrics.mean_precision_s;
    row.recall_s = s.metrics.mean_recall_s;
    row.f_s = s.metrics.mean_f_s;
    row.n_samples = s.metrics.n_samples;
    row.n_repeats = s.metrics.n_repeats;
    row.invalid_predictions = s.metrics.invalid_prediction_count;
    row.failed_units = s.failed_units;
    row.error = s.error;
    r.rows.push_back(std::move(row));
  }

  if (layout == ReportLayout::Modality) {
    std::stable_sort(r.rows.begin(), r.rows.end(), [](const ReportRow& a, const ReportRow& b) {
      return modality_rank(a.keys[0]) < modality_rank(b.keys[0]);
    });
  }

  if (layout == ReportLayout::Modality || layout == ReportLayout::Prompts) {
    std::map<std::string, double> best;
    for (const auto& row : r.rows) {
      if (!row.error.empty()) continue;
      auto [it, fresh] = best.emplace(comparison_group(r, row), row.f_s);
      if (!fresh) it->second = std::max(it->second, row.f_s);
    }
    for (auto& row : r.rows) {
      auto it = best.find(comparison_group(r, row));
      row.best = row.error.empty() && it != best.end() && row.f_s == it->second;
    }
  }
  return r;
}

std::string render_markdown(const Report& r) {
  std::ostringstream out;
  std::vector<std::string> header;
  for (const auto& col : r.key_columns) {
    if (r.layout == ReportLayout::Modality && col == "modality") {
      header.insert(header.end(), {"Text", "Video", "Audio"});
    } else {
      header.push_back(col);
    }
  }
  header.insert(header.end(), {"P_s (%)", "R_s (%)", "F_s (%)"});
  out << "|";
  for (const auto& h : header) out << ' ' << h << " |";
  out << "\n|";
  for (std::size_t i = 0; i < header.size(); ++i) out << (i < header.size() - 3 ? " --- |" : " ---: |");
  out << '\n';

  for (const auto& row : r.rows) {
    out << "|";
    for (std::size_t i = 0; i < r.key_columns.size(); ++i) {
      if (r.layout == ReportLayout::Modality && r.key_columns[i] == "modality") {
        const auto m = ModalitySet::parse(row.keys[i]);
        for (bool on : {m.text, m.video, m.audio}) out << ' ' << (on ? "✓" : "×") << " |";
      } else {
        out << ' ' << row.keys[i] << " |";
      }
    }
    if (!row.error.empty()) {
      out << " n/a | n/a | n/a |\n";
      continue;
    }
    for (double v : {row.precision_s, row.recall_s, row.f_s}) {
      out << ' ' << (row.best ? "**" + pct(v) + "**" : pct(v)) << " |";
    }
    out << '\n';
  }

  std::size_t failed = 0, invalid = 0;
  for (const auto& row : r.rows) {
    failed += row.failed_units;
    invalid += row.invalid_predictions;
  }
  if (failed || invalid) {
    out << "\n" << failed << " unit(s) failed, " << invalid << " prediction(s) unparseable.\n";
  }
  return out.str();
}

std::string render_csv(const Report& r) {
  std::ostringstream out;
  for (const auto& col : r.key_columns) out << csv_field(col) << ',';
  out << "precision_s,recall_s,f_s,n_samples,n_repeats,invalid_predictions,failed_units,best,error,cell\n";
  for (const auto& row : r.rows) {
    for (const auto& k : row.keys) out << csv_field(k) << ',';
    out << full(row.precision_s) << ',' << full(row.recall_s) << ',' << full(row.f_s) << ',' << row.n_samples << ','
        << row.n_repeats << ',' << row.invalid_predictions << ',' << row.failed_units << ','
        << (row.best ? "true" : "false") << ',' << csv_field(row.error) << ',' << row.cell_id << '\n';
  }
  return out.str();
}

std::string render_jsonl(const Report& r) {
  std::ostringstream out;
  for (const auto& row : r.rows) {
    json keys = json::object();
    for (std::size_t i = 0; i < r.key_columns.size(); ++i) keys[r.key_columns[i]] = row.keys[i];
    json j = {{"layout", to_string(r.layout)},
              {"keys", keys},
              {"cell", row.cell_id},
              {"precision_s", row.precision_s},
              {"recall_s", row.recall_s},
              {"f_s", row.f_s},
              {"n_samples", row.n_samples},
              {"n_repeats", row.n_repeats},
              {"invalid_predictions", row.invalid_predictions},
              {"failed_units", row.failed_units},
              {"best", row.best}};
    if (!row.error.empty()) j["error"] = row.error;
    out << j.dump() << '\n';
  }
  return out.str();
}

std::string render(const Report& r, ReportFormat f) {
  switch (f) {
    case ReportFormat::Markdown: return render_markdown(r);
    case ReportFormat::Csv: return render_csv(r);
    case ReportFormat::JsonLines: return render_jsonl(r);
  }
  return {};
}

std::vector<fs::path> emit_report(const fs::path& run_dir, ReportLayout layout,
                                  const std::vector<ReportFormat>& formats) {
  const auto report = build_report(load_summaries(run_dir), load_declared_axes(run_dir), layout);
  const auto dir = run_dir / "reports";
  fs::create_directories(dir);
  std::vector<fs::path> written;
  for (auto f : formats) {
    const auto path = dir / (std::string(to_string(layout)) + "." + std::string(file_extension(f)));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << render(report, f);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    written.push_back(path);
  }
  return written;
}

std::vector<ReportDelta> diff_reports(const Report& a, const Report& b) {
  if (a.layout != b.layout) {
    throw Error(ErrorCode::LayoutMismatch, "cannot diff a '" + std::string(to_string(a.layout)) + "' report against a '" +
                                               std::string(to_string(b.layout)) + "' report");
  }
  if (a.key_columns != b.key_columns) throw Error(ErrorCode::LayoutMismatch, "reports vary different axes");

  std::map<std::vector<std::string>, const ReportRow*> in_b;
  for (const auto& row : b.rows) in_b[row.keys] = &row;
  std::set<std::vector<std::string>> seen;

  std::vector<ReportDelta> out;
  for (const auto& ra : a.rows) {
    ReportDelta d;
    d.keys = ra.keys;
    seen.insert(ra.keys);
    auto it = in_b.find(ra.keys);
    if (it == in_b.end()) {
      d.missing_in_b = true;
    } else if (ra.error.empty() && it->second->error.empty()) {
      d.d_precision = (it->second->precision_s - ra.precision_s) * 100.0;
      d.d_recall = (it->second->recall_s - ra.recall_s) * 100.0;
      d.d_f = (it->second->f_s - ra.f_s) * 100.0;
    }
    out.push_back(std::move(d));
  }
  for (const auto& rb : b.rows) {
    if (seen.count(rb.keys)) continue;
    ReportDelta d;
    d.keys = rb.keys;
    d.missing_in_a = true;
    out.push_back(std::move(d));
  }
  return out;
}

std::string render_diff_markdown(const Report& a, const std::vector<ReportDelta>& deltas) {
  std::ostringstream out;
  out << "|";
  for (const auto& col : a.key_columns) out << ' ' << col << " |";
  out << " ΔP_s (pp) | ΔR_s (pp) | ΔF_s (pp) |\n|";
  for (std::size_t i = 0; i < a.key_columns.size(); ++i) out << " --- |";
  out << " ---: | ---: | ---: |\n";
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.1f", *v);
    return std::string(buf);
  };
  for (const auto& d : deltas) {
    out << "|";
    for (const auto& k : d.keys) out << ' ' << k << " |";
    if (d.missing_in_a || d.missing_in_b) {
      const char* note = d.missing_in_a ? "only in b" : "only in a";
      out << ' ' << note << " | | |\n";
    } else {
      out << ' ' << cell(d.d_precision) << " | " << cell(d.d_recall) << " | " << cell(d.d_f) << " |\n";
    }
  }
  return out.str();
}

}  // namespace merbench
