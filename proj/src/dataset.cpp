#include "merbench/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "merbench/error.hpp"
#include "text_util.hpp"

namespace merbench {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

[[noreturn]] void fail(std::size_t line, std::string_view field, std::string_view why) {
  throw Error(ErrorCode::ManifestParse,
              "line " + std::to_string(line) + ", field '" + std::string(field) + "': " + std::string(why));
}

std::string require_string(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(line, key, "missing");
  if (!it->is_string()) fail(line, key, "expected string");
  return it->get<std::string>();
}

std::optional<std::string> optional_string(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) fail(line, key, "expected string or null");
  return it->get<std::string>();
}

double require_number(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(line, key, "missing");
  if (!it->is_number()) fail(line, key, "expected number");
  return it->get<double>();
}

std::string resolve(const fs::path& base, const std::string& ref) {
  if (ref.empty() || base.empty()) return ref;
  fs::path p(ref);
  if (p.is_absolute()) return ref;
  return (base / p).lexically_normal().string();
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {"id",       "video", "audio",      "subtitle", "duration_s",
                                             "native_fps", "title", "characters", "labels"};
  return keys;
}

}  // namespace

Sample parse_sample_record(std::string_view record, std::size_t line, const fs::path& base_dir) {
  json obj;
  try {
    obj = json::parse(record);
  } catch (const json::parse_error& e) {
    fail(line, "<record>", e.what());
  }
  if (!obj.is_object()) fail(line, "<record>", "expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (!known_keys().count(key)) fail(line, key, "unknown field");
  }

  Sample s;
  s.id = require_string(obj, "id", line);
  if (s.id.empty()) fail(line, "id", "must be non-empty");
  s.video_ref = resolve(base_dir, require_string(obj, "video", line));
  if (auto audio = optional_string(obj, "audio", line)) s.audio_ref = resolve(base_dir, *audio);
  s.subtitle = optional_string(obj, "subtitle", line).value_or("");
  s.duration_s = require_number(obj, "duration_s", line);
  if (s.duration_s < 0) fail(line, "duration_s", "must be >= 0");
  s.native_fps = require_number(obj, "native_fps", line);
  if (!(s.native_fps > 0)) fail(line, "native_fps", "must be > 0");
  s.title = optional_string(obj, "title", line);

  if (auto it = obj.find("characters"); it != obj.end() && !it->is_null()) {
    if (!it->is_array()) fail(line, "characters", "expected array");
    for (const auto& c : *it) {
      if (!c.is_object()) fail(line, "characters", "expected array of objects");
      CharacterProfile p;
      p.name = require_string(c, "name", line);
      if (p.name.empty()) fail(line, "characters.name", "must be non-empty");
      p.basic_info = optional_string(c, "basic_info", line).value_or("");
      p.traits_and_experiences = optional_string(c, "traits", line);
      s.characters.push_back(std::move(p));
    }
  }

  // Unlabelled samples are allowed; they are run but never scored.
  auto labels = obj.find("labels");
  std::vector<std::string> raw;
  if (labels == obj.end() || labels->is_null()) {
    // nothing
  } else if (labels->is_string()) {
    // Annotation exports often store the list as one "[a, b, c]" string.
    const auto stored = labels->get<std::string>();
    auto text = detail::trim(stored);
    if (text.size() >= 2 && text.front() == '[' && text.back() == ']') text = text.substr(1, text.size() - 2);
    raw = detail::split_terms(text);
  } else if (labels->is_array()) {
    for (const auto& l : *labels) {
      if (!l.is_string()) fail(line, "labels", "expected array of strings");
      raw.push_back(l.get<std::string>());
    }
  } else {
    fail(line, "labels", "expected array of strings");
  }
  s.labels = EmotionLabelSet::from_raw(raw);
  return s;
}

std::vector<Sample> load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + path.string());

  std::vector<Sample> samples;
  std::unordered_set<std::string> ids;
  const fs::path base = path.parent_path();
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    auto s = parse_sample_record(text, line_no, base);
    if (!ids.insert(s.id).second) {
      throw Error(ErrorCode::DuplicateId, "line " + std::to_string(line_no) + ": id '" + s.id + "' already used");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<ValidationIssue> validate_sample(const Sample& s) {
  std::vector<ValidationIssue> issues;
  std::error_code ec;
  if (s.id.empty()) issues.push_back({"EMPTY_ID", "sample id is empty"});
  if (s.video_ref.empty()) {
    issues.push_back({"MISSING_VIDEO_REF", "video reference is mandatory"});
  } else if (!fs::exists(s.video_ref, ec)) {
    issues.push_back({"VIDEO_NOT_FOUND", s.video_ref});
  }
  if (s.audio_ref && !fs::exists(*s.audio_ref, ec)) issues.push_back({"AUDIO_NOT_FOUND", *s.audio_ref});
  if (s.duration_s < 0) issues.push_back({"NEGATIVE_DURATION", std::to_string(s.duration_s)});
  if (!(s.native_fps > 0)) issues.push_back({"INVALID_FPS", std::to_string(s.native_fps)});
  if (s.duration_s * s.native_fps < 1.0) {
    issues.push_back({"TOO_FEW_FRAMES", "duration_s * native_fps < 1"});
  }
  for (const auto& c : s.characters) {
    if (c.name.empty()) issues.push_back({"EMPTY_CHARACTER_NAME", "character profile without name"});
  }
  if (s.labels.empty()) issues.push_back({"MISSING_GROUND_TRUTH", "no ground-truth labels"});
  return issues;
}

DatasetStats dataset_stats(const std::vector<Sample>& samples) {
  if (samples.empty()) throw Error(ErrorCode::EmptyDataset, "no samples");
  DatasetStats st;
  st.sample_count = samples.size();
  std::unordered_set<std::string> unique;
  std::size_t label_total = 0;
  double duration_total = 0.0;
  st.duration_min_s = samples.front().duration_s;
  st.duration_max_s = samples.front().duration_s;
  for (const auto& s : samples) {
    label_total += s.labels.size();
    for (const auto& l : s.labels.labels()) unique.insert(l);
    duration_total += s.duration_s;
    st.duration_min_s = std::min(st.duration_min_s, s.duration_s);
    st.duration_max_s = std::max(st.duration_max_s, s.duration_s);
    if (!s.audio_ref) ++st.audio_missing_count;
  }
  st.unique_label_count = unique.size();
  st.mean_labels_per_sample = static_cast<double>(label_total) / static_cast<double>(samples.size());
  st.duration_mean_s = duration_total / static_cast<double>(samples.size());
  return st;
}

}  // namespace merbench
