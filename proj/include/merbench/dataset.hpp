#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "merbench/labels.hpp"

namespace merbench {

struct CharacterProfile {
  std::string name;
  std::string basic_info;
  std::optional<std::string> traits_and_experiences;
};

struct Sample {
  std::string id;
  std::string video_ref;
  std::optional<std::string> audio_ref;  // absent for video-only clips
  std::string subtitle;
  double duration_s = 0.0;
  double native_fps = 0.0;
  std::optional<std::string> title;
  std::vector<CharacterProfile> characters;
  EmotionLabelSet labels;
};

// Reads a line-delimited manifest. Relative media paths are resolved against
// the manifest's directory. Blank lines are skipped.
std::vector<Sample> load_manifest(const std::filesystem::path& path);

// Parses one manifest record; `line` is used for error messages only.
Sample parse_sample_record(std::string_view record, std::size_t line,
                           const std::filesystem::path& base_dir = {});

struct ValidationIssue {
  std::string code;  // e.g. MISSING_GROUND_TRUTH
  std::string detail;
};

std::vector<ValidationIssue> validate_sample(const Sample& s);

struct DatasetStats {
  std::size_t sample_count = 0;
  std::size_t unique_label_count = 0;
  double mean_labels_per_sample = 0.0;
  double duration_min_s = 0.0;
  double duration_max_s = 0.0;
  double duration_mean_s = 0.0;
  std::size_t audio_missing_count = 0;
};

DatasetStats dataset_stats(const std::vector<Sample>& samples);

}  // namespace merbench
