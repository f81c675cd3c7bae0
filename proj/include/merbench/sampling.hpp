#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "merbench/backend.hpp"

namespace merbench {

struct SamplingPolicy {
  enum class Kind { Fixed, Dynamic };

  Kind kind = Kind::Fixed;
  int fixed_count = 24;
  double rate_fps = 1.0;

  static SamplingPolicy fixed(int n) { return {Kind::Fixed, n, 0.0}; }
  static SamplingPolicy dynamic(double fps) { return {Kind::Dynamic, 0, fps}; }

  // "fixed24", "fps2", "fps0.5"
  std::string label() const;
  static SamplingPolicy parse(std::string_view label);
  // True for the presets used in the published sweeps (24 frames; 1/2/4/6 fps).
  bool is_preset() const;
};

struct FramePlan {
  std::vector<std::int64_t> indices;  // strictly increasing
  SamplingPolicy policy;
  std::int64_t total_frames = 0;
};

// indices_i = floor(i * total / n), i = 0..n-1, deduplicated.
FramePlan plan_fixed(std::int64_t total_frames, int n);

// k = max(1, round(duration * rate)) midpoint timestamps mapped to frame indices.
FramePlan plan_dynamic(double duration_s, double native_fps, double rate_fps);

// Dispatches on the policy; total frames are derived as floor(duration * fps).
FramePlan plan_for(const SamplingPolicy& policy, double duration_s, double native_fps);

struct ExtractorConfig {
  // Shell command with {input}, {index_list} (comma separated) and {out_dir}
  // placeholders. The command must write <index>.jpg for every index.
  // Empty means container files cannot be decoded (directories still work).
  std::string command_template;
  std::filesystem::path scratch_dir = std::filesystem::temp_directory_path();
};

// Directory refs are read directly (file stems are zero-padded decimal
// indices); anything else is handed to the external extractor.
std::vector<MediaPayload> extract_frames(const std::string& video_ref, const FramePlan& plan,
                                         const ExtractorConfig& cfg = {});

MediaPayload load_media_file(const std::filesystem::path& path);

}  // namespace merbench
