#include "merbench/sampling.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "merbench/error.hpp"

namespace merbench {

namespace fs = std::filesystem;

namespace {

// Guards floor() against products like 0.7 * 30 = 20.999999999999996.
constexpr double kFloorEps = 1e-9;

std::string format_rate(double r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out.push_back(c);
    }
  }
  out += "'";
  return out;
}

void replace_all(std::string& s, std::string_view from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string mime_for(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  if (ext == ".webp") return "image/webp";
  if (ext == ".wav") return "audio/wav";
  if (ext == ".mp3") return "audio/mpeg";
  if (ext == ".flac") return "audio/flac";
  return "application/octet-stream";
}

bool is_image(const fs::path& p) {
  const auto m = mime_for(p);
  return m.rfind("image/", 0) == 0;
}

std::optional<std::int64_t> parse_index(const std::string& stem) {
  if (stem.empty()) return std::nullopt;
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), v);
  if (ec != std::errc() || ptr != stem.data() + stem.size() || v < 0) return std::nullopt;
  return v;
}

std::vector<MediaPayload> read_frame_directory(const fs::path& dir, const FramePlan& plan) {
  std::map<std::int64_t, fs::path> frames;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image(entry.path())) continue;
    if (auto idx = parse_index(entry.path().stem().string())) frames.emplace(*idx, entry.path());
  }
  std::vector<MediaPayload> out;
  out.reserve(plan.indices.size());
  for (auto idx : plan.indices) {
    auto it = frames.find(idx);
    if (it == frames.end()) {
      throw Error(ErrorCode::MissingFrame, "frame " + std::to_string(idx) + " not found in " + dir.string());
    }
    out.push_back(load_media_file(it->second));
  }
  return out;
}

std::vector<MediaPayload> run_extractor(const std::string& input, const FramePlan& plan, const ExtractorConfig& cfg) {
  if (cfg.command_template.empty()) {
    throw Error(ErrorCode::ExtractorFailed, "no frame extractor configured for container file " + input);
  }
  static std::atomic<unsigned> counter{0};
  const auto out_dir = cfg.scratch_dir / ("merbench-frames-" + std::to_string(::getpid()) + "-" +
                                          std::to_string(counter.fetch_add(1)));
  fs::create_directories(out_dir);
  struct Cleanup {
    fs::path dir;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(dir, ec);
    }
  } cleanup{out_dir};

  std::string index_list;
  for (std::size_t i = 0; i < plan.indices.size(); ++i) {
    if (i) index_list += ',';
    index_list += std::to_string(plan.indices[i]);
  }
  std::string cmd = cfg.command_template;
  replace_all(cmd, "{input}", shell_quote(input));
  replace_all(cmd, "{index_list}", index_list);
  replace_all(cmd, "{out_dir}", shell_quote(out_dir.string()));
  const auto stderr_file = out_dir / "extractor.stderr";
  const std::string full = "(" + cmd + ") 2>" + shell_quote(stderr_file.string());

  const int status = std::system(full.c_str());
  const int code = (status != -1 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
  if (code != 0) {
    throw Error(ErrorCode::ExtractorFailed,
                "extractor exited with " + std::to_string(code) + ": " + read_file(stderr_file));
  }
  std::vector<MediaPayload> out;
  for (auto idx : plan.indices) {
    const auto p = out_dir / (std::to_string(idx) + ".jpg");
    if (!fs::exists(p)) {
      throw Error(ErrorCode::ExtractorFailed, "extractor did not produce " + p.filename().string());
    }
    auto payload = load_media_file(p);
    payload.source = input + "#" + std::to_string(idx);
    out.push_back(std::move(payload));
  }
  return out;
}

}  // namespace

std::string SamplingPolicy::label() const {
  if (kind == Kind::Fixed) return "fixed" + std::to_string(fixed_count);
  return "fps" + format_rate(rate_fps);
}

SamplingPolicy SamplingPolicy::parse(std::string_view label) {
  auto bad = [&] { return Error(ErrorCode::ConfigError, "bad sampling policy '" + std::string(label) + "'"); };
  if (label.rfind("fixed", 0) == 0) {
    int n = 0;
    auto rest = label.substr(5);
    auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), n);
    if (ec != std::errc() || p != rest.data() + rest.size() || n <= 0) throw bad();
    return fixed(n);
  }
  if (label.rfind("fps", 0) == 0) {
    const std::string rest(label.substr(3));
    char* end = nullptr;
    const double r = std::strtod(rest.c_str(), &end);
    if (rest.empty() || *end != '\0' || !(r > 0)) throw bad();
    return dynamic(r);
  }
  throw bad();
}

bool SamplingPolicy::is_preset() const {
  if (kind == Kind::Fixed) return fixed_count == 24;
  return rate_fps == 1.0 || rate_fps == 2.0 || rate_fps == 4.0 || rate_fps == 6.0;
}

FramePlan plan_fixed(std::int64_t total_frames, int n) {
  if (total_frames < 1) throw Error(ErrorCode::InvalidArgument, "total_frames must be >= 1");
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "frame count must be >= 1");
  FramePlan plan;
  plan.policy = SamplingPolicy::fixed(n);
  plan.total_frames = total_frames;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t idx = i * total_frames / n;
    if (plan.indices.empty() || plan.indices.back() != idx) plan.indices.push_back(idx);
  }
  return plan;
}

FramePlan plan_dynamic(double duration_s, double native_fps, double rate_fps) {
  if (!(duration_s > 0) || !(native_fps > 0) || !(rate_fps > 0)) {
    throw Error(ErrorCode::InvalidArgument, "duration, native fps and rate must be positive");
  }
  const auto total = static_cast<std::int64_t>(std::floor(duration_s * native_fps + kFloorEps));
  if (total < 1) throw Error(ErrorCode::InvalidArgument, "clip shorter than one frame");
  const auto k = std::max<std::int64_t>(1, std::llround(duration_s * rate_fps));

  FramePlan plan;
  plan.policy = SamplingPolicy::dynamic(rate_fps);
  plan.total_frames = total;
  for (std::int64_t i = 0; i < k; ++i) {
    const double t = (static_cast<double>(i) + 0.5) * duration_s / static_cast<double>(k);
    auto idx = static_cast<std::int64_t>(std::floor(t * native_fps));
    idx = std::clamp<std::int64_t>(idx, 0, total - 1);
    if (plan.indices.empty() || plan.indices.back() < idx) plan.indices.push_back(idx);
  }
  return plan;
}

FramePlan plan_for(const SamplingPolicy& policy, double duration_s, double native_fps) {
  if (policy.kind == SamplingPolicy::Kind::Dynamic) return plan_dynamic(duration_s, native_fps, policy.rate_fps);
  const auto total = static_cast<std::int64_t>(std::floor(duration_s * native_fps + kFloorEps));
  return plan_fixed(total, policy.fixed_count);
}

MediaPayload load_media_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read media file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return MediaPayload{ss.str(), mime_for(path), path.string()};
}

std::vector<MediaPayload> extract_frames(const std::string& video_ref, const FramePlan& plan,
                                         const ExtractorConfig& cfg) {
  std::error_code ec;
  if (fs::is_directory(video_ref, ec)) return read_frame_directory(video_ref, plan);
  if (!fs::exists(video_ref, ec)) throw Error(ErrorCode::IoError, "video reference not found: " + video_ref);
  return run_extractor(video_ref, plan, cfg);
}

}  // namespace merbench
