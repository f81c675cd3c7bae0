#include "merbench/backend.hpp"

#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "merbench/error.hpp"

namespace merbench {

using nlohmann::json;
namespace fs = std::filesystem;

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

std::string_view to_string(Capability c) {
  switch (c) {
    case Capability::Text: return "text";
    case Capability::TextFrames: return "text+frames";
    case Capability::TextAudio: return "text+audio";
  }
  return "text";
}

Capability capability_from_string(std::string_view s) {
  if (s == "text") return Capability::Text;
  if (s == "text+frames") return Capability::TextFrames;
  if (s == "text+audio") return Capability::TextAudio;
  throw Error(ErrorCode::ConfigError, "unknown capability '" + std::string(s) + "'");
}

CacheKey request_digest(const ModelRequest& req) {
  json media = json::array();
  for (const auto& f : req.frames) media.push_back("frame:" + f.digest());
  if (req.audio) media.push_back("audio:" + req.audio->digest());
  const auto& d = req.binding.decode;
  json canonical = {req.binding.backend_id,
                    req.binding.model_id,
                    req.prompt_text,
                    media,
                    d.temperature,
                    d.max_output_tokens,
                    d.seed ? json(*d.seed) : json(nullptr)};
  return CacheKey{sha256_hex(canonical.dump())};
}

std::int64_t derive_seed(std::optional<std::int64_t> base, std::string_view salt, std::int64_t index) {
  // splitmix64 finalizer over the combined inputs
  std::uint64_t x = static_cast<std::uint64_t>(base.value_or(0));
  for (unsigned char c : salt) x = x * 1099511628211ULL ^ c;
  x ^= static_cast<std::uint64_t>(index) + 0x9E3779B97F4A7C15ULL + (x << 6) + (x >> 2);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return static_cast<std::int64_t>(x & 0x7FFFFFFF);
}

void check_capability(const ModelRequest& req) {
  const auto cap = req.binding.capability;
  const std::string who = "binding '" + req.binding.backend_id + "' (" + std::string(to_string(cap)) + ")";
  if (!req.frames.empty() && req.audio) {
    throw Error(ErrorCode::CapabilityMismatch, "request carries both frames and audio");
  }
  if (!req.frames.empty() && cap != Capability::TextFrames) {
    throw Error(ErrorCode::CapabilityMismatch, "frame payload sent to " + who);
  }
  if (req.audio && cap != Capability::TextAudio) {
    throw Error(ErrorCode::CapabilityMismatch, "audio payload sent to " + who);
  }
}

// ---------------------------------------------------------------------------

std::int64_t SystemClock::now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

void SystemClock::sleep_ms(std::int64_t ms) {
  if (ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(ms));
}

void FakeClock::sleep_ms(std::int64_t ms) {
  if (ms > 0) now_ += ms;
}

RateLimiter::RateLimiter(int per_second, std::shared_ptr<Clock> clock)
    : limit_(per_second), clock_(std::move(clock)) {
  if (limit_ <= 0) throw Error(ErrorCode::InvalidArgument, "rate limit must be positive");
}

std::int64_t RateLimiter::acquire() {
  for (;;) {
    std::int64_t wait = 0;
    {
      std::lock_guard lock(mu_);
      const auto now = clock_->now_ms();
      while (!recent_.empty() && recent_.front() <= now - 1000) recent_.pop_front();
      if (static_cast<int>(recent_.size()) < limit_) {
        recent_.push_back(now);
        return now;
      }
      wait = recent_.front() + 1000 - now;
    }
    clock_->sleep_ms(wait);
  }
}

std::int64_t RetryPolicy::delay_before_retry(int failed_attempts) const {
  std::int64_t delay = base_delay_ms;
  for (int i = 1; i < failed_attempts && delay < max_delay_ms; ++i) delay *= 2;
  return std::min(delay, max_delay_ms);
}

// ---------------------------------------------------------------------------

ResponseCache::ResponseCache(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

fs::path ResponseCache::file_for(const CacheKey& key) const { return root_ / (key.digest + ".json"); }

std::optional<CacheEntry> ResponseCache::get(const CacheKey& key) const {
  std::ifstream in(file_for(key), std::ios::binary);
  if (!in) return std::nullopt;
  try {
    json j = json::parse(in);
    CacheEntry e;
    e.text = j.at("text").get<std::string>();
    e.backend_id = j.value("backend_id", "");
    e.model_id = j.value("model_id", "");
    e.attempts = j.value("attempts", 1);
    e.latency_ms = j.value("latency_ms", 0);
    return e;
  } catch (const json::exception&) {
    return std::nullopt;  // treat a corrupt entry as a miss
  }
}

void ResponseCache::put(const CacheKey& key, const CacheEntry& e) {
  json j = {{"digest", key.digest},       {"backend_id", e.backend_id}, {"model_id", e.model_id},
            {"text", e.text},             {"attempts", e.attempts},     {"latency_ms", e.latency_ms}};
  const auto final_path = file_for(key);
  std::ostringstream tmp_name;
  tmp_name << key.digest << ".tmp." << std::this_thread::get_id();
  const auto tmp = root_ / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write cache entry " + tmp.string());
    out << j.dump();
  }
  fs::rename(tmp, final_path);
}

json to_json(const TranscriptRecord& r) {
  return {{"timestamp", r.timestamp_ms}, {"tag", r.tag},           {"digest", r.digest},
          {"backend_id", r.backend_id},  {"prompt", r.prompt},     {"response", r.response},
          {"latency_ms", r.latency_ms},  {"attempts", r.attempts}};
}

void TranscriptLog::open(const fs::path& file) {
  std::lock_guard lock(mu_);
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  file_.open(file, std::ios::app | std::ios::binary);
  if (!file_) throw Error(ErrorCode::IoError, "cannot open transcript " + file.string());
}

void TranscriptLog::append(const TranscriptRecord& r) {
  std::lock_guard lock(mu_);
  records_.push_back(r);
  if (file_.is_open()) {
    file_ << to_json(r).dump() << '\n';
    file_.flush();
  }
}

std::vector<TranscriptRecord> TranscriptLog::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t TranscriptLog::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

std::size_t TranscriptLog::count_with_tag_prefix(std::string_view prefix) const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& r : records_) n += std::string_view(r.tag).substr(0, prefix.size()) == prefix;
  return n;
}

// ---------------------------------------------------------------------------

std::shared_ptr<MockScript> MockScript::parse(std::string_view script) {
  auto mock = std::make_shared<MockScript>();
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= script.size()) {
    auto end = script.find('\n', pos);
    if (end == std::string_view::npos) end = script.size();
    std::string line(script.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      if (end == script.size()) break;
      continue;
    }
    auto bad = [&](const std::string& why) {
      return Error(ErrorCode::MockScriptParse, "line " + std::to_string(line_no) + ": " + why);
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw bad(e.what());
    }
    if (!j.is_object() || !j.contains("matcher") || !j["matcher"].is_object()) throw bad("missing 'matcher' object");
    Entry e;
    if (auto it = j.find("response_text"); it != j.end()) {
      if (!it->is_string()) throw bad("'response_text' must be a string");
      e.text = it->get<std::string>();
    }
    if (auto it = j.find("status"); it != j.end()) {
      if (!it->is_number_integer()) throw bad("'status' must be an integer");
      e.status = it->get<int>();
    } else if (!j.contains("response_text")) {
      throw bad("missing 'response_text'");
    }
    e.sticky = j.value("sticky", false);
    const auto& m = j["matcher"];
    if (m.contains("digest")) {
      if (!m["digest"].is_string()) throw bad("'digest' must be a string");
      mock->add_digest(m["digest"].get<std::string>(), e);
    } else if (m.contains("backend_id") || m.contains("tag_prefix")) {
      mock->add_fifo(m.value("backend_id", "*"), m.value("tag_prefix", ""), e);
    } else {
      throw bad("matcher needs 'digest' or 'backend_id'/'tag_prefix'");
    }
    if (end == script.size()) break;
  }
  return mock;
}

std::shared_ptr<MockScript> MockScript::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open mock script " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void MockScript::add_digest(std::string digest, Entry e) {
  std::lock_guard lock(mu_);
  by_digest_[std::move(digest)] = std::move(e);
}

void MockScript::add_fifo(std::string backend_id, std::string tag_prefix, Entry e) {
  std::lock_guard lock(mu_);
  for (auto& q : queues_) {
    if (q.backend_id == backend_id && q.tag_prefix == tag_prefix) {
      q.entries.push_back(std::move(e));
      return;
    }
  }
  queues_.push_back({std::move(backend_id), std::move(tag_prefix), {std::move(e)}});
}

TransportResult MockScript::send(const ModelRequest& req, const CacheKey& key) {
  ++calls_;
  std::lock_guard lock(mu_);
  auto to_result = [](const Entry& e) {
    TransportResult r;
    r.status = e.status;
    r.ok = e.status >= 200 && e.status < 300;
    if (r.ok) {
      r.text = e.text;
    } else {
      r.error = "scripted failure (status " + std::to_string(e.status) + ")";
    }
    return r;
  };
  if (auto it = by_digest_.find(key.digest); it != by_digest_.end()) return to_result(it->second);

  Queue* best = nullptr;
  for (auto& q : queues_) {
    if (q.entries.empty()) continue;
    if (q.backend_id != "*" && q.backend_id != req.binding.backend_id) continue;
    if (req.tag.compare(0, q.tag_prefix.size(), q.tag_prefix) != 0) continue;
    if (!best || q.tag_prefix.size() > best->tag_prefix.size()) best = &q;
  }
  if (!best) {
    throw Error(ErrorCode::MockUnscripted, "no scripted response for digest " + key.digest + " (backend '" +
                                               req.binding.backend_id + "', tag '" + req.tag + "')");
  }
  Entry e = best->entries.front();
  if (!e.sticky) best->entries.pop_front();
  return to_result(e);
}

// ---------------------------------------------------------------------------

Backend::Backend(BackendOptions opts) : opts_(std::move(opts)) {
  if (!opts_.clock) opts_.clock = std::make_shared<SystemClock>();
  if (opts_.cache_dir) disk_cache_.emplace(*opts_.cache_dir);
  if (opts_.transcript_file) transcript_.open(*opts_.transcript_file);
  remote_ = std::make_shared<HttpTransport>();
}

void Backend::register_mock(const std::string& script_id, std::shared_ptr<MockScript> script) {
  std::lock_guard lock(mu_);
  mocks_[script_id] = std::move(script);
}

void Backend::set_rate_limit(const std::string& backend_id, int per_second) {
  std::lock_guard lock(mu_);
  limiters_[backend_id] = std::make_unique<RateLimiter>(per_second, opts_.clock);
}

void Backend::set_remote_transport(std::shared_ptr<Transport> transport) {
  std::lock_guard lock(mu_);
  remote_ = std::move(transport);
}

Transport& Backend::transport_for(const BackendBinding& b) {
  std::lock_guard lock(mu_);
  constexpr std::string_view prefix = "mock:";
  if (b.endpoint.rfind(prefix, 0) == 0) {
    auto it = mocks_.find(b.endpoint.substr(prefix.size()));
    if (it == mocks_.end()) {
      throw Error(ErrorCode::MockUnscripted, "no mock script loaded for endpoint '" + b.endpoint + "'");
    }
    return *it->second;
  }
  return *remote_;
}

RateLimiter* Backend::limiter_for(const std::string& backend_id) {
  std::lock_guard lock(mu_);
  auto it = limiters_.find(backend_id);
  return it == limiters_.end() ? nullptr : it->second.get();
}

ModelResponse Backend::invoke(const ModelRequest& req) {
  check_capability(req);
  const auto key = request_digest(req);
  const auto start = opts_.clock->now_ms();

  std::promise<CacheEntry> promise;
  {
    std::unique_lock lock(mu_);
    std::optional<CacheEntry> hit;
    if (auto it = memory_cache_.find(key.digest); it != memory_cache_.end()) {
      hit = it->second;
    } else if (disk_cache_) {
      if ((hit = disk_cache_->get(key))) memory_cache_[key.digest] = *hit;
    }
    if (!hit) {
      if (auto it = in_flight_.find(key.digest); it != in_flight_.end()) {
        auto fut = it->second;
        lock.unlock();
        hit = fut.get();
      }
    }
    if (hit) return ModelResponse{hit->text, opts_.clock->now_ms() - start, true, 1};
    in_flight_[key.digest] = promise.get_future().share();
  }

  auto finish = [&] {
    std::lock_guard lock(mu_);
    in_flight_.erase(key.digest);
  };
  try {
    auto resp = dispatch(req, key);
    CacheEntry entry{resp.text, req.binding.backend_id, req.binding.model_id, resp.attempt_count, resp.latency_ms};
    {
      std::lock_guard lock(mu_);
      memory_cache_[key.digest] = entry;
    }
    if (disk_cache_) disk_cache_->put(key, entry);
    promise.set_value(entry);
    finish();
    return resp;
  } catch (...) {
    promise.set_exception(std::current_exception());
    finish();
    throw;
  }
}

ModelResponse Backend::dispatch(const ModelRequest& req, const CacheKey& key) {
  auto& transport = transport_for(req.binding);
  const bool is_mock = req.binding.endpoint.rfind("mock:", 0) == 0;
  if (!is_mock && !req.binding.auth_ref.empty() && !std::getenv(req.binding.auth_ref.c_str())) {
    throw Error(ErrorCode::AuthMissing,
                "environment variable '" + req.binding.auth_ref + "' is not set for binding '" +
                    req.binding.backend_id + "'");
  }
  auto* limiter = limiter_for(req.binding.backend_id);
  const int max_attempts = std::max(1, opts_.retry.max_attempts);
  const auto start = opts_.clock->now_ms();
  std::string last_error;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (limiter) limiter->acquire();
    ++remote_calls_;
    auto result = transport.send(req, key);
    if (result.ok) {
      ModelResponse resp{std::move(result.text), opts_.clock->now_ms() - start, false, attempt};
      TranscriptRecord rec;
      rec.timestamp_ms = opts_.clock->now_ms();
      rec.tag = req.tag;
      rec.digest = key.digest;
      rec.backend_id = req.binding.backend_id;
      rec.prompt = req.prompt_text;
      rec.response = resp.text;
      rec.latency_ms = resp.latency_ms;
      rec.attempts = attempt;
      transcript_.append(rec);
      return resp;
    }
    last_error = result.error.empty() ? "status " + std::to_string(result.status) : result.error;
    if (!result.retryable()) {
      throw Error(ErrorCode::HttpError, "binding '" + req.binding.backend_id + "': " + last_error);
    }
    if (attempt < max_attempts) opts_.clock->sleep_ms(opts_.retry.delay_before_retry(attempt));
  }
  throw Error(ErrorCode::RetriesExhausted, "binding '" + req.binding.backend_id + "' after " +
                                               std::to_string(max_attempts) + " attempts: " + last_error);
}

}  // namespace merbench
