#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace merbench {

std::string sha256_hex(std::string_view data);

// ---------------------------------------------------------------------------
// Bindings and requests

enum class Capability { Text, TextFrames, TextAudio };

std::string_view to_string(Capability c);
Capability capability_from_string(std::string_view s);

struct DecodeParams {
  double temperature = 0.0;
  int max_output_tokens = 1024;
  std::optional<std::int64_t> seed;
};

struct BackendBinding {
  std::string backend_id;
  std::string model_id;
  Capability capability = Capability::Text;
  std::string endpoint;  // URL or "mock:<script-id>"
  std::string auth_ref;  // environment variable holding the bearer token; empty = no auth
  DecodeParams decode;
};

struct MediaPayload {
  std::string bytes;
  std::string mime;  // image/jpeg, audio/wav, ...
  std::string source;

  std::string digest() const { return sha256_hex(bytes); }
};

struct ModelRequest {
  BackendBinding binding;
  std::string prompt_text;
  std::vector<MediaPayload> frames;
  std::optional<MediaPayload> audio;
  std::string tag;  // provenance only, never part of the cache key
};

struct ModelResponse {
  std::string text;
  std::int64_t latency_ms = 0;
  bool from_cache = false;
  int attempt_count = 1;
};

struct CacheKey {
  std::string digest;  // 64 hex chars
  friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

CacheKey request_digest(const ModelRequest& req);

// Deterministically derives a distinct seed for a sub-call (repeat, candidate).
std::int64_t derive_seed(std::optional<std::int64_t> base, std::string_view salt, std::int64_t index);

// ---------------------------------------------------------------------------
// Time

class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() = 0;
  virtual void sleep_ms(std::int64_t ms) = 0;
};

class SystemClock final : public Clock {
 public:
  std::int64_t now_ms() override;
  void sleep_ms(std::int64_t ms) override;
};

// Sleeping advances time instantly.
class FakeClock final : public Clock {
 public:
  std::int64_t now_ms() override { return now_.load(); }
  void sleep_ms(std::int64_t ms) override;
  void advance(std::int64_t ms) { now_ += ms; }

 private:
  std::atomic<std::int64_t> now_{0};
};

// Sliding one-second window: at most `per_second` dispatches in any 1000 ms.
class RateLimiter {
 public:
  RateLimiter(int per_second, std::shared_ptr<Clock> clock);

  // Blocks until a slot is free, then returns the dispatch time.
  std::int64_t acquire();

 private:
  int limit_;
  std::shared_ptr<Clock> clock_;
  std::mutex mu_;
  std::deque<std::int64_t> recent_;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::int64_t base_delay_ms = 1000;
  std::int64_t max_delay_ms = 60000;

  std::int64_t delay_before_retry(int failed_attempts) const;
};

// ---------------------------------------------------------------------------
// Persistence

struct CacheEntry {
  std::string text;
  std::string backend_id;
  std::string model_id;
  int attempts = 1;
  std::int64_t latency_ms = 0;
};

// One JSON file per digest under the root directory. Writes go through a
// temporary file and rename, so readers never see partial entries.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path root);

  std::optional<CacheEntry> get(const CacheKey& key) const;
  void put(const CacheKey& key, const CacheEntry& entry);
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path file_for(const CacheKey& key) const;
  std::filesystem::path root_;
};

struct TranscriptRecord {
  std::int64_t timestamp_ms = 0;
  std::string tag;
  std::string digest;
  std::string backend_id;
  std::string prompt;
  std::string response;
  std::int64_t latency_ms = 0;
  int attempts = 0;
};

nlohmann::json to_json(const TranscriptRecord& r);

// Thread-safe in-memory log, optionally mirrored to a JSONL file.
class TranscriptLog {
 public:
  TranscriptLog() = default;

  void open(const std::filesystem::path& file);

  void append(const TranscriptRecord& r);
  std::vector<TranscriptRecord> records() const;
  std::size_t size() const;
  std::size_t count_with_tag_prefix(std::string_view prefix) const;

 private:
  mutable std::mutex mu_;
  std::vector<TranscriptRecord> records_;
  std::ofstream file_;
};

// ---------------------------------------------------------------------------
// Transports

struct TransportResult {
  bool ok = false;
  int status = 0;  // HTTP status, 0 for connection-level failure
  std::string text;
  std::string error;

  bool retryable() const { return !ok && (status == 0 || status == 429 || status >= 500); }
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportResult send(const ModelRequest& req, const CacheKey& key) = 0;
};

// Scripted responses. Each line of a script is
//   {"matcher": {"digest": "<hex>"}, "response_text": "..."}
// or
//   {"matcher": {"backend_id": "<id or *>", "tag_prefix": "..."}, "response_text": "..."}
// Digest entries win over FIFO queues. Among FIFO queues the longest matching
// tag prefix is used and entries are consumed in file order unless marked
// "sticky". An entry may carry "status": <int> to simulate a failed call.
class MockScript final : public Transport {
 public:
  struct Entry {
    std::string text;
    int status = 200;
    bool sticky = false;
  };

  static std::shared_ptr<MockScript> load(const std::filesystem::path& path);
  static std::shared_ptr<MockScript> parse(std::string_view script);

  void add_digest(std::string digest, Entry e);
  void add_fifo(std::string backend_id, std::string tag_prefix, Entry e);

  TransportResult send(const ModelRequest& req, const CacheKey& key) override;

  std::size_t calls() const { return calls_.load(); }

 private:
  struct Queue {
    std::string backend_id;
    std::string tag_prefix;
    std::deque<Entry> entries;
  };

  std::mutex mu_;
  std::map<std::string, Entry> by_digest_;
  std::vector<Queue> queues_;
  std::atomic<std::size_t> calls_{0};
};

// Chat-completions POST with bearer auth and base64 media parts.
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(std::int64_t timeout_s = 120) : timeout_s_(timeout_s) {}
  TransportResult send(const ModelRequest& req, const CacheKey& key) override;

  static nlohmann::json build_body(const ModelRequest& req);
  static std::optional<std::string> extract_text(const nlohmann::json& body);

 private:
  std::int64_t timeout_s_;
};

// ---------------------------------------------------------------------------

struct BackendOptions {
  std::optional<std::filesystem::path> cache_dir;
  std::optional<std::filesystem::path> transcript_file;
  RetryPolicy retry;
  std::shared_ptr<Clock> clock;  // defaults to SystemClock
};

class Backend {
 public:
  explicit Backend(BackendOptions opts = {});

  void register_mock(const std::string& script_id, std::shared_ptr<MockScript> script);
  void set_rate_limit(const std::string& backend_id, int per_second);
  // Overrides the transport for non-mock endpoints (tests use this).
  void set_remote_transport(std::shared_ptr<Transport> transport);

  ModelResponse invoke(const ModelRequest& req);

  const TranscriptLog& transcript() const { return transcript_; }
  std::size_t remote_calls() const { return remote_calls_.load(); }

 private:
  ModelResponse dispatch(const ModelRequest& req, const CacheKey& key);
  Transport& transport_for(const BackendBinding& b);
  RateLimiter* limiter_for(const std::string& backend_id);

  BackendOptions opts_;
  std::optional<ResponseCache> disk_cache_;
  TranscriptLog transcript_;

  std::mutex mu_;
  std::map<std::string, CacheEntry> memory_cache_;
  std::map<std::string, std::shared_future<CacheEntry>> in_flight_;
  std::map<std::string, std::shared_ptr<MockScript>> mocks_;
  std::map<std::string, std::unique_ptr<RateLimiter>> limiters_;
  std::shared_ptr<Transport> remote_;
  std::atomic<std::size_t> remote_calls_{0};
};

void check_capability(const ModelRequest& req);

}  // namespace merbench
