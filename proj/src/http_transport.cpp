#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>

#include "merbench/backend.hpp"
#include "merbench/error.hpp"

namespace merbench {

using nlohmann::json;

namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::ConfigError, "endpoint '" + url + "' is not an http(s) URL");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string audio_format(const MediaPayload& p) {
  if (p.mime == "audio/mpeg" || p.mime == "audio/mp3") return "mp3";
  if (p.mime == "audio/flac") return "flac";
  return "wav";
}

}  // namespace

json HttpTransport::build_body(const ModelRequest& req) {
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", req.prompt_text}});
  for (const auto& f : req.frames) {
    const auto mime = f.mime.empty() ? std::string("image/jpeg") : f.mime;
    content.push_back({{"type", "image_url"},
                       {"image_url", {{"url", "data:" + mime + ";base64," + httplib::detail::base64_encode(f.bytes)}}}});
  }
  if (req.audio) {
    content.push_back({{"type", "input_audio"},
                       {"input_audio",
                        {{"data", httplib::detail::base64_encode(req.audio->bytes)}, {"format", audio_format(*req.audio)}}}});
  }
  const auto& d = req.binding.decode;
  json body = {{"model", req.binding.model_id},
               {"messages", json::array({{{"role", "user"}, {"content", content}}})},
               {"temperature", d.temperature},
               {"max_tokens", d.max_output_tokens}};
  if (d.seed) body["seed"] = *d.seed;
  return body;
}

std::optional<std::string> HttpTransport::extract_text(const json& body) {
  try {
    const auto& message = body.at("choices").at(0).at("message");
    const auto& content = message.at("content");
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {
      std::string out;
      for (const auto& part : content) {
        if (part.value("type", "") == "text") out += part.value("text", "");
      }
      return out;
    }
  } catch (const json::exception&) {
  }
  return std::nullopt;
}

TransportResult HttpTransport::send(const ModelRequest& req, const CacheKey&) {
  const auto url = split_url(req.binding.endpoint);
  httplib::Client client(url.origin);
  client.set_connection_timeout(static_cast<time_t>(30));
  client.set_read_timeout(static_cast<time_t>(timeout_s_));
  client.set_write_timeout(static_cast<time_t>(timeout_s_));

  httplib::Headers headers;
  if (!req.binding.auth_ref.empty()) {
    if (const char* token = std::getenv(req.binding.auth_ref.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  TransportResult result;
  auto res = client.Post(url.path, headers, build_body(req).dump(), "application/json");
  if (!res) {
    result.error = "transport error: " + httplib::to_string(res.error());
    return result;
  }
  result.status = res->status;
  if (res->status < 200 || res->status >= 300) {
    result.error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500);
    return result;
  }
  auto body = json::parse(res->body, nullptr, false);
  auto text = body.is_discarded() ? std::nullopt : extract_text(body);
  if (!text) {
    result.status = 502;  // malformed payload from the server side; worth a retry
    result.error = "response has no choices[0].message.content";
    return result;
  }
  result.ok = true;
  result.text = std::move(*text);
  return result;
}

}  // namespace merbench
