#pragma once

// Chat-completions client: content-addressed response cache, retry with
// exponential backoff, and a hard bound on requests in flight.

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "cotasks/json.hpp"

namespace cotasks {

struct ContentPart {
  enum class Kind { text, image_file, image_url };
  Kind kind = Kind::text;
  /// Text, file path, or URL depending on `kind`.
  std::string value;

  static ContentPart text(std::string t) { return {Kind::text, std::move(t)}; }
  static ContentPart image_file(const std::filesystem::path& p) { return {Kind::image_file, p.string()}; }
  static ContentPart image_url(std::string u) { return {Kind::image_url, std::move(u)}; }

  bool operator==(const ContentPart&) const = default;
};

struct ChatRequest {
  std::string model_id;
  std::optional<std::string> system;
  std::vector<ContentPart> user_parts;
  double temperature = 0.0;
  int max_tokens = 1024;

  /// SHA-256 over a key-sorted encoding; image files contribute their content hash.
  std::string digest() const;
  /// Concatenated text parts.
  std::string user_text() const;
  int image_count() const;
};

struct Usage {
  long long prompt_tokens = 0;
  long long completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  std::string finish_reason;
  double latency_ms = 0.0;
  Usage usage;
  bool cached = false;
  int retries = 0;
};

/// One remote model. Implementations throw TransportError, with the HTTP status when known.
class ChatEndpoint {
 public:
  virtual ~ChatEndpoint() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

enum class ImageMode { base64, url };

struct HttpEndpointConfig {
  std::string base_url;
  std::string api_key;
  /// Model name sent on the wire; the registry key is the request's model_id.
  std::string model;
  ImageMode image_mode = ImageMode::base64;
  int timeout_seconds = 120;
};

/// POSTs `{base_url}/chat/completions` with a messages array of text and image parts.
class HttpChatEndpoint : public ChatEndpoint {
 public:
  explicit HttpChatEndpoint(HttpEndpointConfig config);
  ChatResponse complete(const ChatRequest& request) override;

  /// Wire body for `request`; exposed for inspection.
  Json build_body(const ChatRequest& request) const;

 private:
  HttpEndpointConfig config_;
};

/// Serves nothing: every call fails with a non-retryable TransportError. Used for cache-only replays.
class CacheOnlyEndpoint : public ChatEndpoint {
 public:
  ChatResponse complete(const ChatRequest& request) override;
};

/// One file per request digest, written atomically.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);
  std::optional<ChatResponse> get(const std::string& digest) const;
  void put(const std::string& digest, const ChatRequest& request, const ChatResponse& response) const;
  const std::filesystem::path& directory() const { return dir_; }

 private:
  std::filesystem::path path_for(const std::string& digest) const;
  std::filesystem::path dir_;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds base_delay{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{8000};

  std::chrono::milliseconds delay_for(int attempt) const;
};

/// HTTP statuses worth retrying: 0 (network), 408, 429 and 5xx.
bool is_transient_status(int status);

struct GatewayStats {
  long long requests = 0;
  long long cache_hits = 0;
  long long retries = 0;
  long long failures = 0;
};

struct BatchResult {
  std::optional<ChatResponse> response;
  std::string error;
  std::exception_ptr exception;

  bool ok() const { return response.has_value(); }
};

class Gateway {
 public:
  static constexpr int kMaxInFlightLimit = 1024;

  Gateway(std::optional<std::filesystem::path> cache_dir, RetryPolicy retry = {}, int max_in_flight = 8);

  /// `max_images` > 0 stride-downsamples image parts of requests to this model before hashing.
  void register_endpoint(const std::string& model_id, std::shared_ptr<ChatEndpoint> endpoint, int max_images = 0);
  bool has_endpoint(const std::string& model_id) const;
  void set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper);

  /// Cache hit replays without touching the endpoint. 401/403 raise ConfigError; transient
  /// failures retry per policy, then raise TransportError.
  ChatResponse chat(const ChatRequest& request);

  /// Responses in request order; failures stay in their slot. A ConfigError is rethrown after
  /// the batch drains.
  std::vector<BatchResult> run_batch(const std::vector<ChatRequest>& requests, int max_in_flight);

  GatewayStats stats() const;
  int max_in_flight() const { return max_in_flight_; }

 private:
  struct Registration {
    std::shared_ptr<ChatEndpoint> endpoint;
    int max_images = 0;
  };

  ChatRequest prepare(const ChatRequest& request) const;

  std::optional<ResponseCache> cache_;
  RetryPolicy retry_;
  int max_in_flight_;
  std::counting_semaphore<kMaxInFlightLimit> slots_;
  std::map<std::string, Registration> endpoints_;
  std::function<void(std::chrono::milliseconds)> sleeper_;
  mutable std::mutex stats_mutex_;
  GatewayStats stats_;
};

/// Keeps `max_images` image parts chosen at indices floor(j * n / max_images); text parts stay.
std::vector<ContentPart> downsample_images(const std::vector<ContentPart>& parts, int max_images);

}  // namespace cotasks
