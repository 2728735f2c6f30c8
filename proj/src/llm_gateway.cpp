#include "cotasks/llm_gateway.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "cotasks/digest.hpp"
#include "cotasks/errors.hpp"

namespace cotasks {

namespace {

std::string_view kind_name(ContentPart::Kind k) {
  switch (k) {
    case ContentPart::Kind::text: return "text";
    case ContentPart::Kind::image_file: return "image_file";
    case ContentPart::Kind::image_url: return "image_url";
  }
  return "?";
}

std::string mime_for(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".webp") return "image/webp";
  return "image/jpeg";
}

class SlotGuard {
 public:
  explicit SlotGuard(std::counting_semaphore<Gateway::kMaxInFlightLimit>& s) : s_(s) { s_.acquire(); }
  ~SlotGuard() { s_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  std::counting_semaphore<Gateway::kMaxInFlightLimit>& s_;
};

}  // namespace

std::string ChatRequest::digest() const {
  // nlohmann::json keeps keys sorted, so the encoding is independent of field order.
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : user_parts) {
    nlohmann::json part;
    part["kind"] = kind_name(p.kind);
    if (p.kind == ContentPart::Kind::image_file) {
      part["sha256"] = sha256_file_hex(p.value);
    } else {
      part["value"] = p.value;
    }
    parts.push_back(std::move(part));
  }
  nlohmann::json j;
  j["model_id"] = model_id;
  j["system"] = system ? nlohmann::json(*system) : nlohmann::json(nullptr);
  j["user_parts"] = std::move(parts);
  j["temperature"] = temperature;
  j["max_tokens"] = max_tokens;
  return sha256_hex(j.dump());
}

std::string ChatRequest::user_text() const {
  std::string out;
  for (const auto& p : user_parts) {
    if (p.kind == ContentPart::Kind::text) out += p.value;
  }
  return out;
}

int ChatRequest::image_count() const {
  return static_cast<int>(std::count_if(user_parts.begin(), user_parts.end(),
                                        [](const ContentPart& p) { return p.kind != ContentPart::Kind::text; }));
}

std::vector<ContentPart> downsample_images(const std::vector<ContentPart>& parts, int max_images) {
  std::vector<std::size_t> image_idx;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].kind != ContentPart::Kind::text) image_idx.push_back(i);
  }
  const auto n = static_cast<long long>(image_idx.size());
  if (max_images <= 0 || n <= max_images) return parts;
  std::vector<bool> keep(parts.size(), true);
  for (auto i : image_idx) keep[i] = false;
  for (long long j = 0; j < max_images; ++j) keep[image_idx[static_cast<std::size_t>(j * n / max_images)]] = true;
  std::vector<ContentPart> out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (keep[i]) out.push_back(parts[i]);
  }
  return out;
}

HttpChatEndpoint::HttpChatEndpoint(HttpEndpointConfig config) : config_(std::move(config)) {
  if (config_.base_url.find("://") == std::string::npos) {
    throw ConfigError("endpoint base_url must include a scheme: '" + config_.base_url + "'");
  }
}

Json HttpChatEndpoint::build_body(const ChatRequest& request) const {
  Json messages = Json::array();
  if (request.system) messages.push_back({{"role", "system"}, {"content", *request.system}});
  Json content = Json::array();
  for (const auto& p : request.user_parts) {
    switch (p.kind) {
      case ContentPart::Kind::text:
        content.push_back({{"type", "text"}, {"text", p.value}});
        break;
      case ContentPart::Kind::image_url:
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", p.value}}}});
        break;
      case ContentPart::Kind::image_file: {
        std::string url;
        if (config_.image_mode == ImageMode::url) {
          url = "file://" + std::filesystem::absolute(p.value).string();
        } else {
          const std::string bytes = read_file(p.value);
          url = "data:" + mime_for(p.value) + ";base64," +
                base64_encode({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
        }
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
        break;
      }
    }
  }
  messages.push_back({{"role", "user"}, {"content", std::move(content)}});
  Json body;
  body["model"] = config_.model.empty() ? request.model_id : config_.model;
  body["messages"] = std::move(messages);
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_tokens;
  return body;
}

ChatResponse HttpChatEndpoint::complete(const ChatRequest& request) {
  const auto scheme_end = config_.base_url.find("://");
  const auto path_start = config_.base_url.find('/', scheme_end + 3);
  const std::string origin = config_.base_url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  httplib::Client client(origin);
  client.set_connection_timeout(std::chrono::seconds(std::min(config_.timeout_seconds, 30)));
  client.set_read_timeout(std::chrono::seconds(config_.timeout_seconds));
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  const auto t0 = std::chrono::steady_clock::now();
  auto res = client.Post(prefix + "/chat/completions", headers, build_body(request).dump(), "application/json");
  const auto t1 = std::chrono::steady_clock::now();
  if (!res) throw TransportError("request to " + origin + " failed: " + httplib::to_string(res.error()), 0);
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("HTTP " + std::to_string(res->status) + " from " + origin + ": " + res->body.substr(0, 300),
                         res->status);
  }
  const Json body = Json::parse(res->body, nullptr, false);
  if (body.is_discarded() || !body.contains("choices") || body["choices"].empty()) {
    throw TransportError("malformed completion body from " + origin, 502);
  }
  const Json& choice = body["choices"][0];
  ChatResponse out;
  const Json& content = choice["message"]["content"];
  if (content.is_string()) {
    out.text = content.get<std::string>();
  } else if (content.is_array()) {
    for (const auto& part : content) {
      if (part.value("type", "") == "text") out.text += part.value("text", "");
    }
  }
  out.finish_reason = choice.value("finish_reason", "");
  if (body.contains("usage") && body["usage"].is_object()) {
    out.usage.prompt_tokens = body["usage"].value("prompt_tokens", 0LL);
    out.usage.completion_tokens = body["usage"].value("completion_tokens", 0LL);
  }
  out.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  return out;
}

ChatResponse CacheOnlyEndpoint::complete(const ChatRequest& request) {
  throw TransportError("cache miss for model '" + request.model_id + "' with a cache-only endpoint", 404);
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::path_for(const std::string& digest) const { return dir_ / (digest + ".json"); }

std::optional<ChatResponse> ResponseCache::get(const std::string& digest) const {
  const auto path = path_for(digest);
  if (!std::filesystem::exists(path)) return std::nullopt;
  const Json j = Json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.contains("text")) return std::nullopt;
  ChatResponse r;
  r.text = j["text"].get<std::string>();
  r.finish_reason = j.value("finish_reason", "");
  r.latency_ms = j.value("latency_ms", 0.0);
  if (j.contains("usage")) {
    r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0LL);
    r.usage.completion_tokens = j["usage"].value("completion_tokens", 0LL);
  }
  r.cached = true;
  return r;
}

void ResponseCache::put(const std::string& digest, const ChatRequest& request, const ChatResponse& response) const {
  Json j;
  j["digest"] = digest;
  j["model_id"] = request.model_id;
  j["text"] = response.text;
  j["finish_reason"] = response.finish_reason;
  j["latency_ms"] = response.latency_ms;
  j["usage"] = {{"prompt_tokens", response.usage.prompt_tokens},
                {"completion_tokens", response.usage.completion_tokens}};
  write_file_atomic(path_for(digest), j.dump(2) + "\n");
}

std::chrono::milliseconds RetryPolicy::delay_for(int attempt) const {
  const double ms = static_cast<double>(base_delay.count()) * std::pow(multiplier, attempt);
  return std::min(max_delay, std::chrono::milliseconds(static_cast<long long>(ms)));
}

bool is_transient_status(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

Gateway::Gateway(std::optional<std::filesystem::path> cache_dir, RetryPolicy retry, int max_in_flight)
    : retry_(retry), max_in_flight_(max_in_flight), slots_(std::clamp(max_in_flight, 1, kMaxInFlightLimit)) {
  if (max_in_flight < 1 || max_in_flight > kMaxInFlightLimit) {
    throw ArgumentError("max_in_flight must be in 1.." + std::to_string(kMaxInFlightLimit));
  }
  if (cache_dir) cache_.emplace(*cache_dir);
  sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

void Gateway::register_endpoint(const std::string& model_id, std::shared_ptr<ChatEndpoint> endpoint, int max_images) {
  endpoints_[model_id] = {std::move(endpoint), max_images};
}

bool Gateway::has_endpoint(const std::string& model_id) const { return endpoints_.contains(model_id); }

void Gateway::set_sleeper(std::function<void(std::chrono::milliseconds)> sleeper) { sleeper_ = std::move(sleeper); }

ChatRequest Gateway::prepare(const ChatRequest& request) const {
  ChatRequest out = request;
  auto it = endpoints_.find(request.model_id);
  if (it != endpoints_.end() && it->second.max_images > 0) {
    out.user_parts = downsample_images(request.user_parts, it->second.max_images);
  }
  return out;
}

ChatResponse Gateway::chat(const ChatRequest& request) {
  auto it = endpoints_.find(request.model_id);
  if (it == endpoints_.end()) throw ConfigError("no endpoint configured for model '" + request.model_id + "'");
  const ChatRequest req = prepare(request);
  const std::string digest = req.digest();
  {
    std::lock_guard lock(stats_mutex_);
    ++stats_.requests;
  }
  if (cache_) {
    if (auto hit = cache_->get(digest)) {
      std::lock_guard lock(stats_mutex_);
      ++stats_.cache_hits;
      return *hit;
    }
  }
  for (int attempt = 0;; ++attempt) {
    try {
      ChatResponse response;
      {
        SlotGuard guard(slots_);
        response = it->second.endpoint->complete(req);
      }
      response.cached = false;
      response.retries = attempt;
      if (cache_) cache_->put(digest, req, response);
      return response;
    } catch (const TransportError& e) {
      const int status = e.status();
      if (status == 401 || status == 403) {
        std::lock_guard lock(stats_mutex_);
        ++stats_.failures;
        throw ConfigError("endpoint for '" + request.model_id + "' rejected the credentials: " + e.what());
      }
      if (!is_transient_status(status) || attempt >= retry_.max_retries) {
        {
          std::lock_guard lock(stats_mutex_);
          ++stats_.failures;
        }
        throw TransportError("model '" + request.model_id + "' failed after " + std::to_string(attempt + 1) +
                                 " attempt(s): " + e.what(),
                             status);
      }
      {
        std::lock_guard lock(stats_mutex_);
        ++stats_.retries;
      }
      sleeper_(retry_.delay_for(attempt));
    }
  }
}

std::vector<BatchResult> Gateway::run_batch(const std::vector<ChatRequest>& requests, int max_in_flight) {
  if (max_in_flight < 1) throw ArgumentError("run_batch: max_in_flight must be >= 1");
  std::vector<BatchResult> results(requests.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < requests.size(); i = next.fetch_add(1)) {
      try {
        results[i].response = chat(requests[i]);
      } catch (const std::exception& e) {
        results[i].error = e.what();
        results[i].exception = std::current_exception();
      }
    }
  };
  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(max_in_flight), requests.size());
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (const auto& r : results) {
    if (!r.exception) continue;
    try {
      std::rethrow_exception(r.exception);
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
    }
  }
  return results;
}

GatewayStats Gateway::stats() const {
  std::lock_guard lock(stats_mutex_);
  return stats_;
}

}  // namespace cotasks
