#include "cotasks/config.hpp"

#include <cstdlib>
#include <set>

#include "cotasks/digest.hpp"
#include "cotasks/errors.hpp"

namespace cotasks {

namespace {

void reject_unknown(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.contains(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
T get(const Json& j, const char* key, const std::string& where, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(where + "/" + key + ": wrong type");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::optional<std::filesystem::path> optional_path(const Json& j, const char* key, const std::filesystem::path& base,
                                                   const std::string& where) {
  auto s = get<std::string>(j, key, where, "");
  if (s.empty()) return std::nullopt;
  return resolve(base, s);
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

Json path_json(const std::optional<std::filesystem::path>& p) { return p ? Json(p->string()) : Json(nullptr); }

}  // namespace

std::optional<std::string> PipelineConfig::process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (v == nullptr) return std::nullopt;
  return std::string(v);
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path, const EnvLookup& env) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  Json j;
  try {
    j = read_json_file(path);
  } catch (const ParseError& e) {
    throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
  }
  return from_json(j, std::filesystem::absolute(path).parent_path(), env);
}

PipelineConfig PipelineConfig::from_json(const Json& j, const std::filesystem::path& base, const EnvLookup& env) {
  const std::string w = "config";
  reject_unknown(j,
                 {"source", "splits", "frames_dir", "k", "timestamp_cap", "vocabulary", "grounding", "parse_mode",
                  "max_in_flight", "cache_dir", "prompt_dir", "retry", "star_threshold", "endpoints"},
                 w);
  PipelineConfig c;
  auto source = source_from_string(get<std::string>(j, "source", w, "nextqa"));
  if (!source) throw ConfigError(w + "/source: expected nextqa or star");
  c.source = *source;
  if (auto it = j.find("splits"); it != j.end()) {
    if (!it->is_array()) throw ConfigError(w + "/splits: expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const Json& s = (*it)[i];
      const std::string sw = w + "/splits/" + std::to_string(i);
      reject_unknown(s, {"name", "annotations", "questions"}, sw);
      SplitConfig split;
      split.name = get<std::string>(s, "name", sw, "");
      const auto ann = get<std::string>(s, "annotations", sw, "");
      if (split.name.empty() || ann.empty()) throw ConfigError(sw + ": name and annotations are required");
      split.annotations = resolve(base, ann);
      split.questions = optional_path(s, "questions", base, sw);
      c.splits.push_back(std::move(split));
    }
  }
  c.frames_dir = optional_path(j, "frames_dir", base, w);
  c.k = get<int>(j, "k", w, c.k);
  c.timestamp_cap = get<int>(j, "timestamp_cap", w, c.timestamp_cap);
  c.vocabulary = optional_path(j, "vocabulary", base, w);
  auto mode = grounding_mode_from_string(get<std::string>(j, "grounding", w, "star_direct"));
  if (!mode) throw ConfigError(w + "/grounding: expected star_direct, llm or lexical");
  c.grounding = *mode;
  const auto pm = get<std::string>(j, "parse_mode", w, "lenient");
  if (pm != "lenient" && pm != "strict") throw ConfigError(w + "/parse_mode: expected strict or lenient");
  c.parse_mode = pm == "strict" ? ParseMode::strict : ParseMode::lenient;
  c.max_in_flight = get<int>(j, "max_in_flight", w, c.max_in_flight);
  c.cache_dir = optional_path(j, "cache_dir", base, w);
  c.prompt_dir = optional_path(j, "prompt_dir", base, w);
  if (auto it = j.find("retry"); it != j.end()) {
    reject_unknown(*it, {"max_retries", "base_delay_ms", "multiplier", "max_delay_ms"}, w + "/retry");
    c.retry.max_retries = get<int>(*it, "max_retries", w + "/retry", c.retry.max_retries);
    c.retry.base_delay =
        std::chrono::milliseconds(get<long long>(*it, "base_delay_ms", w + "/retry", c.retry.base_delay.count()));
    c.retry.multiplier = get<double>(*it, "multiplier", w + "/retry", c.retry.multiplier);
    c.retry.max_delay =
        std::chrono::milliseconds(get<long long>(*it, "max_delay_ms", w + "/retry", c.retry.max_delay.count()));
  }
  c.star_threshold = get<int>(j, "star_threshold", w, c.star_threshold);
  if (auto it = j.find("endpoints"); it != j.end()) {
    reject_unknown(*it, {"grounder", "subject", "judge"}, w + "/endpoints");
    for (const auto& [role, e] : it->items()) {
      const std::string ew = w + "/endpoints/" + role;
      reject_unknown(e,
                     {"kind", "base_url", "model", "api_key", "auth", "temperature", "max_tokens", "max_images",
                      "image_mode", "timeout_seconds"},
                     ew);
      EndpointConfig ec;
      ec.kind = get<std::string>(e, "kind", ew, ec.kind);
      ec.base_url = get<std::string>(e, "base_url", ew, "");
      ec.model = get<std::string>(e, "model", ew, "");
      ec.api_key = get<std::string>(e, "api_key", ew, "");
      ec.auth = get<std::string>(e, "auth", ew, ec.auth);
      ec.temperature = get<double>(e, "temperature", ew, ec.temperature);
      ec.max_tokens = get<int>(e, "max_tokens", ew, role == "judge" ? 16 : ec.max_tokens);
      ec.max_images = get<int>(e, "max_images", ew, ec.max_images);
      const auto im = get<std::string>(e, "image_mode", ew, "base64");
      if (im != "base64" && im != "url") throw ConfigError(ew + "/image_mode: expected base64 or url");
      ec.image_mode = im == "url" ? ImageMode::url : ImageMode::base64;
      ec.timeout_seconds = get<int>(e, "timeout_seconds", ew, ec.timeout_seconds);
      c.endpoints[role] = std::move(ec);
    }
  }
  c.apply_env(env);
  c.validate();
  return c;
}

void PipelineConfig::apply_env(const EnvLookup& env) {
  if (!env) return;
  for (const char* role : kRoles) {
    const std::string prefix = "COTASKS_" + upper(role) + "_";
    auto url = env(prefix + "BASE_URL");
    auto model = env(prefix + "MODEL");
    auto key = env(prefix + "API_KEY");
    if (!url && !model && !key && !endpoints.contains(role)) continue;
    EndpointConfig& e = endpoints[role];
    if (url) e.base_url = *url;
    if (model) e.model = *model;
    if (key) e.api_key = *key;
  }
}

void PipelineConfig::validate() const {
  if (k < 1) throw ConfigError("config/k must be positive");
  if (timestamp_cap < 1) throw ConfigError("config/timestamp_cap must be positive");
  if (max_in_flight < 1 || max_in_flight > Gateway::kMaxInFlightLimit) {
    throw ConfigError("config/max_in_flight must be in 1.." + std::to_string(Gateway::kMaxInFlightLimit));
  }
  if (star_threshold < 1 || star_threshold > 5) throw ConfigError("config/star_threshold must be in 1..5");
  if (retry.max_retries < 0) throw ConfigError("config/retry/max_retries must be >= 0");
  std::set<std::string> names;
  for (const auto& s : splits) {
    if (!names.insert(s.name).second) throw ConfigError("config/splits: duplicate split '" + s.name + "'");
    if (source == Source::nextqa && !s.questions) {
      throw ConfigError("config/splits/" + s.name + ": NeXT-QA input needs a questions file");
    }
  }
  for (const auto& [role, e] : endpoints) {
    if (e.kind != "http" && e.kind != "cache_only") {
      throw ConfigError("config/endpoints/" + role + "/kind: expected http or cache_only");
    }
    if (e.auth != "bearer" && e.auth != "none") {
      throw ConfigError("config/endpoints/" + role + "/auth: expected bearer or none");
    }
  }
}

const EndpointConfig& PipelineConfig::endpoint(const std::string& role) const {
  auto it = endpoints.find(role);
  if (it == endpoints.end()) throw ConfigError("no endpoint configured for role '" + role + "'");
  const EndpointConfig& e = it->second;
  if (e.model.empty()) throw ConfigError("endpoint '" + role + "' has no model name");
  if (e.kind == "http") {
    if (e.base_url.empty()) throw ConfigError("endpoint '" + role + "' has no base_url");
    if (e.auth == "bearer" && e.api_key.empty()) {
      throw ConfigError("endpoint '" + role + "' needs an API key (set COTASKS_" + upper(role) + "_API_KEY)");
    }
  }
  return e;
}

Json PipelineConfig::to_json() const {
  Json j;
  j["source"] = to_string(source);
  Json s = Json::array();
  for (const auto& sp : splits) {
    s.push_back({{"name", sp.name}, {"annotations", sp.annotations.string()}, {"questions", path_json(sp.questions)}});
  }
  j["splits"] = std::move(s);
  j["frames_dir"] = path_json(frames_dir);
  j["k"] = k;
  j["timestamp_cap"] = timestamp_cap;
  j["vocabulary"] = path_json(vocabulary);
  j["grounding"] = to_string(grounding);
  j["parse_mode"] = parse_mode == ParseMode::strict ? "strict" : "lenient";
  j["max_in_flight"] = max_in_flight;
  j["cache_dir"] = path_json(cache_dir);
  j["prompt_dir"] = path_json(prompt_dir);
  j["retry"] = {{"max_retries", retry.max_retries},
                {"base_delay_ms", retry.base_delay.count()},
                {"multiplier", retry.multiplier},
                {"max_delay_ms", retry.max_delay.count()}};
  j["star_threshold"] = star_threshold;
  Json eps = Json::object();
  for (const auto& [role, e] : endpoints) {
    eps[role] = {{"kind", e.kind},
                 {"base_url", e.base_url},
                 {"model", e.model},
                 {"auth", e.auth},
                 {"temperature", e.temperature},
                 {"max_tokens", e.max_tokens},
                 {"max_images", e.max_images},
                 {"image_mode", e.image_mode == ImageMode::url ? "url" : "base64"},
                 {"timeout_seconds", e.timeout_seconds}};
  }
  j["endpoints"] = std::move(eps);
  return j;
}

std::string PipelineConfig::digest() const { return sha256_hex(to_json().dump()); }

}  // namespace cotasks
