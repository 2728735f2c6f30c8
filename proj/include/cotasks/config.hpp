#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cotasks/annotation.hpp"
#include "cotasks/cotask_builder.hpp"
#include "cotasks/json.hpp"
#include "cotasks/llm_gateway.hpp"

namespace cotasks {

inline constexpr const char* kRoles[] = {"grounder", "subject", "judge"};

struct EndpointConfig {
  /// "http" or "cache_only".
  std::string kind = "http";
  std::string base_url;
  std::string model;
  std::string api_key;
  /// "bearer" or "none".
  std::string auth = "bearer";
  double temperature = 0.0;
  int max_tokens = 512;
  /// 0 keeps every frame; otherwise frames are stride-downsampled to this many.
  int max_images = 0;
  ImageMode image_mode = ImageMode::base64;
  int timeout_seconds = 120;
};

struct SplitConfig {
  std::string name;
  /// VidOR or STAR JSON file, a directory of them, or a normalized annotations .jsonl.
  std::filesystem::path annotations;
  /// NeXT-QA csv or normalized questions .jsonl; unused for STAR input.
  std::optional<std::filesystem::path> questions;
};

struct PipelineConfig {
  Source source = Source::nextqa;
  std::vector<SplitConfig> splits;
  std::optional<std::filesystem::path> frames_dir;
  int k = kDefaultSampleCount;
  int timestamp_cap = kDefaultTimestampCap;
  std::optional<std::filesystem::path> vocabulary;
  GroundingMode grounding = GroundingMode::star_direct;
  ParseMode parse_mode = ParseMode::lenient;
  int max_in_flight = 8;
  std::optional<std::filesystem::path> cache_dir;
  std::optional<std::filesystem::path> prompt_dir;
  RetryPolicy retry;
  int star_threshold = 4;
  std::map<std::string, EndpointConfig> endpoints;

  using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

  /// Relative paths resolve against the config file's directory. Unknown keys are rejected.
  static PipelineConfig load(const std::filesystem::path& path, const EnvLookup& env = process_env);
  static PipelineConfig from_json(const Json& j, const std::filesystem::path& base_dir,
                                  const EnvLookup& env = process_env);
  static std::optional<std::string> process_env(const std::string& name);

  /// COTASKS_<ROLE>_BASE_URL / _MODEL / _API_KEY.
  void apply_env(const EnvLookup& env);

  /// Secrets are never serialized.
  Json to_json() const;
  /// SHA-256 of to_json().
  std::string digest() const;

  /// Range checks; raises ConfigError.
  void validate() const;
  /// Endpoint for `role`, checked for usable credentials before any request is made.
  const EndpointConfig& endpoint(const std::string& role) const;
};

}  // namespace cotasks
