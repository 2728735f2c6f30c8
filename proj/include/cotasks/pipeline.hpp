#pragma once

// Subcommand implementations: build, validate, stats, infer, judge, report.
// Every command writes into a fresh output directory with a manifest.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "cotasks/config.hpp"
#include "cotasks/cotask_builder.hpp"
#include "cotasks/eval_harness.hpp"
#include "cotasks/llm_gateway.hpp"
#include "cotasks/prompt_kit.hpp"

namespace cotasks {

enum ExitCode : int { kExitOk = 0, kExitInvalid = 1, kExitUsage = 2, kExitRuntime = 3 };

inline constexpr const char* kToolVersion = "0.1.0";

using EndpointFactory = std::function<std::shared_ptr<ChatEndpoint>(const std::string& role, const EndpointConfig&)>;

/// http -> HttpChatEndpoint, cache_only -> CacheOnlyEndpoint.
EndpointFactory default_endpoint_factory();

struct QuarantineEntry {
  std::string split;
  /// "file", "annotation" or "question".
  std::string kind;
  std::string id;
  std::string code;
  std::string detail;
};

Json to_json(const QuarantineEntry& q);

struct SplitInput {
  std::string name;
  std::vector<NormalizedAnnotation> videos;
  std::vector<QARecord> questions;
  std::vector<QuarantineEntry> quarantined;
};

/// Reads one configured split from disk. Lenient mode quarantines bad files and records.
SplitInput load_split(const PipelineConfig& config, const SplitConfig& split, const PredicateVocabulary& vocabulary);

struct BuildSettings {
  int k = kDefaultSampleCount;
  GroundingMode mode = GroundingMode::star_direct;
  BuildOptions options;
  ParseMode parse_mode = ParseMode::lenient;
  const GroundingModel* grounder = nullptr;
  std::optional<std::filesystem::path> frames_dir;
  int workers = 1;
};

struct SplitOutput {
  std::string name;
  std::vector<CoTaskBundle> bundles;
  Expansion expansion;
  std::vector<QuarantineEntry> quarantined;
};

struct BuildOutput {
  /// Union over splits, sorted by video_id.
  std::vector<NormalizedAnnotation> videos;
  std::vector<DropReport> drops;
  std::vector<SplitOutput> splits;
};

/// Sample, reindex, construct and expand every split in memory.
BuildOutput run_build(const std::vector<SplitInput>& inputs, const BuildSettings& settings, const PromptKit& prompts);

/// Plain-text dataset table: Q0, filtered, surviving and instance counts per split.
std::string render_stats(const std::vector<SplitStats>& stats);

/// `<frames_dir>/<video_id>/<t>.jpg` for t = 1..num_frames.
std::vector<std::filesystem::path> frame_paths(const std::filesystem::path& frames_dir, const std::string& video_id,
                                               int num_frames);

struct CommandContext {
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
  EndpointFactory endpoints = default_endpoint_factory();
  /// Replaces the wall clock in manifests when set.
  std::function<std::string()> clock;
  /// Replaces the retry sleep when set.
  std::function<void(std::chrono::milliseconds)> sleeper;
};

int cmd_build(const PipelineConfig& config, const std::filesystem::path& out_dir, CommandContext& ctx);
/// Accepts build directories, bundle .jsonl files and normalized annotation .jsonl files.
int cmd_validate(const std::vector<std::filesystem::path>& paths, CommandContext& ctx, bool json_output = false);
int cmd_stats(const std::filesystem::path& build_dir, CommandContext& ctx);
int cmd_infer(const PipelineConfig& config, const std::filesystem::path& build_dir, const std::string& split,
              const std::string& condition, const std::filesystem::path& out_dir, CommandContext& ctx);
int cmd_judge(const PipelineConfig& config, const std::filesystem::path& run_dir, const std::filesystem::path& out_dir,
              CommandContext& ctx);
int cmd_report(const std::vector<std::filesystem::path>& judge_dirs, const std::filesystem::path& out_dir,
               CommandContext& ctx);

}  // namespace cotasks
