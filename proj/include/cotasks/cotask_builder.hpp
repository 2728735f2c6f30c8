#pragma once

// Construction of A1..A4 from ground-truth annotations and expansion of each
// surviving Q0 into four CoTask instances.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cotasks/annotation.hpp"
#include "cotasks/cotask_types.hpp"
#include "cotasks/llm_gateway.hpp"
#include "cotasks/prompt_kit.hpp"
#include "cotasks/timeline.hpp"

namespace cotasks {

struct BuildOptions {
  int timestamp_cap = kDefaultTimestampCap;
  const PredicateVocabulary* vocabulary = nullptr;  // nullptr: built-in defaults
};

/// STAR multiple choice to open-ended: answer becomes the correct option's text, ending in a period.
/// NeXT-QA records pass through unchanged.
QARecord reformulate_mc(const QARecord& record);

/// Keeps `cap` elements at indices floor(j * m / cap) when m > cap.
std::vector<int> cap_uniform(const std::vector<int>& sorted, int cap);

/// Entities from the question's situation graph, timestamps from its sampled keyframes.
CoTask1Answer build_cotask1_star(const QARecord& record, const ReindexedAnnotation& video,
                                 const BuildOptions& options = {});

/// Catalog categories (or synonyms, or simple plurals) named in the question, on frames where
/// all of them have boxes, else where any of them has one.
CoTask1Answer build_cotask1_lexical(const QARecord& record, const ReindexedAnnotation& video,
                                    const BuildOptions& options = {});

struct GroundingModel {
  Gateway* gateway = nullptr;
  const PromptKit* prompts = nullptr;
  std::string model_id;
  double temperature = 0.0;
  int max_tokens = 512;
};

struct GroundingResult {
  CoTask1Answer answer;
  Provenance provenance = Provenance::llm_grounded;
  int attempts = 0;
  /// Why earlier attempts were rejected.
  std::vector<std::string> notes;
};

/// Asks the grounding model with the generation prompt and one image per sampled timestamp.
/// One corrective retry; an answer that still breaks A1 invariants falls back to the lexical
/// builder. Gateway failure or a second unparseable reply raises ConstructionError.
GroundingResult build_cotask1_llm(const QARecord& record, const std::vector<std::filesystem::path>& frame_files,
                                  const ReindexedAnnotation& video, const GroundingModel& model,
                                  const BuildOptions& options = {});

CoTask2Answer build_cotask2(const CoTask1Answer& a1, const ReindexedAnnotation& video);
RelationAnswer build_cotask3(const CoTask1Answer& a1, const ReindexedAnnotation& video);
RelationAnswer build_cotask4(const CoTask1Answer& a1, const CoTask2Answer& a2, const RelationAnswer& a3,
                             const ReindexedAnnotation& video);

CoTaskBundle assemble(const QARecord& record, int num_frames, CoTask1Answer a1, CoTask2Answer a2, RelationAnswer a3,
                      RelationAnswer a4, Provenance provenance);

enum class GroundingMode { star_direct, llm, lexical };

std::string_view to_string(GroundingMode m);
std::optional<GroundingMode> grounding_mode_from_string(std::string_view s);

struct BundleContext {
  GroundingMode mode = GroundingMode::star_direct;
  BuildOptions options;
  /// Required in llm mode.
  const GroundingModel* grounder = nullptr;
  /// Frame image for each sampled timestamp, in order; required in llm mode.
  std::vector<std::filesystem::path> frame_files;
};

/// Full chain for one Q0. STAR records ground directly unless the mode is lexical; NeXT-QA
/// records use the model in llm mode and the lexical builder otherwise.
CoTaskBundle build_bundle(const QARecord& record, const ReindexedAnnotation& video, const BundleContext& context);

struct CoTaskInstance {
  std::string qid;
  int task_index = 1;
  std::string question_text;
  std::string answer_json;
  std::string video_id;
  Provenance provenance = Provenance::lexical_fallback;

  bool operator==(const CoTaskInstance&) const = default;
};

Json to_json(const CoTaskInstance& instance);

struct SplitStats {
  std::string split;
  long long q0_input = 0;
  long long q0_quarantined = 0;
  long long q0_surviving = 0;
  long long instances = 0;
  std::map<std::string, long long> by_qtype;
  std::map<std::string, long long> by_provenance;
};

Json to_json(const SplitStats& stats);

/// Four instances per bundle; each question_text is the rendered CoTask-n eval prompt.
std::vector<CoTaskInstance> expand(const CoTaskBundle& bundle, const PromptKit& prompts);

struct Expansion {
  std::vector<CoTaskInstance> instances;
  SplitStats stats;
};

Expansion expand(const std::vector<CoTaskBundle>& bundles, const PromptKit& prompts, const std::string& split,
                 long long quarantined = 0);

}  // namespace cotasks
