#pragma once

// Inference under answer-injection conditions, LLM-as-judge scoring, and
// aggregation into per-question-type report tables.

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cotasks/cotask_types.hpp"
#include "cotasks/llm_gateway.hpp"
#include "cotasks/prompt_kit.hpp"

namespace cotasks {

/// Which of A1..A4 reach the final-answer prompt, or a single CoTask evaluated on its own.
struct Condition {
  std::string id;
  std::array<bool, 4> included{};
  /// 1..4 for the per-CoTask conditions cotask1..cotask4, else 0.
  int cotask = 0;

  /// baseline, ct12, ct34, ct14, cotask1..cotask4.
  static Condition parse(std::string_view id);
  bool per_cotask() const { return cotask != 0; }
};

enum class Category { causal, temporal, descriptive };

std::string_view to_string(Category c);
/// Absent for STAR questions.
std::optional<Category> category_of(QType q);

struct Prediction {
  std::string qid;
  std::string condition;
  std::string model_id;
  QType qtype = QType::CW;
  /// Q0, or Qn for a per-CoTask condition.
  std::string question;
  std::string reference;
  /// Parsed answer; typed CoTask answers are serialized as compact JSON.
  std::string text;
  /// Reply could not be parsed into the expected answer type.
  bool invalid = false;
  /// Inference itself failed (transport); the record is excluded from means.
  std::string error;
};

Json to_json(const Prediction& p);
Prediction prediction_from_json(const Json& j);

struct EvalRecord {
  std::string qid;
  std::string condition;
  std::string model_id;
  std::string prediction;
  std::string reference;
  QType qtype = QType::CW;
  std::optional<Category> category;
  /// 1..5; absent when the judge output was unusable or inference failed.
  std::optional<int> judge_score;
  bool prediction_invalid = false;
  /// Inference failed before the judge; excluded from means.
  bool inference_failed = false;
  std::string error;
};

Json to_json(const EvalRecord& r);
EvalRecord eval_record_from_json(const Json& j);

/// Maps frames for a video to image files; empty means text-only prompts.
using FrameProvider = std::function<std::vector<std::filesystem::path>(const std::string& video_id, int num_frames)>;

struct InferenceSettings {
  std::string model_id;
  double temperature = 0.0;
  int max_tokens = 512;
  int max_in_flight = 8;
  FrameProvider frames;
};

/// Final-answer prompt for `bundle` under `condition`; omitted answers lose their whole line.
std::string render_final_prompt(const PromptKit& prompts, const CoTaskBundle& bundle, const Condition& condition);

/// One prediction per bundle, in bundle order. Gateway failures are recorded per record.
std::vector<Prediction> run_condition(const std::vector<CoTaskBundle>& bundles, const Condition& condition,
                                      Gateway& gateway, const PromptKit& prompts, const InferenceSettings& settings);

struct JudgeSettings {
  std::string model_id;
  double temperature = 0.0;
  int max_tokens = 16;
  int max_in_flight = 8;
};

/// One record per prediction. Invalid predictions score 1 without a judge call; an unparseable
/// judge reply gets one corrective retry and is then left unscored.
std::vector<EvalRecord> judge(const std::vector<Prediction>& predictions, Gateway& gateway, const PromptKit& prompts,
                              const JudgeSettings& settings);

/// (s - 1) / 4 * 100.
double scaled_score(int judge_score);

struct ScoreBucket {
  long long count = 0;
  long long scored = 0;
  /// Mean scaled score over scored records.
  std::optional<double> mean;
};

struct ScoreReport {
  std::string condition;
  std::string model_id;
  std::map<std::string, ScoreBucket> per_qtype;
  std::map<std::string, ScoreBucket> per_category;
  ScoreBucket overall;
  long long invalid_judge = 0;
  long long invalid_prediction = 0;
  long long inference_errors = 0;
  /// Percentage of scored STAR records at or above the accuracy threshold.
  std::optional<double> star_accuracy;
  /// SHA-256 over the sorted qids; reports are comparable only when these agree.
  std::string qids_digest;
};

struct AggregateOptions {
  int star_threshold = 4;
};

ScoreReport aggregate(const std::vector<EvalRecord>& records, const AggregateOptions& options = {});

Json to_json(const ScoreReport& r);
ScoreReport score_report_from_json(const Json& j);

struct ComparisonTable {
  /// CW CH TP TC TN DC DL DO Avg, plus "STAR Acc." when any report has STAR records.
  std::vector<std::string> columns;
  struct Row {
    std::string condition;
    std::vector<std::optional<double>> values;
  };
  std::vector<Row> rows;
};

/// Rows in input order. Raises IntegrityError NON_COMPARABLE when qid sets differ.
ComparisonTable compare(const std::vector<ScoreReport>& reports);

Json to_json(const ComparisonTable& t);
/// Markdown-style table, one decimal, column maxima wrapped in ** **.
std::string render_text(const ComparisonTable& t);

}  // namespace cotasks
