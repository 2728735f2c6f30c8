#pragma once

// Normalized object-centric annotation schema shared by the VidOR and STAR adapters.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cotasks/json.hpp"
#include "cotasks/vocabulary.hpp"

namespace cotasks {

inline constexpr int kNormalizedSchemaVersion = 1;

struct BBox {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;

  bool operator==(const BBox&) const = default;
};

struct EntityRef {
  int tid = 0;
  std::string category;

  /// "{tid}_{category}", e.g. "3_handbag".
  std::string label() const { return std::to_string(tid) + "_" + category; }

  bool operator==(const EntityRef&) const = default;
};

/// Half-open span [begin_fid, end_fid) over original frame indices.
struct RelationInstance {
  int head_tid = 0;
  int tail_tid = 0;
  std::string predicate;
  int begin_fid = 0;
  int end_fid = 0;
  RelationKind kind = RelationKind::spatial;

  bool operator==(const RelationInstance&) const = default;
};

/// Key of one trajectory box: (tid, original fid).
using TrajectoryKey = std::pair<int, int>;

struct NormalizedAnnotation {
  std::string video_id;
  int frame_count = 0;
  std::optional<int> width;
  std::optional<int> height;
  std::vector<EntityRef> catalog;
  std::map<TrajectoryKey, BBox> trajectories;
  std::vector<RelationInstance> relations;

  const EntityRef* find(int tid) const;

  bool operator==(const NormalizedAnnotation&) const = default;
};

enum class QType { CW, CH, TP, TC, TN, DC, DL, DO, STAR };
enum class Source { nextqa, star };

std::string_view to_string(QType q);
std::optional<QType> qtype_from_string(std::string_view s);
std::string_view to_string(Source s);
std::optional<Source> source_from_string(std::string_view s);

/// The eight NeXT-QA question-type codes, in report column order.
inline constexpr QType kNextQaTypes[] = {QType::CW, QType::CH, QType::TP, QType::TC,
                                         QType::TN, QType::DC, QType::DL, QType::DO};

struct QARecord {
  std::string qid;
  std::string video_id;
  std::string question;
  std::string answer;
  QType qtype = QType::CW;
  Source source = Source::nextqa;
  std::optional<std::vector<std::string>> mc_options;
  /// Index of the correct option when the source marks it by position.
  std::optional<int> answer_index;
  /// STAR only: original fids of the question's situation keyframes (ascending).
  std::vector<int> keyframes;
  /// STAR only: tids referenced by the question's situation graph (ascending).
  std::vector<int> situation_tids;

  bool operator==(const QARecord&) const = default;
};

/// One invariant violation. `code` is machine-readable (e.g. BBOX_DEGENERATE).
struct Violation {
  std::string code;
  std::string detail;

  bool operator==(const Violation&) const = default;
};

enum class ParseMode { strict, lenient };

struct ParseOptions {
  ParseMode mode = ParseMode::lenient;
  const PredicateVocabulary* vocabulary = nullptr;  // nullptr: built-in defaults
};

/// Result of ingesting one source document. In lenient mode `quarantined` lists
/// every record that was dropped instead of aborting the parse.
struct ParsedVideo {
  NormalizedAnnotation annotation;
  std::vector<QARecord> questions;
  std::vector<Violation> quarantined;
};

ParsedVideo parse_vidor(const std::filesystem::path& path, const ParseOptions& options = {});
ParsedVideo parse_vidor_json(const Json& doc, const std::string& origin,
                             const ParseOptions& options = {});

ParsedVideo parse_star(const std::filesystem::path& path, const ParseOptions& options = {});
ParsedVideo parse_star_json(const Json& doc, const std::string& origin,
                            const ParseOptions& options = {});

struct ParsedQuestions {
  std::vector<QARecord> records;
  std::vector<Violation> quarantined;
};

/// NeXT-QA csv (video,frame_count,width,height,question,answer,qid,type,a0..a4).
/// The open-ended answer is the text of the correct option.
ParsedQuestions parse_nextqa_csv(const std::filesystem::path& path, const ParseOptions& options = {});

/// Lists every invariant violation; empty iff the annotation is valid.
std::vector<Violation> validate(const NormalizedAnnotation& annotation,
                                const PredicateVocabulary* vocabulary = nullptr);

/// Lowercases and maps every run of non-letters to a single underscore ("cup/glass" -> "cup_glass").
std::string normalize_category(std::string_view raw);

bool is_valid_label(std::string_view label);

Json to_json(const NormalizedAnnotation& annotation);
NormalizedAnnotation annotation_from_json(const Json& j);
Json to_json(const QARecord& record);
QARecord qarecord_from_json(const Json& j);

}  // namespace cotasks
