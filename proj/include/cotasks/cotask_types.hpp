#pragma once

// Answer types for the four CoTasks and the bundle that chains them to Q0.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotasks/annotation.hpp"
#include "cotasks/json.hpp"
#include "cotasks/timeline.hpp"

namespace cotasks {

inline constexpr int kDefaultTimestampCap = 16;

/// Wording of Q1..Q4 as asked in the per-CoTask prompts.
inline constexpr std::array<std::string_view, 4> kCoTaskQuestions = {
    "Ground entities and identify frames matching context in the target question.",
    "Get object locations (bounding boxes) in frames listed in A1.",
    "Infer spatial relations between objects in frames of A1 and A2.",
    "Identify actions among entities using spatial and temporal cues from A1–A3.",
};

/// A1: grounded entity labels and 1-based timestamps (strictly increasing, 1..16 of them).
struct CoTask1Answer {
  std::vector<std::string> entities;
  std::vector<int> timestamps;

  bool operator==(const CoTask1Answer&) const = default;
};

struct LabeledBox {
  std::string label;
  BBox bbox;

  bool operator==(const LabeledBox&) const = default;
};

struct FrameObjects {
  int frame = 0;
  std::vector<LabeledBox> objects;

  bool operator==(const FrameObjects&) const = default;
};

/// A2: one record per A1 timestamp.
using CoTask2Answer = std::vector<FrameObjects>;

/// A3 (spatial) and A4 (temporal).
using RelationAnswer = std::vector<RelationRecord>;

enum class Provenance { star_direct, llm_grounded, lexical_fallback };

std::string_view to_string(Provenance p);
std::optional<Provenance> provenance_from_string(std::string_view s);

struct CoTaskBundle {
  std::string qid;
  std::string video_id;
  QType qtype = QType::CW;
  Source source = Source::nextqa;
  /// k' of the video's sampled timeline.
  int num_frames = 0;
  std::string q0;
  std::string a0;
  std::array<std::string, 4> questions;  // Q1..Q4
  CoTask1Answer a1;
  CoTask2Answer a2;
  RelationAnswer a3;
  RelationAnswer a4;
  Provenance provenance = Provenance::lexical_fallback;

  bool operator==(const CoTaskBundle&) const = default;
};

Json to_json(const CoTask1Answer& a);
Json to_json(const FrameObjects& f);
Json to_json(const CoTask2Answer& a);
Json to_json(const RelationRecord& r);
Json to_json(const RelationAnswer& a);
Json to_json(const CoTaskBundle& b);

/// Accepts the `entities` key and the legacy `objects` key.
CoTask1Answer cotask1_from_json(const Json& j);
CoTask2Answer cotask2_from_json(const Json& j);
RelationAnswer relations_from_json(const Json& j);
CoTaskBundle bundle_from_json(const Json& j);

struct CheckOptions {
  int timestamp_cap = kDefaultTimestampCap;
  /// When set, entities must resolve to this catalog.
  const std::vector<EntityRef>* catalog = nullptr;
};

/// A1 invariants against a timeline of `num_frames` timestamps.
std::vector<Violation> check_cotask1(const CoTask1Answer& a1, int num_frames, const CheckOptions& options = {});

/// Every cross-reference of the chain: A1 bounds, A2 frames == A1 timestamps, A2/A3/A4
/// labels within A1 entities, box validity, relation spans on the timeline.
std::vector<Violation> check_bundle(const CoTaskBundle& bundle, const CheckOptions& options = {});

}  // namespace cotasks
