#pragma once

// Uniform frame sampling onto a k-slot timeline (timestamps 1..k') and
// re-indexing of trajectories and relation spans onto it.

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cotasks/annotation.hpp"

namespace cotasks {

inline constexpr int kDefaultSampleCount = 64;

struct SampleMap {
  int k = kDefaultSampleCount;
  int frame_count = 0;
  /// orig_of[i] is the original fid shown at timestamp i + 1. Strictly increasing.
  std::vector<int> orig_of;

  /// k' = min(k, frame_count): number of timestamps on the sampled timeline.
  int size() const { return static_cast<int>(orig_of.size()); }

  /// Timestamp (1-based) at which `fid` was sampled, if it was.
  std::optional<int> timestamp_of(int fid) const;

  bool operator==(const SampleMap&) const = default;
};

/// orig_of[i] = floor(i * frame_count / k) when frame_count >= k, else every frame once.
SampleMap uniform_sample(int frame_count, int k = kDefaultSampleCount);

/// Sampled timestamps whose original fid lies in [begin_fid, end_fid), as (min, max).
/// Absent when the span contains no sampled frame.
std::optional<std::pair<int, int>> map_span(int begin_fid, int end_fid, const SampleMap& map);

/// One relation on the sampled timeline; the element type of CoTask 3/4 answers.
struct RelationRecord {
  std::string head;
  std::string relation;
  std::string tail;
  int start_frame = 0;
  int end_frame = 0;

  bool operator==(const RelationRecord&) const = default;
  auto operator<=>(const RelationRecord&) const = default;
};

/// Orders by (start_frame, head, relation, tail, end_frame).
bool relation_order(const RelationRecord& a, const RelationRecord& b);

struct DropReport {
  std::string video_id;
  int relations_dropped = 0;
  /// Catalog entries that had boxes before sampling and none after.
  int entities_unsampled = 0;
};

struct ReindexedAnnotation {
  std::string video_id;
  SampleMap map;
  std::optional<int> width;
  std::optional<int> height;
  std::vector<EntityRef> catalog;
  /// (tid, timestamp) -> box, values copied bit-for-bit from the source trajectories.
  std::map<std::pair<int, int>, BBox> boxes;
  std::vector<RelationRecord> spatial_relations;
  std::vector<RelationRecord> temporal_relations;
  DropReport drops;

  int num_frames() const { return map.size(); }
  const EntityRef* find_label(std::string_view label) const;
  const BBox* box(int tid, int timestamp) const;
};

/// Requires map.frame_count == annotation.frame_count.
ReindexedAnnotation reindex(const NormalizedAnnotation& annotation, const SampleMap& map);

}  // namespace cotasks
