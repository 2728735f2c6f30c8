#include "cotasks/timeline.hpp"

#include <algorithm>
#include <set>

#include "cotasks/errors.hpp"

namespace cotasks {

std::optional<int> SampleMap::timestamp_of(int fid) const {
  auto it = std::lower_bound(orig_of.begin(), orig_of.end(), fid);
  if (it == orig_of.end() || *it != fid) return std::nullopt;
  return static_cast<int>(it - orig_of.begin()) + 1;
}

SampleMap uniform_sample(int frame_count, int k) {
  if (frame_count < 1 || k < 1) {
    throw ArgumentError("uniform_sample: frame_count and k must be positive (got " +
                        std::to_string(frame_count) + ", " + std::to_string(k) + ")");
  }
  SampleMap m;
  m.k = k;
  m.frame_count = frame_count;
  if (frame_count < k) {
    m.orig_of.resize(static_cast<std::size_t>(frame_count));
    for (int i = 0; i < frame_count; ++i) m.orig_of[static_cast<std::size_t>(i)] = i;
    return m;
  }
  m.orig_of.resize(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    m.orig_of[static_cast<std::size_t>(i)] =
        static_cast<int>(static_cast<long long>(i) * frame_count / k);
  }
  return m;
}

std::optional<std::pair<int, int>> map_span(int begin_fid, int end_fid, const SampleMap& map) {
  if (begin_fid < 0 || begin_fid >= end_fid || end_fid > map.frame_count) {
    throw ArgumentError("map_span: need 0 <= begin < end <= frame_count (got [" +
                        std::to_string(begin_fid) + ", " + std::to_string(end_fid) + ") with frame_count " +
                        std::to_string(map.frame_count) + ")");
  }
  const auto lo = std::lower_bound(map.orig_of.begin(), map.orig_of.end(), begin_fid);
  const auto hi = std::lower_bound(lo, map.orig_of.end(), end_fid);
  if (lo == hi) return std::nullopt;
  const int first = static_cast<int>(lo - map.orig_of.begin()) + 1;
  const int last = static_cast<int>(hi - map.orig_of.begin());
  return std::pair{first, last};
}

bool relation_order(const RelationRecord& a, const RelationRecord& b) {
  return std::tie(a.start_frame, a.head, a.relation, a.tail, a.end_frame) <
         std::tie(b.start_frame, b.head, b.relation, b.tail, b.end_frame);
}

const EntityRef* ReindexedAnnotation::find_label(std::string_view label) const {
  for (const auto& e : catalog) {
    if (e.label() == label) return &e;
  }
  return nullptr;
}

const BBox* ReindexedAnnotation::box(int tid, int timestamp) const {
  auto it = boxes.find({tid, timestamp});
  return it == boxes.end() ? nullptr : &it->second;
}

ReindexedAnnotation reindex(const NormalizedAnnotation& annotation, const SampleMap& map) {
  if (map.frame_count != annotation.frame_count) {
    throw ArgumentError("reindex: sample map covers " + std::to_string(map.frame_count) +
                        " frames but video '" + annotation.video_id + "' has " +
                        std::to_string(annotation.frame_count));
  }
  ReindexedAnnotation out;
  out.video_id = annotation.video_id;
  out.map = map;
  out.width = annotation.width;
  out.height = annotation.height;
  out.catalog = annotation.catalog;
  out.drops.video_id = annotation.video_id;

  std::set<int> had_boxes;
  std::set<int> has_boxes;
  for (const auto& [key, box] : annotation.trajectories) {
    had_boxes.insert(key.first);
    if (auto t = map.timestamp_of(key.second)) {
      out.boxes.emplace(std::pair{key.first, *t}, box);
      has_boxes.insert(key.first);
    }
  }
  out.drops.entities_unsampled = static_cast<int>(had_boxes.size() - has_boxes.size());

  for (const auto& rel : annotation.relations) {
    const EntityRef* head = annotation.find(rel.head_tid);
    const EntityRef* tail = annotation.find(rel.tail_tid);
    auto span = map_span(rel.begin_fid, rel.end_fid, map);
    if (!span || head == nullptr || tail == nullptr) {
      ++out.drops.relations_dropped;
      continue;
    }
    RelationRecord rec{head->label(), rel.predicate, tail->label(), span->first, span->second};
    (rel.kind == RelationKind::spatial ? out.spatial_relations : out.temporal_relations)
        .push_back(std::move(rec));
  }
  return out;
}

}  // namespace cotasks
