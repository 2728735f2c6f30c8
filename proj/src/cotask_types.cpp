#include "cotasks/cotask_types.hpp"

#include <algorithm>
#include <set>

#include "cotasks/errors.hpp"

namespace cotasks {

namespace {

const Json& require(const Json& j, const char* key, const char* what) {
  if (!j.is_object()) {
    throw ParseError(what, "", "expected an object");
  }
  auto it = j.find(key);
  if (it == j.end()) {
    throw ParseError(what, "", std::string("missing field '") + key + "'");
  }
  return *it;
}

template <typename T>
T get_as(const Json& v, const char* key, const char* what) {
  try {
    return v.get<T>();
  } catch (const Json::exception&) {
    throw ParseError(what, key, "field has the wrong type");
  }
}

BBox bbox_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) {
    throw ParseError("bbox", "", "expected [x1, y1, x2, y2]");
  }
  const auto v = get_as<std::vector<int>>(j, "bbox", "bbox");
  return {v[0], v[1], v[2], v[3]};
}

}  // namespace

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::star_direct: return "star_direct";
    case Provenance::llm_grounded: return "llm_grounded";
    case Provenance::lexical_fallback: return "lexical_fallback";
  }
  return "?";
}

std::optional<Provenance> provenance_from_string(std::string_view s) {
  for (auto p : {Provenance::star_direct, Provenance::llm_grounded, Provenance::lexical_fallback}) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

Json to_json(const CoTask1Answer& a) {
  Json j;
  j["entities"] = a.entities;
  j["timestamps"] = a.timestamps;
  return j;
}

Json to_json(const FrameObjects& f) {
  Json objects = Json::array();
  for (const auto& o : f.objects) {
    Json obj;
    obj["label"] = o.label;
    obj["bbox"] = {o.bbox.x1, o.bbox.y1, o.bbox.x2, o.bbox.y2};
    objects.push_back(std::move(obj));
  }
  Json j;
  j["frame"] = f.frame;
  j["objects"] = std::move(objects);
  return j;
}

Json to_json(const CoTask2Answer& a) {
  Json j = Json::array();
  for (const auto& f : a) j.push_back(to_json(f));
  return j;
}

Json to_json(const RelationRecord& r) {
  Json j;
  j["head"] = r.head;
  j["relation"] = r.relation;
  j["tail"] = r.tail;
  j["start_frame"] = r.start_frame;
  j["end_frame"] = r.end_frame;
  return j;
}

Json to_json(const RelationAnswer& a) {
  Json j = Json::array();
  for (const auto& r : a) j.push_back(to_json(r));
  return j;
}

CoTask1Answer cotask1_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("A1", "", "expected an object");
  CoTask1Answer a;
  const Json* ents = nullptr;
  if (auto it = j.find("entities"); it != j.end()) {
    ents = &*it;
  } else if (auto legacy = j.find("objects"); legacy != j.end()) {
    ents = &*legacy;
  } else {
    throw ParseError("A1", "", "missing field 'entities'");
  }
  a.entities = get_as<std::vector<std::string>>(*ents, "entities", "A1");
  a.timestamps = get_as<std::vector<int>>(require(j, "timestamps", "A1"), "timestamps", "A1");
  return a;
}

CoTask2Answer cotask2_from_json(const Json& j) {
  if (!j.is_array()) throw ParseError("A2", "", "expected an array");
  CoTask2Answer a;
  for (const auto& f : j) {
    FrameObjects fo;
    fo.frame = get_as<int>(require(f, "frame", "A2"), "frame", "A2");
    const Json& objects = require(f, "objects", "A2");
    if (!objects.is_array()) throw ParseError("A2", "objects", "expected an array");
    for (const auto& o : objects) {
      fo.objects.push_back({get_as<std::string>(require(o, "label", "A2"), "label", "A2"),
                            bbox_from_json(require(o, "bbox", "A2"))});
    }
    a.push_back(std::move(fo));
  }
  return a;
}

RelationAnswer relations_from_json(const Json& j) {
  if (!j.is_array()) throw ParseError("relations", "", "expected an array");
  RelationAnswer a;
  for (const auto& r : j) {
    a.push_back({get_as<std::string>(require(r, "head", "relation"), "head", "relation"),
                 get_as<std::string>(require(r, "relation", "relation"), "relation", "relation"),
                 get_as<std::string>(require(r, "tail", "relation"), "tail", "relation"),
                 get_as<int>(require(r, "start_frame", "relation"), "start_frame", "relation"),
                 get_as<int>(require(r, "end_frame", "relation"), "end_frame", "relation")});
  }
  return a;
}

Json to_json(const CoTaskBundle& b) {
  Json j;
  j["qid"] = b.qid;
  j["video_id"] = b.video_id;
  j["qtype"] = to_string(b.qtype);
  j["source"] = to_string(b.source);
  j["num_frames"] = b.num_frames;
  j["q0"] = b.q0;
  j["a0"] = b.a0;
  for (int n = 0; n < 4; ++n) j["q" + std::to_string(n + 1)] = b.questions[static_cast<std::size_t>(n)];
  j["a1"] = to_json(b.a1);
  j["a2"] = to_json(b.a2);
  j["a3"] = to_json(b.a3);
  j["a4"] = to_json(b.a4);
  j["provenance"] = to_string(b.provenance);
  return j;
}

CoTaskBundle bundle_from_json(const Json& j) {
  CoTaskBundle b;
  b.qid = get_as<std::string>(require(j, "qid", "bundle"), "qid", "bundle");
  b.video_id = get_as<std::string>(require(j, "video_id", "bundle"), "video_id", "bundle");
  auto qtype = qtype_from_string(get_as<std::string>(require(j, "qtype", "bundle"), "qtype", "bundle"));
  auto source = source_from_string(get_as<std::string>(require(j, "source", "bundle"), "source", "bundle"));
  auto prov = provenance_from_string(
      get_as<std::string>(require(j, "provenance", "bundle"), "provenance", "bundle"));
  if (!qtype || !source || !prov) throw ParseError("bundle", "", "unknown qtype, source or provenance");
  b.qtype = *qtype;
  b.source = *source;
  b.provenance = *prov;
  b.num_frames = get_as<int>(require(j, "num_frames", "bundle"), "num_frames", "bundle");
  b.q0 = get_as<std::string>(require(j, "q0", "bundle"), "q0", "bundle");
  b.a0 = get_as<std::string>(require(j, "a0", "bundle"), "a0", "bundle");
  for (std::size_t n = 0; n < 4; ++n) {
    const std::string key = "q" + std::to_string(n + 1);
    b.questions[n] = get_as<std::string>(require(j, key.c_str(), "bundle"), "q", "bundle");
  }
  b.a1 = cotask1_from_json(require(j, "a1", "bundle"));
  b.a2 = cotask2_from_json(require(j, "a2", "bundle"));
  b.a3 = relations_from_json(require(j, "a3", "bundle"));
  b.a4 = relations_from_json(require(j, "a4", "bundle"));
  return b;
}

std::vector<Violation> check_cotask1(const CoTask1Answer& a1, int num_frames, const CheckOptions& options) {
  std::vector<Violation> v;
  const auto n = static_cast<int>(a1.timestamps.size());
  if (n < 1 || n > options.timestamp_cap) {
    v.push_back({"A1_BOUNDS", std::to_string(n) + " timestamps (need 1.." +
                                  std::to_string(options.timestamp_cap) + ")"});
  }
  for (std::size_t i = 0; i < a1.timestamps.size(); ++i) {
    const int t = a1.timestamps[i];
    if (t < 1 || t > num_frames) {
      v.push_back({"A1_RANGE", "timestamp " + std::to_string(t) + " outside [1, " +
                                   std::to_string(num_frames) + "]"});
    }
    if (i > 0 && a1.timestamps[i - 1] >= t) {
      v.push_back({"A1_ORDER", "timestamps not strictly increasing at index " + std::to_string(i)});
    }
  }
  if (a1.entities.empty()) v.push_back({"A1_EMPTY_ENTITIES", "no entities"});
  std::set<std::string> seen;
  for (const auto& e : a1.entities) {
    if (!is_valid_label(e)) v.push_back({"LABEL_FORMAT", "'" + e + "'"});
    if (!seen.insert(e).second) v.push_back({"A1_DUPLICATE_ENTITY", "'" + e + "'"});
    if (options.catalog != nullptr &&
        std::none_of(options.catalog->begin(), options.catalog->end(),
                     [&](const EntityRef& c) { return c.label() == e; })) {
      v.push_back({"A1_UNKNOWN_ENTITY", "'" + e + "' is not in the catalog"});
    }
  }
  return v;
}

std::vector<Violation> check_bundle(const CoTaskBundle& b, const CheckOptions& options) {
  std::vector<Violation> v = check_cotask1(b.a1, b.num_frames, options);
  const std::set<std::string> entities(b.a1.entities.begin(), b.a1.entities.end());

  std::vector<int> frames;
  for (const auto& f : b.a2) {
    frames.push_back(f.frame);
    for (const auto& o : f.objects) {
      if (!entities.contains(o.label)) {
        v.push_back({"A2_LABEL", "frame " + std::to_string(f.frame) + ": '" + o.label + "' not in A1"});
      }
      const auto& bb = o.bbox;
      if (bb.x1 < 0 || bb.y1 < 0) v.push_back({"BBOX_NEGATIVE", "frame " + std::to_string(f.frame)});
      if (bb.x1 >= bb.x2 || bb.y1 >= bb.y2) {
        v.push_back({"BBOX_DEGENERATE", "frame " + std::to_string(f.frame) + " '" + o.label + "'"});
      }
    }
  }
  if (frames != b.a1.timestamps) {
    v.push_back({"CHAIN_MISMATCH", "A2 frames differ from A1 timestamps"});
  }

  auto check_relations = [&](const RelationAnswer& rels, const char* tag) {
    for (const auto& r : rels) {
      if (!entities.contains(r.head) || !entities.contains(r.tail)) {
        v.push_back({std::string(tag) + "_ENTITY", r.head + " " + r.relation + " " + r.tail});
      }
      if (r.head == r.tail) v.push_back({std::string(tag) + "_SELF", r.head});
      if (r.start_frame < 1 || r.start_frame > r.end_frame || r.end_frame > b.num_frames) {
        v.push_back({std::string(tag) + "_SPAN", "[" + std::to_string(r.start_frame) + ", " +
                                                     std::to_string(r.end_frame) + "]"});
      }
      if (r.relation.empty()) v.push_back({std::string(tag) + "_PREDICATE", "empty relation"});
    }
  };
  check_relations(b.a3, "A3");
  check_relations(b.a4, "A4");
  return v;
}

}  // namespace cotasks
