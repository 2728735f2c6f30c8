#include "cotasks/annotation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "cotasks/errors.hpp"

namespace cotasks {

namespace {

const PredicateVocabulary& vocabulary_or_default(const PredicateVocabulary* v) {
  static const PredicateVocabulary kDefaults = PredicateVocabulary::defaults();
  return v != nullptr ? *v : kDefaults;
}

// Routes each violation either to an exception (strict) or the quarantine list (lenient).
class IssueSink {
 public:
  IssueSink(ParseMode mode, std::string origin, std::vector<Violation>& out)
      : mode_(mode), origin_(std::move(origin)), out_(out) {}

  void report(const std::string& code, const std::string& detail) {
    if (mode_ == ParseMode::strict) {
      throw IntegrityError(code, origin_ + ": " + detail);
    }
    out_.push_back({code, detail});
  }

 private:
  ParseMode mode_;
  std::string origin_;
  std::vector<Violation>& out_;
};

// Typed field access that reports malformed documents with a JSON-pointer location.
class DocReader {
 public:
  explicit DocReader(std::string origin) : origin_(std::move(origin)) {}

  [[noreturn]] void fail(const std::string& where, const std::string& what) const {
    throw ParseError(origin_, where, what);
  }

  const Json& field(const Json& obj, const char* key, const std::string& where) const {
    if (!obj.is_object()) fail(where, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(where, std::string("missing field '") + key + "'");
    return *it;
  }

  const Json* optional_field(const Json& obj, const char* key) const {
    auto it = obj.find(key);
    return (it == obj.end() || it->is_null()) ? nullptr : &*it;
  }

  int as_int(const Json& v, const std::string& where) const {
    if (v.is_number_integer()) return v.get<int>();
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (std::isfinite(d)) return static_cast<int>(std::lround(d));
    }
    fail(where, "expected an integer");
  }

  std::string as_string(const Json& v, const std::string& where) const {
    if (!v.is_string()) fail(where, "expected a string");
    return v.get<std::string>();
  }

  const Json& as_array(const Json& v, const std::string& where) const {
    if (!v.is_array()) fail(where, "expected an array");
    return v;
  }

  BBox as_bbox(const Json& v, const std::string& where) const {
    if (v.is_array()) {
      if (v.size() != 4) fail(where, "bbox must have 4 coordinates");
      return {as_int(v[0], where + "/0"), as_int(v[1], where + "/1"), as_int(v[2], where + "/2"),
              as_int(v[3], where + "/3")};
    }
    if (v.is_object()) {
      return {as_int(field(v, "xmin", where), where + "/xmin"),
              as_int(field(v, "ymin", where), where + "/ymin"),
              as_int(field(v, "xmax", where), where + "/xmax"),
              as_int(field(v, "ymax", where), where + "/ymax")};
    }
    fail(where, "expected a bbox array or {xmin,ymin,xmax,ymax} object");
  }

 private:
  std::string origin_;
};

Json parse_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ParseError(path.string(), "", "cannot open file");
  }
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string(), "byte " + std::to_string(e.byte), e.what());
  }
}

// Returns the violation code for a box, or an empty string when valid.
std::string bbox_problem(const BBox& b, std::optional<int> width, std::optional<int> height) {
  if (b.x1 < 0 || b.y1 < 0 || b.x2 < 0 || b.y2 < 0) return "BBOX_NEGATIVE";
  if (b.x1 >= b.x2 || b.y1 >= b.y2) return "BBOX_DEGENERATE";
  if ((width && b.x2 > *width) || (height && b.y2 > *height)) return "BBOX_OUT_OF_FRAME";
  return {};
}

std::string describe(const BBox& b) {
  std::ostringstream ss;
  ss << "[" << b.x1 << ", " << b.y1 << ", " << b.x2 << ", " << b.y2 << "]";
  return ss.str();
}

std::optional<int> optional_dimension(const DocReader& reader, const Json& doc, const char* key) {
  const Json* v = reader.optional_field(doc, key);
  if (v == nullptr) return std::nullopt;
  const int value = reader.as_int(*v, std::string("/") + key);
  if (value <= 0) reader.fail(std::string("/") + key, "must be positive");
  return value;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

const EntityRef* NormalizedAnnotation::find(int tid) const {
  for (const auto& e : catalog) {
    if (e.tid == tid) return &e;
  }
  return nullptr;
}

std::string_view to_string(QType q) {
  switch (q) {
    case QType::CW: return "CW";
    case QType::CH: return "CH";
    case QType::TP: return "TP";
    case QType::TC: return "TC";
    case QType::TN: return "TN";
    case QType::DC: return "DC";
    case QType::DL: return "DL";
    case QType::DO: return "DO";
    case QType::STAR: return "STAR";
  }
  return "?";
}

std::optional<QType> qtype_from_string(std::string_view s) {
  for (QType q : {QType::CW, QType::CH, QType::TP, QType::TC, QType::TN, QType::DC, QType::DL,
                  QType::DO, QType::STAR}) {
    if (to_string(q) == s) return q;
  }
  return std::nullopt;
}

std::string_view to_string(Source s) { return s == Source::nextqa ? "nextqa" : "star"; }

std::optional<Source> source_from_string(std::string_view s) {
  if (s == "nextqa") return Source::nextqa;
  if (s == "star") return Source::star;
  return std::nullopt;
}

std::string normalize_category(std::string_view raw) {
  std::string out;
  bool pending_sep = false;
  for (char c : raw) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalpha(uc)) {
      if (pending_sep && !out.empty()) out.push_back('_');
      pending_sep = false;
      out.push_back(static_cast<char>(std::tolower(uc)));
    } else {
      pending_sep = true;
    }
  }
  return out;
}

bool is_valid_label(std::string_view label) {
  const auto us = label.find('_');
  if (us == std::string_view::npos || us == 0 || us + 1 == label.size()) return false;
  for (std::size_t i = 0; i < us; ++i) {
    if (!std::isdigit(static_cast<unsigned char>(label[i]))) return false;
  }
  for (std::size_t i = us + 1; i < label.size(); ++i) {
    const char c = label[i];
    if (!((c >= 'a' && c <= 'z') || c == '_')) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// VidOR

ParsedVideo parse_vidor_json(const Json& doc, const std::string& origin, const ParseOptions& options) {
  const DocReader r(origin);
  const auto& vocab = vocabulary_or_default(options.vocabulary);
  ParsedVideo out;
  IssueSink sink(options.mode, origin, out.quarantined);
  auto& ann = out.annotation;

  if (!doc.is_object()) r.fail("", "expected a JSON object");
  ann.video_id = r.as_string(r.field(doc, "video_id", ""), "/video_id");
  ann.frame_count = r.as_int(r.field(doc, "frame_count", ""), "/frame_count");
  if (ann.frame_count <= 0) {
    throw IntegrityError("FRAME_COUNT", origin + ": frame_count must be positive");
  }
  ann.width = optional_dimension(r, doc, "width");
  ann.height = optional_dimension(r, doc, "height");

  const auto& entities = r.as_array(r.field(doc, "subject/objects", ""), "/subject~1objects");
  std::set<int> declared;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const std::string where = "/subject~1objects/" + std::to_string(i);
    const int tid = r.as_int(r.field(entities[i], "tid", where), where + "/tid");
    const std::string raw = r.as_string(r.field(entities[i], "category", where), where + "/category");
    const std::string category = normalize_category(raw);
    if (tid < 0) {
      sink.report("TID_NEGATIVE", where + ": tid " + std::to_string(tid));
      continue;
    }
    if (category.empty()) {
      sink.report("CATEGORY_FORMAT", where + ": category '" + raw + "'");
      continue;
    }
    if (!declared.insert(tid).second) {
      sink.report("DUPLICATE_TID", where + ": tid " + std::to_string(tid) + " declared twice");
      continue;
    }
    ann.catalog.push_back({tid, category});
  }
  std::sort(ann.catalog.begin(), ann.catalog.end(),
            [](const EntityRef& a, const EntityRef& b) { return a.tid < b.tid; });

  const auto& frames = r.as_array(r.field(doc, "trajectories", ""), "/trajectories");
  for (std::size_t fid = 0; fid < frames.size(); ++fid) {
    const std::string fwhere = "/trajectories/" + std::to_string(fid);
    const auto& boxes = r.as_array(frames[fid], fwhere);
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      const std::string where = fwhere + "/" + std::to_string(j);
      const int tid = r.as_int(r.field(boxes[j], "tid", where), where + "/tid");
      const BBox box = r.as_bbox(r.field(boxes[j], "bbox", where), where + "/bbox");
      if (static_cast<int>(fid) >= ann.frame_count) {
        sink.report("TRAJ_FID_RANGE", where + ": fid " + std::to_string(fid) +
                                          " outside [0, " + std::to_string(ann.frame_count) + ")");
        continue;
      }
      if (!declared.contains(tid)) {
        sink.report("UNKNOWN_TID", where + ": tid " + std::to_string(tid) + " is not declared");
        continue;
      }
      if (auto code = bbox_problem(box, ann.width, ann.height); !code.empty()) {
        sink.report(code, where + ": bbox " + describe(box));
        continue;
      }
      if (!ann.trajectories.emplace(TrajectoryKey{tid, static_cast<int>(fid)}, box).second) {
        sink.report("DUPLICATE_BOX", where + ": tid " + std::to_string(tid) + " boxed twice");
      }
    }
  }

  const auto& rels = r.as_array(r.field(doc, "relation_instances", ""), "/relation_instances");
  for (std::size_t i = 0; i < rels.size(); ++i) {
    const std::string where = "/relation_instances/" + std::to_string(i);
    RelationInstance rel;
    rel.head_tid = r.as_int(r.field(rels[i], "subject_tid", where), where + "/subject_tid");
    rel.tail_tid = r.as_int(r.field(rels[i], "object_tid", where), where + "/object_tid");
    rel.predicate = r.as_string(r.field(rels[i], "predicate", where), where + "/predicate");
    rel.begin_fid = r.as_int(r.field(rels[i], "begin_fid", where), where + "/begin_fid");
    rel.end_fid = r.as_int(r.field(rels[i], "end_fid", where), where + "/end_fid");
    if (!declared.contains(rel.head_tid) || !declared.contains(rel.tail_tid)) {
      sink.report("UNKNOWN_TID", where + ": relation references an undeclared tid");
      continue;
    }
    if (rel.head_tid == rel.tail_tid) {
      sink.report("REL_SELF", where + ": head and tail are both tid " + std::to_string(rel.head_tid));
      continue;
    }
    if (rel.predicate.empty()) {
      sink.report("PREDICATE_EMPTY", where);
      continue;
    }
    if (rel.begin_fid >= rel.end_fid) {
      sink.report("SPAN_EMPTY", where + ": [" + std::to_string(rel.begin_fid) + ", " +
                                    std::to_string(rel.end_fid) + ")");
      continue;
    }
    if (rel.begin_fid < 0 || rel.end_fid > ann.frame_count) {
      sink.report("SPAN_RANGE", where + ": span exceeds [0, " + std::to_string(ann.frame_count) + ")");
      continue;
    }
    auto kind = vocab.kind_of(rel.predicate);
    if (!kind) {
      sink.report("UNKNOWN_PREDICATE", where + ": unknown predicate '" + rel.predicate + "'");
      continue;
    }
    rel.kind = *kind;
    ann.relations.push_back(std::move(rel));
  }
  return out;
}

ParsedVideo parse_vidor(const std::filesystem::path& path, const ParseOptions& options) {
  return parse_vidor_json(parse_document(path), path.string(), options);
}

// ---------------------------------------------------------------------------
// STAR
//
// One document per video:
//   {"video_id", "frame_count"?, "width"?, "height"?,
//    "persons": [{"id", "category"}], "objects": [{"id", "category"}],
//    "questions": [{"question_id", "question", "choices", "answer",
//                   "situations": {"<fid>": {"bbox", "bbox_labels", "rel_pairs", "rel_labels"}}}]}
// Entities get tids in declaration order, persons first. A relation that holds on
// consecutive keyframes of the video becomes one span [first, last + 1).

ParsedVideo parse_star_json(const Json& doc, const std::string& origin, const ParseOptions& options) {
  const DocReader r(origin);
  const auto& vocab = vocabulary_or_default(options.vocabulary);
  ParsedVideo out;
  IssueSink sink(options.mode, origin, out.quarantined);
  auto& ann = out.annotation;

  if (!doc.is_object()) r.fail("", "expected a JSON object");
  ann.video_id = r.as_string(r.field(doc, "video_id", ""), "/video_id");
  std::optional<int> declared_frames;
  if (const Json* fc = r.optional_field(doc, "frame_count")) {
    declared_frames = r.as_int(*fc, "/frame_count");
    if (*declared_frames <= 0) {
      throw IntegrityError("FRAME_COUNT", origin + ": frame_count must be positive");
    }
  }
  ann.width = optional_dimension(r, doc, "width");
  ann.height = optional_dimension(r, doc, "height");

  std::map<std::string, int> tid_of;
  for (const char* group : {"persons", "objects"}) {
    const Json* arr = r.optional_field(doc, group);
    if (arr == nullptr) continue;
    r.as_array(*arr, std::string("/") + group);
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const std::string where = std::string("/") + group + "/" + std::to_string(i);
      const std::string id = r.as_string(r.field((*arr)[i], "id", where), where + "/id");
      const std::string raw = r.as_string(r.field((*arr)[i], "category", where), where + "/category");
      const std::string category = normalize_category(raw);
      if (category.empty()) {
        sink.report("CATEGORY_FORMAT", where + ": category '" + raw + "'");
        continue;
      }
      if (tid_of.contains(id)) {
        sink.report("DUPLICATE_TID", where + ": id '" + id + "' declared twice");
        continue;
      }
      const int tid = static_cast<int>(ann.catalog.size());
      tid_of.emplace(id, tid);
      ann.catalog.push_back({tid, category});
    }
  }

  struct PendingRelation {
    int head;
    int tail;
    std::string predicate;
  };
  std::map<std::tuple<int, std::string, int>, std::set<int>> relation_fids;
  std::set<int> all_keyframes;

  const auto& questions = r.as_array(r.field(doc, "questions", ""), "/questions");
  for (std::size_t qi = 0; qi < questions.size(); ++qi) {
    const std::string qwhere = "/questions/" + std::to_string(qi);
    const Json& q = questions[qi];
    QARecord rec;
    rec.source = Source::star;
    rec.qtype = QType::STAR;
    rec.video_id = ann.video_id;
    rec.qid = r.as_string(r.field(q, "question_id", qwhere), qwhere + "/question_id");
    rec.question = r.as_string(r.field(q, "question", qwhere), qwhere + "/question");

    std::vector<std::string> options_text;
    const auto& choices = r.as_array(r.field(q, "choices", qwhere), qwhere + "/choices");
    for (std::size_t c = 0; c < choices.size(); ++c) {
      const std::string cwhere = qwhere + "/choices/" + std::to_string(c);
      if (choices[c].is_object()) {
        options_text.push_back(r.as_string(r.field(choices[c], "choice", cwhere), cwhere + "/choice"));
      } else {
        options_text.push_back(r.as_string(choices[c], cwhere));
      }
    }
    rec.mc_options = options_text;

    const Json& answer = r.field(q, "answer", qwhere);
    bool answer_ok = true;
    if (answer.is_number_integer()) {
      const int idx = answer.get<int>();
      if (idx < 0 || idx >= static_cast<int>(options_text.size())) {
        sink.report("ANSWER_INDEX", qwhere + ": answer index " + std::to_string(idx) + " out of range");
        answer_ok = false;
      } else {
        rec.answer_index = idx;
        rec.answer = options_text[static_cast<std::size_t>(idx)];
      }
    } else {
      rec.answer = r.as_string(answer, qwhere + "/answer");
      auto it = std::find(options_text.begin(), options_text.end(), rec.answer);
      if (it == options_text.end()) {
        sink.report("ANSWER_NOT_IN_CHOICES",
                    qwhere + ": answer '" + rec.answer + "' is not among the choices");
        answer_ok = false;
      } else {
        rec.answer_index = static_cast<int>(it - options_text.begin());
      }
    }

    std::set<int> keyframes;
    std::set<int> tids;
    std::vector<std::pair<int, PendingRelation>> question_relations;
    const Json* situations = r.optional_field(q, "situations");
    if (situations != nullptr) {
      if (!situations->is_object()) r.fail(qwhere + "/situations", "expected an object keyed by frame id");
      for (const auto& [key, sit] : situations->items()) {
        const std::string swhere = qwhere + "/situations/" + key;
        int fid = 0;
        try {
          std::size_t used = 0;
          fid = std::stoi(key, &used);
          if (used != key.size() || fid < 0) throw std::invalid_argument(key);
        } catch (const std::exception&) {
          r.fail(swhere, "situation key '" + key + "' is not a frame index");
        }
        if (declared_frames && fid >= *declared_frames) {
          sink.report("TRAJ_FID_RANGE", swhere + ": keyframe " + std::to_string(fid) +
                                            " outside [0, " + std::to_string(*declared_frames) + ")");
          continue;
        }
        keyframes.insert(fid);

        const Json empty = Json::array();
        const Json* boxes = r.optional_field(sit, "bbox");
        const Json* labels = r.optional_field(sit, "bbox_labels");
        const Json& box_arr = boxes ? r.as_array(*boxes, swhere + "/bbox") : empty;
        const Json& label_arr = labels ? r.as_array(*labels, swhere + "/bbox_labels") : empty;
        if (box_arr.size() != label_arr.size()) {
          r.fail(swhere, "bbox and bbox_labels lengths differ");
        }
        for (std::size_t b = 0; b < box_arr.size(); ++b) {
          const std::string bwhere = swhere + "/bbox/" + std::to_string(b);
          const std::string id = r.as_string(label_arr[b], swhere + "/bbox_labels/" + std::to_string(b));
          const BBox box = r.as_bbox(box_arr[b], bwhere);
          auto it = tid_of.find(id);
          if (it == tid_of.end()) {
            sink.report("UNKNOWN_TID", bwhere + ": entity '" + id + "' is not declared");
            continue;
          }
          if (auto code = bbox_problem(box, ann.width, ann.height); !code.empty()) {
            sink.report(code, bwhere + ": bbox " + describe(box));
            continue;
          }
          tids.insert(it->second);
          auto [pos, inserted] = ann.trajectories.emplace(TrajectoryKey{it->second, fid}, box);
          if (!inserted && pos->second != box) {
            sink.report("BBOX_CONFLICT", bwhere + ": entity '" + id + "' has two boxes at frame " +
                                             std::to_string(fid));
          }
        }

        const Json* pairs = r.optional_field(sit, "rel_pairs");
        const Json* rel_labels = r.optional_field(sit, "rel_labels");
        const Json& pair_arr = pairs ? r.as_array(*pairs, swhere + "/rel_pairs") : empty;
        const Json& rlabel_arr = rel_labels ? r.as_array(*rel_labels, swhere + "/rel_labels") : empty;
        if (pair_arr.size() != rlabel_arr.size()) {
          r.fail(swhere, "rel_pairs and rel_labels lengths differ");
        }
        for (std::size_t p = 0; p < pair_arr.size(); ++p) {
          const std::string pwhere = swhere + "/rel_pairs/" + std::to_string(p);
          const auto& pr = r.as_array(pair_arr[p], pwhere);
          if (pr.size() != 2) r.fail(pwhere, "relationship pair must have 2 entries");
          const std::string head_id = r.as_string(pr[0], pwhere + "/0");
          const std::string tail_id = r.as_string(pr[1], pwhere + "/1");
          const std::string predicate =
              r.as_string(rlabel_arr[p], swhere + "/rel_labels/" + std::to_string(p));
          auto h = tid_of.find(head_id);
          auto t = tid_of.find(tail_id);
          if (h == tid_of.end() || t == tid_of.end()) {
            sink.report("UNKNOWN_TID", pwhere + ": relationship references an undeclared entity");
            continue;
          }
          if (h->second == t->second) {
            sink.report("REL_SELF", pwhere + ": head and tail are both '" + head_id + "'");
            continue;
          }
          if (predicate.empty()) {
            sink.report("PREDICATE_EMPTY", pwhere);
            continue;
          }
          if (!vocab.kind_of(predicate)) {
            sink.report("UNKNOWN_PREDICATE", pwhere + ": unknown predicate '" + predicate + "'");
            continue;
          }
          tids.insert(h->second);
          tids.insert(t->second);
          question_relations.push_back({fid, {h->second, t->second, predicate}});
        }
      }
    }

    // Relations and boxes describe the video even when the question itself is dropped.
    for (const auto& [fid, rel] : question_relations) {
      relation_fids[{rel.head, rel.predicate, rel.tail}].insert(fid);
    }
    all_keyframes.insert(keyframes.begin(), keyframes.end());
    if (!answer_ok) continue;
    rec.keyframes.assign(keyframes.begin(), keyframes.end());
    rec.situation_tids.assign(tids.begin(), tids.end());
    out.questions.push_back(std::move(rec));
  }

  ann.frame_count = declared_frames.value_or(all_keyframes.empty() ? 1 : *all_keyframes.rbegin() + 1);

  const std::vector<int> ordered(all_keyframes.begin(), all_keyframes.end());
  auto position = [&](int fid) {
    return std::lower_bound(ordered.begin(), ordered.end(), fid) - ordered.begin();
  };
  for (const auto& [key, fids] : relation_fids) {
    const auto& [head, predicate, tail] = key;
    const RelationKind kind = *vocab.kind_of(predicate);
    auto it = fids.begin();
    while (it != fids.end()) {
      const int first = *it;
      int last = first;
      auto next = std::next(it);
      while (next != fids.end() && position(*next) == position(last) + 1) {
        last = *next;
        ++next;
      }
      ann.relations.push_back({head, tail, predicate, first, last + 1, kind});
      it = next;
    }
  }
  std::sort(ann.relations.begin(), ann.relations.end(), [](const auto& a, const auto& b) {
    return std::tie(a.begin_fid, a.end_fid, a.head_tid, a.tail_tid, a.predicate) <
           std::tie(b.begin_fid, b.end_fid, b.head_tid, b.tail_tid, b.predicate);
  });
  return out;
}

ParsedVideo parse_star(const std::filesystem::path& path, const ParseOptions& options) {
  return parse_star_json(parse_document(path), path.string(), options);
}

// ---------------------------------------------------------------------------
// NeXT-QA csv

namespace {

// RFC 4180 record reader: quoted fields, doubled quotes, embedded newlines.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields, int& lineno) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c = 0;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++lineno;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      ++lineno;
      fields.push_back(std::move(field));
      return true;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

}  // namespace

ParsedQuestions parse_nextqa_csv(const std::filesystem::path& path, const ParseOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError(path.string(), "", "cannot open file");
  }
  ParsedQuestions out;
  IssueSink sink(options.mode, path.string(), out.quarantined);
  std::vector<std::string> header;
  int lineno = 0;
  if (!read_csv_record(in, header, lineno)) {
    throw ParseError(path.string(), "line 1", "missing header");
  }
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
  for (const char* required : {"video", "question", "answer", "qid", "type", "a0", "a1", "a2", "a3", "a4"}) {
    if (!col.contains(required)) {
      throw ParseError(path.string(), "line 1", std::string("missing column '") + required + "'");
    }
  }

  std::vector<std::string> row;
  while (true) {
    const int row_line = lineno + 1;
    if (!read_csv_record(in, row, lineno)) break;
    if (row.size() == 1 && trim(row[0]).empty()) continue;
    const std::string where = "line " + std::to_string(row_line);
    if (row.size() < header.size()) {
      throw ParseError(path.string(), where, "expected " + std::to_string(header.size()) + " fields");
    }
    auto get = [&](const char* name) { return trim(row[col.at(name)]); };
    QARecord rec;
    rec.source = Source::nextqa;
    rec.video_id = get("video");
    rec.qid = rec.video_id + "_" + get("qid");
    rec.question = get("question");
    auto qtype = qtype_from_string(get("type"));
    if (!qtype || *qtype == QType::STAR) {
      sink.report("QTYPE", where + ": unknown NeXT-QA question type '" + get("type") + "'");
      continue;
    }
    rec.qtype = *qtype;
    int idx = -1;
    try {
      idx = std::stoi(get("answer"));
    } catch (const std::exception&) {
      idx = -1;
    }
    if (idx < 0 || idx > 4) {
      sink.report("ANSWER_INDEX", where + ": answer index '" + get("answer") + "' out of range");
      continue;
    }
    rec.answer = get(("a" + std::to_string(idx)).c_str());
    if (rec.answer.empty()) {
      sink.report("ANSWER_EMPTY", where + ": correct option is empty");
      continue;
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation

std::vector<Violation> validate(const NormalizedAnnotation& a, const PredicateVocabulary* vocabulary) {
  std::vector<Violation> v;
  if (a.frame_count <= 0) v.push_back({"FRAME_COUNT", "frame_count must be positive"});
  if ((a.width && *a.width <= 0) || (a.height && *a.height <= 0)) {
    v.push_back({"DIMENSION", "width/height must be positive"});
  }
  std::set<int> tids;
  for (const auto& e : a.catalog) {
    if (e.tid < 0) v.push_back({"TID_NEGATIVE", "tid " + std::to_string(e.tid)});
    if (!tids.insert(e.tid).second) v.push_back({"DUPLICATE_TID", "tid " + std::to_string(e.tid)});
    if (!is_valid_label(e.label())) v.push_back({"CATEGORY_FORMAT", "label '" + e.label() + "'"});
  }
  for (const auto& [key, box] : a.trajectories) {
    const auto& [tid, fid] = key;
    const std::string where = "box (" + std::to_string(tid) + ", " + std::to_string(fid) + ")";
    if (!tids.contains(tid)) v.push_back({"UNKNOWN_TID", where});
    if (fid < 0 || fid >= a.frame_count) v.push_back({"TRAJ_FID_RANGE", where});
    if (auto code = bbox_problem(box, a.width, a.height); !code.empty()) {
      v.push_back({code, where + " " + describe(box)});
    }
  }
  for (std::size_t i = 0; i < a.relations.size(); ++i) {
    const auto& r = a.relations[i];
    const std::string where = "relation " + std::to_string(i);
    if (!tids.contains(r.head_tid) || !tids.contains(r.tail_tid)) v.push_back({"UNKNOWN_TID", where});
    if (r.head_tid == r.tail_tid) v.push_back({"REL_SELF", where});
    if (r.predicate.empty()) v.push_back({"PREDICATE_EMPTY", where});
    if (r.begin_fid >= r.end_fid) v.push_back({"SPAN_EMPTY", where});
    if (r.begin_fid < 0 || r.end_fid > a.frame_count) v.push_back({"SPAN_RANGE", where});
    if (vocabulary != nullptr && !r.predicate.empty()) {
      auto kind = vocabulary->kind_of(r.predicate);
      if (!kind) {
        v.push_back({"UNKNOWN_PREDICATE", where + ": '" + r.predicate + "'"});
      } else if (*kind != r.kind) {
        v.push_back({"KIND_MISMATCH", where + ": '" + r.predicate + "'"});
      }
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Normalized line format (schema_version 1)

Json to_json(const NormalizedAnnotation& a) {
  Json j;
  j["schema_version"] = kNormalizedSchemaVersion;
  j["video_id"] = a.video_id;
  j["frame_count"] = a.frame_count;
  if (a.width) j["width"] = *a.width;
  if (a.height) j["height"] = *a.height;
  Json catalog = Json::array();
  for (const auto& e : a.catalog) catalog.push_back({{"tid", e.tid}, {"category", e.category}});
  j["catalog"] = std::move(catalog);
  Json trajectories = Json::array();
  for (auto it = a.trajectories.begin(); it != a.trajectories.end();) {
    const int tid = it->first.first;
    Json boxes = Json::array();
    for (; it != a.trajectories.end() && it->first.first == tid; ++it) {
      const auto& b = it->second;
      boxes.push_back({it->first.second, b.x1, b.y1, b.x2, b.y2});
    }
    trajectories.push_back({{"tid", tid}, {"boxes", std::move(boxes)}});
  }
  j["trajectories"] = std::move(trajectories);
  Json relations = Json::array();
  for (const auto& r : a.relations) {
    relations.push_back({{"head_tid", r.head_tid},
                         {"tail_tid", r.tail_tid},
                         {"predicate", r.predicate},
                         {"begin_fid", r.begin_fid},
                         {"end_fid", r.end_fid},
                         {"kind", to_string(r.kind)}});
  }
  j["relations"] = std::move(relations);
  return j;
}

NormalizedAnnotation annotation_from_json(const Json& j) {
  const DocReader r("normalized annotation");
  const int version = r.as_int(r.field(j, "schema_version", ""), "/schema_version");
  if (version != kNormalizedSchemaVersion) {
    r.fail("/schema_version", "unsupported schema_version " + std::to_string(version));
  }
  NormalizedAnnotation a;
  a.video_id = r.as_string(r.field(j, "video_id", ""), "/video_id");
  a.frame_count = r.as_int(r.field(j, "frame_count", ""), "/frame_count");
  if (const Json* w = r.optional_field(j, "width")) a.width = r.as_int(*w, "/width");
  if (const Json* h = r.optional_field(j, "height")) a.height = r.as_int(*h, "/height");
  for (const auto& e : r.as_array(r.field(j, "catalog", ""), "/catalog")) {
    a.catalog.push_back({r.as_int(r.field(e, "tid", "/catalog"), "/catalog/tid"),
                         r.as_string(r.field(e, "category", "/catalog"), "/catalog/category")});
  }
  for (const auto& t : r.as_array(r.field(j, "trajectories", ""), "/trajectories")) {
    const int tid = r.as_int(r.field(t, "tid", "/trajectories"), "/trajectories/tid");
    for (const auto& b : r.as_array(r.field(t, "boxes", "/trajectories"), "/trajectories/boxes")) {
      if (!b.is_array() || b.size() != 5) r.fail("/trajectories/boxes", "expected [fid, x1, y1, x2, y2]");
      a.trajectories[{tid, b[0].get<int>()}] = {b[1].get<int>(), b[2].get<int>(), b[3].get<int>(),
                                                b[4].get<int>()};
    }
  }
  for (const auto& rel : r.as_array(r.field(j, "relations", ""), "/relations")) {
    RelationInstance ri;
    ri.head_tid = r.as_int(r.field(rel, "head_tid", "/relations"), "/relations/head_tid");
    ri.tail_tid = r.as_int(r.field(rel, "tail_tid", "/relations"), "/relations/tail_tid");
    ri.predicate = r.as_string(r.field(rel, "predicate", "/relations"), "/relations/predicate");
    ri.begin_fid = r.as_int(r.field(rel, "begin_fid", "/relations"), "/relations/begin_fid");
    ri.end_fid = r.as_int(r.field(rel, "end_fid", "/relations"), "/relations/end_fid");
    auto kind = relation_kind_from_string(r.as_string(r.field(rel, "kind", "/relations"), "/relations/kind"));
    if (!kind) r.fail("/relations/kind", "expected 'spatial' or 'temporal'");
    ri.kind = *kind;
    a.relations.push_back(std::move(ri));
  }
  return a;
}

Json to_json(const QARecord& q) {
  Json j;
  j["qid"] = q.qid;
  j["video_id"] = q.video_id;
  j["question"] = q.question;
  j["answer"] = q.answer;
  j["qtype"] = to_string(q.qtype);
  j["source"] = to_string(q.source);
  if (q.mc_options) j["mc_options"] = *q.mc_options;
  if (q.answer_index) j["answer_index"] = *q.answer_index;
  if (!q.keyframes.empty()) j["keyframes"] = q.keyframes;
  if (!q.situation_tids.empty()) j["situation_tids"] = q.situation_tids;
  return j;
}

QARecord qarecord_from_json(const Json& j) {
  const DocReader r("question record");
  QARecord q;
  q.qid = r.as_string(r.field(j, "qid", ""), "/qid");
  q.video_id = r.as_string(r.field(j, "video_id", ""), "/video_id");
  q.question = r.as_string(r.field(j, "question", ""), "/question");
  q.answer = r.as_string(r.field(j, "answer", ""), "/answer");
  auto qtype = qtype_from_string(r.as_string(r.field(j, "qtype", ""), "/qtype"));
  if (!qtype) r.fail("/qtype", "unknown question type");
  q.qtype = *qtype;
  auto source = source_from_string(r.as_string(r.field(j, "source", ""), "/source"));
  if (!source) r.fail("/source", "unknown source");
  q.source = *source;
  if (const Json* o = r.optional_field(j, "mc_options")) q.mc_options = o->get<std::vector<std::string>>();
  if (const Json* i = r.optional_field(j, "answer_index")) q.answer_index = r.as_int(*i, "/answer_index");
  if (const Json* k = r.optional_field(j, "keyframes")) q.keyframes = k->get<std::vector<int>>();
  if (const Json* t = r.optional_field(j, "situation_tids")) q.situation_tids = t->get<std::vector<int>>();
  return q;
}

}  // namespace cotasks
