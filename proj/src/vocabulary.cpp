#include "cotasks/vocabulary.hpp"

#include <fstream>

#include "cotasks/errors.hpp"

namespace cotasks {

namespace {

// VidOR spatial predicates plus the STAR spatial set.
const char* const kSpatial[] = {"above",  "away",   "behind", "beneath", "in_front_of",
                                "inside", "next_to", "towards", "on",     "in",
                                "beside", "on_the_side_of", "under", "over"};

// VidOR action predicates plus STAR contact/attention relations.
const char* const kTemporal[] = {
    "bite",         "caress",      "carry",         "chase",         "clean",
    "close",        "cut",         "drive",         "feed",          "follow",
    "get_off",      "get_on",      "grab",          "hit",           "hold",
    "hold_hand_of", "hug",         "kick",          "kiss",          "knock",
    "lean_on",      "lick",        "lift",          "open",          "pat",
    "play",         "point_to",    "press",         "pull",          "push",
    "release",      "ride",        "shake_hand_with", "shout_at",    "smell",
    "speak_to",     "squeeze",     "throw",         "touch",         "use",
    "watch",        "wave",        "wave_hand_to",  "holding",       "touching",
    "carrying",     "wearing",     "sitting_on",    "standing_on",   "lying_on",
    "leaning_on",   "drinking_from", "eating",      "twisting",      "wiping",
    "writing_on",   "covered_by",  "have_it_on_the_back", "looking_at", "not_looking_at",
    "not_contacting"};

}  // namespace

std::string_view to_string(RelationKind k) {
  return k == RelationKind::spatial ? "spatial" : "temporal";
}

std::optional<RelationKind> relation_kind_from_string(std::string_view s) {
  if (s == "spatial") return RelationKind::spatial;
  if (s == "temporal") return RelationKind::temporal;
  return std::nullopt;
}

PredicateVocabulary PredicateVocabulary::defaults() {
  PredicateVocabulary v;
  for (const char* p : kSpatial) v.kinds_.emplace(p, RelationKind::spatial);
  for (const char* p : kTemporal) v.kinds_.emplace(p, RelationKind::temporal);
  v.synonyms_ = {
      {"adult", {"man", "woman", "men", "women", "lady", "gentleman", "guy", "person", "people"}},
      {"child", {"kid", "kids", "boy", "girl", "children"}},
      {"baby", {"infant", "toddler"}},
      {"person", {"man", "woman", "someone"}},
      {"handbag", {"bag", "purse"}},
      {"sofa", {"couch"}},
      {"cup", {"mug"}},
      {"dog", {"puppy"}},
      {"cat", {"kitten"}},
  };
  return v;
}

PredicateVocabulary PredicateVocabulary::from_json(const Json& j) {
  PredicateVocabulary v;
  auto add = [&](const char* key, RelationKind kind) {
    if (!j.contains(key)) return;
    for (const auto& p : j.at(key)) {
      auto [it, inserted] = v.kinds_.emplace(p.get<std::string>(), kind);
      if (!inserted && it->second != kind) {
        throw ConfigError("predicate '" + it->first + "' listed as both spatial and temporal");
      }
    }
  };
  add("spatial", RelationKind::spatial);
  add("temporal", RelationKind::temporal);
  if (j.contains("synonyms")) {
    for (const auto& [cat, words] : j.at("synonyms").items()) {
      v.synonyms_[cat] = words.get<std::vector<std::string>>();
    }
  }
  return v;
}

PredicateVocabulary PredicateVocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open vocabulary file " + path.string());
  }
  try {
    return from_json(Json::parse(in));
  } catch (const Json::exception& e) {
    throw ConfigError("vocabulary file " + path.string() + ": " + e.what());
  }
}

std::optional<RelationKind> PredicateVocabulary::kind_of(std::string_view predicate) const {
  auto it = kinds_.find(predicate);
  if (it == kinds_.end()) return std::nullopt;
  return it->second;
}

const std::vector<std::string>& PredicateVocabulary::synonyms(std::string_view category) const {
  static const std::vector<std::string> kNone;
  auto it = synonyms_.find(category);
  return it == synonyms_.end() ? kNone : it->second;
}

Json PredicateVocabulary::to_json() const {
  Json spatial = Json::array();
  Json temporal = Json::array();
  for (const auto& [p, kind] : kinds_) {
    (kind == RelationKind::spatial ? spatial : temporal).push_back(p);
  }
  Json syn = Json::object();
  for (const auto& [cat, words] : synonyms_) syn[cat] = words;
  return {{"spatial", spatial}, {"temporal", temporal}, {"synonyms", syn}};
}

}  // namespace cotasks
