#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotasks/json.hpp"

namespace cotasks {

enum class RelationKind { spatial, temporal };

std::string_view to_string(RelationKind k);
std::optional<RelationKind> relation_kind_from_string(std::string_view s);

/// Predicate -> spatial/temporal classification plus category synonyms used
/// by lexical grounding. Loaded from a JSON file:
///   {"spatial": [...], "temporal": [...], "synonyms": {"adult": ["man", ...]}}
class PredicateVocabulary {
 public:
  static PredicateVocabulary defaults();
  static PredicateVocabulary load(const std::filesystem::path& path);
  static PredicateVocabulary from_json(const Json& j);

  std::optional<RelationKind> kind_of(std::string_view predicate) const;
  const std::vector<std::string>& synonyms(std::string_view category) const;

  Json to_json() const;

  bool operator==(const PredicateVocabulary&) const = default;

 private:
  std::map<std::string, RelationKind, std::less<>> kinds_;
  std::map<std::string, std::vector<std::string>, std::less<>> synonyms_;
};

}  // namespace cotasks
