#pragma once

// Prompt templates loaded from a checksummed asset directory, slot rendering,
// and tolerant parsing of model replies into typed answers.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cotasks/cotask_types.hpp"
#include "cotasks/json.hpp"

namespace cotasks {

enum class TemplateId { cotask1_gen, cotask1_eval, cotask2_eval, cotask3_eval, cotask4_eval, final_answer, judge };

inline constexpr std::array<TemplateId, 7> kAllTemplates = {
    TemplateId::cotask1_gen,  TemplateId::cotask1_eval, TemplateId::cotask2_eval, TemplateId::cotask3_eval,
    TemplateId::cotask4_eval, TemplateId::final_answer, TemplateId::judge,
};

std::string_view to_string(TemplateId id);
std::optional<TemplateId> template_id_from_string(std::string_view s);

/// Eval template for CoTask n (1..4).
TemplateId eval_template(int n);

struct PromptTemplate {
  TemplateId id = TemplateId::judge;
  /// LF newlines, no trailing newline. Placeholders are `{{name}}` with name in [a-z0-9_]+.
  std::string body;
  std::vector<std::string> required_slots;
  /// A line holding an absent optional slot is removed whole.
  std::vector<std::string> optional_slots;
  std::string sha256;
};

using Slots = std::map<std::string, std::string, std::less<>>;

/// Names of every `{{name}}` marker in `text`, in order of appearance.
std::vector<std::string> placeholders(std::string_view text);

class PromptKit {
 public:
  /// Reads `manifest.json` and every template it lists; a checksum mismatch raises IntegrityError.
  static PromptKit load(const std::filesystem::path& dir);
  /// $COTASKS_PROMPT_DIR, else the directory compiled into the library.
  static PromptKit load_default();

  const PromptTemplate& get(TemplateId id) const;
  const std::filesystem::path& directory() const { return dir_; }
  /// Digest over all template checksums.
  std::string digest() const;

  /// Single-pass substitution. Missing required slot or unknown slot name raises RenderError.
  std::string render(TemplateId id, const Slots& slots) const;

 private:
  std::filesystem::path dir_;
  std::map<TemplateId, PromptTemplate> templates_;
};

std::filesystem::path default_prompt_dir();

/// `json`: {"k": v}; `python`: {'k': v}. Both use ", " and ": " separators.
enum class QuoteStyle { json, python };
std::string format_value(const Json& value, QuoteStyle style);

Slots cotask1_gen_slots(std::string_view question, const std::vector<std::string>& catalog_labels, int num_frames);
/// Slots for the CoTask-n eval prompt, fed with the chained ground truth A1..A(n-1).
Slots cotask_eval_slots(int n, const CoTaskBundle& bundle);
/// `include[i]` selects A(i+1); excluded answers are left out so their lines disappear.
Slots final_answer_slots(const CoTaskBundle& bundle, const std::array<bool, 4>& include);
Slots judge_slots(std::string_view question, std::string_view answer, std::string_view prediction);

/// Parseable JSON values found in `raw` after fence stripping, in order of appearance.
/// Single-quoted strings and trailing commas are repaired.
std::vector<Json> json_candidates(std::string_view raw);

CoTask1Answer parse_cotask1(std::string_view raw);
CoTask2Answer parse_cotask2(std::string_view raw);
RelationAnswer parse_relations(std::string_view raw);
/// Prefers the integer after "mark" or "score", else the first standalone integer. Must be in 1..5.
int parse_judge(std::string_view raw);
/// Trimmed short phrase; a leading "Respond:" is dropped.
std::string parse_final_answer(std::string_view raw);

using ParsedResponse = std::variant<CoTask1Answer, CoTask2Answer, RelationAnswer, std::string, int>;

/// Appended to a prompt when the previous reply for it was unusable.
std::string corrective_instruction(TemplateId id);

/// Dispatches on the template's answer schema; failures raise ResponseParseError carrying `raw`.
ParsedResponse parse_response(TemplateId id, std::string_view raw);

}  // namespace cotasks
