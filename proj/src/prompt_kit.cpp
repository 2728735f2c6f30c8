#include "cotasks/prompt_kit.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <set>

#include "cotasks/digest.hpp"
#include "cotasks/errors.hpp"

#ifndef COTASKS_DEFAULT_PROMPT_DIR
#define COTASKS_DEFAULT_PROMPT_DIR "assets/prompts"
#endif

namespace cotasks {

namespace {

bool is_slot_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

// Returns the slot name when `text` holds a well-formed marker at `pos`.
std::optional<std::string_view> marker_at(std::string_view text, std::size_t pos, std::size_t& end) {
  if (text.compare(pos, 2, "{{") != 0) return std::nullopt;
  std::size_t i = pos + 2;
  while (i < text.size() && is_slot_char(text[i])) ++i;
  if (i == pos + 2 || text.compare(i, 2, "}}") != 0) return std::nullopt;
  end = i + 2;
  return text.substr(pos + 2, i - pos - 2);
}

std::string normalize_body(std::string_view raw) {
  std::string out;
  std::size_t start = 0;
  while (start <= raw.size()) {
    std::size_t nl = raw.find('\n', start);
    std::string_view line = raw.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.remove_suffix(1);
    out.append(line);
    if (nl == std::string_view::npos) break;
    out.push_back('\n');
    start = nl + 1;
  }
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

void format_string(std::string& out, const std::string& s, QuoteStyle style) {
  if (style == QuoteStyle::json) {
    out += Json(s).dump(-1, ' ', false, Json::error_handler_t::replace);
    return;
  }
  const char quote = (s.find('\'') != std::string::npos && s.find('"') == std::string::npos) ? '"' : '\'';
  out.push_back(quote);
  for (char c : s) {
    if (c == '\\' || c == quote) out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  out.push_back(quote);
}

void format_into(std::string& out, const Json& v, QuoteStyle style) {
  const bool py = style == QuoteStyle::python;
  switch (v.type()) {
    case Json::value_t::object: {
      out.push_back('{');
      bool first = true;
      for (const auto& [k, item] : v.items()) {
        if (!first) out += ", ";
        first = false;
        format_string(out, k, style);
        out += ": ";
        format_into(out, item, style);
      }
      out.push_back('}');
      return;
    }
    case Json::value_t::array: {
      out.push_back('[');
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) out += ", ";
        format_into(out, v[i], style);
      }
      out.push_back(']');
      return;
    }
    case Json::value_t::string:
      format_string(out, v.get<std::string>(), style);
      return;
    case Json::value_t::boolean:
      out += v.get<bool>() ? (py ? "True" : "true") : (py ? "False" : "false");
      return;
    case Json::value_t::null:
      out += py ? "None" : "null";
      return;
    default:
      out += v.dump();
  }
}

std::string strip_fences(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw.compare(i, 3, "```") == 0) {
      // Drop the fence and an info string such as "json" on the same line.
      i += 3;
      while (i < raw.size() && std::isalnum(static_cast<unsigned char>(raw[i]))) ++i;
      --i;
      continue;
    }
    if (raw[i] == '`') continue;
    out.push_back(raw[i]);
  }
  return out;
}

// Index one past the bracket that closes the one at `start`, if balanced.
std::optional<std::size_t> balanced_end(std::string_view s, std::size_t start) {
  std::vector<char> stack;
  char quote = 0;
  for (std::size_t i = start; i < s.size(); ++i) {
    const char c = s[i];
    if (quote != 0) {
      if (c == '\\') {
        ++i;
      } else if (c == quote) {
        quote = 0;
      }
      continue;
    }
    switch (c) {
      case '"':
      case '\'':
        quote = c;
        break;
      case '{':
      case '[':
        stack.push_back(c == '{' ? '}' : ']');
        break;
      case '}':
      case ']':
        if (stack.empty() || stack.back() != c) return std::nullopt;
        stack.pop_back();
        if (stack.empty()) return i + 1;
        break;
      default:
        break;
    }
  }
  return std::nullopt;
}

// Single-quoted strings become JSON strings; trailing commas are dropped.
std::string repair_json(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '"') {
      const std::size_t begin = i++;
      while (i < s.size() && s[i] != '"') {
        if (s[i] == '\\') ++i;
        ++i;
      }
      out.append(s.substr(begin, i - begin + 1));
    } else if (c == '\'') {
      std::string value;
      for (++i; i < s.size() && s[i] != '\''; ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) ++i;
        value.push_back(s[i]);
      }
      out += Json(value).dump(-1, ' ', false, Json::error_handler_t::replace);
    } else if (c == ',') {
      std::size_t j = i + 1;
      while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j < s.size() && (s[j] == ']' || s[j] == '}')) continue;
      out.push_back(c);
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::optional<Json> try_parse(std::string_view s) {
  Json j = Json::parse(s, nullptr, false);
  if (!j.is_discarded()) return j;
  j = Json::parse(repair_json(s), nullptr, false);
  if (!j.is_discarded()) return j;
  return std::nullopt;
}

template <typename T, typename Convert>
T parse_first(std::string_view raw, const char* what, Convert convert) {
  const auto candidates = json_candidates(raw);
  if (candidates.empty()) throw ResponseParseError(std::string("no JSON value found for ") + what, std::string(raw));
  std::string last_error;
  for (const auto& c : candidates) {
    try {
      return convert(c);
    } catch (const ParseError& e) {
      last_error = e.what();
    }
  }
  throw ResponseParseError(std::string(what) + " schema mismatch: " + last_error, std::string(raw));
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

struct IntToken {
  std::size_t pos;
  long long value;
};

// Standalone integers: not glued to letters, and not part of a decimal number.
std::vector<IntToken> integer_tokens(std::string_view s) {
  std::vector<IntToken> out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
    const bool glued_before = i > 0 && (is_word_char(s[i - 1]) ||
                                        (s[i - 1] == '.' && i > 1 && std::isdigit(static_cast<unsigned char>(s[i - 2]))));
    const bool glued_after = j < s.size() && (is_word_char(s[j]) ||
                                              (s[j] == '.' && j + 1 < s.size() &&
                                               std::isdigit(static_cast<unsigned char>(s[j + 1]))));
    if (!glued_before && !glued_after && j - i <= 9) {
      long long v = std::stoll(std::string(s.substr(i, j - i)));
      if (i > 0 && s[i - 1] == '-' && (i < 2 || !is_word_char(s[i - 2]))) v = -v;
      out.push_back({i, v});
    }
    i = j;
  }
  return out;
}

}  // namespace

std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::cotask1_gen: return "cotask1_gen";
    case TemplateId::cotask1_eval: return "cotask1_eval";
    case TemplateId::cotask2_eval: return "cotask2_eval";
    case TemplateId::cotask3_eval: return "cotask3_eval";
    case TemplateId::cotask4_eval: return "cotask4_eval";
    case TemplateId::final_answer: return "final_answer";
    case TemplateId::judge: return "judge";
  }
  return "?";
}

std::optional<TemplateId> template_id_from_string(std::string_view s) {
  for (auto id : kAllTemplates) {
    if (to_string(id) == s) return id;
  }
  return std::nullopt;
}

TemplateId eval_template(int n) {
  switch (n) {
    case 1: return TemplateId::cotask1_eval;
    case 2: return TemplateId::cotask2_eval;
    case 3: return TemplateId::cotask3_eval;
    case 4: return TemplateId::cotask4_eval;
    default: throw ArgumentError("CoTask index must be 1..4, got " + std::to_string(n));
  }
}

std::vector<std::string> placeholders(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    std::size_t end = 0;
    if (auto name = marker_at(text, i, end)) {
      out.emplace_back(*name);
      i = end - 1;
    }
  }
  return out;
}

std::filesystem::path default_prompt_dir() {
  if (const char* env = std::getenv("COTASKS_PROMPT_DIR"); env != nullptr && *env != '\0') return env;
  return COTASKS_DEFAULT_PROMPT_DIR;
}

PromptKit PromptKit::load_default() { return load(default_prompt_dir()); }

PromptKit PromptKit::load(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw ConfigError("prompt manifest not found: " + manifest_path.string());
  }
  const Json manifest = read_json_file(manifest_path);
  PromptKit kit;
  kit.dir_ = dir;
  try {
    for (const auto& entry : manifest.at("templates")) {
      const auto name = entry.at("id").get<std::string>();
      auto id = template_id_from_string(name);
      if (!id) throw ParseError(manifest_path.string(), "/templates", "unknown template id '" + name + "'");
      const std::string raw = read_file(dir / entry.at("file").get<std::string>());
      const std::string expected = entry.at("sha256").get<std::string>();
      const std::string actual = sha256_hex(raw);
      if (actual != expected) {
        throw IntegrityError("TEMPLATE_CHECKSUM", "template '" + name + "' has sha256 " + actual +
                                                      ", manifest says " + expected);
      }
      PromptTemplate t;
      t.id = *id;
      t.body = normalize_body(raw);
      t.required_slots = entry.at("required_slots").get<std::vector<std::string>>();
      t.optional_slots = entry.value("optional_slots", std::vector<std::string>{});
      t.sha256 = actual;
      std::set<std::string> declared(t.required_slots.begin(), t.required_slots.end());
      declared.insert(t.optional_slots.begin(), t.optional_slots.end());
      for (const auto& p : placeholders(t.body)) {
        if (!declared.contains(p)) {
          throw IntegrityError("TEMPLATE_SLOT", "template '" + name + "' uses undeclared slot '" + p + "'");
        }
      }
      kit.templates_[*id] = std::move(t);
    }
  } catch (const Json::exception& e) {
    throw ParseError(manifest_path.string(), "", e.what());
  }
  for (auto id : kAllTemplates) {
    if (!kit.templates_.contains(id)) {
      throw ConfigError("prompt manifest lacks template '" + std::string(to_string(id)) + "'");
    }
  }
  return kit;
}

const PromptTemplate& PromptKit::get(TemplateId id) const { return templates_.at(id); }

std::string PromptKit::digest() const {
  std::string acc;
  for (const auto& [id, t] : templates_) acc += std::string(to_string(id)) + ":" + t.sha256 + "\n";
  return sha256_hex(acc);
}

std::string PromptKit::render(TemplateId id, const Slots& slots) const {
  const PromptTemplate& t = get(id);
  const auto declared = [&](std::string_view name) {
    return std::find(t.required_slots.begin(), t.required_slots.end(), name) != t.required_slots.end() ||
           std::find(t.optional_slots.begin(), t.optional_slots.end(), name) != t.optional_slots.end();
  };
  for (const auto& [name, value] : slots) {
    if (!declared(name)) {
      throw RenderError(name, "template '" + std::string(to_string(id)) + "' has no slot '" + name + "'");
    }
  }
  for (const auto& name : t.required_slots) {
    if (!slots.contains(name)) {
      throw RenderError(name, "template '" + std::string(to_string(id)) + "' requires slot '" + name + "'");
    }
  }

  std::string out;
  out.reserve(t.body.size() * 2);
  std::string_view body = t.body;
  std::size_t start = 0;
  bool first_line = true;
  while (start <= body.size()) {
    const std::size_t nl = body.find('\n', start);
    const std::string_view line =
        body.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    bool drop = false;
    for (const auto& name : placeholders(line)) {
      if (!slots.contains(name)) drop = true;
    }
    if (!drop) {
      if (!first_line) out.push_back('\n');
      first_line = false;
      for (std::size_t i = 0; i < line.size(); ++i) {
        std::size_t end = 0;
        if (auto name = marker_at(line, i, end)) {
          out += slots.find(*name)->second;
          i = end - 1;
        } else {
          out.push_back(line[i]);
        }
      }
    }
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return out;
}

std::string format_value(const Json& value, QuoteStyle style) {
  std::string out;
  format_into(out, value, style);
  return out;
}

Slots cotask1_gen_slots(std::string_view question, const std::vector<std::string>& catalog_labels,
                        int num_frames) {
  return {{"num_frames", std::to_string(num_frames)},
          {"question", std::string(question)},
          {"entities", format_value(Json(catalog_labels), QuoteStyle::python)}};
}

Slots cotask_eval_slots(int n, const CoTaskBundle& b) {
  eval_template(n);
  if (n == 1) return {{"num_frames", std::to_string(b.num_frames)}, {"question", b.q0}};
  Slots s{{"question", b.q0},
          {"a1", format_value(to_json(b.a1), QuoteStyle::json)},
          {"entities", format_value(Json(b.a1.entities), QuoteStyle::json)},
          {"frames", format_value(Json(b.a1.timestamps), QuoteStyle::json)}};
  if (n >= 3) s["a2"] = format_value(to_json(b.a2), QuoteStyle::json);
  if (n == 4) s["a3"] = format_value(to_json(b.a3), QuoteStyle::json);
  return s;
}

Slots final_answer_slots(const CoTaskBundle& b, const std::array<bool, 4>& include) {
  Slots s{{"q0", b.q0}};
  if (include[0]) s["a1"] = format_value(to_json(b.a1), QuoteStyle::python);
  if (include[1]) s["a2"] = format_value(to_json(b.a2), QuoteStyle::python);
  if (include[2]) s["a3"] = format_value(to_json(b.a3), QuoteStyle::python);
  if (include[3]) s["a4"] = format_value(to_json(b.a4), QuoteStyle::python);
  return s;
}

Slots judge_slots(std::string_view question, std::string_view answer, std::string_view prediction) {
  return {{"question", std::string(question)},
          {"answer", std::string(answer)},
          {"prediction", std::string(prediction)}};
}

std::vector<Json> json_candidates(std::string_view raw) {
  const std::string text = strip_fences(raw);
  std::vector<Json> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '{' && text[i] != '[') {
      ++i;
      continue;
    }
    if (auto end = balanced_end(text, i)) {
      if (auto j = try_parse(std::string_view(text).substr(i, *end - i))) {
        out.push_back(std::move(*j));
        i = *end;
        continue;
      }
    }
    ++i;
  }
  return out;
}

CoTask1Answer parse_cotask1(std::string_view raw) {
  return parse_first<CoTask1Answer>(raw, "CoTask 1 answer", [](const Json& j) {
    if (!j.is_object()) throw ParseError("A1", "", "expected an object");
    return cotask1_from_json(j);
  });
}

CoTask2Answer parse_cotask2(std::string_view raw) {
  return parse_first<CoTask2Answer>(raw, "CoTask 2 answer", [](const Json& j) { return cotask2_from_json(j); });
}

RelationAnswer parse_relations(std::string_view raw) {
  return parse_first<RelationAnswer>(raw, "relation answer", [](const Json& j) { return relations_from_json(j); });
}

int parse_judge(std::string_view raw) {
  std::string lower(raw);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto tokens = integer_tokens(lower);
  std::optional<long long> chosen;
  for (std::string_view key : {"mark", "score"}) {
    for (std::size_t at = lower.find(key); at != std::string::npos && !chosen; at = lower.find(key, at + 1)) {
      for (const auto& t : tokens) {
        if (t.pos > at) {
          chosen = t.value;
          break;
        }
      }
    }
    if (chosen) break;
  }
  if (!chosen && !tokens.empty()) chosen = tokens.front().value;
  if (!chosen) throw ResponseParseError("judge reply holds no integer", std::string(raw));
  if (*chosen < 1 || *chosen > 5) {
    throw ResponseParseError("judge score " + std::to_string(*chosen) + " outside 1..5", std::string(raw));
  }
  return static_cast<int>(*chosen);
}

std::string parse_final_answer(std::string_view raw) {
  std::string text = strip_fences(raw);
  auto not_space = [](unsigned char c) { return std::isspace(c) == 0; };
  text.erase(text.begin(), std::find_if(text.begin(), text.end(), not_space));
  text.erase(std::find_if(text.rbegin(), text.rend(), not_space).base(), text.end());
  constexpr std::string_view prefix = "respond:";
  if (text.size() >= prefix.size() &&
      std::equal(prefix.begin(), prefix.end(), text.begin(),
                 [](char a, char b) { return a == std::tolower(static_cast<unsigned char>(b)); })) {
    text.erase(0, prefix.size());
    text.erase(text.begin(), std::find_if(text.begin(), text.end(), not_space));
  }
  if (text.empty()) throw ResponseParseError("empty final answer", std::string(raw));
  return text;
}

std::string corrective_instruction(TemplateId id) {
  switch (id) {
    case TemplateId::judge:
      return "\n\nYour previous reply did not contain a usable mark. Reply with a single integer between 1 and 5.";
    case TemplateId::final_answer:
      return "\n\nYour previous reply was empty. Reply with a short phrase.";
    case TemplateId::cotask1_gen:
    case TemplateId::cotask1_eval:
      return "\n\nYour previous reply was not usable. Reply with one JSON object with keys \"entities\" "
             "(labels from the given set, at least one) and \"timestamps\" (1 to 16 strictly increasing "
             "frame numbers), and nothing else.";
    default:
      return "\n\nYour previous reply was not usable. Reply with only the JSON list in the requested format.";
  }
}

ParsedResponse parse_response(TemplateId id, std::string_view raw) {
  switch (id) {
    case TemplateId::cotask1_gen:
    case TemplateId::cotask1_eval: return parse_cotask1(raw);
    case TemplateId::cotask2_eval: return parse_cotask2(raw);
    case TemplateId::cotask3_eval:
    case TemplateId::cotask4_eval: return parse_relations(raw);
    case TemplateId::final_answer: return parse_final_answer(raw);
    case TemplateId::judge: return parse_judge(raw);
  }
  throw ArgumentError("unknown template");
}

}  // namespace cotasks
