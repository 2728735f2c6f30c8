#include "cotasks/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "cotasks/digest.hpp"
#include "cotasks/errors.hpp"

namespace cotasks {

namespace {

std::string typed_text(const ParsedResponse& parsed) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::string>) {
          return v;
        } else if constexpr (std::is_same_v<T, int>) {
          return std::to_string(v);
        } else {
          return format_value(to_json(v), QuoteStyle::json);
        }
      },
      parsed);
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json bucket_json(const ScoreBucket& b) {
  Json j;
  j["count"] = b.count;
  j["scored"] = b.scored;
  j["mean"] = optional_number(b.mean);
  return j;
}

ScoreBucket bucket_from_json(const Json& j) {
  ScoreBucket b;
  b.count = j.at("count").get<long long>();
  b.scored = j.at("scored").get<long long>();
  if (!j.at("mean").is_null()) b.mean = j.at("mean").get<double>();
  return b;
}

struct Accumulator {
  long long count = 0;
  long long scored = 0;
  long long sum = 0;  // sum of (score - 1); exact, so the mean is order independent

  void add(const std::optional<int>& score) {
    ++count;
    if (score) {
      ++scored;
      sum += *score - 1;
    }
  }
  ScoreBucket bucket() const {
    ScoreBucket b{count, scored, std::nullopt};
    if (scored > 0) b.mean = static_cast<double>(sum * 25) / static_cast<double>(scored);
    return b;
  }
};

std::string fixed1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

Condition Condition::parse(std::string_view id) {
  Condition c;
  c.id = std::string(id);
  if (id == "baseline") return c;
  if (id == "ct12") {
    c.included = {true, true, false, false};
  } else if (id == "ct34") {
    c.included = {false, false, true, true};
  } else if (id == "ct14") {
    c.included = {true, true, true, true};
  } else if (id.size() == 7 && id.substr(0, 6) == "cotask" && id[6] >= '1' && id[6] <= '4') {
    c.cotask = id[6] - '0';
  } else {
    throw ArgumentError("unknown condition '" + std::string(id) +
                        "' (expected baseline, ct12, ct34, ct14, cotask1..cotask4)");
  }
  return c;
}

std::string_view to_string(Category c) {
  switch (c) {
    case Category::causal: return "causal";
    case Category::temporal: return "temporal";
    case Category::descriptive: return "descriptive";
  }
  return "?";
}

std::optional<Category> category_of(QType q) {
  switch (q) {
    case QType::CW:
    case QType::CH: return Category::causal;
    case QType::TP:
    case QType::TC:
    case QType::TN: return Category::temporal;
    case QType::DC:
    case QType::DL:
    case QType::DO: return Category::descriptive;
    case QType::STAR: return std::nullopt;
  }
  return std::nullopt;
}

Json to_json(const Prediction& p) {
  Json j;
  j["qid"] = p.qid;
  j["condition"] = p.condition;
  j["model_id"] = p.model_id;
  j["qtype"] = to_string(p.qtype);
  j["question"] = p.question;
  j["reference"] = p.reference;
  j["text"] = p.text;
  j["invalid"] = p.invalid;
  j["error"] = p.error;
  return j;
}

Prediction prediction_from_json(const Json& j) {
  Prediction p;
  try {
    p.qid = j.at("qid").get<std::string>();
    p.condition = j.at("condition").get<std::string>();
    p.model_id = j.at("model_id").get<std::string>();
    auto q = qtype_from_string(j.at("qtype").get<std::string>());
    if (!q) throw ParseError("prediction", "/qtype", "unknown qtype");
    p.qtype = *q;
    p.question = j.at("question").get<std::string>();
    p.reference = j.at("reference").get<std::string>();
    p.text = j.at("text").get<std::string>();
    p.invalid = j.at("invalid").get<bool>();
    p.error = j.value("error", "");
  } catch (const Json::exception& e) {
    throw ParseError("prediction", "", e.what());
  }
  return p;
}

Json to_json(const EvalRecord& r) {
  Json j;
  j["qid"] = r.qid;
  j["condition"] = r.condition;
  j["model_id"] = r.model_id;
  j["qtype"] = to_string(r.qtype);
  j["category"] = r.category ? Json(to_string(*r.category)) : Json(nullptr);
  j["prediction"] = r.prediction;
  j["reference"] = r.reference;
  j["judge_score"] = r.judge_score ? Json(*r.judge_score) : Json(nullptr);
  j["prediction_invalid"] = r.prediction_invalid;
  j["inference_failed"] = r.inference_failed;
  j["error"] = r.error;
  return j;
}

EvalRecord eval_record_from_json(const Json& j) {
  EvalRecord r;
  try {
    r.qid = j.at("qid").get<std::string>();
    r.condition = j.at("condition").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    auto q = qtype_from_string(j.at("qtype").get<std::string>());
    if (!q) throw ParseError("eval record", "/qtype", "unknown qtype");
    r.qtype = *q;
    r.category = category_of(r.qtype);
    r.prediction = j.at("prediction").get<std::string>();
    r.reference = j.at("reference").get<std::string>();
    if (!j.at("judge_score").is_null()) r.judge_score = j.at("judge_score").get<int>();
    r.prediction_invalid = j.at("prediction_invalid").get<bool>();
    r.inference_failed = j.value("inference_failed", false);
    r.error = j.value("error", "");
  } catch (const Json::exception& e) {
    throw ParseError("eval record", "", e.what());
  }
  return r;
}

std::string render_final_prompt(const PromptKit& prompts, const CoTaskBundle& bundle, const Condition& condition) {
  return prompts.render(TemplateId::final_answer, final_answer_slots(bundle, condition.included));
}

std::vector<Prediction> run_condition(const std::vector<CoTaskBundle>& bundles, const Condition& condition,
                                      Gateway& gateway, const PromptKit& prompts, const InferenceSettings& settings) {
  std::vector<ChatRequest> requests;
  std::vector<Prediction> out;
  requests.reserve(bundles.size());
  out.reserve(bundles.size());
  const TemplateId tid = condition.per_cotask() ? eval_template(condition.cotask) : TemplateId::final_answer;
  for (const auto& b : bundles) {
    Prediction p;
    p.qid = b.qid;
    p.condition = condition.id;
    p.model_id = settings.model_id;
    p.qtype = b.qtype;
    std::string prompt;
    if (condition.per_cotask()) {
      const int n = condition.cotask;
      if (n >= 2 && b.a1.timestamps.empty()) {
        throw ArgumentError(b.qid + ": CoTask " + std::to_string(n) + " needs a non-empty A1");
      }
      const std::array<Json, 4> answers = {to_json(b.a1), to_json(b.a2), to_json(b.a3), to_json(b.a4)};
      p.question = b.questions[static_cast<std::size_t>(n - 1)];
      p.reference = format_value(answers[static_cast<std::size_t>(n - 1)], QuoteStyle::json);
      prompt = prompts.render(tid, cotask_eval_slots(n, b));
    } else {
      p.question = b.q0;
      p.reference = b.a0;
      prompt = render_final_prompt(prompts, b, condition);
    }
    ChatRequest req;
    req.model_id = settings.model_id;
    req.temperature = settings.temperature;
    req.max_tokens = settings.max_tokens;
    if (settings.frames) {
      for (const auto& f : settings.frames(b.video_id, b.num_frames)) req.user_parts.push_back(ContentPart::image_file(f));
    }
    req.user_parts.push_back(ContentPart::text(std::move(prompt)));
    requests.push_back(std::move(req));
    out.push_back(std::move(p));
  }

  const auto results = gateway.run_batch(requests, settings.max_in_flight);
  for (std::size_t i = 0; i < results.size(); ++i) {
    Prediction& p = out[i];
    if (!results[i].ok()) {
      p.error = results[i].error;
      continue;
    }
    const std::string& raw = results[i].response->text;
    try {
      p.text = typed_text(parse_response(tid, raw));
    } catch (const ResponseParseError& e) {
      p.invalid = true;
      p.text = raw;
      p.error = e.what();
    }
  }
  return out;
}

std::vector<EvalRecord> judge(const std::vector<Prediction>& predictions, Gateway& gateway, const PromptKit& prompts,
                              const JudgeSettings& settings) {
  std::vector<EvalRecord> records(predictions.size());
  std::vector<std::size_t> pending;
  std::vector<ChatRequest> requests;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const Prediction& p = predictions[i];
    EvalRecord& r = records[i];
    r.qid = p.qid;
    r.condition = p.condition;
    r.model_id = p.model_id;
    r.prediction = p.text;
    r.reference = p.reference;
    r.qtype = p.qtype;
    r.category = category_of(p.qtype);
    if (p.invalid) {
      r.prediction_invalid = true;
      r.judge_score = 1;
      r.error = p.error;
      continue;
    }
    if (!p.error.empty()) {
      r.inference_failed = true;
      r.error = p.error;
      continue;
    }
    ChatRequest req;
    req.model_id = settings.model_id;
    req.temperature = settings.temperature;
    req.max_tokens = settings.max_tokens;
    req.user_parts.push_back(
        ContentPart::text(prompts.render(TemplateId::judge, judge_slots(p.question, p.reference, p.text))));
    pending.push_back(i);
    requests.push_back(std::move(req));
  }

  for (int round = 0; round < 2 && !pending.empty(); ++round) {
    const auto results = gateway.run_batch(requests, settings.max_in_flight);
    std::vector<std::size_t> retry;
    std::vector<ChatRequest> retry_requests;
    for (std::size_t k = 0; k < results.size(); ++k) {
      EvalRecord& r = records[pending[k]];
      if (!results[k].ok()) {
        r.error = "judge: " + results[k].error;
        continue;
      }
      try {
        r.judge_score = parse_judge(results[k].response->text);
        r.error.clear();
      } catch (const ResponseParseError& e) {
        r.error = std::string("judge: ") + e.what();
        ChatRequest again = requests[k];
        again.user_parts.push_back(ContentPart::text(corrective_instruction(TemplateId::judge)));
        retry.push_back(pending[k]);
        retry_requests.push_back(std::move(again));
      }
    }
    pending = std::move(retry);
    requests = std::move(retry_requests);
  }
  return records;
}

double scaled_score(int judge_score) {
  if (judge_score < 1 || judge_score > 5) throw ArgumentError("judge score must be in 1..5");
  return static_cast<double>(judge_score - 1) / 4.0 * 100.0;
}

ScoreReport aggregate(const std::vector<EvalRecord>& records, const AggregateOptions& options) {
  ScoreReport report;
  std::map<std::string, Accumulator> per_qtype;
  std::map<std::string, Accumulator> per_category;
  Accumulator overall;
  long long star_scored = 0;
  long long star_hits = 0;
  std::set<std::string> qids;
  std::set<std::string> conditions;
  std::set<std::string> models;
  for (const auto& r : records) {
    qids.insert(r.qid);
    conditions.insert(r.condition);
    models.insert(r.model_id);
    per_qtype[std::string(to_string(r.qtype))].add(r.judge_score);
    if (auto c = category_of(r.qtype)) per_category[std::string(to_string(*c))].add(r.judge_score);
    overall.add(r.judge_score);
    if (r.inference_failed) {
      ++report.inference_errors;
    } else if (!r.judge_score) {
      ++report.invalid_judge;
    }
    if (r.prediction_invalid) ++report.invalid_prediction;
    if (r.qtype == QType::STAR && r.judge_score) {
      ++star_scored;
      if (*r.judge_score >= options.star_threshold) ++star_hits;
    }
  }
  auto joined = [](const std::set<std::string>& s) {
    std::string out;
    for (const auto& v : s) out += (out.empty() ? "" : ",") + v;
    return out;
  };
  report.condition = joined(conditions);
  report.model_id = joined(models);
  for (const auto& [k, acc] : per_qtype) report.per_qtype[k] = acc.bucket();
  for (const auto& [k, acc] : per_category) report.per_category[k] = acc.bucket();
  report.overall = overall.bucket();
  if (star_scored > 0) {
    report.star_accuracy = static_cast<double>(star_hits * 100) / static_cast<double>(star_scored);
  }
  std::string all;
  for (const auto& q : qids) all += q + "\n";
  report.qids_digest = sha256_hex(all);
  return report;
}

Json to_json(const ScoreReport& r) {
  Json j;
  j["condition"] = r.condition;
  j["model_id"] = r.model_id;
  Json q = Json::object();
  for (const auto& [k, b] : r.per_qtype) q[k] = bucket_json(b);
  Json c = Json::object();
  for (const auto& [k, b] : r.per_category) c[k] = bucket_json(b);
  j["per_qtype"] = std::move(q);
  j["per_category"] = std::move(c);
  j["overall"] = bucket_json(r.overall);
  j["invalid_judge"] = r.invalid_judge;
  j["invalid_prediction"] = r.invalid_prediction;
  j["inference_errors"] = r.inference_errors;
  j["star_accuracy"] = optional_number(r.star_accuracy);
  j["qids_digest"] = r.qids_digest;
  return j;
}

ScoreReport score_report_from_json(const Json& j) {
  ScoreReport r;
  try {
    r.condition = j.at("condition").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    for (const auto& [k, b] : j.at("per_qtype").items()) r.per_qtype[k] = bucket_from_json(b);
    for (const auto& [k, b] : j.at("per_category").items()) r.per_category[k] = bucket_from_json(b);
    r.overall = bucket_from_json(j.at("overall"));
    r.invalid_judge = j.at("invalid_judge").get<long long>();
    r.invalid_prediction = j.at("invalid_prediction").get<long long>();
    r.inference_errors = j.value("inference_errors", 0LL);
    if (!j.at("star_accuracy").is_null()) r.star_accuracy = j.at("star_accuracy").get<double>();
    r.qids_digest = j.at("qids_digest").get<std::string>();
  } catch (const Json::exception& e) {
    throw ParseError("score report", "", e.what());
  }
  return r;
}

ComparisonTable compare(const std::vector<ScoreReport>& reports) {
  ComparisonTable t;
  for (QType q : kNextQaTypes) t.columns.emplace_back(to_string(q));
  t.columns.emplace_back("Avg");
  const bool star = std::any_of(reports.begin(), reports.end(), [](const ScoreReport& r) { return r.star_accuracy; });
  if (star) t.columns.emplace_back("STAR Acc.");
  for (const auto& r : reports) {
    if (r.qids_digest != reports.front().qids_digest) {
      throw IntegrityError("NON_COMPARABLE", "runs '" + reports.front().condition + "' and '" + r.condition +
                                                 "' were scored on different question sets");
    }
    ComparisonTable::Row row;
    row.condition = r.condition;
    for (QType q : kNextQaTypes) {
      auto it = r.per_qtype.find(std::string(to_string(q)));
      row.values.push_back(it == r.per_qtype.end() ? std::nullopt : it->second.mean);
    }
    row.values.push_back(r.overall.mean);
    if (star) row.values.push_back(r.star_accuracy);
    t.rows.push_back(std::move(row));
  }
  return t;
}

Json to_json(const ComparisonTable& t) {
  Json j;
  j["columns"] = t.columns;
  Json rows = Json::array();
  for (const auto& r : t.rows) {
    Json vals = Json::array();
    for (const auto& v : r.values) vals.push_back(optional_number(v));
    rows.push_back({{"condition", r.condition}, {"values", std::move(vals)}});
  }
  j["rows"] = std::move(rows);
  return j;
}

std::string render_text(const ComparisonTable& t) {
  std::vector<std::optional<double>> best(t.columns.size());
  for (const auto& r : t.rows) {
    for (std::size_t c = 0; c < r.values.size(); ++c) {
      if (!r.values[c]) continue;
      const double v = std::round(*r.values[c] * 10.0) / 10.0;
      if (!best[c] || v > *best[c]) best[c] = v;
    }
  }
  std::string out = "| Condition |";
  for (const auto& c : t.columns) out += " " + c + " |";
  out += "\n|---|";
  for (std::size_t c = 0; c < t.columns.size(); ++c) out += "---|";
  out += "\n";
  for (const auto& r : t.rows) {
    out += "| " + r.condition + " |";
    for (std::size_t c = 0; c < r.values.size(); ++c) {
      if (!r.values[c]) {
        out += " - |";
        continue;
      }
      const double v = std::round(*r.values[c] * 10.0) / 10.0;
      const std::string cell = fixed1(v);
      out += (best[c] && v == *best[c]) ? " **" + cell + "** |" : " " + cell + " |";
    }
    out += "\n";
  }
  return out;
}

}  // namespace cotasks
