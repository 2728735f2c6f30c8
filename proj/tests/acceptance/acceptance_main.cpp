// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "cotasks/cotask_builder.hpp"
#include "cotasks/digest.hpp"
#include "cotasks/errors.hpp"
#include "cotasks/eval_harness.hpp"
#include "cotasks/pipeline.hpp"
#include "cotasks/prompt_kit.hpp"
#include "cotasks/timeline.hpp"
#include "test_support.hpp"

using namespace cotasks;
using namespace cotasks::testing;
namespace fs = std::filesystem;

namespace {

InferenceSettings subject_settings(const std::string& model) {
  InferenceSettings s;
  s.model_id = model;
  return s;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt_seconds(double s) {
  std::ostringstream os;
  os.precision(3);
  os << s << "s";
  return os.str();
}

// 1. Four instances per Q0 at full dataset scale.
Outcome expansion_scale() {
  const std::vector<SplitInput> inputs = {synthetic_split("train", 400, 9188, 101),
                                          synthetic_split("val", 80, 1660, 202)};
  BuildSettings settings;
  settings.mode = GroundingMode::lexical;
  const PromptKit prompts = PromptKit::load_default();
  const auto start = std::chrono::steady_clock::now();
  const BuildOutput out = run_build(inputs, settings, prompts);
  const double elapsed = seconds_since(start);

  std::ostringstream why;
  bool ok = out.splits.size() == 2;
  const long long want_q0[] = {9188, 1660};
  for (std::size_t s = 0; ok && s < 2; ++s) {
    const auto& split = out.splits[s];
    std::map<std::string, std::set<int>> tasks;
    for (const auto& inst : split.expansion.instances) tasks[inst.qid].insert(inst.task_index);
    const bool complete = std::all_of(tasks.begin(), tasks.end(), [](const auto& kv) {
      return kv.second == std::set<int>{1, 2, 3, 4};
    });
    const auto n = static_cast<long long>(split.expansion.instances.size());
    why << split.name << " " << split.bundles.size() << " -> " << n << "; ";
    ok = ok && static_cast<long long>(split.bundles.size()) == want_q0[s] && n == 4 * want_q0[s] && complete &&
         static_cast<long long>(tasks.size()) == want_q0[s];
  }
  why << "build+expand " << fmt_seconds(elapsed);
  return {ok && elapsed < 10.0, why.str()};
}

// 2. Structural validity of randomly generated bundles.
Outcome random_bundle_validity() {
  std::mt19937 rng(2024);
  int built = 0;
  int skipped = 0;
  int violations = 0;
  std::string first;
  auto flag = [&](const std::string& qid, const std::string& what) {
    if (violations++ == 0) first = qid + ": " + what;
  };
  while (built < 1000) {
    const auto a = random_annotation(rng, {}, "v" + std::to_string(built + skipped));
    const auto rx = reindex(a, uniform_sample(a.frame_count));
    const auto q = random_question(rng, a, "q" + std::to_string(built + skipped));
    CoTaskBundle b;
    try {
      b = build_bundle(q, rx, {GroundingMode::lexical, {}, nullptr, {}});
    } catch (const ConstructionError&) {
      ++skipped;
      continue;
    }
    ++built;
    const int kp = rx.num_frames();
    const auto& ts = b.a1.timestamps;
    if (ts.empty() || ts.size() > 16) flag(b.qid, "A1 timestamp count");
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (ts[i] < 1 || ts[i] > kp) flag(b.qid, "A1 timestamp range");
      if (i > 0 && ts[i] <= ts[i - 1]) flag(b.qid, "A1 order");
    }
    const std::set<std::string> ents(b.a1.entities.begin(), b.a1.entities.end());
    if (b.a2.size() != ts.size()) flag(b.qid, "A2 frame count");
    for (std::size_t i = 0; i < b.a2.size() && i < ts.size(); ++i) {
      if (b.a2[i].frame != ts[i]) flag(b.qid, "A2 frame");
      for (const auto& o : b.a2[i].objects) {
        if (!ents.contains(o.label)) flag(b.qid, "A2 label");
        const auto& bb = o.bbox;
        if (bb.x1 < 0 || bb.y1 < 0 || bb.x1 >= bb.x2 || bb.y1 >= bb.y2 || bb.x2 > *rx.width || bb.y2 > *rx.height) {
          flag(b.qid, "bbox");
        }
      }
    }
    for (const auto* rel : {&b.a3, &b.a4}) {
      for (const auto& r : *rel) {
        if (!ents.contains(r.head) || !ents.contains(r.tail)) flag(b.qid, "relation entity");
        if (r.start_frame < 1 || r.start_frame > r.end_frame || r.end_frame > kp) flag(b.qid, "relation span");
      }
    }
    const std::vector<EntityRef>& catalog = rx.catalog;
    for (const auto& v : check_bundle(b, {16, &catalog})) flag(b.qid, v.code);
  }
  std::ostringstream why;
  why << built << " bundles, " << violations << " violations, " << skipped << " questions not groundable";
  if (!first.empty()) why << " (first: " << first << ")";
  return {violations == 0, why.str()};
}

// 3. Sampling and answer construction against brute-force oracles.
Outcome oracle_equivalence() {
  std::mt19937 rng(77);
  int fixtures = 0;
  int mismatches = 0;
  std::string first;
  auto miss = [&](const std::string& what) {
    if (mismatches++ == 0) first = what + " on fixture " + std::to_string(fixtures);
  };
  for (; fixtures < 500; ++fixtures) {
    const auto a = random_annotation(rng, {500, 10, 20, 640, 480});
    const int k = std::uniform_int_distribution<int>(1, 96)(rng);
    const auto m = uniform_sample(a.frame_count, k);
    if (m != oracle_uniform_sample(a.frame_count, k)) miss("uniform_sample");
    for (int s = 0; s < 20; ++s) {
      const int b = std::uniform_int_distribution<int>(0, a.frame_count - 1)(rng);
      const int e = std::uniform_int_distribution<int>(b + 1, a.frame_count)(rng);
      if (map_span(b, e, m) != oracle_map_span(b, e, m)) miss("map_span");
    }
    const auto rx = reindex(a, m);
    const auto a1 = random_a1(rng, rx);
    const auto a2 = build_cotask2(a1, rx);
    const auto a3 = build_cotask3(a1, rx);
    if (a2 != oracle_cotask2(a1, a, m)) miss("build_cotask2");
    if (a3 != oracle_relations(a1, a, m, RelationKind::spatial)) miss("build_cotask3");
    if (build_cotask4(a1, a2, a3, rx) != oracle_relations(a1, a, m, RelationKind::temporal)) miss("build_cotask4");
  }
  std::ostringstream why;
  why << fixtures << " fixtures, " << mismatches << " mismatches";
  if (!first.empty()) why << " (first: " << first << ")";
  return {mismatches == 0, why.str()};
}

std::string strip_trailing_whitespace(const std::string& raw) {
  std::string out;
  std::istringstream in(raw);
  std::string line;
  bool firstline = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.pop_back();
    if (!firstline) out.push_back('\n');
    out += line;
    firstline = false;
  }
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

// 4. Golden prompts and the judge's worked examples.
Outcome golden_prompts() {
  const PromptKit kit = PromptKit::load_default();
  const Json all = read_json_file(golden_dir() / "slots.json");
  int matched = 0;
  std::string mismatch;
  for (auto id : kAllTemplates) {
    const std::string name(to_string(id));
    const Json& entry = all.at(name);
    Slots slots;
    for (const auto& [k, v] : entry.at("slots").items()) slots[k] = v.get<std::string>();
    std::string rendered = kit.render(id, slots);
    if (entry.contains("completion")) rendered += entry.at("completion").get<std::string>();
    if (rendered == strip_trailing_whitespace(read_text(golden_dir() / (name + ".txt")))) {
      ++matched;
    } else if (mismatch.empty()) {
      mismatch = name;
    }
  }
  const std::string body = kit.get(TemplateId::judge).body;
  std::vector<int> marks;
  for (std::size_t pos = 0; (pos = body.find("Your mark: ", pos)) != std::string::npos;) {
    const auto end = body.find('\n', pos);
    marks.push_back(std::get<int>(parse_response(TemplateId::judge, body.substr(pos, end - pos))));
    pos = end;
  }
  std::ostringstream why;
  why << matched << "/7 templates identical";
  if (!mismatch.empty()) why << " (first mismatch: " << mismatch << ")";
  why << "; judge examples ->";
  for (int m : marks) why << " " << m;
  return {matched == 7 && marks == std::vector<int>{1, 3, 5}, why.str()};
}

// 5. Score scaling and order-independent means.
Outcome scoring() {
  const bool ends = std::abs(scaled_score(1) - 0.0) < 1e-9 && std::abs(scaled_score(3) - 50.0) < 1e-9 &&
                    std::abs(scaled_score(5) - 100.0) < 1e-9;
  std::vector<EvalRecord> recs;
  const int scores[] = {3, 5, 1};
  for (int i = 0; i < 3; ++i) {
    EvalRecord r;
    r.qid = "q" + std::to_string(i);
    r.condition = "baseline";
    r.qtype = QType::CW;
    r.judge_score = scores[i];
    recs.push_back(r);
  }
  const auto mean = aggregate(recs).overall.mean;
  const bool fifty = mean && *mean == 50.0;
  std::mt19937 rng(5);
  bool stable = true;
  for (int i = 0; i < 100; ++i) {
    std::shuffle(recs.begin(), recs.end(), rng);
    const auto m = aggregate(recs).overall.mean;
    stable = stable && m && *m == *mean;
  }
  std::ostringstream why;
  why << "s(1,3,5) = " << scaled_score(1) << "," << scaled_score(3) << "," << scaled_score(5) << "; mean [3,5,1] = "
      << (mean ? *mean : -1.0) << "; 100 shuffles " << (stable ? "stable" : "unstable");
  return {ends && fifty && stable, why.str()};
}

// 6. End-to-end evaluation with an echo subject and an exact-match judge.
Outcome echo_evaluation() {
  const auto start = std::chrono::steady_clock::now();
  const SplitInput split = synthetic_split("eval", 30, 240, 606);
  BuildSettings settings;
  settings.mode = GroundingMode::lexical;
  const PromptKit prompts = PromptKit::load_default();
  const auto bundles = run_build({split}, settings, prompts).splits.at(0).bundles;
  std::map<std::string, std::string> answers;
  for (const auto& b : bundles) answers[b.q0] = b.a0;
  Gateway gw(std::nullopt, RetryPolicy{0}, 8);
  gw.register_endpoint("echo", echo_model(answers));
  gw.register_endpoint("judge", exact_match_judge());
  std::vector<ScoreReport> reports;
  for (const char* c : {"baseline", "ct12", "ct34", "ct14"}) {
    const auto preds = run_condition(bundles, Condition::parse(c), gw, prompts, subject_settings("echo"));
    auto rep = aggregate(judge(preds, gw, prompts, {"judge"}));
    reports.push_back(std::move(rep));
  }
  const ComparisonTable table = compare(reports);
  const double elapsed = seconds_since(start);
  bool all100 = table.rows.size() == 4 && table.columns.size() == 9;
  for (const auto& row : table.rows) {
    all100 = all100 && row.values.size() == 9;
    for (const auto& v : row.values) all100 = all100 && v && std::abs(*v - 100.0) < 1e-9;
  }
  std::ostringstream why;
  why << table.rows.size() << "x" << table.columns.size() << " table over " << bundles.size() << " questions, "
      << (all100 ? "all 100.0" : "not all 100.0") << ", " << fmt_seconds(elapsed);
  return {all100 && elapsed < 60.0, why.str()};
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::string body = read_text(e.path());
    if (e.path().filename() == "manifest.json") {
      Json m = Json::parse(body);
      m.erase("created_at");
      body = m.dump();
    }
    files[fs::relative(e.path(), root).string()] = std::move(body);
  }
  return files;
}

// 7. Reproducible build and inference with a warm response cache.
Outcome reproducibility() {
  TempDir tmp;
  Json cfg_json = write_corpus(tmp / "corpus", 6, 30, 707);
  cfg_json["cache_dir"] = (tmp / "cache").string();
  const auto cfg = PipelineConfig::from_json(cfg_json, tmp / "corpus",
                                             [](const std::string&) -> std::optional<std::string> { return std::nullopt; });
  std::map<std::string, std::string> answers;
  for (const auto& q : synthetic_split("test", 6, 30, 707).questions) answers[q.question] = q.answer;
  auto subject = echo_model(answers);
  CommandContext ctx;
  ctx.endpoints = [&](const std::string&, const EndpointConfig&) -> std::shared_ptr<ChatEndpoint> { return subject; };
  const fs::path runs[] = {tmp / "run1", tmp / "run2"};
  for (const auto& r : runs) {
    if (cmd_build(cfg, r / "build", ctx) != kExitOk) return {false, "build failed"};
    if (cmd_infer(cfg, r / "build", "test", "ct14", r / "infer", ctx) != kExitOk) return {false, "infer failed"};
  }
  const auto a = snapshot(runs[0]);
  const auto b = snapshot(runs[1]);
  std::ostringstream why;
  why << a.size() << " files compared, endpoint called " << subject->calls() << " times for 30 questions";
  if (a != b) {
    for (const auto& [k, v] : a) {
      auto it = b.find(k);
      if (it == b.end() || it->second != v) {
        why << "; first difference: " << k;
        break;
      }
    }
  }
  return {a == b && subject->calls() == 30, why.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"4x expansion of 9188/1660 questions", expansion_scale},
      {"1000 random bundles structurally valid", random_bundle_validity},
      {"sampling and CoTask 2-4 match oracles on 500 fixtures", oracle_equivalence},
      {"golden prompts and judge examples", golden_prompts},
      {"score scaling and mean", scoring},
      {"echo model scores 100 under every injection condition", echo_evaluation},
      {"warm-cache reruns are byte-identical", reproducibility},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << ": " << criteria[i].first << " -- "
              << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
