#include "cotasks/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <ctime>
#include <set>
#include <sstream>
#include <thread>

#include "cotasks/digest.hpp"
#include "cotasks/errors.hpp"

namespace cotasks {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kQuestionCodes = {"ANSWER_INDEX", "ANSWER_NOT_IN_CHOICES", "QTYPE", "ANSWER_EMPTY"};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void ensure_fresh(const fs::path& dir) {
  if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
    throw ConfigError("output directory must be new or empty: " + dir.string());
  }
  fs::create_directories(dir);
}

/// Collects written files so the manifest can list their digests.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {}

  void write(const std::string& rel, const std::string& contents) {
    const fs::path p = root_ / rel;
    fs::create_directories(p.parent_path());
    write_file_atomic(p, contents);
    files_[rel] = sha256_hex(contents);
  }

  void write_manifest(Json body, const CommandContext& ctx) {
    body["created_at"] = ctx.clock ? ctx.clock() : utc_now();
    body["tool_version"] = kToolVersion;
    Json files = Json::object();
    for (const auto& [k, v] : files_) files[k] = v;
    body["files"] = std::move(files);
    write_file_atomic(root_ / "manifest.json", body.dump(2) + "\n");
  }

 private:
  fs::path root_;
  std::map<std::string, std::string> files_;
};

Json read_manifest(const fs::path& dir, const std::string& expected_command) {
  const fs::path p = dir / "manifest.json";
  if (!fs::exists(p)) throw ConfigError("not a run directory (no manifest.json): " + dir.string());
  Json m = read_json_file(p);
  if (m.value("command", "") != expected_command) {
    throw ConfigError(dir.string() + " holds '" + m.value("command", "?") + "' output, expected '" +
                      expected_command + "'");
  }
  return m;
}

std::vector<fs::path> list_json_files(const fs::path& root) {
  std::vector<fs::path> out;
  if (fs::is_directory(root)) {
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
  } else {
    out.push_back(root);
  }
  return out;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

PromptKit load_prompts(const PipelineConfig& config) {
  return config.prompt_dir ? PromptKit::load(*config.prompt_dir) : PromptKit::load_default();
}

PredicateVocabulary load_vocabulary(const PipelineConfig& config) {
  return config.vocabulary ? PredicateVocabulary::load(*config.vocabulary) : PredicateVocabulary::defaults();
}

std::unique_ptr<Gateway> make_gateway(const PipelineConfig& config, const CommandContext& ctx) {
  auto gw = std::make_unique<Gateway>(config.cache_dir, config.retry, config.max_in_flight);
  if (ctx.sleeper) gw->set_sleeper(ctx.sleeper);
  return gw;
}

void register_role(Gateway& gw, const PipelineConfig& config, const std::string& role, const CommandContext& ctx) {
  const EndpointConfig& ec = config.endpoint(role);
  gw.register_endpoint(ec.model, ctx.endpoints(role, ec), ec.max_images);
}

std::ostream& out_of(CommandContext& ctx) {
  static std::ostringstream sink;
  return ctx.out != nullptr ? *ctx.out : sink;
}

std::ostream& err_of(CommandContext& ctx) {
  static std::ostringstream sink;
  return ctx.err != nullptr ? *ctx.err : sink;
}

Json stats_json(const std::vector<SplitStats>& stats) {
  Json splits = Json::array();
  SplitStats total;
  total.split = "total";
  for (const auto& s : stats) {
    splits.push_back(to_json(s));
    total.q0_input += s.q0_input;
    total.q0_quarantined += s.q0_quarantined;
    total.q0_surviving += s.q0_surviving;
    total.instances += s.instances;
    for (const auto& [k, v] : s.by_qtype) total.by_qtype[k] += v;
    for (const auto& [k, v] : s.by_provenance) total.by_provenance[k] += v;
  }
  return {{"splits", std::move(splits)}, {"total", to_json(total)}};
}

}  // namespace

EndpointFactory default_endpoint_factory() {
  return [](const std::string& role, const EndpointConfig& ec) -> std::shared_ptr<ChatEndpoint> {
    if (ec.kind == "cache_only") return std::make_shared<CacheOnlyEndpoint>();
    if (ec.kind != "http") throw ConfigError("endpoint '" + role + "' has unknown kind '" + ec.kind + "'");
    return std::make_shared<HttpChatEndpoint>(HttpEndpointConfig{
        ec.base_url, ec.auth == "none" ? "" : ec.api_key, ec.model, ec.image_mode, ec.timeout_seconds});
  };
}

Json to_json(const QuarantineEntry& q) {
  return {{"split", q.split}, {"kind", q.kind}, {"id", q.id}, {"code", q.code}, {"detail", q.detail}};
}

SplitInput load_split(const PipelineConfig& config, const SplitConfig& split, const PredicateVocabulary& vocabulary) {
  SplitInput in;
  in.name = split.name;
  const ParseOptions popt{config.parse_mode, &vocabulary};
  const bool strict = config.parse_mode == ParseMode::strict;
  if (!fs::exists(split.annotations)) throw ConfigError("annotations not found: " + split.annotations.string());
  std::set<std::string> seen;
  auto add_video = [&](NormalizedAnnotation a, const std::string& origin) {
    if (!seen.insert(a.video_id).second) {
      if (strict) throw IntegrityError("DUPLICATE_VIDEO", origin + ": video '" + a.video_id + "' defined twice");
      in.quarantined.push_back({split.name, "annotation", a.video_id, "DUPLICATE_VIDEO", "defined again in " + origin});
      return false;
    }
    in.videos.push_back(std::move(a));
    return true;
  };
  auto quarantine_parsed = [&](const ParsedVideo& pv) {
    for (const auto& v : pv.quarantined) {
      in.quarantined.push_back({split.name, kQuestionCodes.contains(v.code) ? "question" : "annotation",
                                pv.annotation.video_id, v.code, v.detail});
    }
  };

  if (ends_with(split.annotations.string(), ".jsonl")) {
    for (const auto& row : read_jsonl(split.annotations)) add_video(annotation_from_json(row), split.annotations.string());
  } else {
    const fs::path root = fs::is_directory(split.annotations) ? split.annotations : split.annotations.parent_path();
    for (const auto& file : list_json_files(split.annotations)) {
      const std::string rel = fs::relative(file, root).generic_string();
      try {
        ParsedVideo pv = config.source == Source::star ? parse_star(file, popt) : parse_vidor(file, popt);
        quarantine_parsed(pv);
        if (add_video(pv.annotation, rel)) {
          for (auto& q : pv.questions) in.questions.push_back(std::move(q));
        }
      } catch (const ParseError& e) {
        if (strict) throw;
        in.quarantined.push_back({split.name, "file", rel, "PARSE", e.what()});
      }
    }
  }

  if (split.questions) {
    if (!fs::exists(*split.questions)) throw ConfigError("questions not found: " + split.questions->string());
    in.questions.clear();
    if (ends_with(split.questions->string(), ".jsonl")) {
      for (const auto& row : read_jsonl(*split.questions)) in.questions.push_back(qarecord_from_json(row));
    } else {
      auto pq = parse_nextqa_csv(*split.questions, popt);
      for (const auto& v : pq.quarantined) {
        in.quarantined.push_back({split.name, "question", split.questions->filename().string(), v.code, v.detail});
      }
      in.questions = std::move(pq.records);
    }
  }
  return in;
}

std::vector<fs::path> frame_paths(const fs::path& frames_dir, const std::string& video_id, int num_frames) {
  std::vector<fs::path> out;
  out.reserve(static_cast<std::size_t>(num_frames));
  for (int t = 1; t <= num_frames; ++t) out.push_back(frames_dir / video_id / (std::to_string(t) + ".jpg"));
  return out;
}

BuildOutput run_build(const std::vector<SplitInput>& inputs, const BuildSettings& settings, const PromptKit& prompts) {
  BuildOutput out;
  std::map<std::string, NormalizedAnnotation> all_videos;
  std::set<std::string> dropped_reported;
  const bool strict = settings.parse_mode == ParseMode::strict;

  for (const auto& in : inputs) {
    SplitOutput split;
    split.name = in.name;
    split.quarantined = in.quarantined;
    std::map<std::string, ReindexedAnnotation> videos;
    for (const auto& v : in.videos) {
      const auto violations = validate(v, settings.options.vocabulary);
      if (!violations.empty()) {
        if (strict) throw IntegrityError(violations.front().code, v.video_id + ": " + violations.front().detail);
        for (const auto& viol : violations) {
          split.quarantined.push_back({in.name, "annotation", v.video_id, viol.code, viol.detail});
        }
        continue;
      }
      auto rx = reindex(v, uniform_sample(v.frame_count, settings.k));
      if (dropped_reported.insert(v.video_id).second) out.drops.push_back(rx.drops);
      all_videos.emplace(v.video_id, v);
      videos.emplace(v.video_id, std::move(rx));
    }

    const std::size_t n = in.questions.size();
    std::vector<std::optional<CoTaskBundle>> built(n);
    std::vector<std::optional<QuarantineEntry>> failed(n);
    parallel_for(n, settings.workers, [&](std::size_t i) {
      const QARecord& q = in.questions[i];
      auto fail = [&](std::string code, std::string detail) {
        failed[i] = QuarantineEntry{in.name, "question", q.qid, std::move(code), std::move(detail)};
      };
      auto it = videos.find(q.video_id);
      if (it == videos.end()) return fail("UNKNOWN_VIDEO", "no usable annotation for video '" + q.video_id + "'");
      BundleContext bc;
      bc.mode = settings.mode;
      bc.options = settings.options;
      bc.grounder = settings.grounder;
      const bool needs_frames = settings.mode == GroundingMode::llm &&
                                !(q.source == Source::star && settings.mode != GroundingMode::lexical);
      if (needs_frames) {
        if (!settings.frames_dir) return fail("FRAMES_MISSING", "llm grounding needs frames_dir");
        bc.frame_files = frame_paths(*settings.frames_dir, q.video_id, it->second.num_frames());
        for (const auto& f : bc.frame_files) {
          if (!fs::exists(f)) return fail("FRAMES_MISSING", f.string());
        }
      }
      try {
        CoTaskBundle b = build_bundle(q, it->second, bc);
        CheckOptions co{settings.options.timestamp_cap, &it->second.catalog};
        const auto violations = check_bundle(b, co);
        if (!violations.empty()) return fail(violations.front().code, violations.front().detail);
        built[i] = std::move(b);
      } catch (const ConstructionError& e) {
        fail("CONSTRUCTION", e.what());
      } catch (const IntegrityError& e) {
        fail(e.code(), e.what());
      }
    });

    for (std::size_t i = 0; i < n; ++i) {
      if (built[i]) split.bundles.push_back(std::move(*built[i]));
      if (failed[i]) split.quarantined.push_back(std::move(*failed[i]));
    }
    const auto q_quarantined = std::count_if(split.quarantined.begin(), split.quarantined.end(),
                                             [](const QuarantineEntry& e) { return e.kind == "question"; });
    split.expansion = expand(split.bundles, prompts, in.name, q_quarantined);
    out.splits.push_back(std::move(split));
  }
  for (auto& [id, v] : all_videos) out.videos.push_back(std::move(v));
  return out;
}

std::string render_stats(const std::vector<SplitStats>& stats) {
  std::ostringstream os;
  os << "| Split | Q0 | Filtered | Surviving Q0 | CoTask instances |\n|---|---|---|---|---|\n";
  SplitStats total;
  std::map<std::string, std::map<std::string, long long>> qtypes;
  for (const auto& s : stats) {
    os << "| " << s.split << " | " << s.q0_input << " | " << s.q0_quarantined << " | " << s.q0_surviving << " | "
       << s.instances << " |\n";
    total.q0_input += s.q0_input;
    total.q0_quarantined += s.q0_quarantined;
    total.q0_surviving += s.q0_surviving;
    total.instances += s.instances;
    for (const auto& [k, v] : s.by_qtype) qtypes[k][s.split] = v;
  }
  os << "| Total | " << total.q0_input << " | " << total.q0_quarantined << " | " << total.q0_surviving << " | "
     << total.instances << " |\n";
  if (!qtypes.empty()) {
    os << "\n| Question type |";
    for (const auto& s : stats) os << " " << s.split << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < stats.size(); ++i) os << "---|";
    os << "\n";
    for (const auto& [q, per] : qtypes) {
      os << "| " << q << " |";
      for (const auto& s : stats) {
        auto it = per.find(s.split);
        os << " " << (it == per.end() ? 0 : it->second) << " |";
      }
      os << "\n";
    }
  }
  return os.str();
}

int cmd_build(const PipelineConfig& config, const fs::path& out_dir, CommandContext& ctx) {
  const PredicateVocabulary vocab = load_vocabulary(config);
  const PromptKit prompts = load_prompts(config);

  std::unique_ptr<Gateway> gateway;
  GroundingModel grounder;
  if (config.grounding == GroundingMode::llm) {
    const EndpointConfig& ec = config.endpoint("grounder");
    if (!config.frames_dir) throw ConfigError("grounding mode llm needs frames_dir");
    gateway = make_gateway(config, ctx);
    register_role(*gateway, config, "grounder", ctx);
    grounder = {gateway.get(), &prompts, ec.model, ec.temperature, ec.max_tokens};
  }
  ensure_fresh(out_dir);

  std::vector<SplitInput> inputs;
  for (const auto& s : config.splits) inputs.push_back(load_split(config, s, vocab));

  BuildSettings settings;
  settings.k = config.k;
  settings.mode = config.grounding;
  settings.options = {config.timestamp_cap, &vocab};
  settings.parse_mode = config.parse_mode;
  settings.grounder = gateway ? &grounder : nullptr;
  settings.frames_dir = config.frames_dir;
  settings.workers = gateway ? config.max_in_flight : 1;
  const BuildOutput built = run_build(inputs, settings, prompts);

  OutputDir out(out_dir);
  std::vector<Json> rows;
  for (const auto& v : built.videos) rows.push_back(to_json(v));
  out.write("normalized/annotations.jsonl", to_jsonl(rows));
  for (const auto& in : inputs) {
    rows.clear();
    for (const auto& q : in.questions) rows.push_back(to_json(q));
    out.write("normalized/questions_" + in.name + ".jsonl", to_jsonl(rows));
  }
  std::vector<Json> quarantine;
  std::vector<SplitStats> stats;
  Json split_counts = Json::array();
  for (const auto& s : built.splits) {
    rows.clear();
    for (const auto& b : s.bundles) rows.push_back(to_json(b));
    out.write("bundles/" + s.name + ".jsonl", to_jsonl(rows));
    rows.clear();
    for (const auto& i : s.expansion.instances) rows.push_back(to_json(i));
    out.write("cotasks/" + s.name + ".jsonl", to_jsonl(rows));
    for (const auto& q : s.quarantined) quarantine.push_back(to_json(q));
    stats.push_back(s.expansion.stats);
    split_counts.push_back({{"split", s.name},
                            {"q0_surviving", s.expansion.stats.q0_surviving},
                            {"q0_quarantined", s.expansion.stats.q0_quarantined},
                            {"instances", s.expansion.stats.instances}});
  }
  out.write("quarantine.jsonl", to_jsonl(quarantine));
  rows.clear();
  for (const auto& d : built.drops) {
    rows.push_back(
        {{"video_id", d.video_id}, {"relations_dropped", d.relations_dropped}, {"entities_unsampled", d.entities_unsampled}});
  }
  out.write("drops.jsonl", to_jsonl(rows));
  out.write("stats.json", stats_json(stats).dump(2) + "\n");
  const std::string table = render_stats(stats);
  out.write("stats.txt", table);
  out.write_manifest({{"command", "build"},
                      {"config_digest", config.digest()},
                      {"prompt_digest", prompts.digest()},
                      {"vocabulary_digest", sha256_hex(vocab.to_json().dump())},
                      {"k", config.k},
                      {"timestamp_cap", config.timestamp_cap},
                      {"grounding", to_string(config.grounding)},
                      {"splits", std::move(split_counts)}},
                     ctx);
  out_of(ctx) << table;
  if (gateway) {
    const auto st = gateway->stats();
    err_of(ctx) << "grounder: " << st.requests << " requests, " << st.cache_hits << " cache hits, " << st.retries
                << " retries, " << st.failures << " failures\n";
  }
  return kExitOk;
}

namespace {

struct Finding {
  std::string file;
  std::size_t line = 0;
  std::string id;
  std::string code;
  std::string detail;
};

void validate_annotation_rows(const fs::path& file, std::vector<Finding>& findings,
                              std::map<std::string, NormalizedAnnotation>* catalog_out) {
  std::size_t line = 0;
  for (const auto& row : read_jsonl(file)) {
    ++line;
    try {
      auto a = annotation_from_json(row);
      for (const auto& v : validate(a)) findings.push_back({file.string(), line, a.video_id, v.code, v.detail});
      if (catalog_out != nullptr) catalog_out->emplace(a.video_id, std::move(a));
    } catch (const Error& e) {
      findings.push_back({file.string(), line, "", "SCHEMA", e.what()});
    }
  }
}

std::size_t validate_bundle_rows(const fs::path& file, std::vector<Finding>& findings,
                                 const std::map<std::string, NormalizedAnnotation>* videos) {
  std::size_t line = 0;
  std::size_t count = 0;
  for (const auto& row : read_jsonl(file)) {
    ++line;
    CoTaskBundle b;
    try {
      b = bundle_from_json(row);
    } catch (const Error& e) {
      findings.push_back({file.string(), line, row.value("qid", ""), "SCHEMA", e.what()});
      continue;
    }
    ++count;
    CheckOptions co;
    if (videos != nullptr) {
      auto it = videos->find(b.video_id);
      if (it == videos->end()) {
        findings.push_back({file.string(), line, b.qid, "UNKNOWN_VIDEO", b.video_id});
      } else {
        co.catalog = &it->second.catalog;
      }
    }
    for (const auto& v : check_bundle(b, co)) findings.push_back({file.string(), line, b.qid, v.code, v.detail});
  }
  return count;
}

void validate_instance_rows(const fs::path& file, std::vector<Finding>& findings, std::optional<std::size_t> bundles) {
  std::size_t line = 0;
  std::map<std::string, std::set<int>> tasks;
  for (const auto& row : read_jsonl(file)) {
    ++line;
    const std::string qid = row.value("qid", "");
    const int n = row.value("task_index", 0);
    if (n < 1 || n > 4) findings.push_back({file.string(), line, qid, "TASK_INDEX", std::to_string(n)});
    if (!tasks[qid].insert(n).second) findings.push_back({file.string(), line, qid, "DUPLICATE_TASK", std::to_string(n)});
  }
  for (const auto& [qid, s] : tasks) {
    if (s.size() != 4) findings.push_back({file.string(), 0, qid, "EXPANSION", std::to_string(s.size()) + " tasks"});
  }
  if (bundles && tasks.size() != *bundles) {
    findings.push_back({file.string(), 0, "", "EXPANSION",
                        std::to_string(tasks.size()) + " qids vs " + std::to_string(*bundles) + " bundles"});
  }
}

}  // namespace

int cmd_validate(const std::vector<fs::path>& paths, CommandContext& ctx, bool json_output) {
  std::vector<Finding> findings;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw ConfigError("path not found: " + p.string());
    if (fs::is_directory(p)) {
      std::map<std::string, NormalizedAnnotation> videos;
      const fs::path ann = p / "normalized" / "annotations.jsonl";
      if (fs::exists(ann)) validate_annotation_rows(ann, findings, &videos);
      if (!fs::exists(p / "bundles")) throw ConfigError("not a build directory: " + p.string());
      std::vector<fs::path> bundle_files;
      for (const auto& e : fs::directory_iterator(p / "bundles")) bundle_files.push_back(e.path());
      std::sort(bundle_files.begin(), bundle_files.end());
      for (const auto& bf : bundle_files) {
        const auto count = validate_bundle_rows(bf, findings, fs::exists(ann) ? &videos : nullptr);
        const fs::path inst = p / "cotasks" / bf.filename();
        if (fs::exists(inst)) validate_instance_rows(inst, findings, count);
      }
      continue;
    }
    const auto rows = read_jsonl(p);
    if (rows.empty()) continue;
    if (rows.front().contains("a1")) {
      validate_bundle_rows(p, findings, nullptr);
    } else if (rows.front().contains("schema_version")) {
      validate_annotation_rows(p, findings, nullptr);
    } else if (rows.front().contains("task_index")) {
      validate_instance_rows(p, findings, std::nullopt);
    } else {
      findings.push_back({p.string(), 1, "", "SCHEMA", "unrecognized record type"});
    }
  }
  if (json_output) {
    Json list = Json::array();
    for (const auto& f : findings) {
      list.push_back({{"file", f.file}, {"line", f.line}, {"id", f.id}, {"code", f.code}, {"detail", f.detail}});
    }
    out_of(ctx) << Json{{"clean", findings.empty()}, {"violations", std::move(list)}}.dump(2) << "\n";
  } else {
    for (const auto& f : findings) {
      out_of(ctx) << f.file << ":" << f.line << ": " << (f.id.empty() ? "" : f.id + " ") << f.code << " " << f.detail
                  << "\n";
    }
    out_of(ctx) << (findings.empty() ? "clean" : std::to_string(findings.size()) + " violation(s)") << "\n";
  }
  return findings.empty() ? kExitOk : kExitInvalid;
}

int cmd_stats(const fs::path& build_dir, CommandContext& ctx) {
  read_manifest(build_dir, "build");
  std::map<std::string, long long> quarantined;
  if (fs::exists(build_dir / "quarantine.jsonl")) {
    for (const auto& q : read_jsonl(build_dir / "quarantine.jsonl")) {
      if (q.value("kind", "") == "question") ++quarantined[q.value("split", "")];
    }
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(build_dir / "bundles")) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<SplitStats> stats;
  for (const auto& f : files) {
    SplitStats s;
    s.split = f.stem().string();
    for (const auto& row : read_jsonl(f)) {
      ++s.q0_surviving;
      ++s.by_qtype[row.value("qtype", "?")];
      ++s.by_provenance[row.value("provenance", "?")];
    }
    s.q0_quarantined = quarantined[s.split];
    s.q0_input = s.q0_surviving + s.q0_quarantined;
    const fs::path inst = build_dir / "cotasks" / f.filename();
    if (fs::exists(inst)) s.instances = static_cast<long long>(read_jsonl(inst).size());
    stats.push_back(std::move(s));
  }
  out_of(ctx) << render_stats(stats);
  return kExitOk;
}

int cmd_infer(const PipelineConfig& config, const fs::path& build_dir, const std::string& split,
              const std::string& condition_id, const fs::path& out_dir, CommandContext& ctx) {
  const Condition condition = Condition::parse(condition_id);
  const EndpointConfig& ec = config.endpoint("subject");
  const Json build_manifest = read_manifest(build_dir, "build");
  const fs::path bundles_file = build_dir / "bundles" / (split + ".jsonl");
  if (!fs::exists(bundles_file)) throw ConfigError("split '" + split + "' not found in " + build_dir.string());
  const PromptKit prompts = load_prompts(config);
  auto gateway_ptr = make_gateway(config, ctx);
  Gateway& gateway = *gateway_ptr;
  register_role(gateway, config, "subject", ctx);
  ensure_fresh(out_dir);

  std::vector<CoTaskBundle> bundles;
  for (const auto& row : read_jsonl(bundles_file)) bundles.push_back(bundle_from_json(row));

  InferenceSettings settings;
  settings.model_id = ec.model;
  settings.temperature = ec.temperature;
  settings.max_tokens = ec.max_tokens;
  settings.max_in_flight = config.max_in_flight;
  if (config.frames_dir) {
    const fs::path dir = *config.frames_dir;
    settings.frames = [dir](const std::string& video_id, int num_frames) {
      auto paths = frame_paths(dir, video_id, num_frames);
      for (const auto& p : paths) {
        if (!fs::exists(p)) throw ConfigError("missing frame image: " + p.string());
      }
      return paths;
    };
  } else {
    err_of(ctx) << "warning: no frames_dir configured; prompts are text-only\n";
  }
  const auto predictions = run_condition(bundles, condition, gateway, prompts, settings);

  OutputDir out(out_dir);
  std::vector<Json> rows;
  long long invalid = 0;
  long long errors = 0;
  for (const auto& p : predictions) {
    rows.push_back(to_json(p));
    invalid += p.invalid ? 1 : 0;
    errors += (!p.invalid && !p.error.empty()) ? 1 : 0;
  }
  out.write("predictions.jsonl", to_jsonl(rows));
  out.write_manifest({{"command", "infer"},
                      {"config_digest", config.digest()},
                      {"prompt_digest", prompts.digest()},
                      {"build_config_digest", build_manifest.value("config_digest", "")},
                      {"bundles_sha256", sha256_file_hex(bundles_file)},
                      {"split", split},
                      {"condition", condition.id},
                      {"model_id", ec.model},
                      {"predictions", predictions.size()},
                      {"invalid_predictions", invalid},
                      {"inference_errors", errors}},
                     ctx);
  const auto st = gateway.stats();
  err_of(ctx) << "subject: " << st.requests << " requests, " << st.cache_hits << " cache hits, " << st.retries
              << " retries, " << st.failures << " failures\n";
  out_of(ctx) << condition.id << ": " << predictions.size() << " predictions (" << invalid << " invalid, " << errors
              << " errors)\n";
  return kExitOk;
}

int cmd_judge(const PipelineConfig& config, const fs::path& run_dir, const fs::path& out_dir, CommandContext& ctx) {
  const Json run_manifest = read_manifest(run_dir, "infer");
  const EndpointConfig& ec = config.endpoint("judge");
  const PromptKit prompts = load_prompts(config);
  auto gateway_ptr = make_gateway(config, ctx);
  Gateway& gateway = *gateway_ptr;
  register_role(gateway, config, "judge", ctx);
  ensure_fresh(out_dir);

  std::vector<Prediction> predictions;
  for (const auto& row : read_jsonl(run_dir / "predictions.jsonl")) predictions.push_back(prediction_from_json(row));
  if (predictions.empty()) err_of(ctx) << "warning: no predictions to judge; the report is empty\n";

  JudgeSettings settings{ec.model, ec.temperature, ec.max_tokens, config.max_in_flight};
  const auto records = judge(predictions, gateway, prompts, settings);
  ScoreReport report = aggregate(records, {config.star_threshold});
  if (records.empty()) {
    report.condition = run_manifest.value("condition", "");
    report.model_id = run_manifest.value("model_id", "");
  }

  OutputDir out(out_dir);
  std::vector<Json> rows;
  for (const auto& r : records) rows.push_back(to_json(r));
  out.write("eval_records.jsonl", to_jsonl(rows));
  out.write("score_report.json", to_json(report).dump(2) + "\n");
  const std::string table = render_text(compare({report}));
  out.write("score_report.txt", table);
  out.write_manifest({{"command", "judge"},
                      {"config_digest", config.digest()},
                      {"prompt_digest", prompts.digest()},
                      {"predictions_sha256", sha256_file_hex(run_dir / "predictions.jsonl")},
                      {"condition", run_manifest.value("condition", "")},
                      {"model_id", run_manifest.value("model_id", "")},
                      {"judge_model_id", ec.model},
                      {"records", records.size()},
                      {"invalid_judge", report.invalid_judge}},
                     ctx);
  out_of(ctx) << table;
  return kExitOk;
}

int cmd_report(const std::vector<fs::path>& judge_dirs, const fs::path& out_dir, CommandContext& ctx) {
  if (judge_dirs.empty()) throw ArgumentError("report needs at least one judge run");
  std::vector<ScoreReport> reports;
  std::set<std::string> models;
  for (const auto& d : judge_dirs) {
    read_manifest(d, "judge");
    reports.push_back(score_report_from_json(read_json_file(d / "score_report.json")));
    models.insert(reports.back().model_id);
  }
  if (models.size() > 1) {
    for (auto& r : reports) r.condition = r.model_id + " / " + r.condition;
  }
  ComparisonTable table;
  try {
    table = compare(reports);
  } catch (const IntegrityError& e) {
    err_of(ctx) << "refused: " << e.what() << "\n";
    return kExitInvalid;
  }
  ensure_fresh(out_dir);
  OutputDir out(out_dir);
  out.write("table.json", to_json(table).dump(2) + "\n");
  const std::string text = render_text(table);
  out.write("table.txt", text);
  Json reps = Json::array();
  for (const auto& r : reports) reps.push_back(to_json(r));
  out.write("reports.json", reps.dump(2) + "\n");
  out.write_manifest({{"command", "report"}, {"runs", judge_dirs.size()}}, ctx);
  out_of(ctx) << text;
  return kExitOk;
}

}  // namespace cotasks
