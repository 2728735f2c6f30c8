#include "cotasks/cotask_builder.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "cotasks/errors.hpp"

namespace cotasks {

namespace {

const PredicateVocabulary& vocabulary_or_default(const PredicateVocabulary* v) {
  static const PredicateVocabulary defaults = PredicateVocabulary::defaults();
  return v != nullptr ? *v : defaults;
}

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool word_matches(const std::string& word, const std::string& base, bool allow_plural) {
  if (word == base) return true;
  if (!allow_plural) return false;
  if (word == base + "s" || word == base + "es") return true;
  return base.size() > 1 && base.back() == 'y' && word == base.substr(0, base.size() - 1) + "ies";
}

bool phrase_occurs(const std::vector<std::string>& words, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > words.size()) return false;
  for (std::size_t i = 0; i + phrase.size() <= words.size(); ++i) {
    bool ok = true;
    for (std::size_t k = 0; k < phrase.size() && ok; ++k) {
      ok = word_matches(words[i + k], phrase[k], k + 1 == phrase.size());
    }
    if (ok) return true;
  }
  return false;
}

bool mentions(const std::vector<std::string>& words, const std::string& category, const PredicateVocabulary& vocab) {
  if (phrase_occurs(words, words_of(category))) return true;
  for (const auto& syn : vocab.synonyms(category)) {
    if (phrase_occurs(words, words_of(syn))) return true;
  }
  return false;
}

int tid_of(const ReindexedAnnotation& video, const std::string& label) {
  const EntityRef* e = video.find_label(label);
  if (e == nullptr) throw ArgumentError("entity '" + label + "' is not in the catalog of " + video.video_id);
  return e->tid;
}

std::vector<std::string> catalog_order(std::vector<std::string> labels, const ReindexedAnnotation& video) {
  std::vector<std::string> out;
  for (const auto& e : video.catalog) {
    const std::string l = e.label();
    if (std::find(labels.begin(), labels.end(), l) != labels.end()) out.push_back(l);
  }
  for (const auto& l : labels) {
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  }
  return out;
}

RelationAnswer select_relations(const std::vector<RelationRecord>& pool, const CoTask1Answer& a1) {
  const std::set<std::string> entities(a1.entities.begin(), a1.entities.end());
  RelationAnswer out;
  for (const auto& r : pool) {
    if (!entities.contains(r.head) || !entities.contains(r.tail)) continue;
    auto it = std::lower_bound(a1.timestamps.begin(), a1.timestamps.end(), r.start_frame);
    if (it == a1.timestamps.end() || *it > r.end_frame) continue;
    out.push_back(r);
  }
  std::sort(out.begin(), out.end(), relation_order);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

QARecord reformulate_mc(const QARecord& record) {
  if (record.source != Source::star || !record.mc_options) return record;
  const auto& options = *record.mc_options;
  QARecord out = record;
  if (record.answer_index) {
    const int idx = *record.answer_index;
    if (idx < 0 || idx >= static_cast<int>(options.size())) {
      throw IntegrityError("ANSWER_INDEX", record.qid + ": answer index " + std::to_string(idx) + " out of range");
    }
    out.answer = options[static_cast<std::size_t>(idx)];
  } else if (std::find(options.begin(), options.end(), record.answer) == options.end()) {
    throw IntegrityError("ANSWER_NOT_IN_CHOICES", record.qid + ": answer '" + record.answer + "' is not an option");
  }
  if (!out.answer.empty() && out.answer.back() != '.' && out.answer.back() != '?' && out.answer.back() != '!') {
    out.answer.push_back('.');
  }
  out.mc_options.reset();
  out.answer_index.reset();
  return out;
}

std::vector<int> cap_uniform(const std::vector<int>& sorted, int cap) {
  if (cap < 1) throw ArgumentError("timestamp cap must be positive");
  const auto m = static_cast<long long>(sorted.size());
  if (m <= cap) return sorted;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(cap));
  for (long long j = 0; j < cap; ++j) out.push_back(sorted[static_cast<std::size_t>(j * m / cap)]);
  return out;
}

CoTask1Answer build_cotask1_star(const QARecord& record, const ReindexedAnnotation& video,
                                 const BuildOptions& options) {
  CoTask1Answer a;
  for (const auto& e : video.catalog) {
    if (std::binary_search(record.situation_tids.begin(), record.situation_tids.end(), e.tid)) {
      a.entities.push_back(e.label());
    }
  }
  if (a.entities.empty()) throw ConstructionError(record.qid + ": situation graph references no catalog entity");
  std::set<int> ts;
  for (int fid : record.keyframes) {
    if (auto t = video.map.timestamp_of(fid)) ts.insert(*t);
  }
  if (ts.empty()) throw ConstructionError(record.qid + ": no situation keyframe lies on the sampled timeline");
  a.timestamps = cap_uniform({ts.begin(), ts.end()}, options.timestamp_cap);
  return a;
}

CoTask1Answer build_cotask1_lexical(const QARecord& record, const ReindexedAnnotation& video,
                                    const BuildOptions& options) {
  const auto& vocab = vocabulary_or_default(options.vocabulary);
  const auto words = words_of(record.question);
  CoTask1Answer a;
  std::vector<int> tids;
  for (const auto& e : video.catalog) {
    if (mentions(words, e.category, vocab)) {
      a.entities.push_back(e.label());
      tids.push_back(e.tid);
    }
  }
  if (a.entities.empty()) throw ConstructionError(record.qid + ": question names no catalog entity");

  std::vector<int> all;
  std::vector<int> any;
  for (int t = 1; t <= video.num_frames(); ++t) {
    int present = 0;
    for (int tid : tids) present += video.box(tid, t) != nullptr ? 1 : 0;
    if (present == static_cast<int>(tids.size())) all.push_back(t);
    if (present > 0) any.push_back(t);
  }
  const auto& chosen = all.empty() ? any : all;
  if (chosen.empty()) throw ConstructionError(record.qid + ": matched entities never appear on the sampled timeline");
  a.timestamps = cap_uniform(chosen, options.timestamp_cap);
  return a;
}

GroundingResult build_cotask1_llm(const QARecord& record, const std::vector<std::filesystem::path>& frame_files,
                                  const ReindexedAnnotation& video, const GroundingModel& model,
                                  const BuildOptions& options) {
  if (model.gateway == nullptr || model.prompts == nullptr) throw ArgumentError("grounding model is not configured");
  if (static_cast<int>(frame_files.size()) != video.num_frames()) {
    throw ArgumentError(record.qid + ": expected " + std::to_string(video.num_frames()) + " frame files, got " +
                        std::to_string(frame_files.size()));
  }
  std::vector<std::string> labels;
  for (const auto& e : video.catalog) labels.push_back(e.label());
  const std::string prompt = model.prompts->render(
      TemplateId::cotask1_gen, cotask1_gen_slots(record.question, labels, video.num_frames()));

  ChatRequest request;
  request.model_id = model.model_id;
  request.temperature = model.temperature;
  request.max_tokens = model.max_tokens;
  for (const auto& f : frame_files) request.user_parts.push_back(ContentPart::image_file(f));
  request.user_parts.push_back(ContentPart::text(prompt));

  CheckOptions check{options.timestamp_cap, &video.catalog};
  GroundingResult result;
  for (int attempt = 1; attempt <= 2; ++attempt) {
    result.attempts = attempt;
    ChatResponse response;
    try {
      response = model.gateway->chat(request);
    } catch (const TransportError& e) {
      throw ConstructionError(record.qid + ": grounding request failed: " + e.what());
    }
    CoTask1Answer answer;
    try {
      answer = parse_cotask1(response.text);
    } catch (const ResponseParseError& e) {
      if (attempt == 2) throw ConstructionError(record.qid + ": grounding reply unparseable: " + e.what());
      result.notes.emplace_back(e.what());
      request.user_parts.push_back(ContentPart::text(corrective_instruction(TemplateId::cotask1_gen)));
      continue;
    }
    std::sort(answer.timestamps.begin(), answer.timestamps.end());
    answer.timestamps.erase(std::unique(answer.timestamps.begin(), answer.timestamps.end()), answer.timestamps.end());
    answer.entities = catalog_order(answer.entities, video);
    const auto violations = check_cotask1(answer, video.num_frames(), check);
    if (violations.empty()) {
      result.answer = std::move(answer);
      result.provenance = Provenance::llm_grounded;
      return result;
    }
    result.notes.push_back(violations.front().code + ": " + violations.front().detail);
    if (attempt == 1) request.user_parts.push_back(ContentPart::text(corrective_instruction(TemplateId::cotask1_gen)));
  }
  result.answer = build_cotask1_lexical(record, video, options);
  result.provenance = Provenance::lexical_fallback;
  return result;
}

CoTask2Answer build_cotask2(const CoTask1Answer& a1, const ReindexedAnnotation& video) {
  std::vector<std::pair<std::string, int>> ents;
  for (const auto& l : a1.entities) ents.emplace_back(l, tid_of(video, l));
  CoTask2Answer out;
  std::vector<int> ts = a1.timestamps;
  std::sort(ts.begin(), ts.end());
  for (int t : ts) {
    FrameObjects f;
    f.frame = t;
    for (const auto& [label, tid] : ents) {
      if (const BBox* b = video.box(tid, t)) f.objects.push_back({label, *b});
    }
    out.push_back(std::move(f));
  }
  return out;
}

RelationAnswer build_cotask3(const CoTask1Answer& a1, const ReindexedAnnotation& video) {
  return select_relations(video.spatial_relations, a1);
}

RelationAnswer build_cotask4(const CoTask1Answer& a1, [[maybe_unused]] const CoTask2Answer& a2,
                             [[maybe_unused]] const RelationAnswer& a3, const ReindexedAnnotation& video) {
  return select_relations(video.temporal_relations, a1);
}

CoTaskBundle assemble(const QARecord& record, int num_frames, CoTask1Answer a1, CoTask2Answer a2, RelationAnswer a3,
                      RelationAnswer a4, Provenance provenance) {
  CoTaskBundle b;
  b.qid = record.qid;
  b.video_id = record.video_id;
  b.qtype = record.qtype;
  b.source = record.source;
  b.num_frames = num_frames;
  b.q0 = record.question;
  b.a0 = record.answer;
  for (std::size_t n = 0; n < 4; ++n) b.questions[n] = std::string(kCoTaskQuestions[n]);
  b.a1 = std::move(a1);
  b.a2 = std::move(a2);
  b.a3 = std::move(a3);
  b.a4 = std::move(a4);
  b.provenance = provenance;
  return b;
}

std::string_view to_string(GroundingMode m) {
  switch (m) {
    case GroundingMode::star_direct: return "star_direct";
    case GroundingMode::llm: return "llm";
    case GroundingMode::lexical: return "lexical";
  }
  return "?";
}

std::optional<GroundingMode> grounding_mode_from_string(std::string_view s) {
  for (auto m : {GroundingMode::star_direct, GroundingMode::llm, GroundingMode::lexical}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

CoTaskBundle build_bundle(const QARecord& raw, const ReindexedAnnotation& video, const BundleContext& ctx) {
  const QARecord record = reformulate_mc(raw);
  CoTask1Answer a1;
  Provenance provenance = Provenance::lexical_fallback;
  if (record.source == Source::star && ctx.mode != GroundingMode::lexical) {
    a1 = build_cotask1_star(record, video, ctx.options);
    provenance = Provenance::star_direct;
  } else if (ctx.mode == GroundingMode::llm) {
    if (ctx.grounder == nullptr) throw ArgumentError("llm grounding mode needs a grounding model");
    auto g = build_cotask1_llm(record, ctx.frame_files, video, *ctx.grounder, ctx.options);
    a1 = std::move(g.answer);
    provenance = g.provenance;
  } else {
    a1 = build_cotask1_lexical(record, video, ctx.options);
  }
  auto a2 = build_cotask2(a1, video);
  auto a3 = build_cotask3(a1, video);
  auto a4 = build_cotask4(a1, a2, a3, video);
  return assemble(record, video.num_frames(), std::move(a1), std::move(a2), std::move(a3), std::move(a4), provenance);
}

Json to_json(const CoTaskInstance& i) {
  Json j;
  j["qid"] = i.qid;
  j["task_index"] = i.task_index;
  j["question_text"] = i.question_text;
  j["answer_json"] = i.answer_json;
  j["video_id"] = i.video_id;
  j["provenance"] = to_string(i.provenance);
  return j;
}

Json to_json(const SplitStats& s) {
  Json j;
  j["split"] = s.split;
  j["q0_input"] = s.q0_input;
  j["q0_quarantined"] = s.q0_quarantined;
  j["q0_surviving"] = s.q0_surviving;
  j["instances"] = s.instances;
  j["by_qtype"] = s.by_qtype;
  j["by_provenance"] = s.by_provenance;
  return j;
}

std::vector<CoTaskInstance> expand(const CoTaskBundle& bundle, const PromptKit& prompts) {
  std::vector<CoTaskInstance> out;
  out.reserve(4);
  const std::array<Json, 4> answers = {to_json(bundle.a1), to_json(bundle.a2), to_json(bundle.a3),
                                       to_json(bundle.a4)};
  for (int n = 1; n <= 4; ++n) {
    CoTaskInstance inst;
    inst.qid = bundle.qid;
    inst.task_index = n;
    inst.question_text = prompts.render(eval_template(n), cotask_eval_slots(n, bundle));
    inst.answer_json = format_value(answers[static_cast<std::size_t>(n - 1)], QuoteStyle::json);
    inst.video_id = bundle.video_id;
    inst.provenance = bundle.provenance;
    out.push_back(std::move(inst));
  }
  return out;
}

Expansion expand(const std::vector<CoTaskBundle>& bundles, const PromptKit& prompts, const std::string& split,
                 long long quarantined) {
  Expansion e;
  e.stats.split = split;
  e.stats.q0_quarantined = quarantined;
  e.stats.q0_surviving = static_cast<long long>(bundles.size());
  e.stats.q0_input = e.stats.q0_surviving + quarantined;
  e.instances.reserve(bundles.size() * 4);
  for (const auto& b : bundles) {
    auto four = expand(b, prompts);
    std::move(four.begin(), four.end(), std::back_inserter(e.instances));
    ++e.stats.by_qtype[std::string(to_string(b.qtype))];
    ++e.stats.by_provenance[std::string(to_string(b.provenance))];
  }
  e.stats.instances = static_cast<long long>(e.instances.size());
  return e;
}

}  // namespace cotasks
