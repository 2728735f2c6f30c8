#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cotasks/annotation.hpp"
#include "cotasks/cotask_builder.hpp"
#include "cotasks/cotask_types.hpp"
#include "cotasks/errors.hpp"
#include "cotasks/eval_harness.hpp"
#include "cotasks/pipeline.hpp"
#include "cotasks/prompt_kit.hpp"
#include "cotasks/timeline.hpp"

namespace py = pybind11;
using namespace cotasks;

// JSON crosses the boundary as text; the Python package wraps these with json.loads/dumps.

namespace {

using ViolationList = std::vector<std::pair<std::string, std::string>>;

ViolationList pairs(const std::vector<Violation>& v) {
  ViolationList out;
  for (const auto& x : v) out.emplace_back(x.code, x.detail);
  return out;
}

ParseOptions parse_options(bool strict) { return {strict ? ParseMode::strict : ParseMode::lenient, nullptr}; }

TemplateId template_of(const std::string& name) {
  auto id = template_id_from_string(name);
  if (!id) throw ArgumentError("unknown template '" + name + "'");
  return *id;
}

PromptKit kit_at(const std::optional<std::filesystem::path>& dir) {
  return dir ? PromptKit::load(*dir) : PromptKit::load_default();
}

std::vector<std::string> dump_all(const std::vector<Json>& rows) {
  std::vector<std::string> out;
  for (const auto& r : rows) out.push_back(r.dump());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the cotasks toolkit";
  m.attr("__version__") = kToolVersion;

  auto base = py::register_exception<Error>(m, "CotasksError");
  py::register_exception<ParseError>(m, "ParseError", base);
  py::register_exception<IntegrityError>(m, "IntegrityError", base);
  py::register_exception<ConstructionError>(m, "ConstructionError", base);
  py::register_exception<RenderError>(m, "RenderError", base);
  py::register_exception<ResponseParseError>(m, "ResponseParseError", base);
  py::register_exception<TransportError>(m, "TransportError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def(
      "uniform_sample", [](int frame_count, int k) { return uniform_sample(frame_count, k).orig_of; },
      py::arg("frame_count"), py::arg("k") = kDefaultSampleCount);
  m.def(
      "map_span",
      [](int begin_fid, int end_fid, int frame_count, int k) {
        return map_span(begin_fid, end_fid, uniform_sample(frame_count, k));
      },
      py::arg("begin_fid"), py::arg("end_fid"), py::arg("frame_count"), py::arg("k") = kDefaultSampleCount);

  m.def("normalize_category", [](const std::string& s) { return normalize_category(s); });
  m.def("is_valid_label", [](const std::string& s) { return is_valid_label(s); });

  m.def(
      "parse_vidor",
      [](const std::string& doc, const std::string& origin, bool strict) {
        const auto parsed = parse_vidor_json(Json::parse(doc), origin, parse_options(strict));
        return py::make_tuple(to_json(parsed.annotation).dump(), pairs(parsed.quarantined));
      },
      py::arg("document"), py::arg("origin") = "<memory>", py::arg("strict") = false);
  m.def(
      "parse_star",
      [](const std::string& doc, const std::string& origin, bool strict) {
        const auto parsed = parse_star_json(Json::parse(doc), origin, parse_options(strict));
        std::vector<Json> qs;
        for (const auto& q : parsed.questions) qs.push_back(to_json(q));
        return py::make_tuple(to_json(parsed.annotation).dump(), dump_all(qs), pairs(parsed.quarantined));
      },
      py::arg("document"), py::arg("origin") = "<memory>", py::arg("strict") = false);
  m.def("validate_annotation",
        [](const std::string& annotation) { return pairs(validate(annotation_from_json(Json::parse(annotation)))); });

  m.def(
      "build_bundle",
      [](const std::string& annotation, const std::string& question, const std::string& mode, int k,
         int timestamp_cap) {
        auto gm = grounding_mode_from_string(mode);
        if (!gm || *gm == GroundingMode::llm) throw ArgumentError("mode must be star_direct or lexical");
        const auto a = annotation_from_json(Json::parse(annotation));
        const auto rx = reindex(a, uniform_sample(a.frame_count, k));
        BundleContext ctx;
        ctx.mode = *gm;
        ctx.options.timestamp_cap = timestamp_cap;
        return to_json(build_bundle(qarecord_from_json(Json::parse(question)), rx, ctx)).dump();
      },
      py::arg("annotation"), py::arg("question"), py::arg("mode") = "lexical", py::arg("k") = kDefaultSampleCount,
      py::arg("timestamp_cap") = kDefaultTimestampCap);
  m.def(
      "check_bundle",
      [](const std::string& bundle, int timestamp_cap) {
        return pairs(check_bundle(bundle_from_json(Json::parse(bundle)), {timestamp_cap, nullptr}));
      },
      py::arg("bundle"), py::arg("timestamp_cap") = kDefaultTimestampCap);
  m.def(
      "expand",
      [](const std::vector<std::string>& bundles, const std::string& split,
         const std::optional<std::filesystem::path>& prompt_dir) {
        std::vector<CoTaskBundle> parsed;
        for (const auto& b : bundles) parsed.push_back(bundle_from_json(Json::parse(b)));
        std::vector<Json> rows;
        for (const auto& i : expand(parsed, kit_at(prompt_dir), split).instances) rows.push_back(to_json(i));
        return dump_all(rows);
      },
      py::arg("bundles"), py::arg("split") = "split", py::arg("prompt_dir") = std::nullopt);

  m.def("template_ids", [] {
    std::vector<std::string> out;
    for (auto id : kAllTemplates) out.emplace_back(to_string(id));
    return out;
  });
  m.def(
      "render_prompt",
      [](const std::string& template_id, const std::map<std::string, std::string>& slots,
         const std::optional<std::filesystem::path>& prompt_dir) {
        return kit_at(prompt_dir).render(template_of(template_id), Slots(slots.begin(), slots.end()));
      },
      py::arg("template_id"), py::arg("slots"), py::arg("prompt_dir") = std::nullopt);
  m.def("parse_judge", [](const std::string& raw) { return parse_judge(raw); });
  m.def("parse_response", [](const std::string& template_id, const std::string& raw) -> py::object {
    const auto parsed = parse_response(template_of(template_id), raw);
    if (auto* i = std::get_if<int>(&parsed)) return py::int_(*i);
    if (auto* s = std::get_if<std::string>(&parsed)) return py::str(*s);
    return std::visit(
        [](const auto& v) -> py::object {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::string>) {
            return py::none();
          } else {
            return py::str(to_json(v).dump());
          }
        },
        parsed);
  });

  m.def("scaled_score", &scaled_score);
  m.def(
      "aggregate",
      [](const std::vector<std::string>& records, int star_threshold) {
        std::vector<EvalRecord> parsed;
        for (const auto& r : records) parsed.push_back(eval_record_from_json(Json::parse(r)));
        return to_json(aggregate(parsed, {star_threshold})).dump();
      },
      py::arg("records"), py::arg("star_threshold") = 4);
  m.def("compare_reports", [](const std::vector<std::string>& reports) {
    std::vector<ScoreReport> parsed;
    for (const auto& r : reports) parsed.push_back(score_report_from_json(Json::parse(r)));
    const auto table = compare(parsed);
    return py::make_tuple(to_json(table).dump(), render_text(table));
  });
}
