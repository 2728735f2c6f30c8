#include <gtest/gtest.h>

#include <numeric>

#include "cotasks/cotask_builder.hpp"
#include "cotasks/cotask_types.hpp"
#include "cotasks/errors.hpp"
#include "test_support.hpp"

using namespace cotasks;
using namespace cotasks::testing;

namespace {

bool has(const std::vector<Violation>& v, const std::string& code) {
  return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.code == code; });
}

CoTaskBundle handbag_bundle() {
  const auto a = handbag_annotation();
  const auto rx = reindex(a, uniform_sample(a.frame_count));
  const auto a1 = handbag_a1();
  auto a2 = build_cotask2(a1, rx);
  auto a3 = build_cotask3(a1, rx);
  auto a4 = build_cotask4(a1, a2, a3, rx);
  return assemble(handbag_question(), rx.num_frames(), a1, a2, a3, a4, Provenance::lexical_fallback);
}

}  // namespace

TEST(CheckCoTask1, AcceptsWellFormedAnswer) { EXPECT_TRUE(check_cotask1(handbag_a1(), 64).empty()); }

TEST(CheckCoTask1, FlagsEachViolation) {
  EXPECT_TRUE(has(check_cotask1({{"0_adult"}, {}}, 64), "A1_BOUNDS"));
  std::vector<int> seventeen(17);
  std::iota(seventeen.begin(), seventeen.end(), 1);
  EXPECT_TRUE(has(check_cotask1({{"0_adult"}, seventeen}, 64), "A1_BOUNDS"));
  EXPECT_TRUE(check_cotask1({{"0_adult"}, seventeen}, 64, {17, nullptr}).empty());
  EXPECT_TRUE(has(check_cotask1({{"0_adult"}, {0, 3}}, 64), "A1_RANGE"));
  EXPECT_TRUE(has(check_cotask1({{"0_adult"}, {3, 65}}, 64), "A1_RANGE"));
  EXPECT_TRUE(has(check_cotask1({{"0_adult"}, {5, 3}}, 64), "A1_ORDER"));
  EXPECT_TRUE(has(check_cotask1({{"0_adult"}, {3, 3}}, 64), "A1_ORDER"));
  EXPECT_TRUE(has(check_cotask1({{}, {3}}, 64), "A1_EMPTY_ENTITIES"));
  EXPECT_TRUE(has(check_cotask1({{"adult"}, {3}}, 64), "LABEL_FORMAT"));
  EXPECT_TRUE(has(check_cotask1({{"0_adult", "0_adult"}, {3}}, 64), "A1_DUPLICATE_ENTITY"));
  const std::vector<EntityRef> catalog = {{0, "adult"}};
  EXPECT_TRUE(has(check_cotask1({{"1_car"}, {3}}, 64, {16, &catalog}), "A1_UNKNOWN_ENTITY"));
  EXPECT_TRUE(check_cotask1({{"0_adult"}, {3}}, 64, {16, &catalog}).empty());
}

TEST(CheckBundle, HandbagChainIsConsistent) {
  const auto b = handbag_bundle();
  const auto catalog = handbag_annotation().catalog;
  EXPECT_TRUE(check_bundle(b, {16, &catalog}).empty());
}

TEST(CheckBundle, FlagsBrokenChain) {
  auto b = handbag_bundle();
  b.a2.pop_back();
  EXPECT_TRUE(has(check_bundle(b), "CHAIN_MISMATCH"));

  b = handbag_bundle();
  b.a2[0].objects.push_back({"1_car", {0, 0, 5, 5}});
  EXPECT_TRUE(has(check_bundle(b), "A2_LABEL"));

  b = handbag_bundle();
  b.a2[0].objects[0].bbox = {10, 0, 10, 5};
  EXPECT_TRUE(has(check_bundle(b), "BBOX_DEGENERATE"));
  b.a2[0].objects[0].bbox = {-1, 0, 10, 5};
  EXPECT_TRUE(has(check_bundle(b), "BBOX_NEGATIVE"));

  b = handbag_bundle();
  b.a3.push_back({"0_adult", "next_to", "1_car", 1, 2});
  EXPECT_TRUE(has(check_bundle(b), "A3_ENTITY"));
  b = handbag_bundle();
  b.a4.push_back({"0_adult", "hold", "0_adult", 1, 2});
  EXPECT_TRUE(has(check_bundle(b), "A4_SELF"));
  b = handbag_bundle();
  b.a4.push_back({"0_adult", "hold", "3_handbag", 4, 2});
  EXPECT_TRUE(has(check_bundle(b), "A4_SPAN"));
  b.a4.back() = {"0_adult", "hold", "3_handbag", 4, 65};
  EXPECT_TRUE(has(check_bundle(b), "A4_SPAN"));
  b.a4.back() = {"0_adult", "", "3_handbag", 4, 5};
  EXPECT_TRUE(has(check_bundle(b), "A4_PREDICATE"));
}

TEST(CoTaskJson, FieldOrderIsFixed) {
  EXPECT_EQ(to_json(handbag_a1()).dump(), R"({"entities":["0_adult","3_handbag"],"timestamps":[1,5,9,12,15]})");
  const FrameObjects f{1, {{"0_adult", {262, 2, 400, 333}}}};
  EXPECT_EQ(to_json(f).dump(), R"({"frame":1,"objects":[{"label":"0_adult","bbox":[262,2,400,333]}]})");
  const RelationRecord r{"0_adult", "next_to", "3_handbag", 1, 12};
  EXPECT_EQ(to_json(r).dump(),
            R"({"head":"0_adult","relation":"next_to","tail":"3_handbag","start_frame":1,"end_frame":12})");
}

TEST(CoTaskJson, BundleRoundTrip) {
  const auto b = handbag_bundle();
  EXPECT_EQ(bundle_from_json(Json::parse(to_json(b).dump())), b);
}

TEST(CoTaskJson, RandomAnswersRoundTrip) {
  std::mt19937 rng(9);
  for (int i = 0; i < 300; ++i) {
    const auto a = random_annotation(rng);
    const auto rx = reindex(a, uniform_sample(a.frame_count));
    const auto a1 = random_a1(rng, rx);
    const auto a2 = build_cotask2(a1, rx);
    const auto a3 = build_cotask3(a1, rx);
    EXPECT_EQ(cotask1_from_json(to_json(a1)), a1);
    EXPECT_EQ(cotask2_from_json(to_json(a2)), a2);
    EXPECT_EQ(relations_from_json(to_json(a3)), a3);
  }
}

TEST(CoTaskJson, LegacyObjectsKeyIsAccepted) {
  const auto a = cotask1_from_json(Json::parse(R"({"objects":["0_adult"],"timestamps":[2]})"));
  EXPECT_EQ(a.entities, std::vector<std::string>{"0_adult"});
  EXPECT_EQ(a.timestamps, std::vector<int>{2});
}

TEST(CoTaskJson, MalformedAnswersRaiseParseError) {
  EXPECT_THROW(cotask1_from_json(Json::parse(R"({"timestamps":[2]})")), ParseError);
  EXPECT_THROW(cotask1_from_json(Json::parse(R"({"entities":"0_adult","timestamps":[2]})")), ParseError);
  EXPECT_THROW(cotask2_from_json(Json::parse(R"([{"frame":1,"objects":[{"label":"a","bbox":[1,2,3]}]}])")),
               ParseError);
  EXPECT_THROW(relations_from_json(Json::parse(R"([{"head":"0_a"}])")), ParseError);
  EXPECT_THROW(bundle_from_json(Json::parse(R"({"qid":"x"})")), ParseError);
}

TEST(Provenance, StringRoundTrip) {
  for (auto p : {Provenance::star_direct, Provenance::llm_grounded, Provenance::lexical_fallback}) {
    EXPECT_EQ(provenance_from_string(to_string(p)), p);
  }
  EXPECT_FALSE(provenance_from_string("guess").has_value());
}
