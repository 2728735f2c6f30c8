#include <gtest/gtest.h>

#include "cotasks/config.hpp"
#include "cotasks/digest.hpp"
#include "cotasks/errors.hpp"
#include "test_support.hpp"

using namespace cotasks;
using namespace cotasks::testing;

namespace {

PipelineConfig::EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars = std::move(vars)](const std::string& k) -> std::optional<std::string> {
    auto it = vars.find(k);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

const PipelineConfig::EnvLookup kNoEnv = env_of({});

Json minimal() {
  return Json::parse(R"({
    "source": "nextqa",
    "splits": [{"name": "val", "annotations": "ann", "questions": "q/val.csv"}],
    "endpoints": {"subject": {"base_url": "https://api.example.com/v1", "model": "gpt-x"}}
  })");
}

void expect_config_error(const Json& j, const std::string& fragment) {
  try {
    PipelineConfig::from_json(j, "/base", kNoEnv);
    FAIL() << "expected ConfigError containing " << fragment;
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Config, DefaultsAndRelativePaths) {
  const auto c = PipelineConfig::from_json(minimal(), "/base", kNoEnv);
  EXPECT_EQ(c.source, Source::nextqa);
  EXPECT_EQ(c.k, 64);
  EXPECT_EQ(c.timestamp_cap, 16);
  EXPECT_EQ(c.grounding, GroundingMode::star_direct);
  EXPECT_EQ(c.parse_mode, ParseMode::lenient);
  ASSERT_EQ(c.splits.size(), 1u);
  EXPECT_EQ(c.splits[0].annotations, std::filesystem::path("/base/ann"));
  EXPECT_EQ(*c.splits[0].questions, std::filesystem::path("/base/q/val.csv"));
  EXPECT_EQ(c.retry.max_retries, 3);
}

TEST(Config, AbsolutePathsStay) {
  auto j = minimal();
  j["cache_dir"] = "/var/cache/x";
  EXPECT_EQ(*PipelineConfig::from_json(j, "/base", kNoEnv).cache_dir, std::filesystem::path("/var/cache/x"));
}

TEST(Config, RejectsUnknownKeysEverywhere) {
  auto j = minimal();
  j["sample_count"] = 32;
  expect_config_error(j, "unknown key 'sample_count'");
  j = minimal();
  j["splits"][0]["extra"] = 1;
  expect_config_error(j, "unknown key 'extra'");
  j = minimal();
  j["endpoints"]["oracle"] = Json::object();
  expect_config_error(j, "unknown key 'oracle'");
  j = minimal();
  j["endpoints"]["subject"]["key"] = "x";
  expect_config_error(j, "unknown key 'key'");
  j = minimal();
  j["retry"] = {{"attempts", 2}};
  expect_config_error(j, "unknown key 'attempts'");
}

TEST(Config, RejectsBadValues) {
  auto j = minimal();
  j["source"] = "msrvtt";
  expect_config_error(j, "source");
  j = minimal();
  j["grounding"] = "oracle";
  expect_config_error(j, "grounding");
  j = minimal();
  j["k"] = 0;
  expect_config_error(j, "k must be positive");
  j = minimal();
  j["max_in_flight"] = 5000;
  expect_config_error(j, "max_in_flight");
  j = minimal();
  j["star_threshold"] = 6;
  expect_config_error(j, "star_threshold");
  j = minimal();
  j["k"] = "32";
  expect_config_error(j, "wrong type");
  j = minimal();
  j["splits"][0].erase("questions");
  expect_config_error(j, "needs a questions file");
  j = minimal();
  j["splits"].push_back(j["splits"][0]);
  expect_config_error(j, "duplicate split");
  j = minimal();
  j["endpoints"]["subject"]["image_mode"] = "inline";
  expect_config_error(j, "image_mode");
}

TEST(Config, EnvironmentOverridesAndCredentials) {
  const auto bare = PipelineConfig::from_json(minimal(), "/base", kNoEnv);
  try {
    bare.endpoint("subject");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("COTASKS_SUBJECT_API_KEY"), std::string::npos);
  }
  EXPECT_THROW(bare.endpoint("judge"), ConfigError);

  const auto c = PipelineConfig::from_json(
      minimal(), "/base",
      env_of({{"COTASKS_SUBJECT_API_KEY", "sk-1"}, {"COTASKS_JUDGE_BASE_URL", "http://judge"},
              {"COTASKS_JUDGE_MODEL", "j"}, {"COTASKS_JUDGE_API_KEY", "sk-2"}}));
  EXPECT_EQ(c.endpoint("subject").api_key, "sk-1");
  EXPECT_EQ(c.endpoint("subject").model, "gpt-x");
  EXPECT_EQ(c.endpoint("judge").base_url, "http://judge");
  EXPECT_EQ(c.endpoint("judge").max_tokens, 512);
  EXPECT_FALSE(c.endpoints.contains("grounder"));
}

TEST(Config, JudgeDefaultsToShortReplies) {
  auto j = minimal();
  j["endpoints"]["judge"] = {{"base_url", "http://x"}, {"model", "j"}, {"auth", "none"}};
  const auto c = PipelineConfig::from_json(j, "/base", kNoEnv);
  EXPECT_EQ(c.endpoint("judge").max_tokens, 16);
  EXPECT_EQ(c.endpoint("judge").api_key, "");
}

TEST(Config, CacheOnlyNeedsNoCredentials) {
  auto j = minimal();
  j["endpoints"]["subject"] = {{"kind", "cache_only"}, {"model", "gpt-x"}};
  const auto c = PipelineConfig::from_json(j, "/base", kNoEnv);
  EXPECT_EQ(c.endpoint("subject").kind, "cache_only");
}

TEST(Config, SecretsNeverSerialized) {
  auto j = minimal();
  j["endpoints"]["subject"]["api_key"] = "sk-secret";
  const auto c = PipelineConfig::from_json(j, "/base", kNoEnv);
  EXPECT_EQ(c.to_json().dump().find("sk-secret"), std::string::npos);
  auto other = c;
  other.endpoints["subject"].api_key = "sk-other";
  EXPECT_EQ(c.digest(), other.digest());
  other.k = 16;
  EXPECT_NE(c.digest(), other.digest());
}

TEST(Config, LoadsFromFile) {
  TempDir tmp;
  EXPECT_THROW(PipelineConfig::load(tmp / "missing.json", kNoEnv), ConfigError);
  write_file_atomic(tmp / "bad.json", "{");
  EXPECT_THROW(PipelineConfig::load(tmp / "bad.json", kNoEnv), ConfigError);
  write_file_atomic(tmp / "ok.json", minimal().dump());
  const auto c = PipelineConfig::load(tmp / "ok.json", kNoEnv);
  EXPECT_EQ(c.splits[0].annotations, tmp / "ann");
}
