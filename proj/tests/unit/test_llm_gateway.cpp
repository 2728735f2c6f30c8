#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <gtest/gtest.h>

#include <thread>

#include "cotasks/digest.hpp"
#include "cotasks/errors.hpp"
#include "cotasks/llm_gateway.hpp"
#include "test_support.hpp"

using namespace cotasks;
using namespace cotasks::testing;
using namespace std::chrono_literals;

namespace {

ChatRequest text_request(const std::string& model, const std::string& text) {
  ChatRequest r;
  r.model_id = model;
  r.user_parts = {ContentPart::text(text)};
  return r;
}

/// Fails with `status` for the first `failures` calls, then answers "ok".
std::shared_ptr<FunctionEndpoint> flaky(int failures, int status) {
  auto count = std::make_shared<std::atomic<int>>(0);
  return std::make_shared<FunctionEndpoint>([=](const ChatRequest&) {
    if ((*count)++ < failures) throw TransportError("boom", status);
    return reply("ok");
  });
}

}  // namespace

TEST(ChatRequest, DigestIsStableAndSensitive) {
  const auto a = text_request("m", "hello");
  EXPECT_EQ(a.digest(), text_request("m", "hello").digest());
  EXPECT_EQ(a.digest().size(), 64u);
  auto b = a;
  b.temperature = 0.5;
  EXPECT_NE(a.digest(), b.digest());
  b = a;
  b.model_id = "n";
  EXPECT_NE(a.digest(), b.digest());
  b = a;
  b.system = "sys";
  EXPECT_NE(a.digest(), b.digest());
  b = a;
  b.user_parts.push_back(ContentPart::text(""));
  EXPECT_NE(a.digest(), b.digest());
}

TEST(ChatRequest, ImageFilesHashByContent) {
  TempDir tmp;
  write_file_atomic(tmp / "a.jpg", "AAAA");
  write_file_atomic(tmp / "b.jpg", "AAAA");
  write_file_atomic(tmp / "c.jpg", "CCCC");
  auto req = [&](const char* name) {
    ChatRequest r = text_request("m", "x");
    r.user_parts.insert(r.user_parts.begin(), ContentPart::image_file(tmp / name));
    return r;
  };
  EXPECT_EQ(req("a.jpg").digest(), req("b.jpg").digest());
  EXPECT_NE(req("a.jpg").digest(), req("c.jpg").digest());
  EXPECT_EQ(req("a.jpg").image_count(), 1);
  EXPECT_EQ(req("a.jpg").user_text(), "x");
}

TEST(RetryPolicy, ExponentialWithCap) {
  RetryPolicy p;
  EXPECT_EQ(p.delay_for(0), 500ms);
  EXPECT_EQ(p.delay_for(1), 1000ms);
  EXPECT_EQ(p.delay_for(3), 4000ms);
  EXPECT_EQ(p.delay_for(10), 8000ms);
  EXPECT_TRUE(is_transient_status(0));
  EXPECT_TRUE(is_transient_status(429));
  EXPECT_TRUE(is_transient_status(503));
  EXPECT_FALSE(is_transient_status(400));
  EXPECT_FALSE(is_transient_status(404));
}

TEST(Gateway, RetriesTransientFailuresWithBackoff) {
  Gateway gw(std::nullopt, RetryPolicy{}, 4);
  std::vector<std::chrono::milliseconds> sleeps;
  gw.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  auto ep = flaky(2, 503);
  gw.register_endpoint("m", ep);
  const auto r = gw.chat(text_request("m", "x"));
  EXPECT_EQ(r.text, "ok");
  EXPECT_EQ(r.retries, 2);
  EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{500ms, 1000ms}));
  EXPECT_EQ(gw.stats().retries, 2);
}

TEST(Gateway, GivesUpAfterMaxRetries) {
  Gateway gw(std::nullopt, RetryPolicy{2}, 4);
  gw.set_sleeper([](auto) {});
  auto ep = flaky(100, 429);
  gw.register_endpoint("m", ep);
  try {
    gw.chat(text_request("m", "x"));
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.status(), 429);
  }
  EXPECT_EQ(ep->calls(), 3);
  EXPECT_EQ(gw.stats().failures, 1);
}

TEST(Gateway, PermanentErrorsAreNotRetried) {
  Gateway gw(std::nullopt, RetryPolicy{}, 4);
  gw.set_sleeper([](auto) { FAIL() << "should not sleep"; });
  auto ep = flaky(100, 400);
  gw.register_endpoint("m", ep);
  EXPECT_THROW(gw.chat(text_request("m", "x")), TransportError);
  EXPECT_EQ(ep->calls(), 1);
}

TEST(Gateway, AuthFailureIsConfigError) {
  Gateway gw(std::nullopt, RetryPolicy{}, 4);
  gw.register_endpoint("m", flaky(100, 401));
  EXPECT_THROW(gw.chat(text_request("m", "x")), ConfigError);
  EXPECT_THROW(gw.chat(text_request("unknown", "x")), ConfigError);
}

TEST(Gateway, CacheReplaysWithoutEndpoint) {
  TempDir tmp;
  auto ep = std::make_shared<FunctionEndpoint>([](const ChatRequest& r) { return reply("echo:" + r.user_text()); });
  {
    Gateway gw(tmp.path(), RetryPolicy{}, 2);
    gw.register_endpoint("m", ep);
    EXPECT_FALSE(gw.chat(text_request("m", "a")).cached);
    const auto again = gw.chat(text_request("m", "a"));
    EXPECT_TRUE(again.cached);
    EXPECT_EQ(again.text, "echo:a");
    EXPECT_EQ(gw.stats().cache_hits, 1);
  }
  EXPECT_EQ(ep->calls(), 1);
  Gateway replay(tmp.path(), RetryPolicy{0}, 2);
  replay.register_endpoint("m", std::make_shared<CacheOnlyEndpoint>());
  EXPECT_EQ(replay.chat(text_request("m", "a")).text, "echo:a");
  try {
    replay.chat(text_request("m", "b"));
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.status(), 404);
  }
}

TEST(Gateway, CorruptCacheEntryIsAMiss) {
  TempDir tmp;
  const auto req = text_request("m", "a");
  write_file_atomic(tmp / (req.digest() + ".json"), "{not json");
  Gateway gw(tmp.path(), RetryPolicy{}, 2);
  gw.register_endpoint("m", std::make_shared<FunctionEndpoint>([](const ChatRequest&) { return reply("fresh"); }));
  EXPECT_EQ(gw.chat(req).text, "fresh");
  EXPECT_EQ(gw.chat(req).text, "fresh");
  EXPECT_EQ(gw.stats().cache_hits, 1);
}

TEST(Gateway, BatchKeepsOrderAndBoundsConcurrency) {
  for (int limit : {1, 3, 8}) {
    Gateway gw(std::nullopt, RetryPolicy{0}, limit);
    auto ep = std::make_shared<FunctionEndpoint>([](const ChatRequest& r) { return reply(r.user_text()); });
    ep->set_delay(5ms);
    gw.register_endpoint("m", ep);
    std::vector<ChatRequest> reqs;
    for (int i = 0; i < 40; ++i) reqs.push_back(text_request("m", std::to_string(i)));
    const auto results = gw.run_batch(reqs, 32);
    ASSERT_EQ(results.size(), 40u);
    for (int i = 0; i < 40; ++i) {
      ASSERT_TRUE(results[static_cast<std::size_t>(i)].ok());
      EXPECT_EQ(results[static_cast<std::size_t>(i)].response->text, std::to_string(i));
    }
    EXPECT_LE(ep->peak_in_flight(), limit);
    EXPECT_GE(ep->peak_in_flight(), 1);
  }
}

TEST(Gateway, BatchKeepsFailuresInTheirSlots) {
  Gateway gw(std::nullopt, RetryPolicy{0}, 4);
  gw.register_endpoint("m", std::make_shared<FunctionEndpoint>([](const ChatRequest& r) {
                         if (r.user_text() == "bad") throw TransportError("nope", 400);
                         return reply("fine");
                       }));
  const auto res = gw.run_batch({text_request("m", "a"), text_request("m", "bad"), text_request("m", "c")}, 2);
  EXPECT_TRUE(res[0].ok());
  EXPECT_FALSE(res[1].ok());
  EXPECT_NE(res[1].error.find("nope"), std::string::npos);
  EXPECT_TRUE(res[2].ok());
}

TEST(Gateway, BatchRethrowsConfigErrors) {
  Gateway gw(std::nullopt, RetryPolicy{0}, 4);
  gw.register_endpoint("m", flaky(100, 403));
  EXPECT_THROW(gw.run_batch({text_request("m", "a"), text_request("m", "b")}, 2), ConfigError);
}

TEST(Gateway, InFlightLimitIsValidated) {
  EXPECT_THROW(Gateway(std::nullopt, RetryPolicy{}, 0), ArgumentError);
  EXPECT_THROW(Gateway(std::nullopt, RetryPolicy{}, Gateway::kMaxInFlightLimit + 1), ArgumentError);
}

TEST(Gateway, DownsamplesImagesBeforeHashing) {
  TempDir tmp;
  ChatRequest req = text_request("m", "prompt");
  for (int i = 0; i < 10; ++i) {
    write_file_atomic(tmp / (std::to_string(i) + ".jpg"), std::to_string(i));
    req.user_parts.insert(req.user_parts.end() - 1, ContentPart::image_file(tmp / (std::to_string(i) + ".jpg")));
  }
  const auto kept = downsample_images(req.user_parts, 4);
  ASSERT_EQ(kept.size(), 5u);
  EXPECT_EQ(kept[0].value, (tmp / "0.jpg").string());
  EXPECT_EQ(kept[1].value, (tmp / "2.jpg").string());
  EXPECT_EQ(kept[2].value, (tmp / "5.jpg").string());
  EXPECT_EQ(kept[3].value, (tmp / "7.jpg").string());
  EXPECT_EQ(kept.back().kind, ContentPart::Kind::text);
  EXPECT_EQ(downsample_images(req.user_parts, 0).size(), 11u);

  Gateway gw(std::nullopt, RetryPolicy{}, 2);
  auto ep = std::make_shared<FunctionEndpoint>([](const ChatRequest& r) {
    return reply(std::to_string(r.image_count()));
  });
  gw.register_endpoint("m", ep, 4);
  EXPECT_EQ(gw.chat(req).text, "4");
}

TEST(HttpEndpoint, BodyShape) {
  TempDir tmp;
  write_file_atomic(tmp / "f.png", "PNG");
  ChatRequest req = text_request("registry-id", "hi");
  req.system = "be brief";
  req.user_parts.insert(req.user_parts.begin(), ContentPart::image_file(tmp / "f.png"));
  HttpChatEndpoint ep({"http://localhost:1", "k", "wire-model", ImageMode::base64, 5});
  const Json body = ep.build_body(req);
  EXPECT_EQ(body["model"], "wire-model");
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][1]["content"][0]["image_url"]["url"], "data:image/png;base64,UE5H");
  EXPECT_EQ(body["messages"][1]["content"][1]["text"], "hi");
  EXPECT_EQ(body["temperature"], 0.0);
  HttpChatEndpoint url_ep({"http://localhost:1", "k", "wire-model", ImageMode::url, 5});
  const std::string url = url_ep.build_body(req)["messages"][1]["content"][0]["image_url"]["url"];
  EXPECT_TRUE(url.starts_with("file://"));
}

class LocalServer {
 public:
  LocalServer() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_auth_ = req.get_header_value("Authorization");
      const Json body = Json::parse(req.body);
      const std::string text = body["messages"].back()["content"].back()["text"];
      if (text == "fail") {
        res.status = 500;
        res.set_content("oops", "text/plain");
        return;
      }
      if (text == "garbage") {
        res.set_content("not json", "application/json");
        return;
      }
      const Json out = {{"choices", Json::array({{{"message", {{"role", "assistant"}, {"content", "re:" + text}}},
                                                  {"finish_reason", "stop"}}})},
                        {"usage", {{"prompt_tokens", 7}, {"completion_tokens", 2}}}};
      res.set_content(out.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/"; }
  std::string last_auth_;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

TEST(HttpEndpoint, TalksToLocalServer) {
  LocalServer server;
  HttpChatEndpoint ep({server.base_url(), "secret", "wire", ImageMode::base64, 5});
  const auto r = ep.complete(text_request("m", "hello"));
  EXPECT_EQ(r.text, "re:hello");
  EXPECT_EQ(r.finish_reason, "stop");
  EXPECT_EQ(r.usage.prompt_tokens, 7);
  EXPECT_EQ(server.last_auth_, "Bearer secret");
  try {
    ep.complete(text_request("m", "fail"));
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.status(), 500);
  }
  try {
    ep.complete(text_request("m", "garbage"));
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.status(), 502);
  }
}

TEST(HttpEndpoint, UnreachableHostIsNetworkError) {
  HttpChatEndpoint ep({"http://127.0.0.1:9", "", "wire", ImageMode::base64, 2});
  try {
    ep.complete(text_request("m", "x"));
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.status(), 0);
  }
}
