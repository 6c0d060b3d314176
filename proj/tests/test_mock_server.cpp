#include <gtest/gtest.h>

#include "radlabel/mock_server.hpp"

using namespace radlabel;

namespace {

std::string request(const std::string& user, bool logprobs) {
  wire::ChatRequest r;
  r.model = "m";
  r.messages = {{"system", "sys"}, {"user", user}};
  r.max_tokens = logprobs ? 1 : 64;
  r.logprobs = logprobs;
  r.top_logprobs = 5;
  return wire::to_json(r).dump();
}

RuleTable table() {
  RuleTable t;
  t.rules.push_back({"metastasis", 0.0, -4.0, "Spread described."});
  t.rules.push_back({"metastatic", -0.1, -3.0, "Deposits described."});
  return t;
}

const std::string kAsk = " Answer with a single word, yes or no.";

}  // namespace

TEST(Mock, QueryGetsYesNoLogprobsFromTheFirstMatchingRule) {
  const auto r = mock_respond(request("Metastasis and metastatic disease." + kAsk, true), table());
  ASSERT_EQ(r.status, 200);
  const auto top = wire::first_token_top_logprobs(nlohmann::json::parse(r.body));
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0].token, "yes");
  EXPECT_DOUBLE_EQ(top[0].logprob, 0.0);
  EXPECT_EQ(top[1].token, "no");
  EXPECT_DOUBLE_EQ(top[1].logprob, -4.0);
  EXPECT_EQ(wire::response_text(nlohmann::json::parse(r.body)), "yes");
}

TEST(Mock, UnmatchedQueryUsesDefaultLogits) {
  const auto r = mock_respond(request("Normal." + kAsk, true), table());
  const auto top = wire::first_token_top_logprobs(nlohmann::json::parse(r.body));
  EXPECT_DOUBLE_EQ(top[0].logprob, -2.0);
  EXPECT_DOUBLE_EQ(top[1].logprob, 0.0);
  EXPECT_EQ(wire::response_text(nlohmann::json::parse(r.body)), "no");
}

TEST(Mock, NonQueryPromptGetsCannedOrDefaultSummary) {
  auto body = nlohmann::json::parse(mock_respond(request("A METASTATIC focus.", false), table()).body);
  EXPECT_EQ(wire::response_text(body), "Deposits described.");
  body = nlohmann::json::parse(mock_respond(request("Nothing.", false), table()).body);
  EXPECT_EQ(wire::response_text(body), "No findings relevant to the condition.");
}

TEST(Mock, ResponsesAreAPureFunctionOfTheRequest) {
  const auto req = request("metastasis" + kAsk, true);
  EXPECT_EQ(mock_respond(req, table()).body, mock_respond(req, table()).body);
  EXPECT_NE(mock_respond(req, table()).body, mock_respond(request("other" + kAsk, true), table()).body);
}

TEST(Mock, MalformedRequestsGet400) {
  EXPECT_EQ(mock_respond("not json", table()).status, 400);
  EXPECT_EQ(mock_respond("{\"model\":\"m\",\"messages\":[{\"role\":\"system\",\"content\":\"x\"}]}", table()).status,
            400);
  EXPECT_EQ(mock_respond("{\"model\":\"m\"}", table()).status, 400);
}

TEST(Mock, RuleTableJsonRoundTripAndValidation) {
  const auto t = table();
  const auto back = rule_table_from_json(nlohmann::json::parse(rule_table_to_json(t).dump()));
  ASSERT_EQ(back.rules.size(), 2u);
  EXPECT_EQ(back.rules[1].keyword, "metastatic");
  EXPECT_EQ(back.default_summary, t.default_summary);

  RuleTable bad = t;
  bad.rules.push_back({"METASTASIS", 0, 0, ""});
  EXPECT_EQ(rule_table_violations(bad).size(), 2u);  // duplicate keyword and empty summary
  EXPECT_THROW(MockServer{bad}, ConfigError);
  EXPECT_THROW(rule_table_from_json(nlohmann::json::parse("{\"rules\":[{\"keyword\":\"x\"}]}")), ConfigError);
}

TEST(Mock, ServesOverHttp) {
  MockServer server(table());
  const int port = server.start();
  EXPECT_GT(port, 0);
  httplib::Client cli("127.0.0.1", port);
  auto health = cli.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  const auto body = request("metastasis" + kAsk, true);
  auto res = cli.Post(wire::kChatPath, body, "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->body, mock_respond(body, table()).body);
  server.stop();
}
