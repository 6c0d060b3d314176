#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include "radlabel/llm_gateway.hpp"
#include "radlabel/mock_server.hpp"

using namespace radlabel;

namespace {

ConditionSpec builtin(const std::string& name) {
  for (const auto& c : builtin_conditions())
    if (c.name == name) return c;
  throw std::runtime_error("missing");
}

RuleTable cancer_rules() {
  RuleTable t;
  t.rules.push_back({"metastasis", 0.0, -4.0, "Metastatic disease is described."});
  t.rules.push_back({"lytic", -1.0, -1.5, "A lytic lesion is described."});
  return t;
}

ClientConfig config_for(const MockServer& s) {
  ClientConfig c;
  c.endpoint = s.endpoint();
  c.backoff_initial = std::chrono::milliseconds(1);
  c.timeout = std::chrono::milliseconds(5000);
  return c;
}

Report make_report(const std::string& id, const std::string& text) {
  Report r;
  r.id = id;
  r.patient_id = "p" + id;
  r.study_id = "s" + id;
  r.raw_text = text;
  r.sections = segment_sections(text);
  return r;
}

}  // namespace

TEST(Tokens, Normalization) {
  EXPECT_EQ(normalize_token(" Yes"), "yes");
  EXPECT_EQ(normalize_token("YES."), "yes");
  EXPECT_EQ(normalize_token("\xC4\xA0No"), "no");
  EXPECT_EQ(normalize_token("\xE2\x96\x81no,"), "no");
  EXPECT_EQ(normalize_token("\n"), "");
  EXPECT_EQ(normalize_token("yesterday"), "yesterday");
}

TEST(Scoring, LogisticOfTheLogitDifference) {
  // p = e^a / (e^a + e^b), computed directly here.
  for (auto [a, b] : {std::pair{0.0, -4.0}, {-0.3, -2.5}, {-700.0, 0.0}, {-2.0, -2.0}}) {
    const double direct = std::exp(a) / (std::exp(a) + std::exp(b));
    EXPECT_NEAR(softmax_yes(a, b), std::isnan(direct) ? 0.0 : direct, 1e-15);
  }
  const auto s = score_from_top_logprobs({{"Yes", -0.1}, {"yes", -0.5}, {"No", -2.4}, {"maybe", -3.0}});
  EXPECT_DOUBLE_EQ(s.logit_yes, -0.1);
  EXPECT_DOUBLE_EQ(s.logit_no, -2.4);
  EXPECT_EQ(s.source_token, "Yes");
  EXPECT_NEAR(s.p_yes + s.p_no(), 1.0, 1e-15);
}

TEST(Scoring, MissingClassIsBoundedByTheSmallestListedLogprob) {
  const auto s = score_from_top_logprobs({{"yes", -0.2}, {"The", -1.0}, {"I", -3.0}});
  EXPECT_DOUBLE_EQ(s.logit_no, -3.0);
  EXPECT_NEAR(s.p_yes, softmax_yes(-0.2, -3.0), 1e-15);
  const auto n = score_from_top_logprobs({{"no", -0.1}, {"Maybe", -5.0}});
  EXPECT_DOUBLE_EQ(n.logit_yes, -5.0);
  EXPECT_EQ(n.source_token, "no");
}

TEST(Scoring, NeitherClassIsUnscorable) {
  try {
    score_from_top_logprobs({{"The", -0.1}, {"It", -2.0}});
    FAIL();
  } catch (const UnscorableError& e) {
    ASSERT_EQ(e.top_k().size(), 2u);
    EXPECT_EQ(e.top_k()[1].token, "It");
  }
  EXPECT_THROW(score_from_top_logprobs({}), UnscorableError);
}

TEST(Client, ConfigViolationsAreCollected) {
  ClientConfig c;
  c.endpoint = "https://x";
  c.temperature = 0.7;
  c.top_logprobs = 1;
  c.max_in_flight = 0;
  c.retry_limit = 0;
  EXPECT_EQ(client_config_violations(c).size(), 5u);
  EXPECT_THROW(ChatClient{c}, ConfigError);
}

TEST(Client, ScoresAndSummariesThroughTheMockServer) {
  MockServer server(cancer_rules());
  server.start();
  const ChatClient client(config_for(server));
  const auto c = builtin("cancer");
  const auto s = score_yes_no(build_direct_query(c, "Known metastasis in T4."), client);
  EXPECT_NEAR(s.p_yes, softmax_yes(0.0, -4.0), 1e-15);
  const auto d = score_yes_no(build_direct_query(c, "Normal study."), client);
  EXPECT_NEAR(d.p_yes, softmax_yes(-2.0, 0.0), 1e-15);
  EXPECT_EQ(generate_summary(build_summary_request(c, "A lytic focus."), client), "A lytic lesion is described.");
  EXPECT_THROW(generate_summary(build_direct_query(c, "x"), client), PreconditionError);
  EXPECT_THROW(score_yes_no(build_summary_request(c, "x"), client), PreconditionError);
}

TEST(Client, EndpointPathPrefixIsKept) {
  httplib::Server srv;
  std::atomic<int> hits{0};
  srv.Post("/proxy/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    res.set_content(mock_respond(req.body, cancer_rules()).body, "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  ClientConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/proxy/";
  const ChatClient client(cfg);
  score_yes_no(build_direct_query(builtin("cancer"), "x"), client);
  EXPECT_EQ(hits.load(), 1);
  srv.stop();
  t.join();
}

TEST(Client, RetriesServerErrorsThenSucceeds) {
  httplib::Server srv;
  std::atomic<int> calls{0};
  srv.Post(wire::kChatPath, [&](const httplib::Request& req, httplib::Response& res) {
    if (++calls <= 2) {
      res.status = calls == 1 ? 503 : 429;
      return;
    }
    res.set_content(mock_respond(req.body, cancer_rules()).body, "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  ClientConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port);
  cfg.backoff_initial = std::chrono::milliseconds(1);
  cfg.retry_limit = 3;
  const ChatClient client(cfg);
  EXPECT_NO_THROW(score_yes_no(build_direct_query(builtin("cancer"), "x"), client));
  EXPECT_EQ(calls.load(), 3);

  calls = 0;
  cfg.retry_limit = 2;
  EXPECT_THROW(score_yes_no(build_direct_query(builtin("cancer"), "x"), ChatClient(cfg)), TransportError);
  EXPECT_EQ(calls.load(), 2);
  srv.stop();
  t.join();
}

TEST(Client, ClientErrorsAreNotRetried) {
  httplib::Server srv;
  std::atomic<int> calls{0};
  srv.Post(wire::kChatPath, [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 400;
    res.set_content("{\"error\":{}}", "application/json");
  });
  srv.Get("/", [](const httplib::Request&, httplib::Response&) {});
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  ClientConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port);
  EXPECT_THROW(score_yes_no(build_direct_query(builtin("cancer"), "x"), ChatClient(cfg)), ProtocolError);
  EXPECT_EQ(calls.load(), 1);
  srv.stop();
  t.join();
}

TEST(Client, UnreachableServerIsATransportError) {
  ClientConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1";
  cfg.retry_limit = 2;
  cfg.backoff_initial = std::chrono::milliseconds(1);
  EXPECT_THROW(score_yes_no(build_direct_query(builtin("cancer"), "x"), ChatClient(cfg)), TransportError);
}

TEST(Labelling, OrderIsPreservedAndFailuresBecomeRecords) {
  RuleTable rules = cancer_rules();
  MockServer server(rules);
  server.start();
  auto cfg = config_for(server);
  cfg.max_in_flight = 8;
  const ChatClient client(cfg);
  std::vector<Report> reports;
  for (int i = 0; i < 40; ++i)
    reports.push_back(make_report("r" + std::to_string(i), i % 3 == 0 ? "IMPRESSION: metastasis" : "IMPRESSION: clear"));
  reports.push_back(make_report("blank", "   "));
  const auto records = label_corpus(reports, builtin("cancer"), Strategy::SummaryQuery, client, 0.5);
  ASSERT_EQ(records.size(), reports.size());
  for (std::size_t i = 0; i + 1 < records.size(); ++i) {
    EXPECT_EQ(records[i].report_id, reports[i].id);
    ASSERT_TRUE(records[i].p_yes);
    EXPECT_EQ(*records[i].label, i % 3 == 0);
    EXPECT_EQ(records[i].summary.has_value(), true);
  }
  EXPECT_TRUE(records.back().error);
  EXPECT_FALSE(records.back().p_yes);
  EXPECT_FALSE(records.back().label);
}

TEST(Labelling, IvdConditionsGetOneRecordPerLevel) {
  RuleTable rules;
  rules.rules.push_back({"L4-L5", 0.5, -1.0, "Narrowing at L4-L5."});
  MockServer server(rules);
  server.start();
  const ChatClient client(config_for(server));
  const auto records =
      label_corpus({make_report("a", "Canal narrowing.")}, builtin("stenosis"), Strategy::DirectQuery, client);
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0].key(), "a@L3-L4");
  EXPECT_EQ(records[1].key(), "a@L4-L5");
  EXPECT_EQ(records[2].key(), "a@L5-S1");
  EXPECT_TRUE(*records[1].label);
  EXPECT_FALSE(*records[0].label);
  EXPECT_THROW(label_corpus({}, builtin("stenosis"), Strategy::SummaryRequest, client), ConfigError);
  EXPECT_THROW(label_corpus({}, builtin("stenosis"), Strategy::DirectQuery, client, 1.5), ConfigError);
}

TEST(Labelling, HistoryExclusionHidesDecoyKeywords) {
  MockServer server(cancer_rules());
  server.start();
  const ChatClient client(config_for(server));
  const auto r = make_report("d", "CLINICAL HISTORY: ?metastasis\nIMPRESSION: Degenerative change only.");
  const auto cancer = label_corpus({r}, builtin("cancer"), Strategy::DirectQuery, client);
  EXPECT_FALSE(*cancer[0].label);
  auto keep = builtin("cancer");
  keep.exclude_clinical_history = false;
  EXPECT_TRUE(*label_corpus({r}, keep, Strategy::DirectQuery, client)[0].label);
}

TEST(LabelFiles, RoundTripIsExact) {
  LabelRecord a{"r1", "cancer", std::nullopt, Strategy::SummaryQuery, "s \"q\"", 0.1 + 0.2, 0.5, false, std::nullopt};
  LabelRecord b{"r2", "stenosis", "L4-L5", Strategy::DirectQuery, std::nullopt, std::nullopt, 0.3, std::nullopt,
                "transport: down"};
  const std::string text = label_line(a) + label_line(b);
  const auto parsed = parse_labels(text);
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(*parsed[0].p_yes, 0.1 + 0.2);
  EXPECT_EQ(label_line(parsed[0]) + label_line(parsed[1]), text);
  EXPECT_THROW(parse_labels("{\"report_id\":1}\n"), ParseError);
}

TEST(LabelFiles, ApplyLabelUsesGreaterOrEqual) {
  LabelRecord r;
  r.p_yes = 0.25;
  apply_label(r, 0.25);
  EXPECT_TRUE(*r.label);
  apply_label(r, 0.2500001);
  EXPECT_FALSE(*r.label);
}
