#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "radlabel/error.hpp"
#include "radlabel/prompting.hpp"
#include "radlabel/util.hpp"
#include "radlabel/wire.hpp"

namespace radlabel {

struct MockRule {
  std::string keyword;
  double logit_yes = 0.0;
  double logit_no = 0.0;
  std::string canned_summary;
};

// Ordered keyword rules; the first rule whose keyword occurs (case-insensitively)
// in the final user message decides the response.
struct RuleTable {
  std::vector<MockRule> rules;
  std::pair<double, double> default_logits{-2.0, 0.0};
  std::string default_summary = "No findings relevant to the condition.";
  std::string answer_instruction = PromptTemplates{}.answer_instruction;

  const MockRule* match(std::string_view message) const {
    for (const auto& r : rules)
      if (icontains(message, r.keyword)) return &r;
    return nullptr;
  }
};

inline std::vector<std::string> rule_table_violations(const RuleTable& t) {
  std::vector<std::string> v;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < t.rules.size(); ++i) {
    const auto& r = t.rules[i];
    const auto where = "rules[" + std::to_string(i) + "]";
    if (r.keyword.empty()) v.push_back(where + ": empty keyword");
    if (!seen.insert(to_lower(r.keyword)).second) v.push_back(where + ": duplicate keyword '" + r.keyword + "'");
    if (!std::isfinite(r.logit_yes) || !std::isfinite(r.logit_no)) v.push_back(where + ": non-finite logit");
    if (trim(r.canned_summary).empty()) v.push_back(where + ": empty canned_summary");
  }
  if (trim(t.default_summary).empty()) v.push_back("default_summary is empty");
  if (t.answer_instruction.empty()) v.push_back("answer_instruction is empty");
  return v;
}

inline nlohmann::ordered_json rule_table_to_json(const RuleTable& t) {
  nlohmann::ordered_json j;
  j["rules"] = nlohmann::ordered_json::array();
  for (const auto& r : t.rules)
    j["rules"].push_back({{"keyword", r.keyword},
                          {"logit_yes", r.logit_yes},
                          {"logit_no", r.logit_no},
                          {"canned_summary", r.canned_summary}});
  j["default_logits"] = {t.default_logits.first, t.default_logits.second};
  j["default_summary"] = t.default_summary;
  j["answer_instruction"] = t.answer_instruction;
  return j;
}

inline RuleTable rule_table_from_json(const nlohmann::json& j) {
  RuleTable t;
  try {
    for (const auto& r : j.at("rules"))
      t.rules.push_back({r.at("keyword").get<std::string>(), r.at("logit_yes").get<double>(),
                         r.at("logit_no").get<double>(), r.at("canned_summary").get<std::string>()});
    if (j.contains("default_logits")) {
      const auto& d = j["default_logits"];
      t.default_logits = {d.at(0).get<double>(), d.at(1).get<double>()};
    }
    t.default_summary = j.value("default_summary", t.default_summary);
    t.answer_instruction = j.value("answer_instruction", t.answer_instruction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("rule table: ") + e.what());
  }
  auto v = rule_table_violations(t);
  if (!v.empty()) throw ConfigError(std::move(v));
  return t;
}

inline RuleTable load_rule_table(const std::filesystem::path& path) {
  try {
    return rule_table_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("rule table '" + path.string() + "': " + e.what());
  }
}

struct MockResponse {
  int status = 200;
  std::string body;
};

// Pure function of (request body, rule table). A prompt containing the answer
// instruction gets a one-token yes/no reply with logprobs; any other prompt gets
// a summary.
inline MockResponse mock_respond(const std::string& body, const RuleTable& table) {
  wire::ChatRequest req;
  try {
    req = wire::parse_request(body);
  } catch (const ProtocolError& e) {
    nlohmann::ordered_json err;
    err["error"] = {{"message", e.what()}, {"type", "invalid_request_error"}};
    return {400, err.dump()};
  }
  const wire::ChatMessage* last_user = nullptr;
  for (const auto& m : req.messages)
    if (m.role == "user") last_user = &m;
  if (!last_user) {
    nlohmann::ordered_json err;
    err["error"] = {{"message", "no user message"}, {"type", "invalid_request_error"}};
    return {400, err.dump()};
  }

  const MockRule* rule = table.match(last_user->content);
  const bool is_query = last_user->content.find(table.answer_instruction) != std::string::npos;

  nlohmann::ordered_json resp;
  resp["id"] = "mock-" + hex64(fnv1a64(body));
  resp["object"] = "chat.completion";
  resp["created"] = 0;
  resp["model"] = req.model.empty() ? "mock" : req.model;
  nlohmann::ordered_json choice;
  choice["index"] = 0;
  if (is_query) {
    const double ly = rule ? rule->logit_yes : table.default_logits.first;
    const double ln = rule ? rule->logit_no : table.default_logits.second;
    const std::string top = ly >= ln ? "yes" : "no";
    choice["message"] = {{"role", "assistant"}, {"content", top}};
    nlohmann::ordered_json entry;
    entry["token"] = top;
    entry["logprob"] = ly >= ln ? ly : ln;
    entry["top_logprobs"] = nlohmann::ordered_json::array(
        {nlohmann::ordered_json{{"token", "yes"}, {"logprob", ly}},
         nlohmann::ordered_json{{"token", "no"}, {"logprob", ln}}});
    choice["logprobs"] = {{"content", nlohmann::ordered_json::array({entry})}};
    choice["finish_reason"] = "length";
  } else {
    choice["message"] = {{"role", "assistant"},
                         {"content", rule ? rule->canned_summary : table.default_summary}};
    choice["logprobs"] = nullptr;
    choice["finish_reason"] = "stop";
  }
  resp["choices"] = nlohmann::ordered_json::array({choice});
  return {200, resp.dump()};
}

// HTTP front end for mock_respond. The rule table is immutable once serving.
class MockServer {
 public:
  explicit MockServer(RuleTable table) : table_(std::move(table)) {
    auto v = rule_table_violations(table_);
    if (!v.empty()) throw ConfigError(std::move(v));
    server_.Post(wire::kChatPath, [this](const httplib::Request& req, httplib::Response& res) {
      auto r = mock_respond(req.body, table_);
      res.status = r.status;
      res.set_content(r.body, "application/json");
    });
    server_.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("{\"status\":\"ok\"}", "application/json");
    });
  }

  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  ~MockServer() { stop(); }

  // Binds and serves on a background thread. Port 0 picks a free port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
    } else if (server_.bind_to_port(host, port)) {
      port_ = port;
    } else {
      port_ = -1;
    }
    if (port_ <= 0) throw IoError("mock server cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  // Blocks the calling thread.
  void serve(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw IoError("mock server cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  RuleTable table_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace radlabel
