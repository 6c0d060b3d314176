#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "radlabel/condition.hpp"
#include "radlabel/error.hpp"
#include "radlabel/prompting.hpp"
#include "radlabel/report_corpus.hpp"
#include "radlabel/util.hpp"
#include "radlabel/wire.hpp"

namespace radlabel {

struct ClientConfig {
  std::string endpoint = "http://127.0.0.1:8080";
  std::string model_name = "local-model";
  double temperature = 0.0;
  int max_generated_tokens = 256;
  int top_logprobs = 5;
  int max_in_flight = 4;
  // Total attempts per request, including the first.
  int retry_limit = 3;
  std::chrono::milliseconds timeout{30000};
  std::chrono::milliseconds backoff_initial{200};
  std::optional<std::uint64_t> seed = 0;
};

inline std::vector<std::string> client_config_violations(const ClientConfig& c) {
  std::vector<std::string> v;
  if (c.endpoint.rfind("http://", 0) != 0) v.push_back("client.endpoint must start with http://");
  if (c.model_name.empty()) v.push_back("client.model is empty");
  if (c.temperature != 0.0) v.push_back("client.temperature must be 0");
  if (c.max_generated_tokens < 1) v.push_back("client.max_tokens must be >= 1");
  if (c.top_logprobs < 2) v.push_back("client.top_logprobs must be >= 2");
  if (c.max_in_flight < 1) v.push_back("client.max_in_flight must be >= 1");
  if (c.retry_limit < 1) v.push_back("client.retry_limit must be >= 1");
  if (c.timeout.count() <= 0) v.push_back("client.timeout_ms must be positive");
  if (c.backoff_initial.count() < 0) v.push_back("client.backoff_ms must be >= 0");
  return v;
}

// ---- scoring ---------------------------------------------------------------

struct TokenScore {
  double logit_yes = 0.0;
  double logit_no = 0.0;
  double p_yes = 0.5;
  std::string source_token;  // surface form of the winning class

  double p_no() const { return 1.0 / (1.0 + std::exp(logit_yes - logit_no)); }
};

// Two-way softmax written in the overflow-free logistic form.
inline double softmax_yes(double logit_yes, double logit_no) {
  return 1.0 / (1.0 + std::exp(logit_no - logit_yes));
}

// Lowercases and strips surrounding whitespace, ASCII punctuation and the
// word-boundary markers used by common tokenizers ("Ġ" and "▁").
inline std::string normalize_token(std::string_view tok) {
  auto strip_front = [&]() {
    if (tok.empty()) return false;
    const auto c = static_cast<unsigned char>(tok.front());
    if (is_space(tok.front()) || std::ispunct(c)) {
      tok.remove_prefix(1);
      return true;
    }
    if (tok.starts_with("\xC4\xA0")) {
      tok.remove_prefix(2);
      return true;
    }
    if (tok.starts_with("\xE2\x96\x81")) {
      tok.remove_prefix(3);
      return true;
    }
    return false;
  };
  auto strip_back = [&]() {
    if (tok.empty()) return false;
    const auto c = static_cast<unsigned char>(tok.back());
    if (is_space(tok.back()) || std::ispunct(c)) {
      tok.remove_suffix(1);
      return true;
    }
    return false;
  };
  while (strip_front()) {
  }
  while (strip_back()) {
  }
  return to_lower(tok);
}

// Picks the best "yes" and "no" variants from a first-token top-k list. When
// only one class surfaced, the other is bounded by the smallest listed logprob.
inline TokenScore score_from_top_logprobs(const std::vector<TopLogprob>& top_k) {
  const TopLogprob* yes = nullptr;
  const TopLogprob* no = nullptr;
  double floor = std::numeric_limits<double>::infinity();
  for (const auto& e : top_k) {
    floor = std::min(floor, e.logprob);
    const auto norm = normalize_token(e.token);
    if (norm == "yes" && (!yes || e.logprob > yes->logprob)) yes = &e;
    if (norm == "no" && (!no || e.logprob > no->logprob)) no = &e;
  }
  if (!yes && !no) throw UnscorableError(top_k);
  TokenScore s;
  s.logit_yes = yes ? yes->logprob : floor;
  s.logit_no = no ? no->logprob : floor;
  s.p_yes = softmax_yes(s.logit_yes, s.logit_no);
  s.source_token = (s.p_yes >= 0.5 && yes) || !no ? yes->token : no->token;
  return s;
}

// ---- transport -------------------------------------------------------------

// Stateless HTTP client for the chat-completions endpoint. Each call opens its
// own connection, so one instance can be shared across worker threads.
class ChatClient {
 public:
  explicit ChatClient(ClientConfig cfg) : cfg_(std::move(cfg)) {
    auto v = client_config_violations(cfg_);
    if (!v.empty()) throw ConfigError(std::move(v));
    std::string rest = cfg_.endpoint.substr(7);
    auto slash = rest.find('/');
    host_port_ = rest.substr(0, slash);
    if (slash != std::string::npos) prefix_ = rest.substr(slash);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    if (host_port_.empty()) throw ConfigError("client.endpoint has no host");
  }

  const ClientConfig& config() const { return cfg_; }

  nlohmann::json post(const wire::ChatRequest& req) const {
    const std::string body = wire::to_json(req).dump();
    std::string last_error;
    for (int attempt = 1; attempt <= cfg_.retry_limit; ++attempt) {
      if (attempt > 1) backoff(attempt - 1);
      httplib::Client cli("http://" + host_port_);
      const auto secs = cfg_.timeout.count() / 1000;
      const auto usecs = (cfg_.timeout.count() % 1000) * 1000;
      cli.set_connection_timeout(secs, usecs);
      cli.set_read_timeout(secs, usecs);
      cli.set_write_timeout(secs, usecs);
      auto res = cli.Post(prefix_ + wire::kChatPath, body, "application/json");
      if (!res) {
        last_error = "request failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500 || res->status == 429) {
        last_error = "server returned HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw ProtocolError("server returned HTTP " + std::to_string(res->status) + ": " + res->body);
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::parse_error& e) {
        throw ProtocolError(std::string("response is not JSON: ") + e.what());
      }
    }
    throw TransportError(last_error + " after " + std::to_string(cfg_.retry_limit) + " attempt(s)");
  }

 private:
  void backoff(int retry) const {
    thread_local std::mt19937_64 jitter{std::random_device{}()};
    const double base = static_cast<double>(cfg_.backoff_initial.count()) * std::pow(2.0, retry - 1);
    const double factor = 0.5 + std::uniform_real_distribution<double>(0.0, 0.5)(jitter);
    std::this_thread::sleep_for(std::chrono::microseconds(static_cast<long long>(base * factor * 1000)));
  }

  ClientConfig cfg_;
  std::string host_port_;
  std::string prefix_;
};

inline std::string generate_summary(const PromptBundle& bundle, const ChatClient& client) {
  if (bundle.strategy != Strategy::SummaryRequest)
    throw PreconditionError("generate_summary needs a summary-request bundle");
  wire::ChatRequest req;
  req.model = client.config().model_name;
  req.messages = wire::messages_for(bundle);
  req.temperature = client.config().temperature;
  req.max_tokens = client.config().max_generated_tokens;
  req.seed = client.config().seed;
  auto text = std::string(trim(wire::response_text(client.post(req))));
  if (text.empty()) throw EmptySummaryError();
  return text;
}

inline TokenScore score_yes_no(const PromptBundle& bundle, const ChatClient& client) {
  if (bundle.strategy == Strategy::SummaryRequest)
    throw PreconditionError("score_yes_no needs a direct-query or summary-query bundle");
  wire::ChatRequest req;
  req.model = client.config().model_name;
  req.messages = wire::messages_for(bundle);
  req.temperature = client.config().temperature;
  req.max_tokens = 1;
  req.logprobs = true;
  req.top_logprobs = client.config().top_logprobs;
  req.seed = client.config().seed;
  return score_from_top_logprobs(wire::first_token_top_logprobs(client.post(req)));
}

// ---- labelling -------------------------------------------------------------

struct LabelRecord {
  std::string report_id;
  std::string condition;
  std::optional<std::string> level;
  Strategy strategy = Strategy::DirectQuery;
  std::optional<std::string> summary;
  std::optional<double> p_yes;
  double threshold = 0.5;
  std::optional<bool> label;
  std::optional<std::string> error;

  // Join key: report id, suffixed with "@<level>" for IVD-level records.
  std::string key() const { return level ? report_id + "@" + *level : report_id; }
};

inline std::string record_key(const std::string& report_id, const std::optional<std::string>& level) {
  return level ? report_id + "@" + *level : report_id;
}

// Score >= threshold is positive.
inline void apply_label(LabelRecord& r, double threshold) {
  r.threshold = threshold;
  if (r.p_yes) r.label = *r.p_yes >= threshold;
}

namespace detail {

template <typename Fn>
void run_ordered(std::size_t n, int workers, Fn&& fn) {
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  const auto count = static_cast<std::size_t>(std::max(1, workers));
  if (count == 1 || n <= 1) {
    loop();
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(std::min(count, n));
  for (std::size_t w = 0; w < std::min(count, n); ++w) pool.emplace_back(loop);
}

inline std::string describe(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e))
    return std::string(to_string(err->kind())) + ": " + err->what();
  return std::string("internal: ") + e.what();
}

}  // namespace detail

// Labels every report (and every configured level for IVD-level conditions).
// Output order follows input order; per-record failures become error records.
inline std::vector<LabelRecord> label_corpus(const std::vector<Report>& reports,
                                             const ConditionSpec& cond, Strategy strategy,
                                             const ChatClient& client, double threshold = 0.5,
                                             const PromptBuilder& prompts = {}) {
  validate(cond);
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
  if (strategy == Strategy::SummaryRequest)
    throw ConfigError("label_corpus strategy must be direct-query or summary-query");

  std::vector<std::optional<std::string>> levels;
  if (cond.granularity == Granularity::IvdLevel)
    for (const auto& l : cond.levels) levels.emplace_back(l);
  else
    levels.emplace_back(std::nullopt);

  std::vector<std::vector<LabelRecord>> slots(reports.size());
  detail::run_ordered(reports.size(), client.config().max_in_flight, [&](std::size_t i) {
    const auto& report = reports[i];
    auto& out = slots[i];
    auto base = [&](const std::optional<std::string>& level) {
      LabelRecord r;
      r.report_id = report.id;
      r.condition = cond.name;
      r.level = level;
      r.strategy = strategy;
      r.threshold = threshold;
      return r;
    };
    const std::string text = prepare_report_text(report, cond);
    std::optional<std::string> summary;
    if (strategy == Strategy::SummaryQuery) {
      try {
        summary = generate_summary(prompts.summary_request(cond, text), client);
      } catch (const std::exception& e) {
        for (const auto& level : levels) {
          auto r = base(level);
          r.error = detail::describe(e);
          out.push_back(std::move(r));
        }
        return;
      }
    }
    for (const auto& level : levels) {
      auto r = base(level);
      r.summary = summary;
      try {
        const auto bundle = strategy == Strategy::SummaryQuery
                                ? prompts.summary_query(cond, text, *summary, level)
                                : prompts.direct_query(cond, text, level);
        r.p_yes = score_yes_no(bundle, client).p_yes;
        apply_label(r, threshold);
      } catch (const std::exception& e) {
        r.error = detail::describe(e);
      }
      out.push_back(std::move(r));
    }
  });

  std::vector<LabelRecord> records;
  for (auto& s : slots)
    for (auto& r : s) records.push_back(std::move(r));
  return records;
}

struct SummaryRecord {
  std::string report_id;
  std::string condition;
  std::optional<std::string> summary;
  std::optional<std::string> error;
};

inline std::vector<SummaryRecord> summarize_corpus(const std::vector<Report>& reports,
                                                   const ConditionSpec& cond, const ChatClient& client,
                                                   const PromptBuilder& prompts = {}) {
  validate(cond);
  std::vector<SummaryRecord> out(reports.size());
  detail::run_ordered(reports.size(), client.config().max_in_flight, [&](std::size_t i) {
    out[i].report_id = reports[i].id;
    out[i].condition = cond.name;
    try {
      out[i].summary =
          generate_summary(prompts.summary_request(cond, prepare_report_text(reports[i], cond)), client);
    } catch (const std::exception& e) {
      out[i].error = detail::describe(e);
    }
  });
  return out;
}

// ---- label files -----------------------------------------------------------

namespace detail {
inline std::string json_string_or_null(const std::optional<std::string>& s) {
  return s ? nlohmann::json(*s).dump() : "null";
}
}  // namespace detail

// One JSON object per line; p_yes is written with 17 significant digits.
inline std::string label_line(const LabelRecord& r) {
  std::string s = "{\"report_id\":" + nlohmann::json(r.report_id).dump();
  s += ",\"condition\":" + nlohmann::json(r.condition).dump();
  s += ",\"level\":" + detail::json_string_or_null(r.level);
  s += ",\"strategy\":" + nlohmann::json(to_string(r.strategy)).dump();
  s += ",\"p_yes\":" + (r.p_yes ? format_double(*r.p_yes, "%.17g") : std::string("null"));
  s += ",\"threshold\":" + format_double(r.threshold, "%.17g");
  s += ",\"label\":" + (r.label ? std::string(*r.label ? "1" : "0") : std::string("null"));
  s += ",\"summary\":" + detail::json_string_or_null(r.summary);
  s += ",\"error\":" + detail::json_string_or_null(r.error);
  return s + "}\n";
}

inline void write_labels(const std::vector<LabelRecord>& records, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : records) out += label_line(r);
  write_file(path, out);
}

inline std::vector<LabelRecord> parse_labels(std::string_view content) {
  std::vector<LabelRecord> out;
  const auto lines = split_lines(content);
  auto opt_str = [](const nlohmann::json& j, const char* k) -> std::optional<std::string> {
    if (!j.contains(k) || j[k].is_null()) return std::nullopt;
    return j[k].get<std::string>();
  };
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    try {
      auto j = nlohmann::json::parse(lines[i]);
      LabelRecord r;
      r.report_id = j.at("report_id").get<std::string>();
      r.condition = j.at("condition").get<std::string>();
      r.level = opt_str(j, "level");
      r.strategy = parse_strategy(j.at("strategy").get<std::string>());
      if (!j.at("p_yes").is_null()) r.p_yes = j["p_yes"].get<double>();
      r.threshold = j.at("threshold").get<double>();
      if (!j.at("label").is_null()) r.label = j["label"].get<int>() != 0;
      r.summary = opt_str(j, "summary");
      r.error = opt_str(j, "error");
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed label record: ") + e.what(), i + 1);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), i + 1);
    }
  }
  return out;
}

inline std::vector<LabelRecord> load_labels(const std::filesystem::path& path) {
  return parse_labels(read_file(path));
}

inline std::string summary_line(const SummaryRecord& r) {
  return "{\"report_id\":" + nlohmann::json(r.report_id).dump() +
         ",\"condition\":" + nlohmann::json(r.condition).dump() +
         ",\"summary\":" + detail::json_string_or_null(r.summary) +
         ",\"error\":" + detail::json_string_or_null(r.error) + "}\n";
}

}  // namespace radlabel
