#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "radlabel/condition.hpp"
#include "radlabel/error.hpp"
#include "radlabel/llm_gateway.hpp"
#include "radlabel/mil_svm.hpp"
#include "radlabel/prompting.hpp"
#include "radlabel/synthetic.hpp"
#include "radlabel/util.hpp"

namespace radlabel {

// Every pipeline setting. Loaded from one JSON document; the CLI writes flag
// values into the same document before parsing, so every key is overridable.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  std::string corpus;
  std::string conditions_file;
  std::string condition;
  Strategy strategy = Strategy::SummaryQuery;
  std::string templates;
  ClientConfig client;
  double threshold = 0.5;

  std::string labels;
  std::string truth;
  std::string calibration;
  std::string test;
  std::string apply;

  double split_fraction = 0.5;
  std::optional<std::uint64_t> split_seed;

  std::string embeddings;
  std::string model;
  SvmOptions svm;
  double train_fraction = 0.6;
  double validation_fraction = 0.5;
  double max_join_failure = 0.10;

  std::string mock_rules;
  std::string mock_host = "127.0.0.1";
  int mock_port = 8080;

  SyntheticOptions synthetic;

  std::uint64_t effective_split_seed() const { return split_seed ? *split_seed : derive_seed(seed, "split"); }
};

namespace detail {

class ConfigReader {
 public:
  explicit ConfigReader(std::vector<std::string>& violations) : v_(violations) {}

  template <typename T>
  void read(const nlohmann::json& obj, const std::string& prefix, const char* key, T& out) {
    if (!obj.contains(key) || obj[key].is_null()) return;
    try {
      out = obj[key].get<T>();
    } catch (const nlohmann::json::exception&) {
      v_.push_back(prefix + key + ": wrong type (got " + obj[key].type_name() + ")");
    }
  }

  void check_keys(const nlohmann::json& obj, const std::string& prefix, const std::set<std::string>& known) {
    if (!obj.is_object()) {
      v_.push_back((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
      return;
    }
    for (auto it = obj.begin(); it != obj.end(); ++it)
      if (!known.count(it.key())) v_.push_back(prefix + it.key() + ": unknown key");
  }

 private:
  std::vector<std::string>& v_;
};

}  // namespace detail

// A run manifest is accepted too: its "config" member is the effective config.
inline RunConfig parse_run_config(const nlohmann::json& doc) {
  const nlohmann::json& j = doc.contains("config") && doc.contains("subcommand") ? doc["config"] : doc;
  std::vector<std::string> v;
  detail::ConfigReader r(v);
  RunConfig c;
  r.check_keys(j, "",
               {"seed", "output_dir", "corpus", "conditions_file", "condition", "strategy", "templates",
                "client", "threshold", "labels", "truth", "calibration", "test", "apply", "split",
                "embeddings", "model", "svm", "mock", "synthetic"});
  if (!j.is_object()) throw ConfigError(std::move(v));
  r.read(j, "", "seed", c.seed);
  r.read(j, "", "output_dir", c.output_dir);
  r.read(j, "", "corpus", c.corpus);
  r.read(j, "", "conditions_file", c.conditions_file);
  r.read(j, "", "condition", c.condition);
  std::string strategy;
  r.read(j, "", "strategy", strategy);
  if (!strategy.empty()) {
    try {
      c.strategy = parse_strategy(strategy);
      if (c.strategy == Strategy::SummaryRequest) v.push_back("strategy: must be direct-query or summary-query");
    } catch (const ConfigError& e) {
      v.push_back(std::string("strategy: ") + e.what());
    }
  }
  r.read(j, "", "templates", c.templates);
  r.read(j, "", "threshold", c.threshold);
  if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) v.push_back("threshold: must lie in [0, 1]");
  for (auto* key : {"labels", "truth", "calibration", "test", "apply", "embeddings", "model"}) {
    std::string* dst = nullptr;
    std::string_view k = key;
    if (k == "labels") dst = &c.labels;
    else if (k == "truth") dst = &c.truth;
    else if (k == "calibration") dst = &c.calibration;
    else if (k == "test") dst = &c.test;
    else if (k == "apply") dst = &c.apply;
    else if (k == "embeddings") dst = &c.embeddings;
    else dst = &c.model;
    r.read(j, "", key, *dst);
  }

  if (j.contains("client")) {
    const auto& cj = j["client"];
    r.check_keys(cj, "client.",
                 {"endpoint", "model", "max_tokens", "top_logprobs", "max_in_flight", "retry_limit",
                  "timeout_ms", "backoff_ms", "seed", "temperature"});
    if (cj.is_object()) {
      r.read(cj, "client.", "endpoint", c.client.endpoint);
      r.read(cj, "client.", "model", c.client.model_name);
      r.read(cj, "client.", "temperature", c.client.temperature);
      r.read(cj, "client.", "max_tokens", c.client.max_generated_tokens);
      r.read(cj, "client.", "top_logprobs", c.client.top_logprobs);
      r.read(cj, "client.", "max_in_flight", c.client.max_in_flight);
      r.read(cj, "client.", "retry_limit", c.client.retry_limit);
      long long timeout = c.client.timeout.count(), backoff = c.client.backoff_initial.count();
      r.read(cj, "client.", "timeout_ms", timeout);
      r.read(cj, "client.", "backoff_ms", backoff);
      c.client.timeout = std::chrono::milliseconds(timeout);
      c.client.backoff_initial = std::chrono::milliseconds(backoff);
      if (cj.contains("seed")) {
        if (cj["seed"].is_null()) c.client.seed.reset();
        else r.read(cj, "client.", "seed", *c.client.seed);
      }
    }
  }
  auto cv = client_config_violations(c.client);
  v.insert(v.end(), cv.begin(), cv.end());

  if (j.contains("split")) {
    const auto& sj = j["split"];
    r.check_keys(sj, "split.", {"fraction", "seed"});
    if (sj.is_object()) {
      r.read(sj, "split.", "fraction", c.split_fraction);
      if (sj.contains("seed") && !sj["seed"].is_null()) {
        std::uint64_t s = 0;
        r.read(sj, "split.", "seed", s);
        c.split_seed = s;
      }
    }
  }
  if (!(c.split_fraction > 0.0 && c.split_fraction < 1.0)) v.push_back("split.fraction: must lie in (0, 1)");

  if (j.contains("svm")) {
    const auto& sj = j["svm"];
    r.check_keys(sj, "svm.",
                 {"c", "tolerance", "max_passes", "class_weighting", "train_fraction", "validation_fraction",
                  "max_join_failure"});
    if (sj.is_object()) {
      r.read(sj, "svm.", "c", c.svm.c_param);
      r.read(sj, "svm.", "tolerance", c.svm.tolerance);
      r.read(sj, "svm.", "max_passes", c.svm.max_passes);
      r.read(sj, "svm.", "class_weighting", c.svm.class_weighting);
      r.read(sj, "svm.", "train_fraction", c.train_fraction);
      r.read(sj, "svm.", "validation_fraction", c.validation_fraction);
      r.read(sj, "svm.", "max_join_failure", c.max_join_failure);
    }
  }
  if (!(c.svm.c_param > 0.0)) v.push_back("svm.c: must be positive");
  if (!(c.svm.tolerance > 0.0)) v.push_back("svm.tolerance: must be positive");
  if (c.svm.max_passes < 1) v.push_back("svm.max_passes: must be >= 1");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) v.push_back("svm.train_fraction: must lie in (0, 1)");
  if (!(c.validation_fraction > 0.0 && c.validation_fraction < 1.0))
    v.push_back("svm.validation_fraction: must lie in (0, 1)");
  if (!(c.max_join_failure >= 0.0 && c.max_join_failure <= 1.0))
    v.push_back("svm.max_join_failure: must lie in [0, 1]");
  c.svm.seed = derive_seed(c.seed, "svm");

  if (j.contains("mock")) {
    const auto& mj = j["mock"];
    r.check_keys(mj, "mock.", {"rules", "host", "port"});
    if (mj.is_object()) {
      r.read(mj, "mock.", "rules", c.mock_rules);
      r.read(mj, "mock.", "host", c.mock_host);
      r.read(mj, "mock.", "port", c.mock_port);
    }
  }
  if (c.mock_port < 0 || c.mock_port > 65535) v.push_back("mock.port: must lie in [0, 65535]");

  c.synthetic.seed = c.seed;
  if (j.contains("synthetic")) {
    const auto& sj = j["synthetic"];
    r.check_keys(sj, "synthetic.",
                 {"reports", "positive_rate", "dim", "shift", "sigma", "bag_min", "bag_max",
                  "history_decoy_rate", "headerless_rate", "keywords"});
    if (sj.is_object()) {
      r.read(sj, "synthetic.", "reports", c.synthetic.reports);
      r.read(sj, "synthetic.", "positive_rate", c.synthetic.positive_rate);
      r.read(sj, "synthetic.", "dim", c.synthetic.dim);
      r.read(sj, "synthetic.", "shift", c.synthetic.shift);
      r.read(sj, "synthetic.", "sigma", c.synthetic.sigma);
      r.read(sj, "synthetic.", "bag_min", c.synthetic.bag_min);
      r.read(sj, "synthetic.", "bag_max", c.synthetic.bag_max);
      r.read(sj, "synthetic.", "history_decoy_rate", c.synthetic.history_decoy_rate);
      r.read(sj, "synthetic.", "headerless_rate", c.synthetic.headerless_rate);
      if (sj.contains("keywords")) {
        try {
          c.synthetic.keywords.clear();
          for (const auto& k : sj["keywords"])
            c.synthetic.keywords.push_back({k.at("keyword").get<std::string>(), k.value("logit_yes", 0.0),
                                            k.value("logit_no", -4.0)});
        } catch (const nlohmann::json::exception& e) {
          v.push_back(std::string("synthetic.keywords: ") + e.what());
        }
      }
    }
  }
  auto sv = synthetic_violations(c.synthetic);
  v.insert(v.end(), sv.begin(), sv.end());

  if (!v.empty()) throw ConfigError(std::move(v));
  return c;
}

inline nlohmann::json load_config_document(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.what());
  }
}

// Per-subcommand requirements: required settings and input files that must exist.
inline void validate_for(const std::string& cmd, const RunConfig& c) {
  std::vector<std::string> v;
  auto need_file = [&](const std::string& key, const std::string& path) {
    if (path.empty()) v.push_back(cmd + ": '" + key + "' is required");
    else if (!std::filesystem::is_regular_file(path)) v.push_back(key + ": file '" + path + "' does not exist");
  };
  auto opt_file = [&](const std::string& key, const std::string& path) {
    if (!path.empty() && !std::filesystem::is_regular_file(path))
      v.push_back(key + ": file '" + path + "' does not exist");
  };
  auto need = [&](const std::string& key, const std::string& value) {
    if (value.empty()) v.push_back(cmd + ": '" + key + "' is required");
  };
  opt_file("conditions_file", c.conditions_file);
  opt_file("templates", c.templates);
  if (cmd == "label" || cmd == "summarize") {
    need_file("corpus", c.corpus);
    need("condition", c.condition);
  } else if (cmd == "calibrate") {
    need_file("calibration", c.calibration);
    need_file("truth", c.truth);
    opt_file("apply", c.apply);
  } else if (cmd == "evaluate") {
    need_file("calibration", c.calibration);
    need_file("test", c.test);
    need_file("truth", c.truth);
  } else if (cmd == "split") {
    need_file("truth", c.truth);
    opt_file("labels", c.labels);
  } else if (cmd == "prep-finetune") {
    need_file("corpus", c.corpus);
  } else if (cmd == "train-svm") {
    need_file("embeddings", c.embeddings);
    need_file("labels", c.labels);
    need("condition", c.condition);
    opt_file("corpus", c.corpus);
    opt_file("truth", c.truth);
  } else if (cmd == "predict-svm") {
    need_file("embeddings", c.embeddings);
    need_file("model", c.model);
    need("condition", c.condition);
  } else if (cmd == "roc-export") {
    need_file("labels", c.labels);
    need_file("truth", c.truth);
  } else if (cmd == "mock-server") {
    need_file("mock.rules", c.mock_rules);
  }
  if (cmd != "mock-server") {
    std::error_code ec;
    std::filesystem::create_directories(c.output_dir, ec);
    if (ec || !std::filesystem::is_directory(c.output_dir))
      v.push_back("output_dir: cannot create '" + c.output_dir + "'");
  }
  if (!v.empty()) throw ConfigError(std::move(v));
}

}  // namespace radlabel
