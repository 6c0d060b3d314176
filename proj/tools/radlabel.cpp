#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "radlabel/commands.hpp"

namespace {

enum class Kind { String, Int, Double, Bool };

struct Flag {
  const char* name;
  const char* pointer;
  Kind kind;
  const char* help;
};

const Flag kFlags[] = {
    {"--out", "/output_dir", Kind::String, "output directory"},
    {"--seed", "/seed", Kind::Int, "master seed"},
    {"--corpus", "/corpus", Kind::String, "report corpus (JSONL)"},
    {"--conditions", "/conditions_file", Kind::String, "condition definitions (JSON)"},
    {"--condition", "/condition", Kind::String, "condition name"},
    {"--strategy", "/strategy", Kind::String, "direct-query | summary-query"},
    {"--templates", "/templates", Kind::String, "prompt templates (JSON)"},
    {"--threshold", "/threshold", Kind::Double, "decision threshold on p(yes)"},
    {"--endpoint", "/client/endpoint", Kind::String, "chat-completions server base URL"},
    {"--model-name", "/client/model", Kind::String, "model name sent to the server"},
    {"--max-tokens", "/client/max_tokens", Kind::Int, "summary token limit"},
    {"--top-logprobs", "/client/top_logprobs", Kind::Int, "alternatives requested per token"},
    {"--max-in-flight", "/client/max_in_flight", Kind::Int, "concurrent requests"},
    {"--retry-limit", "/client/retry_limit", Kind::Int, "attempts per request"},
    {"--timeout-ms", "/client/timeout_ms", Kind::Int, "request timeout"},
    {"--labels", "/labels", Kind::String, "label records (JSONL)"},
    {"--truth", "/truth", Kind::String, "ground truth ('<id> <0|1>' lines)"},
    {"--calibration", "/calibration", Kind::String, "calibration label records"},
    {"--test", "/test", Kind::String, "test label records"},
    {"--apply", "/apply", Kind::String, "label records to relabel at the calibrated threshold"},
    {"--fraction", "/split/fraction", Kind::Double, "calibration share of each class"},
    {"--split-seed", "/split/seed", Kind::Int, "split seed (derived from --seed when absent)"},
    {"--embeddings", "/embeddings", Kind::String, "embedding file"},
    {"--model", "/model", Kind::String, "trained SVM model file"},
    {"--svm-c", "/svm/c", Kind::Double, "SVM regularisation constant"},
    {"--tolerance", "/svm/tolerance", Kind::Double, "SVM stopping tolerance"},
    {"--max-passes", "/svm/max_passes", Kind::Int, "SVM pass limit"},
    {"--class-weighting", "/svm/class_weighting", Kind::Bool, "balance SVM classes (true|false)"},
    {"--rules", "/mock/rules", Kind::String, "mock server rule table (JSON)"},
    {"--host", "/mock/host", Kind::String, "mock server bind address"},
    {"--port", "/mock/port", Kind::Int, "mock server port"},
    {"--reports", "/synthetic/reports", Kind::Int, "synthetic report count"},
    {"--positive-rate", "/synthetic/positive_rate", Kind::Double, "synthetic positive share"},
    {"--dim", "/synthetic/dim", Kind::Int, "synthetic embedding dimension"},
    {"--shift", "/synthetic/shift", Kind::Double, "synthetic instance shift in sigma units"},
};

nlohmann::json typed_value(const std::string& raw, Kind kind, const std::string& flag) {
  try {
    switch (kind) {
      case Kind::String: return raw;
      case Kind::Int:
        if (!raw.empty() && raw[0] == '-') return std::stoll(raw);
        return std::stoull(raw);
      case Kind::Double: return radlabel::parse_double(raw);
      case Kind::Bool:
        if (raw == "true" || raw == "1") return true;
        if (raw == "false" || raw == "0") return false;
        break;
    }
  } catch (const std::exception&) {
  }
  throw radlabel::ConfigError(flag + ": invalid value '" + raw + "'");
}

// --set a.b=value: the value is parsed as JSON, falling back to a plain string.
void apply_set(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw radlabel::ConfigError("--set expects KEY=VALUE, got '" + assignment + "'");
  std::string pointer = "/" + assignment.substr(0, eq);
  for (auto& ch : pointer)
    if (ch == '.') ch = '/';
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  doc[nlohmann::json::json_pointer(pointer)] = value;
}

int exit_code(radlabel::ErrorKind kind) {
  using radlabel::ErrorKind;
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Parse:
    case ErrorKind::Io: return 3;
    case ErrorKind::Precondition:
    case ErrorKind::Degenerate:
    case ErrorKind::Join: return 4;
    case ErrorKind::Transport:
    case ErrorKind::Protocol:
    case ErrorKind::Unscorable:
    case ErrorKind::EmptySummary: return 5;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"radlabel: label radiology reports with a language model and evaluate the labels"};
  app.set_version_flag("--version", std::string(radlabel::kToolVersion));
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.footer(
      "Every setting can come from --config (a JSON file or a previous manifest) and be overridden by the\n"
      "flags above or by --set KEY=VALUE with dotted keys, e.g. --set svm.c=10 --set client.seed=null.\n"
      "Exit codes: 0 ok, 1 internal, 2 configuration, 3 input/parse, 4 data precondition, 5 server.");

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "run config JSON, or a manifest to replay");
  app.add_option("--set", sets, "override any config key (KEY=VALUE, repeatable)");
  std::vector<std::optional<std::string>> values(std::size(kFlags));
  for (std::size_t i = 0; i < std::size(kFlags); ++i) app.add_option(kFlags[i].name, values[i], kFlags[i].help);

  const std::pair<const char*, const char*> subcommands[] = {
      {"label", "score each report for a condition and write labels.jsonl"},
      {"summarize", "ask the model for condition-focused summaries"},
      {"calibrate", "pick the EER threshold on calibration labels"},
      {"evaluate", "threshold test labels at the calibration EER point and report metrics"},
      {"split", "stratified calibration/test split of the ground truth ids"},
      {"prep-finetune", "write fine-tuning records with summary-section loss masks"},
      {"train-svm", "train the NSK linear SVM on embeddings using model labels"},
      {"predict-svm", "score embeddings with a trained SVM model"},
      {"roc-export", "write the ROC curve for scored labels"},
      {"gen-synthetic", "generate a synthetic corpus, truth, mock rules and embeddings"},
      {"mock-server", "serve deterministic chat completions from a rule table"},
  };
  for (const auto& [name, help] : subcommands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    nlohmann::json doc = nlohmann::json::object();
    if (!config_path.empty()) {
      doc = radlabel::load_config_document(config_path);
      if (doc.contains("subcommand") && doc.contains("config")) doc = doc["config"];
    }
    for (std::size_t i = 0; i < std::size(kFlags); ++i)
      if (values[i])
        doc[nlohmann::json::json_pointer(kFlags[i].pointer)] = typed_value(*values[i], kFlags[i].kind, kFlags[i].name);
    for (const auto& s : sets) apply_set(doc, s);

    const auto cfg = radlabel::parse_run_config(doc);
    if (command == "mock-server") {
      radlabel::validate_for(command, cfg);
      radlabel::MockServer server(radlabel::load_rule_table(cfg.mock_rules));
      std::cout << "mock server listening on http://" << cfg.mock_host << ":" << cfg.mock_port << std::endl;
      server.serve(cfg.mock_host, cfg.mock_port);
      return 0;
    }
    const auto result = radlabel::run_command(command, cfg);
    for (const auto& note : result.notes) std::cout << command << ": " << note << "\n";
    for (const auto& p : result.outputs) std::cout << "wrote " << p.string() << "\n";
    return 0;
  } catch (const radlabel::ConfigError& e) {
    std::cerr << "error[config]: invalid configuration\n";
    for (const auto& v : e.violations()) std::cerr << "  - " << v << "\n";
    return exit_code(e.kind());
  } catch (const radlabel::Error& e) {
    std::cerr << "error[" << radlabel::to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
}
