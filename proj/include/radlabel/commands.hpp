#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "radlabel/condition.hpp"
#include "radlabel/error.hpp"
#include "radlabel/eval.hpp"
#include "radlabel/llm_gateway.hpp"
#include "radlabel/mil_svm.hpp"
#include "radlabel/mock_server.hpp"
#include "radlabel/prompting.hpp"
#include "radlabel/report_corpus.hpp"
#include "radlabel/run_config.hpp"
#include "radlabel/synthetic.hpp"
#include "radlabel/util.hpp"

namespace radlabel {

inline nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["corpus"] = c.corpus;
  j["conditions_file"] = c.conditions_file;
  j["condition"] = c.condition;
  j["strategy"] = to_string(c.strategy);
  j["templates"] = c.templates;
  j["threshold"] = c.threshold;
  j["client"] = {{"endpoint", c.client.endpoint},
                 {"model", c.client.model_name},
                 {"temperature", c.client.temperature},
                 {"max_tokens", c.client.max_generated_tokens},
                 {"top_logprobs", c.client.top_logprobs},
                 {"max_in_flight", c.client.max_in_flight},
                 {"retry_limit", c.client.retry_limit},
                 {"timeout_ms", c.client.timeout.count()},
                 {"backoff_ms", c.client.backoff_initial.count()},
                 {"seed", c.client.seed ? nlohmann::ordered_json(*c.client.seed) : nlohmann::ordered_json()}};
  j["labels"] = c.labels;
  j["truth"] = c.truth;
  j["calibration"] = c.calibration;
  j["test"] = c.test;
  j["apply"] = c.apply;
  j["split"] = {{"fraction", c.split_fraction}, {"seed", c.effective_split_seed()}};
  j["embeddings"] = c.embeddings;
  j["model"] = c.model;
  j["svm"] = {{"c", c.svm.c_param},
              {"tolerance", c.svm.tolerance},
              {"max_passes", c.svm.max_passes},
              {"class_weighting", c.svm.class_weighting},
              {"train_fraction", c.train_fraction},
              {"validation_fraction", c.validation_fraction},
              {"max_join_failure", c.max_join_failure}};
  j["mock"] = {{"rules", c.mock_rules}, {"host", c.mock_host}, {"port", c.mock_port}};
  nlohmann::ordered_json kws = nlohmann::ordered_json::array();
  for (const auto& k : c.synthetic.keywords)
    kws.push_back({{"keyword", k.keyword}, {"logit_yes", k.logit_yes}, {"logit_no", k.logit_no}});
  j["synthetic"] = {{"reports", c.synthetic.reports},
                    {"positive_rate", c.synthetic.positive_rate},
                    {"dim", c.synthetic.dim},
                    {"shift", c.synthetic.shift},
                    {"sigma", c.synthetic.sigma},
                    {"bag_min", c.synthetic.bag_min},
                    {"bag_max", c.synthetic.bag_max},
                    {"history_decoy_rate", c.synthetic.history_decoy_rate},
                    {"headerless_rate", c.synthetic.headerless_rate},
                    {"keywords", kws}};
  return j;
}

struct CommandResult {
  std::vector<std::filesystem::path> outputs;
  std::vector<std::string> notes;
};

namespace detail {

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline ConditionConfig conditions_for(const RunConfig& c) {
  return c.conditions_file.empty() ? condition_config_from_json(nlohmann::json::object())
                                   : load_condition_config(c.conditions_file);
}

inline const ConditionSpec& require_condition(const ConditionConfig& cc, const std::string& name) {
  return cc.find(name);
}

inline PromptBuilder prompts_for(const RunConfig& c) {
  return c.templates.empty() ? PromptBuilder{} : PromptBuilder(load_templates(c.templates));
}

inline std::filesystem::path out_path(const RunConfig& c, const char* name) {
  return std::filesystem::path(c.output_dir) / name;
}

}  // namespace detail

// Scorable records that have ground truth, keyed by LabelRecord::key().
// Records with errors or without truth are counted in `skipped`.
inline ScoredSet scored_from_labels(const std::vector<LabelRecord>& records,
                                    const std::map<std::string, bool>& truth, std::size_t* skipped = nullptr) {
  ScoredSet out;
  std::size_t skip = 0;
  for (const auto& r : records) {
    auto t = truth.find(r.key());
    if (!r.p_yes || t == truth.end()) {
      ++skip;
      continue;
    }
    out.push_back({r.key(), *r.p_yes, t->second});
  }
  if (skipped) *skipped = skip;
  return out;
}

namespace cmd {

inline CommandResult label(const RunConfig& c) {
  const auto cc = detail::conditions_for(c);
  const auto& cond = detail::require_condition(cc, c.condition);
  const auto corpus = load_corpus(c.corpus, cc.keywords);
  const ChatClient client(c.client);
  const auto records = label_corpus(corpus, cond, c.strategy, client, c.threshold, detail::prompts_for(c));
  const auto path = detail::out_path(c, "labels.jsonl");
  write_labels(records, path);
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.error ? 1 : 0;
  return {{path}, {std::to_string(records.size()) + " records, " + std::to_string(failed) + " failed"}};
}

inline CommandResult summarize(const RunConfig& c) {
  const auto cc = detail::conditions_for(c);
  const auto& cond = detail::require_condition(cc, c.condition);
  const auto corpus = load_corpus(c.corpus, cc.keywords);
  const ChatClient client(c.client);
  const auto records = summarize_corpus(corpus, cond, client, detail::prompts_for(c));
  std::string buf;
  std::size_t failed = 0;
  for (const auto& r : records) {
    buf += summary_line(r);
    failed += r.error ? 1 : 0;
  }
  const auto path = detail::out_path(c, "summaries.jsonl");
  write_file(path, buf);
  return {{path}, {std::to_string(records.size()) + " summaries, " + std::to_string(failed) + " failed"}};
}

inline CommandResult calibrate(const RunConfig& c) {
  const auto truth = load_truth(c.truth);
  std::size_t skipped = 0;
  const auto set = scored_from_labels(load_labels(c.calibration), truth, &skipped);
  const auto roc = roc_and_eer(set);
  std::string s = "{\n";
  s += "  \"threshold\": " + detail::json_number6(roc.eer_threshold) + ",\n";
  s += "  \"threshold_exact\": " + (std::isfinite(roc.eer_threshold) ? format_double(roc.eer_threshold, "%.17g")
                                                                       : detail::json_number6(roc.eer_threshold)) +
       ",\n";
  s += "  \"eer\": " + detail::json_number6(roc.eer) + ",\n";
  s += "  \"auroc\": " + detail::json_number6(roc.auroc) + ",\n";
  s += "  \"n\": " + std::to_string(set.size()) + ", \"positives\": " + std::to_string(roc.positives) +
       ", \"negatives\": " + std::to_string(roc.negatives) + ", \"skipped\": " + std::to_string(skipped) + "\n}\n";
  CommandResult res;
  res.outputs.push_back(detail::out_path(c, "calibration.json"));
  write_file(res.outputs.back(), s);
  if (!c.apply.empty()) {
    auto records = load_labels(c.apply);
    for (auto& r : records) apply_label(r, roc.eer_threshold);
    res.outputs.push_back(detail::out_path(c, "labels.calibrated.jsonl"));
    write_labels(records, res.outputs.back());
  }
  res.notes.push_back("threshold " + format_double(roc.eer_threshold, "%.6g") + ", eer " +
                      format_double(roc.eer, "%.4f"));
  return res;
}

inline CommandResult evaluate(const RunConfig& c) {
  const auto truth = load_truth(c.truth);
  const auto cal = scored_from_labels(load_labels(c.calibration), truth);
  std::size_t skipped = 0;
  const auto test = scored_from_labels(load_labels(c.test), truth, &skipped);
  const auto m = radlabel::evaluate(test, cal);
  CommandResult res;
  res.outputs = {detail::out_path(c, "metrics.json"), detail::out_path(c, "roc.tsv")};
  write_file(res.outputs[0], metrics_json(m));
  write_file(res.outputs[1], roc_curve_content(roc_and_eer(test)));
  res.notes.push_back("auroc " + format_double(m.auroc, "%.4f") + ", balanced accuracy " +
                      format_double(m.balanced_accuracy, "%.4f") + ", skipped " + std::to_string(skipped));
  return res;
}

inline CommandResult split(const RunConfig& c) {
  const auto truth = load_truth(c.truth);
  std::vector<std::string> ids;
  std::vector<bool> labels;
  for (const auto& [id, y] : truth) {
    ids.push_back(id);
    labels.push_back(y);
  }
  const auto s = stratified_split(ids, labels, c.split_fraction, c.effective_split_seed());
  CommandResult res;
  res.outputs.push_back(detail::out_path(c, "split.tsv"));
  write_file(res.outputs.back(), split_file_content(s));
  if (!c.labels.empty()) {
    std::vector<LabelRecord> parts[2];
    for (const auto& r : load_labels(c.labels)) {
      auto it = s.assignments.find(r.key());
      if (it != s.assignments.end()) parts[it->second == Split::Calibration ? 0 : 1].push_back(r);
    }
    res.outputs.push_back(detail::out_path(c, "labels.calibration.jsonl"));
    write_labels(parts[0], res.outputs.back());
    res.outputs.push_back(detail::out_path(c, "labels.test.jsonl"));
    write_labels(parts[1], res.outputs.back());
  }
  res.notes.push_back(std::to_string(s.count(Split::Calibration)) + " calibration, " +
                      std::to_string(s.count(Split::Test)) + " test");
  return res;
}

inline CommandResult prep_finetune(const RunConfig& c) {
  const auto cc = detail::conditions_for(c);
  const auto corpus = load_corpus(c.corpus, cc.keywords);
  CommandResult res;
  res.outputs = {detail::out_path(c, "finetune.jsonl"), detail::out_path(c, "finetune_stats.json")};
  const auto stats = prep_finetune_dataset(corpus, res.outputs[0]);
  write_file(res.outputs[1], "{\"written\": " + std::to_string(stats.written) +
                                 ", \"skipped\": " + std::to_string(stats.skipped) + "}\n");
  res.notes.push_back(std::to_string(stats.written) + " written, " + std::to_string(stats.skipped) +
                      " skipped (no summary section)");
  return res;
}

inline CommandResult train_svm(const RunConfig& c) {
  const auto cc = detail::conditions_for(c);
  const auto& cond = detail::require_condition(cc, c.condition);
  ClassifierOptions opt;
  opt.svm = c.svm;
  opt.train_fraction = c.train_fraction;
  opt.validation_fraction = c.validation_fraction;
  opt.split_seed = derive_seed(c.seed, "classifier-split");
  opt.max_join_failure = c.max_join_failure;
  if (!c.corpus.empty())
    for (const auto& r : load_corpus(c.corpus, cc.keywords)) opt.report_to_bag[r.id] = r.study_id;
  if (!c.truth.empty()) {
    const auto truth = load_truth(c.truth);
    opt.test_truth.insert(truth.begin(), truth.end());
  }
  const auto result = train_condition_classifier(load_embeddings(c.embeddings), load_labels(c.labels), cond, opt);

  CommandResult res;
  res.outputs = {detail::out_path(c, "model.svm"), detail::out_path(c, "classifier_metrics.json"),
                 detail::out_path(c, "classifier_split.tsv"), detail::out_path(c, "test_scores.tsv")};
  write_file(res.outputs[0], model_file_content(result.model));
  std::string m = "{\n\"validation\": " + metrics_json(result.validation) + ",\n\"test\": " +
                  metrics_json(result.test) + ",\n\"join\": {\"rows\": " + std::to_string(result.rows) +
                  ", \"joined\": " + std::to_string(result.joined) + ", \"unmatched\": " +
                  std::to_string(result.unmatched) + ", \"unlabelled\": " + std::to_string(result.unlabelled) +
                  "},\n\"converged\": " + (result.model.converged ? "true" : "false") + ",\n\"iterations\": " +
                  std::to_string(result.model.iterations) + "\n}\n";
  write_file(res.outputs[1], m);
  std::string split = "# id split\n";
  for (const auto& [id, s] : result.split) split += id + "\t" + to_string(s) + "\n";
  write_file(res.outputs[2], split);
  std::string scores = "# id score label\n";
  for (const auto& it : result.test_scores)
    scores += it.id + "\t" + format_double(it.score, "%.17g") + "\t" + (it.label ? "1" : "0") + "\n";
  write_file(res.outputs[3], scores);
  res.notes.push_back("test auroc " + format_double(result.test.auroc, "%.4f") + ", balanced accuracy " +
                      format_double(result.test.balanced_accuracy, "%.4f"));
  if (!result.model.converged) res.notes.push_back("warning: svm did not converge within max_passes");
  return res;
}

inline CommandResult predict_svm(const RunConfig& c) {
  const auto cc = detail::conditions_for(c);
  const auto& cond = detail::require_condition(cc, c.condition);
  const auto model = load_model(c.model);
  const auto rows = build_feature_rows(load_embeddings(c.embeddings), cond);
  std::string out = "# id score\n";
  for (const auto& r : rows) out += r.id + "\t" + format_double(decision_score(model, r.x), "%.17g") + "\n";
  CommandResult res{{detail::out_path(c, "scores.tsv")}, {std::to_string(rows.size()) + " rows scored"}};
  write_file(res.outputs[0], out);
  return res;
}

inline CommandResult roc_export(const RunConfig& c) {
  const auto set = scored_from_labels(load_labels(c.labels), load_truth(c.truth));
  const auto roc = roc_and_eer(set);
  CommandResult res{{detail::out_path(c, "roc.tsv")}, {std::to_string(roc.points.size()) + " points"}};
  write_file(res.outputs[0], roc_curve_content(roc));
  return res;
}

inline CommandResult gen_synthetic(const RunConfig& c) {
  const auto data = generate_synthetic(c.synthetic);
  CommandResult res;
  res.outputs = {detail::out_path(c, "corpus.jsonl"), detail::out_path(c, "truth.tsv"),
                 detail::out_path(c, "rules.json"), detail::out_path(c, "embeddings.emb")};
  write_corpus(data.reports, res.outputs[0]);
  write_file(res.outputs[1], truth_content(data.truth));
  write_file(res.outputs[2], rule_table_to_json(data.rules).dump(2) + "\n");
  write_file(res.outputs[3], embedding_file_content(data.embeddings));
  res.notes.push_back(std::to_string(data.reports.size()) + " reports, " +
                      std::to_string(data.embeddings.instances.size()) + " embedding instances");
  return res;
}

}  // namespace cmd

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"label",     "summarize",   "calibrate",  "evaluate",
                                                 "split",     "prep-finetune", "train-svm", "predict-svm",
                                                 "roc-export", "gen-synthetic", "mock-server"};
  return names;
}

inline nlohmann::ordered_json make_manifest(const std::string& command, const RunConfig& c,
                                            const CommandResult& result, const std::string& started_at) {
  nlohmann::ordered_json m;
  m["tool"] = "radlabel";
  m["version"] = std::string(kToolVersion);
  m["subcommand"] = command;
  const auto cfg = run_config_to_json(c);
  m["config"] = cfg;
  m["config_hash"] = hex64(fnv1a64(cfg.dump()));
  m["seed"] = c.seed;
  m["rng"] = std::string(Rng::kName);
  m["started_at"] = started_at;
  m["finished_at"] = detail::utc_now();
  nlohmann::ordered_json outs = nlohmann::ordered_json::object();
  for (const auto& p : result.outputs) outs[p.filename().string()] = hex64(fnv1a64(read_file(p)));
  m["outputs"] = outs;
  m["notes"] = result.notes;
  return m;
}

// Runs a file-producing subcommand and writes <output_dir>/manifest.<command>.json.
// mock-server is not handled here because it blocks.
inline CommandResult run_command(const std::string& command, const RunConfig& c) {
  validate_for(command, c);
  const auto started = detail::utc_now();
  CommandResult res;
  if (command == "label") res = cmd::label(c);
  else if (command == "summarize") res = cmd::summarize(c);
  else if (command == "calibrate") res = cmd::calibrate(c);
  else if (command == "evaluate") res = cmd::evaluate(c);
  else if (command == "split") res = cmd::split(c);
  else if (command == "prep-finetune") res = cmd::prep_finetune(c);
  else if (command == "train-svm") res = cmd::train_svm(c);
  else if (command == "predict-svm") res = cmd::predict_svm(c);
  else if (command == "roc-export") res = cmd::roc_export(c);
  else if (command == "gen-synthetic") res = cmd::gen_synthetic(c);
  else throw ConfigError("unknown subcommand '" + command + "'");
  const auto manifest_path = std::filesystem::path(c.output_dir) / ("manifest." + command + ".json");
  write_file(manifest_path, make_manifest(command, c, res, started).dump(2) + "\n");
  return res;
}

inline CommandResult run_command(const std::string& command, const nlohmann::json& config_doc) {
  return run_command(command, parse_run_config(config_doc));
}

}  // namespace radlabel
