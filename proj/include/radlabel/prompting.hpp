#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "radlabel/condition.hpp"
#include "radlabel/error.hpp"
#include "radlabel/util.hpp"

namespace radlabel {

enum class Strategy { DirectQuery, SummaryRequest, SummaryQuery };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::DirectQuery: return "direct-query";
    case Strategy::SummaryRequest: return "summary-request";
    case Strategy::SummaryQuery: return "summary-query";
  }
  return "unknown";
}

inline Strategy parse_strategy(const std::string& s) {
  const auto v = to_lower(s);
  if (v == "direct-query" || v == "direct") return Strategy::DirectQuery;
  if (v == "summary-request") return Strategy::SummaryRequest;
  if (v == "summary-query") return Strategy::SummaryQuery;
  throw ConfigError("unknown strategy '" + s + "' (expected direct-query or summary-query)");
}

struct PromptBundle {
  Strategy strategy = Strategy::DirectQuery;
  std::string system_text;
  std::string user_text;
  std::string condition_name;
  std::optional<std::string> level;

  bool operator==(const PromptBundle&) const = default;
};

// Template strings with placeholders <definition>, <condition>, <report>,
// <summary> and <at level L>. Substitution is a single left-to-right pass, so
// placeholder-like text inside a report is never expanded.
struct PromptTemplates {
  int version = 1;
  std::string answer_instruction = "Answer with a single word, yes or no.";
  std::string query_system =
      "You are a radiologist's assistant. <definition> Decide from the report whether the "
      "patient has <condition>.";
  std::string direct_query_user =
      "Report: <report> Question: Does the patient have <condition><at level L>? <answer>";
  std::string summary_request_system = "You are a radiologist's assistant. <definition>";
  std::string summary_request_user =
      "Report: <report> Task: Summarise this report with respect to <condition>.";
  std::string summary_query_user =
      "Report: <report> Summary: <summary> Question: Does the patient have <condition><at level "
      "L>? <answer>";
};

inline nlohmann::ordered_json templates_to_json(const PromptTemplates& t) {
  nlohmann::ordered_json j;
  j["version"] = t.version;
  j["answer_instruction"] = t.answer_instruction;
  j["query_system"] = t.query_system;
  j["direct_query_user"] = t.direct_query_user;
  j["summary_request_system"] = t.summary_request_system;
  j["summary_request_user"] = t.summary_request_user;
  j["summary_query_user"] = t.summary_query_user;
  return j;
}

inline PromptTemplates load_templates(const std::filesystem::path& path) {
  PromptTemplates t;
  try {
    auto j = nlohmann::json::parse(read_file(path));
    t.version = j.at("version").get<int>();
    if (t.version != 1)
      throw ConfigError("template file '" + path.string() + "': unsupported version " +
                        std::to_string(t.version));
    t.answer_instruction = j.value("answer_instruction", t.answer_instruction);
    t.query_system = j.value("query_system", t.query_system);
    t.direct_query_user = j.value("direct_query_user", t.direct_query_user);
    t.summary_request_system = j.value("summary_request_system", t.summary_request_system);
    t.summary_request_user = j.value("summary_request_user", t.summary_request_user);
    t.summary_query_user = j.value("summary_query_user", t.summary_query_user);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("template file '" + path.string() + "': " + e.what());
  }
  return t;
}

namespace detail {

inline std::string fill_template(
    std::string_view tmpl, const std::vector<std::pair<std::string_view, std::string_view>>& vars) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '<') {
      for (const auto& [key, value] : vars) {
        if (tmpl.compare(i, key.size(), key) == 0) {
          out += value;
          i += key.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tmpl[i++];
  }
  return out;
}

inline void check_level(const ConditionSpec& cond, const std::optional<std::string>& level) {
  if (!level) return;
  if (cond.granularity != Granularity::IvdLevel)
    throw PreconditionError("level '" + *level + "' given for scan-level condition '" + cond.name + "'");
  if (!cond.has_level(*level))
    throw PreconditionError("level '" + *level + "' is not configured for condition '" + cond.name + "'");
}

}  // namespace detail

class PromptBuilder {
 public:
  PromptBuilder() = default;
  explicit PromptBuilder(PromptTemplates templates) : t_(std::move(templates)) {}

  const PromptTemplates& templates() const { return t_; }

  PromptBundle direct_query(const ConditionSpec& cond, std::string_view report_text,
                            const std::optional<std::string>& level = std::nullopt) const {
    validate(cond);
    if (trim(report_text).empty()) throw PreconditionError("report text is empty");
    detail::check_level(cond, level);
    const std::string level_clause = level ? " at level " + *level : "";
    return {Strategy::DirectQuery, system(t_.query_system, cond),
            detail::fill_template(t_.direct_query_user, {{"<report>", report_text},
                                                         {"<condition>", cond.name},
                                                         {"<at level L>", level_clause},
                                                         {"<answer>", t_.answer_instruction}}),
            cond.name, level};
  }

  PromptBundle summary_request(const ConditionSpec& cond, std::string_view report_text) const {
    validate(cond);
    if (trim(report_text).empty()) throw PreconditionError("report text is empty");
    return {Strategy::SummaryRequest, system(t_.summary_request_system, cond),
            detail::fill_template(t_.summary_request_user,
                                  {{"<report>", report_text}, {"<condition>", cond.name}}),
            cond.name, std::nullopt};
  }

  PromptBundle summary_query(const ConditionSpec& cond, std::string_view report_text,
                             std::string_view summary,
                             const std::optional<std::string>& level = std::nullopt) const {
    validate(cond);
    if (trim(report_text).empty()) throw PreconditionError("report text is empty");
    if (trim(summary).empty()) throw PreconditionError("summary is empty");
    detail::check_level(cond, level);
    const std::string level_clause = level ? " at level " + *level : "";
    return {Strategy::SummaryQuery, system(t_.query_system, cond),
            detail::fill_template(t_.summary_query_user, {{"<report>", report_text},
                                                          {"<summary>", summary},
                                                          {"<condition>", cond.name},
                                                          {"<at level L>", level_clause},
                                                          {"<answer>", t_.answer_instruction}}),
            cond.name, level};
  }

 private:
  static std::string system(std::string_view tmpl, const ConditionSpec& cond) {
    return detail::fill_template(tmpl, {{"<definition>", cond.definition}, {"<condition>", cond.name}});
  }

  PromptTemplates t_;
};

inline PromptBundle build_direct_query(const ConditionSpec& cond, std::string_view report_text,
                                       const std::optional<std::string>& level = std::nullopt) {
  return PromptBuilder{}.direct_query(cond, report_text, level);
}

inline PromptBundle build_summary_request(const ConditionSpec& cond, std::string_view report_text) {
  return PromptBuilder{}.summary_request(cond, report_text);
}

inline PromptBundle build_summary_query(const ConditionSpec& cond, std::string_view report_text,
                                        std::string_view summary,
                                        const std::optional<std::string>& level = std::nullopt) {
  return PromptBuilder{}.summary_query(cond, report_text, summary, level);
}

}  // namespace radlabel
