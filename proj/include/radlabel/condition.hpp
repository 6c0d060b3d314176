#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "radlabel/error.hpp"
#include "radlabel/util.hpp"

namespace radlabel {

enum class Granularity { ScanLevel, IvdLevel };

inline const char* to_string(Granularity g) {
  return g == Granularity::ScanLevel ? "scan" : "ivd";
}

inline Granularity parse_granularity(const std::string& s) {
  const auto v = to_lower(s);
  if (v == "scan" || v == "scan-level" || v == "scanlevel") return Granularity::ScanLevel;
  if (v == "ivd" || v == "ivd-level" || v == "ivdlevel") return Granularity::IvdLevel;
  throw ConfigError("unknown granularity '" + s + "' (expected scan or ivd)");
}

// A named condition with the definition used to prompt the model.
struct ConditionSpec {
  std::string name;
  std::string definition;
  Granularity granularity = Granularity::ScanLevel;
  bool exclude_clinical_history = false;
  // Ordered IVD level tags; non-empty iff granularity is IvdLevel.
  std::vector<std::string> levels;

  bool has_level(const std::string& level) const {
    return std::find(levels.begin(), levels.end(), level) != levels.end();
  }
};

inline std::vector<std::string> condition_violations(const ConditionSpec& c) {
  std::vector<std::string> v;
  const std::string who = c.name.empty() ? "condition <unnamed>" : "condition '" + c.name + "'";
  if (trim(c.name).empty()) v.push_back(who + ": name is empty");
  if (trim(c.definition).empty()) v.push_back(who + ": definition is empty");
  if (c.granularity == Granularity::IvdLevel && c.levels.empty())
    v.push_back(who + ": ivd granularity requires a non-empty levels list");
  if (c.granularity == Granularity::ScanLevel && !c.levels.empty())
    v.push_back(who + ": levels given for a scan-level condition");
  for (std::size_t i = 0; i < c.levels.size(); ++i) {
    if (c.levels[i].empty() || split_ws(c.levels[i]).size() != 1)
      v.push_back(who + ": level tag '" + c.levels[i] + "' must be a single non-empty token");
    for (std::size_t j = 0; j < i; ++j)
      if (c.levels[i] == c.levels[j]) v.push_back(who + ": duplicate level '" + c.levels[i] + "'");
  }
  return v;
}

inline void validate(const ConditionSpec& c) {
  auto v = condition_violations(c);
  if (!v.empty()) throw ConfigError(std::move(v));
}

// Definitions from the reference label set, usable without a conditions file.
inline std::vector<ConditionSpec> builtin_conditions() {
  return {
      {"cancer",
       "Spinal cancer includes malignant lesions that originate from the spine or spinal cord "
       "and metastatic or secondary tumours that have spread from another site to the spine.",
       Granularity::ScanLevel, true, {}},
      {"stenosis",
       "Stenosis is any narrowing or compression of the spinal canal or nerves, including disc "
       "protrusions, impingement of nerve roots, or compromise of recesses.",
       Granularity::IvdLevel, false, {"L3-L4", "L4-L5", "L5-S1"}},
      {"spondylolisthesis",
       "Spondylolisthesis is a condition in which a vertebra slips out of place onto the bone "
       "below it.",
       Granularity::ScanLevel, false, {}},
      {"cauda equina compression",
       "Cauda equina compression is the compression of a collection of nerve roots called the "
       "cauda equina, distinct from cauda equina syndrome; if the patient has cauda equina "
       "compression, the report will explicitly state its presence.",
       Granularity::ScanLevel, false, {}},
      {"herniation",
       "Herniation is a condition in which a disc in the spine ruptures, and the disc nucleus is "
       "displaced from intervertebral space; it is more severe condition than disc protrusion or "
       "bulging, and if the patient has herniation, the report will explicitly state its "
       "presence.",
       Granularity::ScanLevel, false, {}},
  };
}

// Header keywords recognised by the section segmenter.
struct SectionKeywords {
  std::vector<std::string> summary{"conclusion", "impression", "findings", "summary"};
  std::vector<std::string> clinical_history{"clinical history", "clinical details",
                                            "clinical indication", "history", "indication"};
};

struct ConditionConfig {
  std::vector<ConditionSpec> conditions;
  SectionKeywords keywords;

  const ConditionSpec& find(const std::string& name) const {
    for (const auto& c : conditions)
      if (c.name == name) return c;
    std::string known;
    for (const auto& c : conditions) known += (known.empty() ? "" : ", ") + c.name;
    throw ConfigError("unknown condition '" + name + "' (known: " + known + ")");
  }
};

inline ConditionSpec condition_from_json(const nlohmann::json& j) {
  ConditionSpec c;
  c.name = j.value("name", "");
  c.definition = j.value("definition", "");
  c.granularity = parse_granularity(j.value("granularity", "scan"));
  c.exclude_clinical_history = j.value("exclude_clinical_history", false);
  if (j.contains("levels") && !j["levels"].is_null())
    c.levels = j["levels"].get<std::vector<std::string>>();
  return c;
}

inline nlohmann::json condition_to_json(const ConditionSpec& c) {
  nlohmann::json j = {{"name", c.name},
                      {"definition", c.definition},
                      {"granularity", to_string(c.granularity)},
                      {"exclude_clinical_history", c.exclude_clinical_history}};
  if (!c.levels.empty()) j["levels"] = c.levels;
  return j;
}

// Parses a conditions document; every invalid entry is reported at once.
inline ConditionConfig condition_config_from_json(const nlohmann::json& j) {
  ConditionConfig cfg;
  std::vector<std::string> violations;
  try {
    if (j.contains("summary_keywords"))
      cfg.keywords.summary = j["summary_keywords"].get<std::vector<std::string>>();
    if (j.contains("history_keywords"))
      cfg.keywords.clinical_history = j["history_keywords"].get<std::vector<std::string>>();
    if (j.contains("conditions")) {
      for (const auto& cj : j["conditions"]) {
        try {
          cfg.conditions.push_back(condition_from_json(cj));
        } catch (const ConfigError& e) {
          violations.insert(violations.end(), e.violations().begin(), e.violations().end());
        }
      }
    } else {
      cfg.conditions = builtin_conditions();
    }
  } catch (const nlohmann::json::exception& e) {
    violations.push_back(std::string("conditions: ") + e.what());
  }
  for (const auto& c : cfg.conditions) {
    auto v = condition_violations(c);
    violations.insert(violations.end(), v.begin(), v.end());
  }
  for (const auto& k : cfg.keywords.summary)
    if (trim(k).empty()) violations.push_back("summary_keywords: empty keyword");
  for (const auto& k : cfg.keywords.clinical_history)
    if (trim(k).empty()) violations.push_back("history_keywords: empty keyword");
  if (!violations.empty()) throw ConfigError(std::move(violations));
  return cfg;
}

inline ConditionConfig load_condition_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("conditions file '" + path.string() + "': " + e.what());
  }
  return condition_config_from_json(j);
}

}  // namespace radlabel
