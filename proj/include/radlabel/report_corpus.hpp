#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "radlabel/condition.hpp"
#include "radlabel/error.hpp"
#include "radlabel/util.hpp"

namespace radlabel {

enum class SectionKind { Body, Summary, ClinicalHistory };

inline const char* to_string(SectionKind k) {
  switch (k) {
    case SectionKind::Body: return "body";
    case SectionKind::Summary: return "summary";
    case SectionKind::ClinicalHistory: return "clinical_history";
  }
  return "unknown";
}

// A contiguous byte range [start, end) of a report. Spans returned by
// segment_sections tile the whole text in order. The content range excludes the
// header, its separator and surrounding whitespace.
struct SectionSpan {
  SectionKind kind = SectionKind::Body;
  std::string header_text;  // keyword as written in the report; empty for Body
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t content_begin = 0;
  std::size_t content_end = 0;

  bool operator==(const SectionSpan&) const = default;
};

struct Report {
  std::string id;
  std::string patient_id;
  std::string study_id;
  std::string raw_text;
  std::vector<SectionSpan> sections;
  // Keys of the source record other than the four required ones, kept verbatim.
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

  std::string_view section_text(const SectionSpan& s) const {
    return std::string_view(raw_text).substr(s.start, s.end - s.start);
  }
  std::string_view section_content(const SectionSpan& s) const {
    return std::string_view(raw_text).substr(s.content_begin, s.content_end - s.content_begin);
  }
  const SectionSpan* first_summary() const {
    for (const auto& s : sections)
      if (s.kind == SectionKind::Summary) return &s;
    return nullptr;
  }
};

namespace detail {

inline bool is_alnum(char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

// Matches `keyword` at text[pos] case-insensitively; a space in the keyword
// matches any run of spaces/tabs. Returns the end offset on success.
inline std::optional<std::size_t> match_keyword(std::string_view text, std::size_t pos,
                                                std::string_view keyword) {
  std::size_t i = pos;
  for (std::size_t k = 0; k < keyword.size(); ++k) {
    if (keyword[k] == ' ') {
      if (i >= text.size() || (text[i] != ' ' && text[i] != '\t')) return std::nullopt;
      while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
      continue;
    }
    if (i >= text.size() || ascii_lower(text[i]) != ascii_lower(keyword[k])) return std::nullopt;
    ++i;
  }
  if (i < text.size() && is_alnum(text[i])) return std::nullopt;
  return i;
}

struct HeaderMatch {
  SectionKind kind;
  std::size_t line_start;
  std::size_t keyword_begin;
  std::size_t keyword_end;
  std::size_t after_separator;
};

// A header is a keyword at the start of a line (after optional indentation),
// followed either by ':' or '-' or by the end of the line.
inline std::optional<HeaderMatch> match_header(
    std::string_view text, std::size_t line_start,
    const std::vector<std::pair<std::string, SectionKind>>& keywords) {
  std::size_t pos = line_start;
  while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
  for (const auto& [kw, kind] : keywords) {
    auto kw_end = match_keyword(text, pos, kw);
    if (!kw_end) continue;
    std::size_t p = *kw_end;
    while (p < text.size() && (text[p] == ' ' || text[p] == '\t')) ++p;
    if (p < text.size() && (text[p] == ':' || text[p] == '-')) {
      return HeaderMatch{kind, line_start, pos, *kw_end, p + 1};
    }
    if (p == text.size() || text[p] == '\n' || text[p] == '\r') {
      return HeaderMatch{kind, line_start, pos, *kw_end, p};
    }
  }
  return std::nullopt;
}

}  // namespace detail

inline std::vector<SectionSpan> segment_sections(std::string_view text,
                                                 const SectionKeywords& keywords = {}) {
  std::vector<std::pair<std::string, SectionKind>> table;
  for (const auto& k : keywords.summary) table.emplace_back(to_lower(trim(k)), SectionKind::Summary);
  for (const auto& k : keywords.clinical_history)
    table.emplace_back(to_lower(trim(k)), SectionKind::ClinicalHistory);
  // Longest keyword first so "clinical history" wins over "history".
  std::stable_sort(table.begin(), table.end(),
                   [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });

  std::vector<detail::HeaderMatch> headers;
  std::size_t line_start = 0;
  while (line_start < text.size()) {
    if (auto m = detail::match_header(text, line_start, table)) headers.push_back(*m);
    auto nl = text.find('\n', line_start);
    if (nl == std::string_view::npos) break;
    line_start = nl + 1;
  }

  auto trimmed_end = [&](std::size_t begin, std::size_t end) {
    while (end > begin && is_space(text[end - 1])) --end;
    return end;
  };

  std::vector<SectionSpan> spans;
  if (text.empty()) return spans;
  const std::size_t first = headers.empty() ? text.size() : headers.front().line_start;
  if (first > 0) {
    std::size_t cb = 0;
    while (cb < first && is_space(text[cb])) ++cb;
    spans.push_back({SectionKind::Body, "", 0, first, cb, trimmed_end(cb, first)});
  }
  for (std::size_t h = 0; h < headers.size(); ++h) {
    const auto& m = headers[h];
    const std::size_t end = h + 1 < headers.size() ? headers[h + 1].line_start : text.size();
    std::size_t cb = std::min(m.after_separator, end);
    while (cb < end && is_space(text[cb])) ++cb;
    spans.push_back({m.kind, std::string(text.substr(m.keyword_begin, m.keyword_end - m.keyword_begin)),
                     m.line_start, end, cb, trimmed_end(cb, end)});
  }
  return spans;
}

// Parses corpus records (one JSON object per line). Blank lines are ignored.
inline std::vector<Report> parse_corpus(std::string_view content, const SectionKeywords& keywords = {}) {
  std::vector<Report> reports;
  std::unordered_map<std::string, std::size_t> seen;
  const auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    if (trim(lines[i]).empty()) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), lineno);
    }
    if (!j.is_object()) throw ParseError("record is not an object", lineno);
    Report r;
    for (const char* key : {"id", "patient_id", "study_id", "text"}) {
      if (!j.contains(key) || !j[key].is_string())
        throw ParseError(std::string("missing or non-string key '") + key + "'", lineno);
    }
    r.id = j["id"].get<std::string>();
    r.patient_id = j["patient_id"].get<std::string>();
    r.study_id = j["study_id"].get<std::string>();
    r.raw_text = j["text"].get<std::string>();
    if (r.id.empty()) throw ParseError("empty id", lineno);
    if (auto [it, inserted] = seen.emplace(r.id, lineno); !inserted) {
      throw ParseError("duplicate id '" + r.id + "' (first seen on line " +
                           std::to_string(it->second) + ")",
                       lineno);
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      if (k != "id" && k != "patient_id" && k != "study_id" && k != "text") r.metadata[k] = it.value();
    }
    r.sections = segment_sections(r.raw_text, keywords);
    reports.push_back(std::move(r));
  }
  return reports;
}

inline std::vector<Report> load_corpus(const std::filesystem::path& path,
                                       const SectionKeywords& keywords = {}) {
  return parse_corpus(read_file(path), keywords);
}

inline std::string corpus_line(const Report& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["patient_id"] = r.patient_id;
  j["study_id"] = r.study_id;
  j["text"] = r.raw_text;
  for (auto it = r.metadata.begin(); it != r.metadata.end(); ++it) j[it.key()] = it.value();
  return j.dump() + "\n";
}

inline void write_corpus(const std::vector<Report>& reports, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : reports) out += corpus_line(r);
  write_file(path, out);
}

// Text handed to the model for `cond`. With history exclusion on, the
// ClinicalHistory spans are dropped and the remaining spans are trimmed and
// joined by newlines; otherwise the raw text is returned untouched.
inline std::string prepare_report_text(const Report& report, const ConditionSpec& cond) {
  if (!cond.exclude_clinical_history) return report.raw_text;
  const bool has_history =
      std::any_of(report.sections.begin(), report.sections.end(),
                  [](const SectionSpan& s) { return s.kind == SectionKind::ClinicalHistory; });
  if (!has_history) return report.raw_text;
  std::string out;
  for (const auto& s : report.sections) {
    if (s.kind == SectionKind::ClinicalHistory) continue;
    auto piece = trim(report.section_text(s));
    if (piece.empty()) continue;
    if (!out.empty()) out += '\n';
    out += piece;
  }
  return out;
}

// ---- fine-tuning data ------------------------------------------------------

struct FinetuneRecord {
  std::string report_id;
  std::string text;
  std::size_t mask_begin = 0;
  std::size_t mask_end = 0;
};

struct FinetuneStats {
  std::size_t written = 0;
  std::size_t skipped = 0;
};

// The loss mask covers the content of the first Summary span.
inline std::optional<FinetuneRecord> make_finetune_record(const Report& r) {
  const auto* s = r.first_summary();
  if (!s) return std::nullopt;
  return FinetuneRecord{r.id, r.raw_text, s->content_begin, s->content_end};
}

inline std::string finetune_line(const FinetuneRecord& rec) {
  nlohmann::ordered_json j;
  j["report_id"] = rec.report_id;
  j["text"] = rec.text;
  j["mask_begin"] = rec.mask_begin;
  j["mask_end"] = rec.mask_end;
  return j.dump() + "\n";
}

inline FinetuneStats prep_finetune_dataset(const std::vector<Report>& corpus,
                                           const std::filesystem::path& out) {
  FinetuneStats stats;
  std::string buf;
  for (const auto& r : corpus) {
    if (auto rec = make_finetune_record(r)) {
      buf += finetune_line(*rec);
      ++stats.written;
    } else {
      ++stats.skipped;
    }
  }
  write_file(out, buf);
  return stats;
}

inline std::vector<FinetuneRecord> load_finetune_records(const std::filesystem::path& path) {
  std::vector<FinetuneRecord> out;
  const auto lines = split_lines(read_file(path));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    try {
      auto j = nlohmann::json::parse(lines[i]);
      out.push_back({j.at("report_id").get<std::string>(), j.at("text").get<std::string>(),
                     j.at("mask_begin").get<std::size_t>(), j.at("mask_end").get<std::size_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed fine-tune record: ") + e.what(), i + 1);
    }
  }
  return out;
}

}  // namespace radlabel
