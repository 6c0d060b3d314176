#include <gtest/gtest.h>

#include <filesystem>

#include "radlabel/report_corpus.hpp"

using namespace radlabel;

namespace {

const ConditionSpec& cond(const std::string& name) {
  static const auto all = builtin_conditions();
  for (const auto& c : all)
    if (c.name == name) return c;
  throw std::runtime_error("no condition " + name);
}

}  // namespace

TEST(Segment, ThreeHeadedReportOffsets) {
  const std::string text = "CLINICAL HISTORY: back pain\nFINDINGS: disc bulge\nIMPRESSION: normal";
  const auto s = segment_sections(text);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0], (SectionSpan{SectionKind::ClinicalHistory, "CLINICAL HISTORY", 0, 28, 18, 27}));
  EXPECT_EQ(s[1], (SectionSpan{SectionKind::Summary, "FINDINGS", 28, 49, 38, 48}));
  EXPECT_EQ(s[2], (SectionSpan{SectionKind::Summary, "IMPRESSION", 49, 67, 61, 67}));
}

TEST(Segment, SummaryContentExcludesHeaderAndSeparator) {
  const auto s = segment_sections("SUMMARY: normal");
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].content_begin, 9u);
  EXPECT_EQ(s[0].content_end, 15u);
}

TEST(Segment, LeadingBodyAndDashSeparator) {
  const std::string text = "Preamble\nConclusion - ok";
  const auto s = segment_sections(text);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0], (SectionSpan{SectionKind::Body, "", 0, 9, 0, 8}));
  EXPECT_EQ(s[1], (SectionSpan{SectionKind::Summary, "Conclusion", 9, 24, 22, 24}));
}

TEST(Segment, HeaderlessReportIsOneBodySpan) {
  const std::string text = "No history of trauma. Impression of a bulge.";
  const auto s = segment_sections(text);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].kind, SectionKind::Body);
  EXPECT_EQ(s[0].end, text.size());
  EXPECT_TRUE(segment_sections("").empty());
}

TEST(Segment, KeywordMustBeWholeWordAndFollowedBySeparatorOrEol) {
  EXPECT_EQ(segment_sections("Historical note: x").front().kind, SectionKind::Body);
  EXPECT_EQ(segment_sections("History of trauma").front().kind, SectionKind::Body);
  const auto s = segment_sections("body\n  History\nfell over\n");
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[1].kind, SectionKind::ClinicalHistory);
  EXPECT_EQ(s[1].header_text, "History");
  EXPECT_EQ(std::string_view("body\n  History\nfell over\n").substr(s[1].content_begin, s[1].content_end - s[1].content_begin),
            "fell over");
}

TEST(Segment, LongestKeywordWins) {
  const auto s = segment_sections("Clinical   history: fall");
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].kind, SectionKind::ClinicalHistory);
  EXPECT_EQ(s[0].header_text, "Clinical   history");
}

TEST(Segment, CustomKeywords) {
  SectionKeywords kw;
  kw.summary = {"opinion"};
  kw.clinical_history = {"reason"};
  const auto s = segment_sections("REASON: pain\nOPINION: fine", kw);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].kind, SectionKind::ClinicalHistory);
  EXPECT_EQ(s[1].kind, SectionKind::Summary);
}

TEST(Segment, SpansTileTheTextForRandomReports) {
  Rng rng(3);
  const char* pieces[] = {"FINDINGS: a", "impression - b", "history", "text line", "", "Clinical details:",
                          "  Conclusion:  c  ", "summary"};
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    const auto lines = rng.between(0, 8);
    for (std::int64_t i = 0; i < lines; ++i) {
      text += pieces[rng.below(std::size(pieces))];
      if (rng.uniform() < 0.8) text += "\n";
    }
    const auto spans = segment_sections(text);
    if (text.empty()) {
      EXPECT_TRUE(spans.empty());
      continue;
    }
    ASSERT_FALSE(spans.empty());
    EXPECT_EQ(spans.front().start, 0u);
    EXPECT_EQ(spans.back().end, text.size());
    for (std::size_t i = 0; i < spans.size(); ++i) {
      if (i > 0) {
        EXPECT_EQ(spans[i].start, spans[i - 1].end);
      }
      EXPECT_LE(spans[i].start, spans[i].content_begin);
      EXPECT_LE(spans[i].content_begin, spans[i].content_end);
      EXPECT_LE(spans[i].content_end, spans[i].end);
      const auto content = std::string_view(text).substr(spans[i].content_begin,
                                                         spans[i].content_end - spans[i].content_begin);
      EXPECT_EQ(content, trim(content));
    }
  }
}

TEST(Corpus, ParsesRecordsAndKeepsMetadata) {
  const std::string content =
      "{\"id\":\"r1\",\"patient_id\":\"p1\",\"study_id\":\"s1\",\"text\":\"IMPRESSION: ok\",\"site\":\"A\"}\n"
      "\n"
      "{\"id\":\"r2\",\"patient_id\":\"p1\",\"study_id\":\"s2\",\"text\":\"plain\"}\n";
  const auto reports = parse_corpus(content);
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].metadata["site"], "A");
  ASSERT_NE(reports[0].first_summary(), nullptr);
  EXPECT_EQ(reports[0].section_content(*reports[0].first_summary()), "ok");
  EXPECT_EQ(reports[1].first_summary(), nullptr);
  EXPECT_EQ(corpus_line(reports[0]),
            "{\"id\":\"r1\",\"patient_id\":\"p1\",\"study_id\":\"s1\",\"text\":\"IMPRESSION: ok\",\"site\":\"A\"}\n");
}

TEST(Corpus, ErrorsCarryLineNumbers) {
  const std::string good = "{\"id\":\"r1\",\"patient_id\":\"p\",\"study_id\":\"s\",\"text\":\"t\"}\n";
  auto line_of = [](const std::string& content) -> std::size_t {
    try {
      parse_corpus(content);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of(good + good), 2u);
  EXPECT_EQ(line_of(good + "{not json}\n"), 2u);
  EXPECT_EQ(line_of(good + "\n{\"id\":\"r2\",\"patient_id\":\"p\",\"text\":\"t\"}\n"), 3u);
  EXPECT_EQ(line_of("{\"id\":\"\",\"patient_id\":\"p\",\"study_id\":\"s\",\"text\":\"t\"}\n"), 1u);
  EXPECT_EQ(line_of("[1,2]\n"), 1u);
  EXPECT_EQ(line_of(good), 0u);
}

TEST(PrepareText, ExcludesClinicalHistoryWhenConfigured) {
  Report r;
  r.raw_text = "CLINICAL HISTORY: ?metastasis\nFINDINGS: normal marrow\nIMPRESSION: no lesion";
  r.sections = segment_sections(r.raw_text);
  EXPECT_EQ(prepare_report_text(r, cond("cancer")), "FINDINGS: normal marrow\nIMPRESSION: no lesion");
  EXPECT_EQ(prepare_report_text(r, cond("herniation")), r.raw_text);

  Report plain;
  plain.raw_text = "no headers at all";
  plain.sections = segment_sections(plain.raw_text);
  EXPECT_EQ(prepare_report_text(plain, cond("cancer")), plain.raw_text);
}

TEST(Finetune, RecordsMaskTheFirstSummaryAndCountSkips) {
  std::vector<Report> corpus(3);
  corpus[0].id = "a";
  corpus[0].raw_text = "FINDINGS: x\nIMPRESSION: y";
  corpus[1].id = "b";
  corpus[1].raw_text = "nothing here";
  corpus[2].id = "c";
  corpus[2].raw_text = "History: h\nConclusion:\n";
  for (auto& r : corpus) r.sections = segment_sections(r.raw_text);

  const auto path = std::filesystem::temp_directory_path() / "radlabel-ft-test" / "ft.jsonl";
  const auto stats = prep_finetune_dataset(corpus, path);
  EXPECT_EQ(stats.written, 2u);
  EXPECT_EQ(stats.skipped, 1u);
  const auto recs = load_finetune_records(path);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].text.substr(recs[0].mask_begin, recs[0].mask_end - recs[0].mask_begin), "x");
  // An empty summary header still yields a record with an empty mask.
  EXPECT_EQ(recs[1].mask_begin, recs[1].mask_end);
  std::filesystem::remove_all(path.parent_path());
}
