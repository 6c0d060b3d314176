#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <cstdint>
#include <string>
#include <vector>

#include "radlabel/error.hpp"
#include "radlabel/mil_svm.hpp"
#include "radlabel/mock_server.hpp"
#include "radlabel/report_corpus.hpp"
#include "radlabel/util.hpp"

namespace radlabel {

// Intervertebral discs from C7-T1 down to L5-S1, top to bottom.
inline const std::array<const char*, 18> kSpineLevels = {
    "C7-T1", "T1-T2", "T2-T3", "T3-T4",   "T4-T5", "T5-T6", "T6-T7", "T7-T8", "T8-T9",
    "T9-T10", "T10-T11", "T11-T12", "T12-L1", "L1-L2", "L2-L3", "L3-L4", "L4-L5", "L5-S1"};

struct SyntheticKeyword {
  std::string keyword;
  double logit_yes = 0.0;
  double logit_no = -4.0;
};

struct SyntheticOptions {
  std::size_t reports = 200;
  double positive_rate = 0.4;
  std::uint64_t seed = 7;
  std::vector<SyntheticKeyword> keywords{
      {"metastasis", 0.0, -4.0}, {"metastatic deposit", -0.1, -3.0}, {"lytic lesion", -0.3, -2.5}};
  // Share of negative reports whose clinical history mentions a keyword as a query.
  double history_decoy_rate = 0.3;
  // Share of reports written without section headers.
  double headerless_rate = 0.1;
  std::size_t dim = 64;
  // Per-coordinate displacement of shifted instances, in units of sigma.
  double shift = 2.0;
  double sigma = 1.0;
  std::size_t bag_min = 5;
  std::size_t bag_max = 18;
};

inline std::vector<std::string> synthetic_violations(const SyntheticOptions& o) {
  std::vector<std::string> v;
  if (o.reports == 0) v.push_back("synthetic.reports must be >= 1");
  if (!(o.positive_rate >= 0.0 && o.positive_rate <= 1.0)) v.push_back("synthetic.positive_rate must lie in [0, 1]");
  if (o.keywords.empty()) v.push_back("synthetic.keywords must not be empty");
  for (const auto& k : o.keywords)
    if (trim(k.keyword).empty()) v.push_back("synthetic.keywords: empty keyword");
  if (o.dim == 0) v.push_back("synthetic.dim must be >= 1");
  if (!(o.sigma > 0.0)) v.push_back("synthetic.sigma must be positive");
  if (o.bag_min < 1 || o.bag_min > o.bag_max || o.bag_max > kSpineLevels.size())
    v.push_back("synthetic bag size range must satisfy 1 <= bag_min <= bag_max <= 18");
  return v;
}

struct SyntheticData {
  std::vector<Report> reports;
  std::vector<std::pair<std::string, bool>> truth;  // report id -> label
  RuleTable rules;
  EmbeddingSet embeddings;
};

namespace detail {

template <typename T, std::size_t N>
const T& pick(Rng& rng, const std::array<T, N>& items) {
  return items[rng.below(N)];
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticOptions& opt) {
  if (auto v = synthetic_violations(opt); !v.empty()) throw ConfigError(std::move(v));
  Rng text_rng(derive_seed(opt.seed, "reports"));
  Rng emb_rng(derive_seed(opt.seed, "embeddings"));

  // Exact positive count, placed by a seeded shuffle.
  const auto n_pos = static_cast<std::size_t>(std::floor(opt.positive_rate * static_cast<double>(opt.reports) + 0.5));
  std::vector<bool> positive(opt.reports, false);
  std::fill(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(n_pos), true);
  {
    std::vector<std::size_t> idx(opt.reports);
    std::iota(idx.begin(), idx.end(), 0);
    text_rng.shuffle(std::span<std::size_t>(idx));
    std::vector<bool> shuffled(opt.reports);
    for (std::size_t i = 0; i < opt.reports; ++i) shuffled[idx[i]] = positive[i];
    positive = std::move(shuffled);
  }

  static const std::array<const char*, 5> histories = {
      "Low back pain radiating to the left leg.", "Chronic back pain, no red flags.",
      "Fall two weeks ago, persistent thoracic pain.", "Weight loss and night pain.",
      "Follow-up imaging requested by the spinal team."};
  static const std::array<const char*, 5> decoy_histories = {
      "Known breast primary. ?%s", "Previous prostate cancer, query %s.", "Lung carcinoma, ?%s.",
      "Rule out %s.", "History of melanoma, exclude %s."};
  static const std::array<const char*, 5> normal_findings = {
      "Normal vertebral body heights and marrow signal.",
      "Mild degenerative disc changes at L4-L5 without canal compromise.",
      "Disc desiccation at L5-S1 with a small central bulge.",
      "Facet joint arthropathy in the lower lumbar spine.",
      "The conus terminates normally at L1."};
  static const std::array<const char*, 4> positive_sentences = {
      "There is a %s in the T%d vertebral body.", "Appearances in keeping with %s at T%d.",
      "Abnormal marrow signal at T%d representing %s.", "A %s involves the T%d vertebra."};
  static const std::array<const char*, 3> negative_conclusions = {
      "No suspicious marrow lesion.", "Degenerative change only.", "No acute abnormality."};
  static const std::array<const char*, 2> summary_headers = {"CONCLUSION", "IMPRESSION"};

  auto fmt = [](const char* pattern, const std::string& kw, int level) {
    char buf[256];
    if (std::string_view(pattern).find("%s") < std::string_view(pattern).find("%d"))
      std::snprintf(buf, sizeof buf, pattern, kw.c_str(), level);
    else
      std::snprintf(buf, sizeof buf, pattern, level, kw.c_str());
    return std::string(buf);
  };

  SyntheticData data;
  for (const auto& k : opt.keywords)
    data.rules.rules.push_back({k.keyword, k.logit_yes, k.logit_no,
                                "The report describes " + k.keyword + " in the spine."});

  data.embeddings.dim = opt.dim;
  std::vector<double> base(opt.dim), direction(opt.dim);
  for (std::size_t k = 0; k < opt.dim; ++k) {
    base[k] = 0.5 + emb_rng.uniform();
    direction[k] = (emb_rng.next() & 1U) ? 1.0 : -1.0;
  }

  for (std::size_t i = 0; i < opt.reports; ++i) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "%04zu", i + 1);
    Report r;
    r.id = std::string("rep-") + idbuf;
    r.patient_id = std::string("pat-") + idbuf;
    r.study_id = std::string("study-") + idbuf;

    const bool pos = positive[i];
    const bool headerless = text_rng.uniform() < opt.headerless_rate;
    const auto& kw = opt.keywords[text_rng.below(opt.keywords.size())].keyword;
    const int level = static_cast<int>(text_rng.between(1, 12));
    std::string findings = detail::pick(text_rng, normal_findings);
    if (pos) findings += " " + fmt(detail::pick(text_rng, positive_sentences), kw, level);
    const std::string conclusion =
        pos ? "Findings consistent with " + kw + "." : std::string(detail::pick(text_rng, negative_conclusions));

    if (headerless) {
      r.raw_text = findings + "\n" + conclusion;
    } else {
      std::string history = detail::pick(text_rng, histories);
      if (!pos && text_rng.uniform() < opt.history_decoy_rate) {
        char buf[256];
        std::snprintf(buf, sizeof buf, detail::pick(text_rng, decoy_histories), kw.c_str());
        history = buf;
      }
      r.raw_text = "CLINICAL HISTORY: " + history + "\nFINDINGS: " + findings + "\n" +
                   std::string(detail::pick(text_rng, summary_headers)) + ": " + conclusion;
    }
    r.sections = segment_sections(r.raw_text);
    data.truth.emplace_back(r.id, pos);

    // Bag of the lowest n discs; positives carry at least one shifted instance.
    const auto n = static_cast<std::size_t>(emb_rng.between(static_cast<std::int64_t>(opt.bag_min),
                                                            static_cast<std::int64_t>(opt.bag_max)));
    std::vector<bool> shifted(n, false);
    if (pos) {
      const auto k = static_cast<std::size_t>(emb_rng.between(1, static_cast<std::int64_t>(std::max<std::size_t>(1, n / 4))));
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      emb_rng.shuffle(std::span<std::size_t>(idx));
      for (std::size_t s = 0; s < k; ++s) shifted[idx[s]] = true;
    }
    for (std::size_t j = 0; j < n; ++j) {
      const std::string lvl = kSpineLevels[kSpineLevels.size() - n + j];
      EmbeddingInstance inst{r.study_id, r.study_id + "/" + lvl, lvl, std::vector<float>(opt.dim)};
      for (std::size_t k = 0; k < opt.dim; ++k) {
        double v = emb_rng.normal(base[k], opt.sigma);
        if (shifted[j]) v += opt.shift * opt.sigma * direction[k];
        inst.vector[k] = static_cast<float>(v);
      }
      data.embeddings.instances.push_back(std::move(inst));
    }
    data.reports.push_back(std::move(r));
  }
  return data;
}

}  // namespace radlabel
