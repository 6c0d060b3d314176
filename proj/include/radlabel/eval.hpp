#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "radlabel/error.hpp"
#include "radlabel/util.hpp"

namespace radlabel {

struct ScoredItem {
  std::string id;
  double score = 0.0;
  bool label = false;
};

using ScoredSet = std::vector<ScoredItem>;

namespace detail {

struct ClassCounts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline ClassCounts require_two_classes(const ScoredSet& set) {
  ClassCounts c;
  std::unordered_set<std::string_view> ids;
  for (const auto& it : set) {
    if (!std::isfinite(it.score)) throw PreconditionError("non-finite score for '" + it.id + "'");
    if (!ids.insert(it.id).second) throw PreconditionError("duplicate id '" + it.id + "' in scored set");
    (it.label ? c.positives : c.negatives)++;
  }
  if (c.positives == 0 || c.negatives == 0)
    throw DegenerateInputError("scored set needs at least one positive and one negative (got " +
                               std::to_string(c.positives) + " positive, " +
                               std::to_string(c.negatives) + " negative)");
  return c;
}

}  // namespace detail

// Mann-Whitney U / (n_pos * n_neg) via mid-ranks; ties earn half credit.
inline double auroc(const ScoredSet& set) {
  const auto counts = detail::require_two_classes(set);
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return set[a].score < set[b].score; });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < order.size() && set[order[j]].score == set[order[i]].score) {
      pos_in_group += set[order[j]].label;
      ++j;
    }
    // Ranks i+1..j share the mid-rank (i+1+j)/2.
    pos_rank_sum += static_cast<double>(pos_in_group) * static_cast<double>(i + 1 + j) / 2.0;
    i = j;
  }
  const double np = static_cast<double>(counts.positives);
  const double nn = static_cast<double>(counts.negatives);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
  std::size_t false_positives = 0;
  std::size_t true_positives = 0;
};

struct RocAnalysis {
  // Descending threshold, starting at +inf (0,0) and ending at -inf (1,1).
  std::vector<RocPoint> points;
  double auroc = 0.0;
  double eer = 0.0;
  double eer_threshold = 0.0;
  std::size_t eer_index = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

// Candidate thresholds are +inf, the midpoints between consecutive distinct
// scores, and -inf. The EER point minimises |fpr - fnr|, then fpr + fnr, then
// the threshold itself; the reported EER is (fpr + fnr) / 2 there.
inline RocAnalysis roc_and_eer(const ScoredSet& set) {
  const auto counts = detail::require_two_classes(set);
  RocAnalysis out;
  out.positives = counts.positives;
  out.negatives = counts.negatives;
  out.auroc = auroc(set);

  std::vector<const ScoredItem*> sorted;
  sorted.reserve(set.size());
  for (const auto& it : set) sorted.push_back(&it);
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredItem* a, const ScoredItem* b) { return a->score > b->score; });

  const double np = static_cast<double>(counts.positives);
  const double nn = static_cast<double>(counts.negatives);
  constexpr double inf = std::numeric_limits<double>::infinity();
  out.points.push_back({inf, 0.0, 0.0, 0, 0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double v = sorted[i]->score;
    while (i < sorted.size() && sorted[i]->score == v) {
      (sorted[i]->label ? tp : fp)++;
      ++i;
    }
    double thr = -inf;
    if (i < sorted.size()) {
      const double next = sorted[i]->score;
      thr = v / 2.0 + next / 2.0;
      if (!(thr > next)) thr = v;  // adjacent doubles: the midpoint rounds onto `next`
    }
    out.points.push_back({thr, static_cast<double>(fp) / nn, static_cast<double>(tp) / np, fp, tp});
  }

  // Exact comparison on integers: |fpr - fnr| * np * nn = |fp*np - fn*nn|.
  const auto inp = static_cast<std::int64_t>(counts.positives);
  const auto inn = static_cast<std::int64_t>(counts.negatives);
  std::size_t best = 0;
  std::int64_t best_gap = std::numeric_limits<std::int64_t>::max();
  std::int64_t best_sum = std::numeric_limits<std::int64_t>::max();
  for (std::size_t k = 0; k < out.points.size(); ++k) {
    const auto fpk = static_cast<std::int64_t>(out.points[k].false_positives);
    const auto fnk = inp - static_cast<std::int64_t>(out.points[k].true_positives);
    const std::int64_t a = fpk * inp, b = fnk * inn;
    const std::int64_t gap = a > b ? a - b : b - a;
    const std::int64_t sum = a + b;
    // Later points have lower thresholds, so ">=" on full ties keeps the lowest.
    if (gap < best_gap || (gap == best_gap && sum <= best_sum)) {
      best = k;
      best_gap = gap;
      best_sum = sum;
    }
  }
  const auto& p = out.points[best];
  out.eer_index = best;
  out.eer_threshold = p.threshold;
  out.eer = (p.fpr + (1.0 - p.tpr)) / 2.0;
  return out;
}

// score >= threshold is positive.
inline std::vector<bool> apply_threshold(std::span<const double> scores, double threshold) {
  std::vector<bool> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(s >= threshold);
  return out;
}

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Confusion confusion(const std::vector<bool>& preds, const std::vector<bool>& labels) {
  if (preds.size() != labels.size())
    throw PreconditionError("prediction/label length mismatch (" + std::to_string(preds.size()) +
                            " vs " + std::to_string(labels.size()) + ")");
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i]) (preds[i] ? c.tp : c.fn)++;
    else (preds[i] ? c.fp : c.tn)++;
  }
  return c;
}

inline double balanced_accuracy(const std::vector<bool>& preds, const std::vector<bool>& labels) {
  const auto c = confusion(preds, labels);
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0)
    throw DegenerateInputError("balanced accuracy needs both classes in the labels");
  const double tpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double tnr = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return (tpr + tnr) / 2.0;
}

// F1 is 0 when precision + recall is 0.
inline double f1_score(const std::vector<bool>& preds, const std::vector<bool>& labels) {
  const auto c = confusion(preds, labels);
  const double precision = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  const double recall = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// ---- splits ----------------------------------------------------------------

enum class Split { Calibration, Test };

inline const char* to_string(Split s) { return s == Split::Calibration ? "calibration" : "test"; }

struct SplitAssignment {
  std::map<std::string, Split> assignments;
  std::uint64_t seed = 0;
  double fraction = 0.5;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(assignments.begin(), assignments.end(),
                                                  [&](const auto& kv) { return kv.second == s; }));
  }
};

// Number of items of a class of size n that go to the first split: n*fraction
// rounded half-up, clamped to [1, n-1] when n >= 2 so both splits keep the class.
inline std::size_t stratum_take(std::size_t n, double fraction) {
  auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
  k = std::min(k, n);
  if (n >= 2) k = std::clamp<std::size_t>(k, 1, n - 1);
  return k;
}

// Within each class, ids are sorted, shuffled by a seeded Fisher-Yates pass and
// the first stratum_take() of them go to Calibration. Result is independent of
// input order.
inline SplitAssignment stratified_split(const std::vector<std::string>& ids,
                                        const std::vector<bool>& labels, double fraction,
                                        std::uint64_t seed) {
  if (ids.size() != labels.size()) throw PreconditionError("ids/labels length mismatch");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
  SplitAssignment out;
  out.seed = seed;
  out.fraction = fraction;
  std::vector<std::string> by_class[2];
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!seen.insert(ids[i]).second) throw PreconditionError("duplicate id '" + ids[i] + "'");
    by_class[labels[i] ? 1 : 0].push_back(ids[i]);
  }
  Rng rng(seed);
  for (auto& members : by_class) {
    std::sort(members.begin(), members.end());
    rng.shuffle(std::span<std::string>(members));
    const auto take = stratum_take(members.size(), fraction);
    for (std::size_t i = 0; i < members.size(); ++i)
      out.assignments[members[i]] = i < take ? Split::Calibration : Split::Test;
  }
  return out;
}

inline std::string split_file_content(const SplitAssignment& s) {
  std::string out = "# seed=" + std::to_string(s.seed) + " fraction=" + format_double(s.fraction, "%.17g") +
                    " generator=" + std::string(Rng::kName) + "\n";
  for (const auto& [id, split] : s.assignments) out += id + "\t" + to_string(split) + "\n";
  return out;
}

inline SplitAssignment parse_split_file(std::string_view content) {
  SplitAssignment s;
  const auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      for (const auto& tok : split_ws(line.substr(1))) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        auto key = tok.substr(0, eq), value = tok.substr(eq + 1);
        if (key == "seed") s.seed = std::stoull(value);
        if (key == "fraction") s.fraction = parse_double(value, i + 1);
      }
      continue;
    }
    auto parts = split_ws(line);
    if (parts.size() != 2) throw ParseError("expected '<id> <split>'", i + 1);
    if (parts[1] == "calibration") s.assignments[parts[0]] = Split::Calibration;
    else if (parts[1] == "test") s.assignments[parts[0]] = Split::Test;
    else throw ParseError("unknown split '" + parts[1] + "'", i + 1);
  }
  return s;
}

// ---- evaluation ------------------------------------------------------------

struct Metrics {
  double auroc = 0.0;
  double eer = 0.0;
  double eer_threshold = 0.0;  // taken from the calibration set
  double balanced_accuracy = 0.0;
  double f1 = 0.0;
  std::size_t n = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  Confusion confusion;
};

// Metrics on `set` at `threshold`; AUROC/EER come from `set` itself.
inline Metrics metrics_at(const ScoredSet& set, double threshold) {
  if (set.empty()) throw DegenerateInputError("evaluation set is empty");
  const auto roc = roc_and_eer(set);
  std::vector<double> scores;
  std::vector<bool> labels;
  for (const auto& it : set) {
    scores.push_back(it.score);
    labels.push_back(it.label);
  }
  const auto preds = apply_threshold(scores, threshold);
  Metrics m;
  m.auroc = roc.auroc;
  m.eer = roc.eer;
  m.eer_threshold = threshold;
  m.balanced_accuracy = balanced_accuracy(preds, labels);
  m.f1 = f1_score(preds, labels);
  m.n = set.size();
  m.positives = roc.positives;
  m.negatives = roc.negatives;
  m.confusion = confusion(preds, labels);
  return m;
}

// Threshold chosen at the calibration set's EER point, then applied to `set`.
inline Metrics evaluate(const ScoredSet& set, const ScoredSet& calibration) {
  if (set.empty()) throw DegenerateInputError("evaluation set is empty");
  if (calibration.empty()) throw DegenerateInputError("calibration set is empty");
  return metrics_at(set, roc_and_eer(calibration).eer_threshold);
}

namespace detail {
inline std::string json_number6(double x) {
  if (std::isinf(x)) return x > 0 ? "\"inf\"" : "\"-inf\"";
  return format_double(x, "%.6f");
}
}  // namespace detail

inline std::string metrics_json(const Metrics& m) {
  std::string s = "{\n";
  s += "  \"auroc\": " + detail::json_number6(m.auroc) + ",\n";
  s += "  \"eer\": " + detail::json_number6(m.eer) + ",\n";
  s += "  \"eer_threshold\": " + detail::json_number6(m.eer_threshold) + ",\n";
  s += "  \"balanced_accuracy\": " + detail::json_number6(m.balanced_accuracy) + ",\n";
  s += "  \"f1\": " + detail::json_number6(m.f1) + ",\n";
  s += "  \"counts\": {\"n\": " + std::to_string(m.n) + ", \"positives\": " + std::to_string(m.positives) +
       ", \"negatives\": " + std::to_string(m.negatives) + ", \"tp\": " + std::to_string(m.confusion.tp) +
       ", \"fp\": " + std::to_string(m.confusion.fp) + ", \"tn\": " + std::to_string(m.confusion.tn) +
       ", \"fn\": " + std::to_string(m.confusion.fn) + "}\n";
  return s + "}\n";
}

// Two whitespace-separated columns (fpr tpr), one row per ROC point.
inline std::string roc_curve_content(const RocAnalysis& roc) {
  std::string s = "# fpr tpr\n";
  for (const auto& p : roc.points)
    s += format_double(p.fpr, "%.17g") + " " + format_double(p.tpr, "%.17g") + "\n";
  return s;
}

// ---- ground truth ----------------------------------------------------------

// Lines of "<id> <0|1>"; '#' starts a comment line.
inline std::map<std::string, bool> parse_truth(std::string_view content) {
  std::map<std::string, bool> out;
  const auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty() || lines[i][0] == '#') continue;
    auto parts = split_ws(lines[i]);
    if (parts.size() != 2 || (parts[1] != "0" && parts[1] != "1"))
      throw ParseError("expected '<id> <0|1>'", i + 1);
    if (!out.emplace(parts[0], parts[1] == "1").second)
      throw ParseError("duplicate id '" + parts[0] + "'", i + 1);
  }
  return out;
}

inline std::map<std::string, bool> load_truth(const std::filesystem::path& path) {
  return parse_truth(read_file(path));
}

inline std::string truth_content(const std::vector<std::pair<std::string, bool>>& rows) {
  std::string s = "# id label\n";
  for (const auto& [id, label] : rows) s += id + " " + (label ? "1" : "0") + "\n";
  return s;
}

}  // namespace radlabel
