#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "radlabel/condition.hpp"
#include "radlabel/error.hpp"
#include "radlabel/eval.hpp"
#include "radlabel/llm_gateway.hpp"
#include "radlabel/util.hpp"

namespace radlabel {

using Vector = std::vector<double>;

struct EmbeddingInstance {
  std::string bag_id;
  std::string instance_id;
  std::string level;
  std::vector<float> vector;
};

struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<EmbeddingInstance> instances;
};

struct Bag {
  std::string bag_id;
  std::vector<EmbeddingInstance> instances;
  std::optional<bool> label;
};

// ---- embedding file --------------------------------------------------------
//
//   # embeddings dim=<d> count=<n>
//   <bag_id> <instance_id> <level> <v_1> ... <v_d>

inline std::string embedding_file_content(const EmbeddingSet& set) {
  std::string s = "# embeddings dim=" + std::to_string(set.dim) +
                  " count=" + std::to_string(set.instances.size()) + "\n";
  for (const auto& inst : set.instances) {
    s += inst.bag_id + " " + inst.instance_id + " " + inst.level;
    for (float v : inst.vector) s += " " + format_double(static_cast<double>(v), "%.9g");
    s += "\n";
  }
  return s;
}

inline EmbeddingSet parse_embeddings(std::string_view content) {
  const auto lines = split_lines(content);
  std::size_t i = 0;
  while (i < lines.size() && trim(lines[i]).empty()) ++i;
  if (i == lines.size()) throw ParseError("embedding file has no header");
  EmbeddingSet set;
  std::optional<std::size_t> dim, count;
  {
    const auto& header = lines[i];
    if (header.empty() || header[0] != '#') throw ParseError("missing '# embeddings dim=<d> count=<n>' header", i + 1);
    for (const auto& tok : split_ws(header.substr(1))) {
      auto eq = tok.find('=');
      if (eq == std::string::npos) continue;
      try {
        if (tok.substr(0, eq) == "dim") dim = std::stoull(tok.substr(eq + 1));
        if (tok.substr(0, eq) == "count") count = std::stoull(tok.substr(eq + 1));
      } catch (const std::exception&) {
        throw ParseError("bad header field '" + tok + "'", i + 1);
      }
    }
    if (!dim || *dim == 0) throw ParseError("header must declare dim >= 1", i + 1);
    if (!count) throw ParseError("header must declare count", i + 1);
  }
  set.dim = *dim;
  for (++i; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto parts = split_ws(lines[i]);
    if (parts.size() != 3 + set.dim)
      throw ParseError("expected 3 ids and " + std::to_string(set.dim) + " values, got " +
                           std::to_string(parts.size()) + " fields",
                       i + 1);
    EmbeddingInstance inst{parts[0], parts[1], parts[2], {}};
    inst.vector.reserve(set.dim);
    for (std::size_t k = 3; k < parts.size(); ++k) {
      const double v = parse_double(parts[k], i + 1);
      if (!std::isfinite(v) || std::fabs(v) > std::numeric_limits<float>::max())
        throw ParseError("non-finite embedding value", i + 1);
      inst.vector.push_back(static_cast<float>(v));
    }
    set.instances.push_back(std::move(inst));
  }
  if (set.instances.size() != *count)
    throw ParseError("header declares " + std::to_string(*count) + " records, found " +
                     std::to_string(set.instances.size()));
  return set;
}

inline EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  return parse_embeddings(read_file(path));
}

// Groups instances by bag id, in order of first appearance.
inline std::vector<Bag> group_bags(const EmbeddingSet& set) {
  std::vector<Bag> bags;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& inst : set.instances) {
    auto [it, inserted] = index.emplace(inst.bag_id, bags.size());
    if (inserted) bags.push_back({inst.bag_id, {}, std::nullopt});
    bags[it->second].instances.push_back(inst);
  }
  return bags;
}

// ---- normalized set kernel -------------------------------------------------

// L2-normalized mean of the instance vectors. With a linear kernel, inner
// products of these features equal the normalized set kernel
// k(X, Y) = <sum X, sum Y> / (|sum X| |sum Y|).
inline Vector bag_embed(const Bag& bag) {
  if (bag.instances.empty()) throw PreconditionError("bag '" + bag.bag_id + "' has no instances");
  const std::size_t d = bag.instances.front().vector.size();
  Vector mean(d, 0.0);
  for (const auto& inst : bag.instances) {
    if (inst.vector.size() != d) throw PreconditionError("bag '" + bag.bag_id + "' mixes dimensions");
    for (std::size_t k = 0; k < d; ++k) mean[k] += static_cast<double>(inst.vector[k]);
  }
  const double n = static_cast<double>(bag.instances.size());
  double norm2 = 0.0;
  for (auto& v : mean) {
    v /= n;
    norm2 += v * v;
  }
  if (!(norm2 > 0.0)) throw DegenerateInputError("bag '" + bag.bag_id + "' has an all-zero mean");
  const double norm = std::sqrt(norm2);
  for (auto& v : mean) v /= norm;
  return mean;
}

// ---- linear SVM ------------------------------------------------------------

struct SvmOptions {
  double c_param = 1.0;
  double tolerance = 1e-4;
  int max_passes = 1000;
  std::uint64_t seed = 0;
  // Scale each example's box constraint by n / (2 * n_class).
  bool class_weighting = false;
};

struct SvmModel {
  Vector weights;
  // The bias is the weight on a constant feature of value 1 appended to every
  // example, so it is regularised together with the weights.
  double bias = 0.0;
  double c_param = 1.0;
  int iterations = 0;
  double final_violation = 0.0;
  bool converged = false;

  std::size_t dim() const { return weights.size(); }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double decision_score(const SvmModel& model, std::span<const double> x) {
  if (x.size() != model.dim())
    throw PreconditionError("feature dimension " + std::to_string(x.size()) +
                            " does not match model dimension " + std::to_string(model.dim()));
  return dot(model.weights, x) + model.bias;
}

inline std::vector<double> decision_scores(const SvmModel& model, const std::vector<Vector>& X) {
  std::vector<double> out;
  out.reserve(X.size());
  for (const auto& x : X) out.push_back(decision_score(model, x));
  return out;
}

// 0.5 * (|w|^2 + b^2) + sum_i C_i * max(0, 1 - y_i (w.x_i + b)), with C_i = C
// unless per-example bounds are given.
inline double primal_objective(const Vector& w, double b, const std::vector<Vector>& X,
                               const std::vector<int>& y, double c_param,
                               std::span<const double> bounds = {}) {
  double obj = 0.5 * (dot(w, w) + b * b);
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double margin = y[i] * (dot(w, X[i]) + b);
    const double ci = bounds.empty() ? c_param : bounds[i];
    obj += ci * std::max(0.0, 1.0 - margin);
  }
  return obj;
}

inline double primal_objective(const SvmModel& m, const std::vector<Vector>& X, const std::vector<int>& y) {
  return primal_objective(m.weights, m.bias, X, y, m.c_param);
}

inline std::vector<double> svm_box_bounds(const std::vector<int>& y, const SvmOptions& opt) {
  std::vector<double> u(y.size(), opt.c_param);
  if (opt.class_weighting) {
    const auto npos = static_cast<double>(std::count(y.begin(), y.end(), 1));
    const auto nneg = static_cast<double>(y.size()) - npos;
    const auto n = static_cast<double>(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) u[i] *= n / (2.0 * (y[i] > 0 ? npos : nneg));
  }
  return u;
}

// Dual coordinate descent for the L1-loss (hinge) SVM, one random permutation
// of the examples per pass. Stops when the largest projected-gradient magnitude
// seen in a pass is <= tolerance, or after max_passes.
inline SvmModel train_linear_svm(const std::vector<Vector>& X, const std::vector<int>& y,
                                 const SvmOptions& opt = {}) {
  if (X.size() != y.size()) throw PreconditionError("features/labels length mismatch");
  if (!(opt.c_param > 0.0) || !std::isfinite(opt.c_param)) throw ConfigError("svm c_param must be positive");
  if (!(opt.tolerance > 0.0)) throw ConfigError("svm tolerance must be positive");
  if (opt.max_passes < 1) throw ConfigError("svm max_passes must be >= 1");
  if (X.empty()) throw DegenerateInputError("no training examples");
  const std::size_t d = X.front().size();
  bool has_pos = false, has_neg = false;
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (X[i].size() != d) throw PreconditionError("training rows differ in dimension");
    for (double v : X[i])
      if (!std::isfinite(v)) throw PreconditionError("non-finite feature in row " + std::to_string(i));
    if (y[i] == 1) has_pos = true;
    else if (y[i] == -1) has_neg = true;
    else throw PreconditionError("labels must be +1 or -1");
  }
  if (!has_pos || !has_neg) throw DegenerateInputError("training data has a single class");

  const auto upper = svm_box_bounds(y, opt);
  const std::size_t n = X.size();
  std::vector<double> alpha(n, 0.0), qd(n);
  for (std::size_t i = 0; i < n; ++i) qd[i] = dot(X[i], X[i]) + 1.0;
  Vector w(d, 0.0);
  double b = 0.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(opt.seed);

  SvmModel model;
  model.c_param = opt.c_param;
  for (int pass = 1; pass <= opt.max_passes; ++pass) {
    rng.shuffle(std::span<std::size_t>(order));
    double max_violation = 0.0;
    for (std::size_t i : order) {
      const double g = y[i] * (dot(w, X[i]) + b) - 1.0;
      double pg = g;
      if (alpha[i] <= 0.0) pg = std::min(g, 0.0);
      else if (alpha[i] >= upper[i]) pg = std::max(g, 0.0);
      max_violation = std::max(max_violation, std::fabs(pg));
      if (pg == 0.0) continue;
      const double old = alpha[i];
      alpha[i] = std::clamp(old - g / qd[i], 0.0, upper[i]);
      const double step = (alpha[i] - old) * y[i];
      for (std::size_t k = 0; k < d; ++k) w[k] += step * X[i][k];
      b += step;
    }
    model.iterations = pass;
    model.final_violation = max_violation;
    if (max_violation <= opt.tolerance) {
      model.converged = true;
      break;
    }
  }
  model.weights = std::move(w);
  model.bias = b;
  return model;
}

// ---- model file ------------------------------------------------------------

inline constexpr std::string_view kModelMagic = "radlabel-linear-svm v1";

inline std::string model_file_content(const SvmModel& m) {
  std::string s(kModelMagic);
  s += "\ndim " + std::to_string(m.dim());
  s += "\nc_param " + format_double(m.c_param, "%.17g");
  s += "\nbias_convention augmented-constant-1";
  s += "\nbias " + format_double(m.bias, "%.17g");
  s += "\niterations " + std::to_string(m.iterations);
  s += "\nfinal_violation " + format_double(m.final_violation, "%.17g");
  s += std::string("\nconverged ") + (m.converged ? "1" : "0");
  s += "\nweights\n";
  for (double w : m.weights) s += format_double(w, "%.17g") + "\n";
  return s;
}

inline SvmModel parse_model(std::string_view content) {
  const auto lines = split_lines(content);
  if (lines.empty() || lines[0] != kModelMagic)
    throw ParseError("not a model file (expected '" + std::string(kModelMagic) + "')", 1);
  SvmModel m;
  std::optional<std::size_t> dim;
  std::size_t i = 1;
  for (; i < lines.size() && lines[i] != "weights"; ++i) {
    auto parts = split_ws(lines[i]);
    if (parts.size() != 2) throw ParseError("expected '<key> <value>'", i + 1);
    const auto& key = parts[0];
    const auto& val = parts[1];
    auto to_int = [&](const std::string& v) {
      if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ParseError("expected a non-negative integer for '" + key + "'", i + 1);
      return std::stoull(v);
    };
    if (key == "dim") dim = to_int(val);
    else if (key == "c_param") m.c_param = parse_double(val, i + 1);
    else if (key == "bias_convention") {
      if (val != "augmented-constant-1") throw ParseError("unsupported bias convention '" + val + "'", i + 1);
    } else if (key == "bias") m.bias = parse_double(val, i + 1);
    else if (key == "iterations") m.iterations = static_cast<int>(to_int(val));
    else if (key == "final_violation") m.final_violation = parse_double(val, i + 1);
    else if (key == "converged") m.converged = val == "1";
    else throw ParseError("unknown key '" + key + "'", i + 1);
  }
  if (!dim) throw ParseError("model file lacks 'dim'");
  if (i == lines.size()) throw ParseError("model file lacks 'weights' section");
  for (++i; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    m.weights.push_back(parse_double(std::string(trim(lines[i])), i + 1));
  }
  if (m.weights.size() != *dim)
    throw ParseError("model declares dim " + std::to_string(*dim) + " but has " +
                     std::to_string(m.weights.size()) + " weights");
  return m;
}

inline SvmModel load_model(const std::filesystem::path& path) { return parse_model(read_file(path)); }

// ---- condition classifier --------------------------------------------------

struct FeatureRow {
  std::string id;  // bag id, or "<bag>@<level>" for IVD-level rows
  Vector x;
};

// Scan-level: one L2-normalised bag mean per bag. IVD-level: one row per
// (bag, configured level); instances at other levels are ignored.
inline std::vector<FeatureRow> build_feature_rows(const EmbeddingSet& set, const ConditionSpec& cond) {
  std::vector<FeatureRow> rows;
  if (cond.granularity == Granularity::ScanLevel) {
    for (const auto& bag : group_bags(set)) rows.push_back({bag.bag_id, bag_embed(bag)});
    return rows;
  }
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& inst : set.instances) {
    if (!cond.has_level(inst.level)) continue;
    const auto id = inst.bag_id + "@" + inst.level;
    if (!seen.emplace(id, rows.size()).second)
      throw PreconditionError("bag '" + inst.bag_id + "' has more than one instance at level " + inst.level);
    rows.push_back({id, Vector(inst.vector.begin(), inst.vector.end())});
  }
  return rows;
}

enum class ClassifierSplit { Train, Validation, Test };

inline const char* to_string(ClassifierSplit s) {
  switch (s) {
    case ClassifierSplit::Train: return "train";
    case ClassifierSplit::Validation: return "validation";
    case ClassifierSplit::Test: return "test";
  }
  return "unknown";
}

// Two stratified cuts: train vs rest, then validation vs test within the rest.
inline std::map<std::string, ClassifierSplit> classifier_split(const std::vector<std::string>& ids,
                                                               const std::vector<bool>& labels,
                                                               double train_fraction,
                                                               double validation_fraction,
                                                               std::uint64_t seed) {
  std::map<std::string, ClassifierSplit> out;
  const auto first = stratified_split(ids, labels, train_fraction, derive_seed(seed, "train"));
  std::vector<std::string> rest_ids;
  std::vector<bool> rest_labels;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (first.assignments.at(ids[i]) == Split::Calibration) {
      out[ids[i]] = ClassifierSplit::Train;
    } else {
      rest_ids.push_back(ids[i]);
      rest_labels.push_back(labels[i]);
    }
  }
  const auto second = stratified_split(rest_ids, rest_labels, validation_fraction,
                                       derive_seed(seed, "validation"));
  for (const auto& [id, s] : second.assignments)
    out[id] = s == Split::Calibration ? ClassifierSplit::Validation : ClassifierSplit::Test;
  return out;
}

struct ClassifierOptions {
  SvmOptions svm;
  double train_fraction = 0.6;
  // Share of the non-training rows that go to validation.
  double validation_fraction = 0.5;
  std::uint64_t split_seed = 0;
  // Abort if more than this fraction of labelled records cannot be joined.
  double max_join_failure = 0.10;
  // report_id -> bag id; identity when absent.
  std::map<std::string, std::string> report_to_bag;
  // Ground truth keyed like LabelRecord::key(); overrides test labels when given.
  std::map<std::string, bool> test_truth;
};

struct ClassifierResult {
  SvmModel model;
  Metrics validation;
  Metrics test;
  std::size_t rows = 0;
  std::size_t joined = 0;
  std::size_t unmatched = 0;
  std::size_t unlabelled = 0;
  std::map<std::string, ClassifierSplit> split;
  std::vector<ScoredItem> test_scores;
};

inline ClassifierResult train_condition_classifier(const EmbeddingSet& embeddings,
                                                   const std::vector<LabelRecord>& labels,
                                                   const ConditionSpec& cond,
                                                   const ClassifierOptions& opt = {}) {
  validate(cond);
  const auto rows = build_feature_rows(embeddings, cond);
  std::unordered_map<std::string, std::size_t> row_index;
  for (std::size_t i = 0; i < rows.size(); ++i) row_index.emplace(rows[i].id, i);

  ClassifierResult res;
  res.rows = rows.size();
  std::vector<std::string> ids;
  std::vector<bool> y;
  std::unordered_map<std::string, bool> truth_for_row;
  std::unordered_map<std::string, bool> used;
  for (const auto& rec : labels) {
    if (rec.condition != cond.name) continue;
    if (!rec.label) {
      ++res.unlabelled;
      continue;
    }
    if (cond.granularity == Granularity::ScanLevel && rec.level) continue;
    if (cond.granularity == Granularity::IvdLevel && (!rec.level || !cond.has_level(*rec.level))) continue;
    auto mapped = opt.report_to_bag.find(rec.report_id);
    const std::string bag = mapped != opt.report_to_bag.end() ? mapped->second : rec.report_id;
    const std::string id = rec.level ? bag + "@" + *rec.level : bag;
    if (!row_index.count(id) || used.count(id)) {
      ++res.unmatched;
      continue;
    }
    used.emplace(id, true);
    ids.push_back(id);
    y.push_back(*rec.label);
    if (auto t = opt.test_truth.find(rec.key()); t != opt.test_truth.end()) truth_for_row[id] = t->second;
  }
  res.joined = ids.size();
  const std::size_t attempted = res.joined + res.unmatched;
  if (attempted == 0) throw JoinError("no labelled records for condition '" + cond.name + "'");
  const double failure = static_cast<double>(res.unmatched) / static_cast<double>(attempted);
  if (failure > opt.max_join_failure)
    throw JoinError(std::to_string(res.unmatched) + " of " + std::to_string(attempted) +
                    " labelled records did not join to an embedding row (limit " +
                    format_double(opt.max_join_failure * 100.0, "%.1f") + "%)");

  res.split = classifier_split(ids, y, opt.train_fraction, opt.validation_fraction, opt.split_seed);

  std::vector<Vector> x_train;
  std::vector<int> y_train;
  ScoredSet validation, test;
  std::vector<std::size_t> val_rows, test_rows;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    switch (res.split.at(ids[i])) {
      case ClassifierSplit::Train:
        x_train.push_back(rows[row_index.at(ids[i])].x);
        y_train.push_back(y[i] ? 1 : -1);
        break;
      case ClassifierSplit::Validation: val_rows.push_back(i); break;
      case ClassifierSplit::Test: test_rows.push_back(i); break;
    }
  }
  res.model = train_linear_svm(x_train, y_train, opt.svm);
  for (auto i : val_rows)
    validation.push_back({ids[i], decision_score(res.model, rows[row_index.at(ids[i])].x), y[i]});
  for (auto i : test_rows) {
    auto t = truth_for_row.find(ids[i]);
    test.push_back({ids[i], decision_score(res.model, rows[row_index.at(ids[i])].x),
                    t != truth_for_row.end() ? t->second : static_cast<bool>(y[i])});
  }
  const double threshold = roc_and_eer(validation).eer_threshold;
  res.validation = metrics_at(validation, threshold);
  res.test = metrics_at(test, threshold);
  res.test_scores = std::move(test);
  return res;
}

}  // namespace radlabel
