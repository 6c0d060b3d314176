#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "radlabel/mil_svm.hpp"
#include "radlabel/synthetic.hpp"

using namespace radlabel;

namespace {

ConditionSpec builtin(const std::string& name) {
  for (const auto& c : builtin_conditions())
    if (c.name == name) return c;
  throw std::runtime_error("missing");
}

EmbeddingInstance inst(const std::string& bag, const std::string& level, std::vector<float> v) {
  return {bag, bag + "/" + level, level, std::move(v)};
}

LabelRecord label(const std::string& id, bool y, std::optional<std::string> level = std::nullopt,
                  const std::string& cond = "cancer") {
  LabelRecord r;
  r.report_id = id;
  r.condition = cond;
  r.level = std::move(level);
  r.p_yes = y ? 0.9 : 0.1;
  r.label = y;
  return r;
}

}  // namespace

TEST(Embeddings, FileRoundTripAndErrors) {
  EmbeddingSet set;
  set.dim = 2;
  set.instances = {inst("b1", "L4-L5", {0.25f, -1.5f}), inst("b1", "L5-S1", {1e-7f, 3.0f}),
                   inst("b2", "L4-L5", {0.1f, 0.2f})};
  const auto text = embedding_file_content(set);
  const auto back = parse_embeddings(text);
  ASSERT_EQ(back.instances.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back.instances[i].vector, set.instances[i].vector);
  EXPECT_EQ(embedding_file_content(back), text);

  auto line_of = [](const std::string& content) -> std::size_t {
    try {
      parse_embeddings(content);
    } catch (const ParseError& e) {
      return e.line() + 1000;
    }
    return 0;
  };
  EXPECT_EQ(line_of("# embeddings dim=2 count=1\nb i l 1\n"), 1002u);
  EXPECT_EQ(line_of("# embeddings dim=2 count=1\nb i l 1 nan\n"), 1002u);
  EXPECT_EQ(line_of("b i l 1 2\n"), 1001u);
  EXPECT_GE(line_of("# embeddings dim=2 count=2\nb i l 1 2\n"), 1000u);
}

TEST(Nsk, UnitNormAndInvariances) {
  Bag bag{"b", {inst("b", "a", {1, 2, 3}), inst("b", "c", {-1, 0, 2}), inst("b", "d", {0.5f, 0.5f, 0.5f})}, {}};
  const auto e = bag_embed(bag);
  EXPECT_NEAR(std::sqrt(dot(e, e)), 1.0, 1e-12);
  // Mean is (0.5/3, 2.5/3, 5.5/3); normalised by hand.
  const double m[3] = {0.5 / 3.0, 2.5 / 3.0, 5.5 / 3.0};
  const double norm = std::sqrt(m[0] * m[0] + m[1] * m[1] + m[2] * m[2]);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(e[k], m[k] / norm, 1e-12);

  Bag rev = bag;
  std::reverse(rev.instances.begin(), rev.instances.end());
  Bag dup = bag;
  dup.instances.insert(dup.instances.end(), bag.instances.begin(), bag.instances.end());
  const auto er = bag_embed(rev), ed = bag_embed(dup);
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(er[k], e[k], 1e-12);
    EXPECT_NEAR(ed[k], e[k], 1e-12);
  }
  // Inner product of embeddings is the normalised set kernel.
  Bag other{"o", {inst("o", "a", {0, 1, 0}), inst("o", "b", {2, 0, 1})}, {}};
  const double sx[3] = {0.5, 2.5, 5.5}, sy[3] = {2, 1, 1};
  double kxy = 0, kxx = 0, kyy = 0;
  for (int k = 0; k < 3; ++k) {
    kxy += sx[k] * sy[k];
    kxx += sx[k] * sx[k];
    kyy += sy[k] * sy[k];
  }
  EXPECT_NEAR(dot(e, bag_embed(other)), kxy / std::sqrt(kxx * kyy), 1e-12);
}

TEST(Nsk, DegenerateBags) {
  EXPECT_THROW(bag_embed(Bag{"z", {inst("z", "a", {1, -1}), inst("z", "b", {-1, 1})}, {}}), DegenerateInputError);
  EXPECT_THROW(bag_embed(Bag{"e", {}, {}}), PreconditionError);
  EXPECT_THROW(bag_embed(Bag{"m", {inst("m", "a", {1}), inst("m", "b", {1, 2})}, {}}), PreconditionError);
}

TEST(Svm, TwoPointProblem) {
  SvmOptions opt;
  opt.c_param = 100.0;
  opt.tolerance = 1e-9;
  opt.max_passes = 100000;
  const auto m = train_linear_svm({{1.0}, {-1.0}}, {1, -1}, opt);
  EXPECT_TRUE(m.converged);
  EXPECT_NEAR(m.weights[0], 1.0, 1e-6);
  EXPECT_NEAR(m.bias, 0.0, 1e-6);
  EXPECT_NEAR(primal_objective(m, {{1.0}, {-1.0}}, {1, -1}), 0.5, 1e-6);
}

TEST(Svm, MatchesSubgradientOracleOnTinyProblems) {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto n = static_cast<std::size_t>(rng.between(3, 12));
    const auto d = static_cast<std::size_t>(rng.between(1, 4));
    std::vector<Vector> X(n, Vector(d));
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i == 0 ? 1 : i == 1 ? -1 : (rng.uniform() < 0.5 ? 1 : -1);
      for (auto& v : X[i]) v = 2.0 * rng.uniform() - 1.0;  // overlapping classes
    }
    SvmOptions opt;
    opt.c_param = 0.2 + 2.0 * rng.uniform();
    opt.tolerance = 1e-9;
    opt.max_passes = 200000;
    const auto m = train_linear_svm(X, y, opt);
    EXPECT_NEAR(primal_objective(m, X, y), oracle::svm_subgradient_min(X, y, opt.c_param, 200000), 1e-3);
  }
}

TEST(Svm, ClassWeightingScalesBoxBounds) {
  SvmOptions opt;
  opt.c_param = 2.0;
  opt.class_weighting = true;
  const auto u = svm_box_bounds({1, -1, -1, -1}, opt);
  EXPECT_DOUBLE_EQ(u[0], 2.0 * 4.0 / 2.0);
  EXPECT_DOUBLE_EQ(u[1], 2.0 * 4.0 / 6.0);
}

TEST(Svm, SeededTrainingIsReproducible) {
  Rng rng(5);
  std::vector<Vector> X;
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) {
    y.push_back(i % 2 ? 1 : -1);
    X.push_back({rng.normal(y.back(), 1.0), rng.normal(0, 1.0)});
  }
  SvmOptions opt;
  opt.seed = 77;
  const auto a = train_linear_svm(X, y, opt), b = train_linear_svm(X, y, opt);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
}

TEST(Svm, InputValidation) {
  SvmOptions opt;
  EXPECT_THROW(train_linear_svm({{1.0}, {2.0}}, {1, 1}, opt), DegenerateInputError);
  EXPECT_THROW(train_linear_svm({{1.0}, {2.0}}, {1, 0}, opt), PreconditionError);
  EXPECT_THROW(train_linear_svm({{1.0}, {NAN}}, {1, -1}, opt), PreconditionError);
  EXPECT_THROW(train_linear_svm({{1.0}, {2.0, 3.0}}, {1, -1}, opt), PreconditionError);
  opt.c_param = 0.0;
  EXPECT_THROW(train_linear_svm({{1.0}, {2.0}}, {1, -1}, opt), ConfigError);
  SvmModel m;
  m.weights = {1.0, 2.0};
  EXPECT_THROW(decision_score(m, Vector{1.0}), PreconditionError);
}

TEST(Svm, ModelFileRoundTripIsExact) {
  SvmModel m;
  m.weights = {0.1, -1.0 / 3.0, 1e-300};
  m.bias = -0.7;
  m.c_param = 3.5;
  m.iterations = 12;
  m.final_violation = 1e-5;
  m.converged = true;
  const auto text = model_file_content(m);
  const auto back = parse_model(text);
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(back.bias, m.bias);
  EXPECT_EQ(model_file_content(back), text);
  EXPECT_THROW(parse_model("something else\n"), ParseError);
  EXPECT_THROW(parse_model(std::string(kModelMagic) + "\ndim x\nweights\n"), ParseError);
  EXPECT_THROW(parse_model(std::string(kModelMagic) + "\ndim 2\nweights\n1\n"), ParseError);
}

TEST(Classifier, FeatureRowsPerGranularity) {
  EmbeddingSet set;
  set.dim = 2;
  set.instances = {inst("s1", "L4-L5", {1, 0}), inst("s1", "T1-T2", {0, 1}), inst("s2", "L5-S1", {1, 1})};
  const auto scan = build_feature_rows(set, builtin("cancer"));
  ASSERT_EQ(scan.size(), 2u);
  EXPECT_EQ(scan[0].id, "s1");
  const auto ivd = build_feature_rows(set, builtin("stenosis"));
  ASSERT_EQ(ivd.size(), 2u);
  EXPECT_EQ(ivd[0].id, "s1@L4-L5");
  EXPECT_EQ(ivd[1].id, "s2@L5-S1");
  set.instances.push_back(inst("s1", "L4-L5", {2, 2}));
  EXPECT_THROW(build_feature_rows(set, builtin("stenosis")), PreconditionError);
}

TEST(Classifier, ThreeWaySplitIsStratifiedAndDisjoint) {
  std::vector<std::string> ids;
  std::vector<bool> y;
  for (int i = 0; i < 100; ++i) {
    ids.push_back("b" + std::to_string(i));
    y.push_back(i < 40);
  }
  const auto s = classifier_split(ids, y, 0.6, 0.5, 3);
  std::size_t counts[3][2] = {};
  for (std::size_t i = 0; i < ids.size(); ++i) counts[static_cast<int>(s.at(ids[i]))][y[i]]++;
  EXPECT_EQ(counts[0][1], 24u);
  EXPECT_EQ(counts[0][0], 36u);
  EXPECT_EQ(counts[1][1] + counts[2][1], 16u);
  EXPECT_EQ(counts[1][1], 8u);
  EXPECT_EQ(counts[1][0], 12u);
}

TEST(Classifier, TrainsOnSyntheticBagsAndJoinsThroughStudyIds) {
  SyntheticOptions so;
  so.reports = 150;
  so.seed = 5;
  const auto data = generate_synthetic(so);
  std::vector<LabelRecord> labels;
  ClassifierOptions opt;
  for (std::size_t i = 0; i < data.reports.size(); ++i) {
    labels.push_back(label(data.reports[i].id, data.truth[i].second));
    opt.report_to_bag[data.reports[i].id] = data.reports[i].study_id;
  }
  const auto res = train_condition_classifier(data.embeddings, labels, builtin("cancer"), opt);
  EXPECT_EQ(res.joined, 150u);
  EXPECT_EQ(res.unmatched, 0u);
  EXPECT_GE(res.test.auroc, 0.95);
  EXPECT_EQ(res.test_scores.size(), res.test.n);
}

TEST(Classifier, JoinFailuresAboveTheLimitAbort) {
  EmbeddingSet set;
  set.dim = 2;
  std::vector<LabelRecord> labels;
  for (int i = 0; i < 20; ++i) {
    const auto id = "s" + std::to_string(i);
    set.instances.push_back(inst(id, "L1-L2", {1.0f + static_cast<float>(i % 2), 1.0f}));
    labels.push_back(label(id, i % 2));
  }
  labels.push_back(label("ghost-1", true));
  labels.push_back(label("ghost-2", false));
  labels.push_back(label("ghost-3", false));
  LabelRecord unlabelled = label("s0", true);
  unlabelled.label.reset();
  labels.push_back(unlabelled);
  EXPECT_THROW(train_condition_classifier(set, labels, builtin("cancer")), JoinError);
  ClassifierOptions loose;
  loose.max_join_failure = 0.2;
  const auto res = train_condition_classifier(set, labels, builtin("cancer"), loose);
  EXPECT_EQ(res.unmatched, 3u);
  EXPECT_EQ(res.unlabelled, 1u);
  EXPECT_THROW(train_condition_classifier(set, {}, builtin("cancer")), JoinError);
}
