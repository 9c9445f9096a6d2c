#include <gtest/gtest.h>

#include <cmath>

#include "tmask/metrics.hpp"
#include "tmask/report.hpp"
#include "support.hpp"

using namespace tmask;
using namespace tmask::testing;

TEST(TopK, RankWorkedExample) {
  // true-class ranks 1, 2 and 6 (1-based) with k = 5
  std::vector<std::vector<double>> logits = {
      {9, 1, 2, 3, 4, 5},
      {8, 9, 1, 2, 3, 4},
      {6, 5, 4, 3, 2, 1},
  };
  const std::vector<std::size_t> labels{0, 0, 5};
  EXPECT_NEAR(top_k_accuracy(logits, labels, 5), 200.0 / 3.0, 1e-12);
  EXPECT_NEAR(top_k_accuracy(logits, labels, 1), 100.0 / 3.0, 1e-12);
}

TEST(TopK, TiesRankLowerIndexFirst) {
  const std::vector<double> l{1.0, 1.0, 1.0};
  EXPECT_EQ(label_rank(l, 0), 0u);
  EXPECT_EQ(label_rank(l, 2), 2u);
  EXPECT_EQ(argmax(l), 0u);
}

TEST(BalancedAccuracy, MeanOfPerClassRecall) {
  // class 0: 2/2 correct, class 1: 1/2 correct
  const std::vector<std::size_t> preds{0, 0, 1, 0};
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(balanced_accuracy(preds, labels), 75.0);
}

TEST(BalancedAccuracy, InvariantToDuplicatingTheSet) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> preds, labels;
    const std::size_t n = 1 + rng.index(30);
    for (std::size_t s = 0; s < n; ++s) {
      preds.push_back(rng.index(4));
      labels.push_back(rng.index(4));
    }
    auto p2 = preds, l2 = labels;
    p2.insert(p2.end(), preds.begin(), preds.end());
    l2.insert(l2.end(), labels.begin(), labels.end());
    EXPECT_NEAR(balanced_accuracy(preds, labels), balanced_accuracy(p2, l2), 1e-12);
  }
}

TEST(BalancedAccuracy, EmptySetIsRejected) {
  const std::vector<std::size_t> none;
  EXPECT_EQ(code_of([&] { balanced_accuracy(none, none); }), ErrorCode::kInput);
}

TEST(ClassSplit, MostFrequentHalfIsCommon) {
  const std::vector<std::size_t> freq{5, 4, 3, 2};
  const ClassSplit s = make_class_split(freq);
  EXPECT_EQ(s.common, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(s.rare, (std::vector<std::size_t>{2, 3}));
  const std::vector<std::size_t> odd{1, 7, 7, 2, 0};
  EXPECT_EQ(make_class_split(odd).common, (std::vector<std::size_t>{1, 2, 3}));
}

TEST(ClassSplit, CommonRareAccuracy) {
  const ClassSplit s = make_class_split(std::vector<std::size_t>{5, 4, 3, 2});
  const std::vector<std::size_t> preds{0, 1, 1, 3, 0};
  const std::vector<std::size_t> labels{0, 1, 2, 3, 3};
  const auto cr = common_rare_accuracy(preds, labels, s);
  EXPECT_DOUBLE_EQ(*cr.common, 100.0);
  EXPECT_DOUBLE_EQ(*cr.rare, 100.0 / 3.0);
  const auto only_rare = common_rare_accuracy(std::vector<std::size_t>{2}, std::vector<std::size_t>{2}, s);
  EXPECT_FALSE(only_rare.common.has_value());
}

TEST(MetricsOracles, MatchBruteForceCounting) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial)
    EXPECT_TRUE(oracle::metrics_match(oracle::random_metrics_instance(rng))) << "instance " << trial;
}

TEST(Report, CrossViewMeanAndDrops) {
  std::vector<ViewMetrics> views(3);
  views[0] = {"front", 10, 80.0, 90.0, 99.0, 0.0, {}};
  views[1] = {"left", 10, 20.0, 20.0, 60.0, 0.0, {}};
  views[2] = {"right", 10, 30.0, 30.0, 70.0, 0.0, {}};
  const std::vector<std::string> novel{"left", "right", "back"};
  const MetricsReport r = assemble_report(views, "front", novel);
  ASSERT_TRUE(r.cross_view.has_value());
  EXPECT_DOUBLE_EQ(r.cross_view->top1, 25.0);
  EXPECT_DOUBLE_EQ(r.cross_view->balanced, 25.0);
  EXPECT_DOUBLE_EQ(r.find("left")->drop, 70.0);
  EXPECT_EQ(r.missing_views, (std::vector<std::string>{"back"}));
  EXPECT_EQ(r.views.front().view, "front");
}

TEST(Report, DifficultyFixtureDrops) {
  // trained-view top-1 78.96; novel views 32.17 / 27.45 / 25.98 / 19.47
  std::vector<ViewMetrics> views{{"Inner Mirror", 1, 0, 78.96, 0, 0, {}},
                                 {"Steering Wheel", 1, 0, 32.17, 0, 0, {}},
                                 {"A-Column Driver", 1, 0, 27.45, 0, 0, {}},
                                 {"A-Column Co-driver", 1, 0, 25.98, 0, 0, {}},
                                 {"Ceiling", 1, 0, 19.47, 0, 0, {}}};
  const std::vector<std::string> novel{"Steering Wheel", "A-Column Driver", "A-Column Co-driver", "Ceiling"};
  const MetricsReport r = assemble_report(views, "Inner Mirror", novel);
  const double expect[] = {46.79, 51.51, 52.98, 59.49};
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(r.find(novel[k])->drop, expect[k], 1e-9) << novel[k];
  EXPECT_EQ(r.find("Inner Mirror")->drop, 0.0);
}

TEST(Report, CsvAndJsonHaveOneRowPerView) {
  LabeledLogits front{{{2, 1}, {1, 2}}, {0, 1}};
  LabeledLogits left{{{2, 1}, {2, 1}}, {0, 1}};
  const std::map<std::string, LabeledLogits> by_view{{"front", front}, {"left", left}};
  const std::vector<std::string> novel{"left"};
  const auto r = per_view_report(by_view, "front", novel);
  const std::string csv = metrics_report_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);  // header, 2 views, cross-view mean
  EXPECT_EQ(metrics_report_to_json(r)["views"].size(), 2u);
  EXPECT_DOUBLE_EQ(r.find("left")->balanced, 50.0);
}

TEST(Silhouette, TwoTightClusters) {
  const std::vector<std::vector<double>> pts{{0.0}, {0.1}, {10.0}, {10.1}};
  const std::vector<std::size_t> g{0, 0, 1, 1};
  // outer points: a = 0.1, b = 10.05; inner points: a = 0.1, b = 9.95
  const double expect = 0.5 * (9.95 / 10.05 + 9.85 / 9.95);
  EXPECT_NEAR(silhouette_score(pts, g), expect, 1e-12);
  EXPECT_NEAR(expect, 0.990, 5e-4);
}

TEST(Silhouette, MatchesBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto inst = oracle::random_silhouette_instance(rng);
    EXPECT_NEAR(silhouette_score(inst.points, inst.groups), oracle::silhouette(inst.points, inst.groups), 1e-9);
  }
}

TEST(Silhouette, InvariantUnderIsometry) {
  Rng rng(4);
  auto inst = oracle::random_silhouette_instance(rng);
  const double before = silhouette_score(inst.points, inst.groups);
  for (auto& p : inst.points) {
    std::reverse(p.begin(), p.end());  // coordinate permutation
    for (auto& v : p) v = -v + 3.5;    // reflection and translation
  }
  EXPECT_NEAR(silhouette_score(inst.points, inst.groups), before, 1e-12);
}

TEST(Silhouette, InterleavedGroupsScoreNearZero) {
  Rng rng(5);
  std::vector<std::vector<double>> pts;
  std::vector<std::size_t> g;
  for (int i = 0; i < 400; ++i) {
    pts.push_back({rng.normal(), rng.normal()});
    g.push_back(static_cast<std::size_t>(i % 2));
  }
  EXPECT_LT(std::abs(silhouette_score(pts, g)), 0.1);
}

TEST(Silhouette, DegenerateClustersAreRejected) {
  const std::vector<std::vector<double>> pts{{0.0}, {1.0}, {2.0}};
  EXPECT_EQ(code_of([&] { silhouette_score(pts, std::vector<std::size_t>{0, 0, 0}); }),
            ErrorCode::kDegenerateCluster);
  EXPECT_EQ(code_of([&] { silhouette_score(pts, std::vector<std::size_t>{0, 0, 1}); }),
            ErrorCode::kDegenerateCluster);
}

TEST(Silhouette, SubsampleCapIsSeeded) {
  Rng rng(6);
  std::vector<std::vector<double>> pts;
  std::vector<std::size_t> g;
  for (int i = 0; i < 300; ++i) {
    pts.push_back({rng.normal(i % 3, 1.0)});
    g.push_back(static_cast<std::size_t>(i % 3));
  }
  EXPECT_EQ(silhouette_score(pts, g, 100, 7), silhouette_score(pts, g, 100, 7));
  EXPECT_NE(silhouette_score(pts, g, 100, 7), silhouette_score(pts, g, 100, 8));
}
