#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "catnet/metrics.hpp"
#include "catnet/rng.hpp"
#include "oracles.hpp"

using namespace catnet;

TEST_CASE("taxonomy and 3-class grouping") {
  REQUIRE(taxonomy7().size() == 7);
  REQUIRE(taxonomy3().size() == 3);
  CHECK(map_to_3class("melanoma") == "melanoma");
  CHECK(map_to_3class("actinic-keratosis") == "non-melanoma-cancer");
  CHECK(map_to_3class("basal-cell-carcinoma") == "non-melanoma-cancer");
  CHECK(map_to_3class("benign-keratosis") == "benign");
  CHECK(map_to_3class("dermatofibroma") == "benign");
  CHECK(map_to_3class("nevus") == "benign");
  CHECK(map_to_3class("vascular-lesion") == "benign");
  for (const auto& label : taxonomy7()) {
    const std::string g = map_to_3class(label);
    CHECK(std::find(taxonomy3().begin(), taxonomy3().end(), g) != taxonomy3().end());
  }
  CHECK_THROWS_AS(map_to_3class("melanooma"), TaxonomyError);
  CHECK_THROWS_AS(map_to_3class(""), TaxonomyError);
}

TEST_CASE("confusion matrix counting") {
  const std::vector<std::string> ab = {"a", "b"};

  ConfusionMatrix perfect = confusion_matrix({"a", "b", "a"}, {"a", "b", "a"}, ab);
  CHECK(perfect.at(0, 0) == 2);
  CHECK(perfect.at(1, 1) == 1);
  CHECK(perfect.at(0, 1) == 0);
  CHECK(perfect.at(1, 0) == 0);
  CHECK(perfect.total() == 3);

  ConfusionMatrix all_a = confusion_matrix({"a", "b", "b", "a"}, {"a", "a", "a", "a"}, ab);
  CHECK(all_a.col_sum(0) == 4);
  CHECK(all_a.col_sum(1) == 0);
  CHECK(all_a.at(1, 0) == 2);

  // Hand tally: truth a,a,b,b,c,c vs pred a,b,b,c,c,c.
  ConfusionMatrix mixed = confusion_matrix({"a", "a", "b", "b", "c", "c"},
                                           {"a", "b", "b", "c", "c", "c"}, {"a", "b", "c"});
  CHECK(mixed.at(0, 0) == 1);
  CHECK(mixed.at(0, 1) == 1);
  CHECK(mixed.at(1, 1) == 1);
  CHECK(mixed.at(1, 2) == 1);
  CHECK(mixed.at(2, 2) == 2);
  CHECK(mixed.at(2, 0) == 0);

  CHECK_THROWS_AS(confusion_matrix({"a"}, {"a", "b"}, ab), SizeError);
  CHECK_THROWS_AS(confusion_matrix({"z"}, {"a"}, ab), TaxonomyError);
  CHECK_THROWS_AS(confusion_matrix({"a"}, {"z"}, ab), TaxonomyError);
}

TEST_CASE("confusion matrix invariants on random labels") {
  std::mt19937_64 g(11);
  const std::vector<std::string> classes = {"a", "b", "c", "d"};
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng::below(g, 60));
    std::vector<std::string> truth, pred;
    std::vector<long long> support(classes.size(), 0);
    for (int i = 0; i < n; ++i) {
      const auto t = rng::below(g, classes.size());
      truth.push_back(classes[t]);
      pred.push_back(classes[rng::below(g, classes.size())]);
      ++support[t];
    }
    ConfusionMatrix cm = confusion_matrix(truth, pred, classes);
    CHECK(cm.total() == n);
    for (int c = 0; c < cm.num_classes(); ++c) {
      CHECK(cm.row_sum(c) == support[static_cast<std::size_t>(c)]);
      const long long tp = cm.at(c, c);
      CHECK(tp + (cm.row_sum(c) - tp) == support[static_cast<std::size_t>(c)]);
      for (int p = 0; p < cm.num_classes(); ++p) CHECK(cm.at(c, p) >= 0);
    }

    // Permuting samples leaves counts unchanged.
    std::vector<std::size_t> order(truth.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng::shuffle(order, g);
    std::vector<std::string> truth2, pred2;
    for (std::size_t i : order) {
      truth2.push_back(truth[i]);
      pred2.push_back(pred[i]);
    }
    ConfusionMatrix cm2 = confusion_matrix(truth2, pred2, classes);
    CHECK(cm.counts == cm2.counts);
  }
}

TEST_CASE("precision and recall from matrix cells") {
  // Class a: TP=9, FN=3, FP=1.
  ConfusionMatrix cm;
  cm.classes = {"a", "b"};
  cm.counts = {9, 3, 1, 5};
  PrecisionRecall pr = precision_recall(cm, 0);
  CHECK(pr.precision == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(pr.recall == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_FALSE(pr.degenerate);

  // Class never predicted and never present.
  ConfusionMatrix empty;
  empty.classes = {"a", "b", "c"};
  empty.counts = {4, 1, 0, 2, 3, 0, 0, 0, 0};
  PrecisionRecall deg = precision_recall(empty, 2);
  CHECK(deg.precision == 0.0);
  CHECK(deg.recall == 0.0);
  CHECK(deg.degenerate);

  // No false positives.
  ConfusionMatrix clean;
  clean.classes = {"a", "b"};
  clean.counts = {7, 2, 0, 4};
  CHECK(precision_recall(clean, 0).precision == 1.0);

  CHECK_THROWS_AS(precision_recall(cm, 5), IndexError);
}

TEST_CASE("pr curve sweep") {
  PRCurve curve = pr_curve({0.9, 0.8, 0.7}, {1, 0, 1}, "m");
  REQUIRE(curve.points.size() == 3);
  CHECK(curve.points[0].recall == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(curve.points[0].precision == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(curve.points[1].recall == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(curve.points[1].precision == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(curve.points[2].recall == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(curve.points[2].precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(curve.points[0].threshold == 0.9);
  CHECK(curve.class_name == "m");

  // Perfect ranking: recall hits 1 while precision is still 1.
  PRCurve perfect = pr_curve({0.9, 0.1}, {1, 0});
  REQUIRE(perfect.points.size() == 2);
  CHECK(perfect.points[0].recall == 1.0);
  CHECK(perfect.points[0].precision == 1.0);
  CHECK(perfect.points[1].precision == 0.5);

  // Tie collapse: one point, precision equals prevalence.
  PRCurve tied = pr_curve({0.4, 0.4, 0.4, 0.4}, {1, 0, 0, 0});
  REQUIRE(tied.points.size() == 1);
  CHECK(tied.points[0].recall == 1.0);
  CHECK(tied.points[0].precision == doctest::Approx(0.25).epsilon(1e-15));

  CHECK_THROWS_AS(pr_curve({0.5, 0.2}, {0, 0}), UndefinedRecallError);
  CHECK_THROWS_AS(pr_curve({0.5}, {1, 0}), SizeError);
}

TEST_CASE("pr curve properties on random score sets") {
  std::mt19937_64 g(12);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + static_cast<int>(rng::below(g, 80));
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    bool any_pos = false;
    for (int i = 0; i < n; ++i) {
      // Quantized scores force ties.
      scores[static_cast<std::size_t>(i)] = static_cast<double>(rng::below(g, 12)) / 11.0;
      labels[static_cast<std::size_t>(i)] = rng::below(g, 2) ? 1 : 0;
      any_pos = any_pos || labels[static_cast<std::size_t>(i)] == 1;
    }
    if (!any_pos) labels[0] = 1;

    PRCurve curve = pr_curve(scores, labels);
    double prev_r = 0.0, prev_t = std::numeric_limits<double>::infinity();
    for (const PRPoint& pt : curve.points) {
      CHECK(pt.recall >= prev_r);
      CHECK(pt.threshold < prev_t);
      CHECK(pt.recall >= 0.0);
      CHECK(pt.recall <= 1.0);
      CHECK(pt.precision >= 0.0);
      CHECK(pt.precision <= 1.0);
      prev_r = pt.recall;
      prev_t = pt.threshold;
    }
    CHECK(curve.points.back().recall == 1.0);

    // Sample order is irrelevant.
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng::shuffle(order, g);
    std::vector<double> s2;
    std::vector<int> l2;
    for (std::size_t i : order) {
      s2.push_back(scores[i]);
      l2.push_back(labels[i]);
    }
    PRCurve curve2 = pr_curve(s2, l2);
    REQUIRE(curve2.points.size() == curve.points.size());
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
      CHECK(curve2.points[i].threshold == curve.points[i].threshold);
      CHECK(curve2.points[i].recall == curve.points[i].recall);
      CHECK(curve2.points[i].precision == curve.points[i].precision);
    }
  }
}

TEST_CASE("average precision closed forms") {
  CHECK(average_precision(pr_curve({0.9, 0.1}, {1, 0})) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(average_precision(pr_curve({0.9, 0.8, 0.7}, {1, 0, 1})) ==
        doctest::Approx(0.5 * 1.0 + 0.0 * 0.5 + 0.5 * (2.0 / 3.0)).epsilon(1e-15));

  PRCurve single;
  single.points = {{0.5, 1.0, 0.375}};
  CHECK(average_precision(single) == doctest::Approx(0.375).epsilon(1e-15));
}

TEST_CASE("average precision matches the threshold-enumeration oracle") {
  std::mt19937_64 g(13);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + static_cast<int>(rng::below(g, 199));
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    bool any_pos = false;
    const bool quantize = trial % 2 == 0;
    for (int i = 0; i < n; ++i) {
      scores[static_cast<std::size_t>(i)] =
          quantize ? static_cast<double>(rng::below(g, 9)) / 8.0 : rng::uniform01(g);
      labels[static_cast<std::size_t>(i)] = rng::below(g, 3) == 0 ? 1 : 0;
      any_pos = any_pos || labels[static_cast<std::size_t>(i)] == 1;
    }
    if (!any_pos) labels[static_cast<std::size_t>(n - 1)] = 1;
    const double got = average_precision(pr_curve(scores, labels));
    const double want = oracle::average_precision_ref(scores, labels);
    CHECK(std::fabs(got - want) <= 1e-12);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("ap hits one exactly when positives strictly outrank negatives") {
  std::mt19937_64 g(14);
  for (int trial = 0; trial < 25; ++trial) {
    const int pos = 1 + static_cast<int>(rng::below(g, 10));
    const int neg = 1 + static_cast<int>(rng::below(g, 10));
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < pos; ++i) {
      scores.push_back(0.6 + 0.4 * rng::uniform01(g));
      labels.push_back(1);
    }
    for (int i = 0; i < neg; ++i) {
      scores.push_back(0.5 * rng::uniform01(g));
      labels.push_back(0);
    }
    CHECK(average_precision(pr_curve(scores, labels)) == doctest::Approx(1.0).epsilon(1e-15));

    // A tie across the boundary breaks perfection.
    scores.push_back(0.6);
    labels.push_back(0);
    scores.push_back(0.6);
    labels.push_back(1);
    CHECK(average_precision(pr_curve(scores, labels)) < 1.0);
  }
}

TEST_CASE("report aggregation reproduces the published summary row") {
  const std::vector<ClassRow> rows = {
      {"actinic-keratosis", 332, 0.786, 0.821, 0.772},
      {"basal-cell-carcinoma", 514, 0.880, 0.922, 0.919},
      {"benign-keratosis", 1099, 0.894, 0.877, 0.903},
      {"dermatofibroma", 115, 0.875, 0.913, 0.944},
      {"melanoma", 1563, 0.870, 0.875, 0.908},
      {"nevus", 3061, 0.935, 0.913, 0.958},
      {"vascular-lesion", 142, 1.000, 0.931, 0.995},
  };
  MetricsReport report = aggregate_report(rows);
  CHECK(std::fabs(report.weighted.precision - 0.901) <= 0.002);
  CHECK(std::fabs(report.weighted.recall - 0.895) <= 0.002);
  CHECK(std::fabs(report.weighted.ap - 0.923) <= 0.005);

  // The unweighted mean is visibly different on precision.
  CHECK(std::fabs(report.macro.precision - 0.901) > 0.002);

  // Weighted values stay inside the per-class hull.
  double lo = 1.0, hi = 0.0;
  for (const auto& r : rows) {
    lo = std::min(lo, r.precision);
    hi = std::max(hi, r.precision);
  }
  CHECK(report.weighted.precision >= lo);
  CHECK(report.weighted.precision <= hi);
}

TEST_CASE("aggregation closed forms and errors") {
  const std::vector<ClassRow> same = {{"a", 3, 0.7, 0.6, 0.5}, {"b", 9, 0.7, 0.6, 0.5}};
  MetricsReport r = aggregate_report(same);
  CHECK(r.weighted.precision == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(r.macro.recall == doctest::Approx(0.6).epsilon(1e-15));

  const std::vector<ClassRow> two = {{"a", 1, 0.0, 0.0, 0.0}, {"b", 3, 1.0, 1.0, 1.0}};
  MetricsReport r2 = aggregate_report(two);
  CHECK(r2.weighted.precision == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(r2.macro.precision == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(aggregate_report({}), SizeError);
  CHECK_THROWS_AS(aggregate_report({{"a", 0, 0.5, 0.5, 0.5}}), DegenerateError);

  // Weighted column equals the direct support-weighted sum to 1e-12.
  std::mt19937_64 g(15);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<ClassRow> rows;
    double num = 0.0;
    long long den = 0;
    for (int c = 0; c < 5; ++c) {
      ClassRow row{"c" + std::to_string(c), static_cast<long long>(rng::below(g, 50)),
                   rng::uniform01(g), rng::uniform01(g), rng::uniform01(g)};
      rows.push_back(row);
      num += static_cast<double>(row.support) * row.precision;
      den += row.support;
    }
    if (den == 0) {
      rows[0].support = 1;
      num += rows[0].precision;
      den = 1;
    }
    MetricsReport rep = aggregate_report(rows);
    CHECK(std::fabs(rep.weighted.precision - num / static_cast<double>(den)) <= 1e-12);
  }
}

TEST_CASE("csv emission") {
  ConfusionMatrix cm = confusion_matrix({"a", "b"}, {"a", "a"}, {"a", "b"});
  const std::string grid = confusion_csv(cm);
  CHECK(grid == "true\\pred,a,b\na,1,0\nb,1,0\n");

  PRCurve curve = pr_curve({0.5, 0.25}, {1, 1});
  const std::string ccsv = curve_csv(curve);
  CHECK(ccsv.rfind("threshold,recall,precision\n", 0) == 0);
  CHECK(std::count(ccsv.begin(), ccsv.end(), '\n') == 3);

  MetricsReport rep = aggregate_report({{"a", 2, 0.5, 0.5, 0.5}});
  const std::string rcsv = report_csv(rep);
  CHECK(rcsv.rfind("class,support,precision,recall,ap\n", 0) == 0);
  CHECK(rcsv.find("\nweighted,2,") != std::string::npos);
  CHECK(rcsv.find("\nmacro,2,") != std::string::npos);
}
