#pragma once

#include <string>
#include <vector>

#include "catnet/errors.hpp"

namespace catnet {

// The 7-class lesion taxonomy, in canonical (alphabetical) order.
const std::vector<std::string>& taxonomy7();

// The coarse evaluation taxonomy: melanoma, non-melanoma-cancer, benign.
const std::vector<std::string>& taxonomy3();

// Collapses a 7-class label into its coarse group. TaxonomyError on unknown labels.
std::string map_to_3class(const std::string& label);

struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<long long> counts;  // row-major [true][pred]

  int num_classes() const { return static_cast<int>(classes.size()); }
  long long at(int true_class, int pred_class) const;
  long long row_sum(int true_class) const;
  long long col_sum(int pred_class) const;
  long long total() const;
};

ConfusionMatrix confusion_matrix(const std::vector<std::string>& truth,
                                 const std::vector<std::string>& predicted,
                                 const std::vector<std::string>& classes);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  bool degenerate = false;
};

PrecisionRecall precision_recall(const ConfusionMatrix& cm, int cls);

struct PRPoint {
  double threshold = 0.0;
  double recall = 0.0;
  double precision = 0.0;
};

struct PRCurve {
  std::string class_name;
  std::vector<PRPoint> points;  // descending threshold order
};

// Sweeps every distinct score as a threshold, highest first; tied scores enter
// together. labels are 0/1 per sample. UndefinedRecallError without positives.
PRCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& labels,
                 const std::string& class_name = "");

// Step-sum AP = sum_n (R_n - R_{n-1}) P_n with R_0 = 0. No interpolation.
double average_precision(const PRCurve& curve);

struct ClassRow {
  std::string name;
  long long support = 0;
  double precision = 0.0;
  double recall = 0.0;
  double ap = 0.0;
};

struct AggregateRow {
  double precision = 0.0;
  double recall = 0.0;
  double ap = 0.0;
};

struct MetricsReport {
  std::vector<ClassRow> rows;
  AggregateRow weighted;  // support-weighted; the headline row
  AggregateRow macro;     // unweighted mean
};

MetricsReport aggregate_report(const std::vector<ClassRow>& rows);

// CSV emission.
std::string report_csv(const MetricsReport& report);
std::string curve_csv(const PRCurve& curve);
std::string confusion_csv(const ConfusionMatrix& cm);

}  // namespace catnet
