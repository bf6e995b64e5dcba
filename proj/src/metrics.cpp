#include "catnet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace catnet {

const std::vector<std::string>& taxonomy7() {
  static const std::vector<std::string> classes = {
      "actinic-keratosis", "basal-cell-carcinoma", "benign-keratosis", "dermatofibroma",
      "melanoma",          "nevus",                "vascular-lesion",
  };
  return classes;
}

const std::vector<std::string>& taxonomy3() {
  static const std::vector<std::string> groups = {"melanoma", "non-melanoma-cancer", "benign"};
  return groups;
}

std::string map_to_3class(const std::string& label) {
  if (label == "melanoma") return "melanoma";
  if (label == "actinic-keratosis" || label == "basal-cell-carcinoma") {
    return "non-melanoma-cancer";
  }
  if (label == "benign-keratosis" || label == "dermatofibroma" || label == "nevus" ||
      label == "vascular-lesion") {
    return "benign";
  }
  throw TaxonomyError("unknown class label: " + label);
}

long long ConfusionMatrix::at(int true_class, int pred_class) const {
  const int n = num_classes();
  if (true_class < 0 || true_class >= n || pred_class < 0 || pred_class >= n) {
    throw IndexError("confusion matrix index out of range");
  }
  return counts[static_cast<std::size_t>(true_class) * n + pred_class];
}

long long ConfusionMatrix::row_sum(int true_class) const {
  long long s = 0;
  for (int p = 0; p < num_classes(); ++p) s += at(true_class, p);
  return s;
}

long long ConfusionMatrix::col_sum(int pred_class) const {
  long long s = 0;
  for (int t = 0; t < num_classes(); ++t) s += at(t, pred_class);
  return s;
}

long long ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), 0LL);
}

ConfusionMatrix confusion_matrix(const std::vector<std::string>& truth,
                                 const std::vector<std::string>& predicted,
                                 const std::vector<std::string>& classes) {
  if (truth.size() != predicted.size()) {
    throw SizeError("label sequences differ in length");
  }
  if (classes.empty()) throw SizeError("class list is empty");
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    index.emplace(classes[i], static_cast<int>(i));
  }
  ConfusionMatrix cm;
  cm.classes = classes;
  cm.counts.assign(classes.size() * classes.size(), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto t = index.find(truth[i]);
    auto p = index.find(predicted[i]);
    if (t == index.end()) throw TaxonomyError("unknown true label: " + truth[i]);
    if (p == index.end()) throw TaxonomyError("unknown predicted label: " + predicted[i]);
    ++cm.counts[static_cast<std::size_t>(t->second) * classes.size() +
                static_cast<std::size_t>(p->second)];
  }
  return cm;
}

PrecisionRecall precision_recall(const ConfusionMatrix& cm, int cls) {
  const long long tp = cm.at(cls, cls);
  const long long fp = cm.col_sum(cls) - tp;
  const long long fn = cm.row_sum(cls) - tp;
  PrecisionRecall pr;
  if (tp + fp > 0) {
    pr.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  } else {
    pr.degenerate = true;
  }
  if (tp + fn > 0) {
    pr.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  } else {
    pr.degenerate = true;
  }
  return pr;
}

PRCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& labels,
                 const std::string& class_name) {
  if (scores.size() != labels.size()) {
    throw SizeError("scores and labels differ in length");
  }
  long long positives = 0;
  for (int l : labels) positives += (l != 0);
  if (positives == 0) {
    throw UndefinedRecallError("recall is undefined without positive labels");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  PRCurve curve;
  curve.class_name = class_name;
  long long tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      if (labels[order[i]] != 0) {
        ++tp;
      } else {
        ++fp;
      }
      ++i;
    }
    PRPoint pt;
    pt.threshold = threshold;
    pt.recall = static_cast<double>(tp) / static_cast<double>(positives);
    pt.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    curve.points.push_back(pt);
  }
  return curve;
}

double average_precision(const PRCurve& curve) {
  double ap = 0.0;
  double prev_recall = 0.0;
  for (const PRPoint& pt : curve.points) {
    ap += (pt.recall - prev_recall) * pt.precision;
    prev_recall = pt.recall;
  }
  return ap;
}

MetricsReport aggregate_report(const std::vector<ClassRow>& rows) {
  if (rows.empty()) throw SizeError("report needs at least one class row");
  long long total_support = 0;
  for (const ClassRow& r : rows) {
    if (r.support < 0) throw SizeError("negative support for class " + r.name);
    total_support += r.support;
  }
  if (total_support == 0) {
    throw DegenerateError("all class supports are zero");
  }
  MetricsReport report;
  report.rows = rows;
  const double n = static_cast<double>(rows.size());
  for (const ClassRow& r : rows) {
    const double w = static_cast<double>(r.support) / static_cast<double>(total_support);
    report.weighted.precision += w * r.precision;
    report.weighted.recall += w * r.recall;
    report.weighted.ap += w * r.ap;
    report.macro.precision += r.precision / n;
    report.macro.recall += r.recall / n;
    report.macro.ap += r.ap / n;
  }
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string report_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "class,support,precision,recall,ap\n";
  for (const ClassRow& r : report.rows) {
    out << r.name << ',' << r.support << ',' << fmt(r.precision) << ',' << fmt(r.recall) << ','
        << fmt(r.ap) << '\n';
  }
  long long total = 0;
  for (const ClassRow& r : report.rows) total += r.support;
  out << "weighted," << total << ',' << fmt(report.weighted.precision) << ','
      << fmt(report.weighted.recall) << ',' << fmt(report.weighted.ap) << '\n';
  out << "macro," << total << ',' << fmt(report.macro.precision) << ','
      << fmt(report.macro.recall) << ',' << fmt(report.macro.ap) << '\n';
  return out.str();
}

std::string curve_csv(const PRCurve& curve) {
  std::ostringstream out;
  out << "threshold,recall,precision\n";
  for (const PRPoint& pt : curve.points) {
    out << fmt(pt.threshold) << ',' << fmt(pt.recall) << ',' << fmt(pt.precision) << '\n';
  }
  return out.str();
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "true\\pred";
  for (const auto& c : cm.classes) out << ',' << c;
  out << '\n';
  for (int t = 0; t < cm.num_classes(); ++t) {
    out << cm.classes[t];
    for (int p = 0; p < cm.num_classes(); ++p) out << ',' << cm.at(t, p);
    out << '\n';
  }
  return out.str();
}

}  // namespace catnet
