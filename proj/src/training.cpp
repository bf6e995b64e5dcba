#include "catnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "catnet/rng.hpp"

namespace catnet {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0) || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  augmentation.validate();
}

std::vector<double> inverse_frequency_weights(const std::vector<long long>& class_counts) {
  if (class_counts.empty()) throw SizeError("class count vector is empty");
  long long total = 0;
  for (long long n : class_counts) {
    if (n < 0) throw SizeError("negative class count");
    total += n;
  }
  if (total == 0) throw EmptyDatasetError("no samples to derive class weights from");
  const double k = static_cast<double>(class_counts.size());
  std::vector<double> w(class_counts.size(), 0.0);
  for (std::size_t c = 0; c < class_counts.size(); ++c) {
    if (class_counts[c] > 0) {
      w[c] = static_cast<double>(total) / (k * static_cast<double>(class_counts[c]));
    }
  }
  return w;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                     const std::vector<double>& class_weights) {
  if (logits.rank() != 2) throw RankError("cross entropy expects [B,K] logits");
  const int B = logits.shape()[0];
  const int K = logits.shape()[1];
  if (static_cast<int>(labels.size()) != B) {
    throw SizeError("label count does not match the batch");
  }
  if (!class_weights.empty() && static_cast<int>(class_weights.size()) != K) {
    throw SizeError("class weight vector must have one entry per class");
  }
  for (int l : labels) {
    if (l < 0 || l >= K) throw IndexError("label " + std::to_string(l) + " out of range");
  }

  const std::vector<double>& x = logits.values();
  // Per-sample softmax probabilities, kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(x.size());
  double loss = 0.0;
  std::vector<double> weights(static_cast<std::size_t>(B));
  for (int i = 0; i < B; ++i) {
    const double* row = x.data() + static_cast<std::size_t>(i) * K;
    double* prow = probs->data() + static_cast<std::size_t>(i) * K;
    double mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double denom = 0.0;
    for (int k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
    const double log_denom = std::log(denom) + mx;
    for (int k = 0; k < K; ++k) prow[k] = std::exp(row[k] - log_denom);
    const double w =
        class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(labels[i])];
    weights[static_cast<std::size_t>(i)] = w;
    loss += w * (log_denom - row[labels[static_cast<std::size_t>(i)]]);
  }
  loss /= static_cast<double>(B);

  Tensor out = Tensor::scalar(loss);
  Graph* g = Graph::tracking({&logits});
  if (g) {
    std::vector<int> lab = labels;
    g->record(out, "cross_entropy", {&logits},
              [B, K, probs, lab = std::move(lab), weights = std::move(weights)](
                  const std::vector<double>& upstream,
                  const std::vector<std::vector<double>*>& input_grads) {
                if (!input_grads[0]) return;
                std::vector<double>& dx = *input_grads[0];
                const double scale = upstream[0] / static_cast<double>(B);
                for (int i = 0; i < B; ++i) {
                  const double w = weights[static_cast<std::size_t>(i)];
                  const double* prow = probs->data() + static_cast<std::size_t>(i) * K;
                  double* drow = dx.data() + static_cast<std::size_t>(i) * K;
                  for (int k = 0; k < K; ++k) {
                    const double onehot = k == lab[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
                    drow[k] += scale * w * (prow[k] - onehot);
                  }
                }
              });
  }
  return out;
}

void sgd_update(std::vector<double>& param, const std::vector<double>& grad,
                std::vector<double>& velocity, double lr, double momentum,
                double weight_decay) {
  if (grad.size() != param.size()) throw ShapeError("gradient size does not match parameter");
  if (velocity.empty()) velocity.assign(param.size(), 0.0);
  if (velocity.size() != param.size()) throw ShapeError("velocity size does not match parameter");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

Sgd::Sgd(double lr, double momentum, double weight_decay)
    : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0) || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
}

void Sgd::step(Model& model) {
  for (const auto& name : model.param_names()) {
    const Tensor& p = model.param(name);
    if (!p.has_grad()) {
      throw GraphError("parameter '" + name + "' has no gradient; run backward first");
    }
    std::vector<double> values = p.values();
    sgd_update(values, p.grad(), velocity_[name], lr_, momentum_, weight_decay_);
    model.set_param(name, Tensor::from_values(p.shape(), std::move(values)));
  }
}

namespace {

Tensor stack_images(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx,
                    const AugmentationConfig* aug, std::uint64_t stream_offset) {
  const Shape& s = samples[idx[0]].image.shape();
  Shape batch_shape = {static_cast<int>(idx.size()), s[0], s[1], s[2]};
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(shape_size(batch_shape)));
  for (std::size_t i : idx) {
    const Tensor& img =
        aug ? augment(samples[i].image, *aug, stream_offset + i) : samples[i].image;
    if (img.shape() != s) throw ShapeError("samples in a batch must share one shape");
    values.insert(values.end(), img.values().begin(), img.values().end());
  }
  return Tensor::from_values(batch_shape, std::move(values));
}

std::vector<int> stack_labels(const std::vector<Sample>& samples,
                              const std::vector<std::size_t>& idx) {
  std::vector<int> labels;
  labels.reserve(idx.size());
  for (std::size_t i : idx) labels.push_back(samples[i].label);
  return labels;
}

std::vector<std::vector<std::size_t>> sequential_batches(std::size_t n, int batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, at + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> b;
    for (std::size_t i = at; i < end; ++i) b.push_back(i);
    batches.push_back(std::move(b));
  }
  return batches;
}

struct ValScore {
  double loss = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

ValScore validation_pass(Model& model, const std::vector<Sample>& val, int batch_size,
                         const std::vector<double>& weights, int num_classes) {
  ValScore score;
  std::vector<std::string> truth, pred;
  std::vector<std::string> class_names;
  for (int k = 0; k < num_classes; ++k) class_names.push_back(std::to_string(k));

  double loss_sum = 0.0;
  for (const auto& idx : sequential_batches(val.size(), batch_size)) {
    Tensor batch = stack_images(val, idx, nullptr, 0);
    Tensor logits = model.forward(batch, nullptr, false).logits;
    std::vector<int> labels = stack_labels(val, idx);
    loss_sum += cross_entropy(logits, labels, weights).at(0) * static_cast<double>(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      int arg = 0;
      for (int k = 1; k < num_classes; ++k) {
        if (logits.at(static_cast<long long>(r) * num_classes + k) >
            logits.at(static_cast<long long>(r) * num_classes + arg)) {
          arg = k;
        }
      }
      truth.push_back(class_names[static_cast<std::size_t>(labels[r])]);
      pred.push_back(class_names[static_cast<std::size_t>(arg)]);
    }
  }
  score.loss = loss_sum / static_cast<double>(val.size());

  ConfusionMatrix cm = confusion_matrix(truth, pred, class_names);
  std::vector<ClassRow> rows;
  for (int c = 0; c < num_classes; ++c) {
    PrecisionRecall pr = precision_recall(cm, c);
    rows.push_back({class_names[static_cast<std::size_t>(c)], cm.row_sum(c), pr.precision,
                    pr.recall, 0.0});
  }
  MetricsReport report = aggregate_report(rows);
  score.precision = report.weighted.precision;
  score.recall = report.weighted.recall;
  return score;
}

}  // namespace

FitResult fit(Model& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw EmptyDatasetError("training set is empty");
  if (val.empty()) throw EmptyDatasetError("validation set is empty");

  const int K = model.config().num_classes;
  for (const auto& s : train) {
    if (s.label < 0 || s.label >= K) throw IndexError("train label out of range");
  }
  for (const auto& s : val) {
    if (s.label < 0 || s.label >= K) throw IndexError("val label out of range");
  }

  std::vector<double> weights;
  if (config.inverse_frequency) {
    std::vector<long long> counts(static_cast<std::size_t>(K), 0);
    for (const auto& s : train) ++counts[static_cast<std::size_t>(s.label)];
    weights = inverse_frequency_weights(counts);
  }

  Sgd opt(config.lr, config.momentum, config.weight_decay);
  FitResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  // Best-epoch snapshot, materialized to disk after the loop.
  std::unordered_map<std::string, Tensor> best_params;
  std::unordered_map<std::string, NormStats> best_stats;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::mt19937_64 g(rng::mix(config.seed, static_cast<std::uint64_t>(epoch)));
    rng::shuffle(order, g);
    const std::uint64_t stream_offset =
        static_cast<std::uint64_t>(epoch - 1) * train.size();

    double loss_sum = 0.0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), at + static_cast<std::size_t>(config.batch_size));
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(at),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      Tensor batch = stack_images(train, idx, config.augment_train ? &config.augmentation : nullptr,
                                  stream_offset);
      Graph graph;
      Tensor logits = model.forward(batch, &graph, true).logits;
      Tensor loss = cross_entropy(logits, stack_labels(train, idx), weights);
      const double value = loss.at(0);
      if (!std::isfinite(value)) {
        throw DivergenceError("training loss is not finite at epoch " + std::to_string(epoch));
      }
      loss_sum += value * static_cast<double>(idx.size());
      graph.backward(loss);
      opt.step(model);
    }

    ValScore vs = validation_pass(model, val, config.batch_size, weights, K);
    if (!std::isfinite(vs.loss)) {
      throw DivergenceError("validation loss is not finite at epoch " + std::to_string(epoch));
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(train.size());
    entry.val_loss = vs.loss;
    entry.val_precision = vs.precision;
    entry.val_recall = vs.recall;
    result.log.push_back(entry);

    if (vs.loss < result.best_val_loss) {
      result.best_val_loss = vs.loss;
      result.best_epoch = epoch;
      best_params.clear();
      best_stats.clear();
      for (const auto& name : model.param_names()) best_params.emplace(name, model.param(name));
      for (const auto& name : model.stat_names()) best_stats.emplace(name, model.stats(name));
    }
  }

  if (!config.checkpoint_path.empty()) {
    Model best(model.config(), false);
    for (auto& [name, value] : best_params) best.set_param(name, value);
    for (auto& [name, value] : best_stats) best.stats(name) = value;
    CheckpointMeta meta;
    meta.epoch = result.best_epoch;
    meta.has_epoch = true;
    meta.loss = result.best_val_loss;
    meta.has_loss = true;
    save_checkpoint(best, config.checkpoint_path, meta);
  }
  return result;
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,val_loss,val_precision_weighted,val_recall_weighted\n";
  char buf[256];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss,
                  e.val_loss, e.val_precision, e.val_recall);
    out += buf;
  }
  return out;
}

Evaluation evaluate(Model& model, const std::vector<Sample>& samples,
                    const std::vector<std::string>& class_list, bool map3, int batch_size) {
  if (samples.empty()) throw EmptyDatasetError("nothing to evaluate");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  const int K = model.config().num_classes;
  if (static_cast<int>(class_list.size()) != K) {
    throw SizeError("class list must name every model output");
  }
  for (const auto& s : samples) {
    if (s.label < 0 || s.label >= K) throw IndexError("label out of range");
  }

  const std::vector<std::string>& report_classes = map3 ? taxonomy3() : class_list;
  const int R = static_cast<int>(report_classes.size());

  // Per-report-class column index for each model class.
  std::vector<int> to_report(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const std::string name =
        map3 ? map_to_3class(class_list[static_cast<std::size_t>(k)]) : class_list[static_cast<std::size_t>(k)];
    const auto it = std::find(report_classes.begin(), report_classes.end(), name);
    to_report[static_cast<std::size_t>(k)] = static_cast<int>(it - report_classes.begin());
  }

  std::vector<std::string> truth, pred;
  std::vector<std::vector<double>> scores(static_cast<std::size_t>(R));
  std::vector<std::vector<int>> binary(static_cast<std::size_t>(R));

  for (const auto& idx : sequential_batches(samples.size(), batch_size)) {
    Tensor batch = stack_images(samples, idx, nullptr, 0);
    Tensor logits = model.forward(batch, nullptr, false).logits;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double* row = logits.values().data() + static_cast<std::size_t>(r) * K;
      double mx = row[0];
      for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
      double denom = 0.0;
      for (int k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
      std::vector<double> grouped(static_cast<std::size_t>(R), 0.0);
      int arg = 0;
      for (int k = 0; k < K; ++k) {
        if (row[k] > row[arg]) arg = k;
        grouped[static_cast<std::size_t>(to_report[static_cast<std::size_t>(k)])] +=
            std::exp(row[k] - mx) / denom;
      }
      const int true_class = to_report[static_cast<std::size_t>(samples[idx[r]].label)];
      const int pred_class = to_report[static_cast<std::size_t>(arg)];
      truth.push_back(report_classes[static_cast<std::size_t>(true_class)]);
      pred.push_back(report_classes[static_cast<std::size_t>(pred_class)]);
      for (int c = 0; c < R; ++c) {
        scores[static_cast<std::size_t>(c)].push_back(grouped[static_cast<std::size_t>(c)]);
        binary[static_cast<std::size_t>(c)].push_back(c == true_class ? 1 : 0);
      }
    }
  }

  Evaluation ev;
  ev.confusion = confusion_matrix(truth, pred, report_classes);
  std::vector<ClassRow> rows;
  for (int c = 0; c < R; ++c) {
    PrecisionRecall pr = precision_recall(ev.confusion, c);
    ClassRow row{report_classes[static_cast<std::size_t>(c)], ev.confusion.row_sum(c),
                 pr.precision, pr.recall, 0.0};
    PRCurve curve;
    curve.class_name = row.name;
    bool any_pos = false;
    for (int b : binary[static_cast<std::size_t>(c)]) any_pos = any_pos || b == 1;
    if (any_pos) {
      curve = pr_curve(scores[static_cast<std::size_t>(c)], binary[static_cast<std::size_t>(c)],
                       row.name);
      row.ap = average_precision(curve);
    }
    ev.curves.push_back(std::move(curve));
    rows.push_back(row);
  }
  ev.report = aggregate_report(rows);
  return ev;
}

}  // namespace catnet
