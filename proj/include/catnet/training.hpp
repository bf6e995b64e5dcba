#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "catnet/augment.hpp"
#include "catnet/errors.hpp"
#include "catnet/metrics.hpp"
#include "catnet/model.hpp"

namespace catnet {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  std::string checkpoint_path;    // best-epoch weights land here when set
  bool inverse_frequency = true;  // class weighting; off means uniform
  bool augment_train = true;
  AugmentationConfig augmentation;

  void validate() const;  // ConfigError on out-of-range settings
};

// w_c = N / (K * n_c); classes with no samples get weight 0.
std::vector<double> inverse_frequency_weights(const std::vector<long long>& class_counts);

// Weighted mean of -log softmax(logits)[label] over the batch, stabilized via
// log-sum-exp. logits [B,K]; empty class_weights means uniform weighting.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                     const std::vector<double>& class_weights = {});

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
void sgd_update(std::vector<double>& param, const std::vector<double>& grad,
                std::vector<double>& velocity, double lr, double momentum,
                double weight_decay);

// Momentum SGD over a model's named parameters, fed by the gradient slots that
// Graph::backward fills.
class Sgd {
 public:
  Sgd(double lr, double momentum, double weight_decay);
  void step(Model& model);

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::unordered_map<std::string, std::vector<double>> velocity_;
};

struct Sample {
  Tensor image;  // [3,H,W] in [0,1]
  int label = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_precision = 0.0;  // support-weighted
  double val_recall = 0.0;     // support-weighted
};

struct FitResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

// Trains in place, tracking validation loss per epoch; the best-epoch snapshot
// is written to config.checkpoint_path (when set). NaN loss aborts with
// DivergenceError. Deterministic for a fixed config.
FitResult fit(Model& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const TrainConfig& config);

std::string training_log_csv(const std::vector<EpochLog>& log);

struct Evaluation {
  MetricsReport report;
  ConfusionMatrix confusion;
  std::vector<PRCurve> curves;  // one per report class; empty when no positives
};

// Inference over samples followed by the metrics pipeline. class_list names the
// model's output classes; with map3 set, labels, argmax predictions, and
// per-group scores are collapsed through map_to_3class first.
Evaluation evaluate(Model& model, const std::vector<Sample>& samples,
                    const std::vector<std::string>& class_list, bool map3,
                    int batch_size = 32);

}  // namespace catnet
