#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "catnet/nn_ops.hpp"
#include "catnet/tensor.hpp"

namespace catnet {

enum class StageKind { ConvStem, Mbconv, Transformer };

struct StageSpec {
  StageKind kind = StageKind::ConvStem;
  int blocks = 1;
  int channels = 8;
  int stride = 1;
};

struct ModelConfig {
  int in_channels = 3;
  int in_height = 32;
  int in_width = 32;
  int num_classes = 7;
  std::uint64_t seed = 0;
  std::vector<StageSpec> stages;

  static ModelConfig desk_default();
  void validate() const;

  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

// Stage stack: conv stem, then mbconv stages, then transformer stages, then a
// global-avg-pool + linear head. Parameters live under canonical names
// (stage{i}.block{j}.{param}, head.weight, head.bias).
class Model {
 public:
  explicit Model(const ModelConfig& config) : Model(config, true) {}
  Model(const ModelConfig& config, bool initialize);

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& param_names() const { return names_; }
  const std::vector<std::string>& stat_names() const { return stat_names_; }
  bool has_param(const std::string& name) const { return params_.count(name) > 0; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  void set_param(const std::string& name, Tensor value);
  NormStats& stats(const std::string& name);
  const NormStats& stats(const std::string& name) const;
  long long num_parameters() const;

  struct Forward {
    Tensor logits;
    Tensor conv_hook;  // output of the last mbconv block; undefined if none ran
  };

  // graph == nullptr runs untracked. Training mode uses batch statistics in
  // channel-stat norms and refreshes running statistics.
  Forward forward(const Tensor& batch, Graph* graph, bool training);

  Tensor predict_logits(const Tensor& batch);
  std::vector<double> predict_proba(const Tensor& image);

 private:
  ModelConfig config_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, Tensor> params_;
  std::vector<std::string> stat_names_;
  std::unordered_map<std::string, NormStats> stats_;
};

Model build_model(const ModelConfig& config);

struct CheckpointMeta {
  long long epoch = 0;
  double loss = 0.0;
  bool has_epoch = false;
  bool has_loss = false;
};

void save_checkpoint(const Model& model, const std::string& path,
                     const CheckpointMeta& meta = {});
Model load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace catnet
