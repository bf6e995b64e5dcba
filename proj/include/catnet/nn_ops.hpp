#pragma once

#include <vector>

#include "catnet/tensor.hpp"

namespace catnet {

constexpr double kNormEps = 1e-5;

enum class Padding { Same, Valid };

struct DepthwiseKernel {
  Tensor weights;  // [C, kH, kW]
  Padding padding = Padding::Same;
  int stride = 1;
};

// Inputs are [C, H, W] or [B, C, H, W]; outputs keep the input rank.
Tensor depthwise_conv2d(const Tensor& input, const DepthwiseKernel& kernel);

Tensor pointwise_conv(const Tensor& input, const Tensor& weights);  // weights [C_out, C_in]

// Projection-free global self-attention over all spatial positions. Each
// position's channel vector attends to every other via dot-product scores.
Tensor global_self_attention(const Tensor& input);

// Row-stochastic attention weights for inspection; [N, N] for a single map,
// [B, N, N] for a batch. Not recorded on any graph.
Tensor attention_matrix(const Tensor& input);

enum class NormKind { ChannelStat, LayerStat };

struct NormStats {
  std::vector<double> mean, var;
  bool initialized = false;
};

// ChannelStat normalizes each channel over batch and space (running stats
// consulted when not training); LayerStat normalizes each position over its
// channel vector. Scale and shift are per-channel either way.
Tensor normalize(const Tensor& input, NormKind kind, const Tensor& scale, const Tensor& shift,
                 double eps = kNormEps, NormStats* running = nullptr, bool training = true);

enum class PoolKind { Max, Avg, GlobalAvg };

// Valid-style pooling; stride <= 0 means stride = window. GlobalAvg ignores
// window and stride and reduces to [*, C, 1, 1].
Tensor pool2d(const Tensor& input, PoolKind kind, int window = 0, int stride = 0);

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);  // [B,C]x[K,C]+[K]

struct MbconvParams {
  Tensor expand_weight;   // [4*C_in, C_in]
  Tensor norm1_scale, norm1_shift;
  Tensor dw_weight;       // [4*C_in, 3, 3]
  Tensor norm2_scale, norm2_shift;
  Tensor project_weight;  // [C_out, 4*C_in]
  Tensor shortcut_weight; // [C_out, C_in]; leave undefined for an identity shortcut
  NormStats* norm1_stats = nullptr;
  NormStats* norm2_stats = nullptr;
  int stride = 1;
};

// Inverted bottleneck: expand x4, channel-stat norm, relu, depthwise 3x3
// (stride 1 or 2), norm, relu, project, residual. Stride-2 shortcuts max-pool
// before the projection.
Tensor mbconv_block(const Tensor& input, const MbconvParams& params, bool training);

struct TransformerParams {
  Tensor norm1_scale, norm1_shift;
  Tensor norm2_scale, norm2_shift;
  Tensor ffn1_weight;  // [4*C, C]
  Tensor ffn2_weight;  // [C, 4*C]
};

// Pre-norm: x + attention(norm(x)), then h + ffn(norm(h)) with gelu between
// the two pointwise layers.
Tensor transformer_block(const Tensor& input, const TransformerParams& params);

}  // namespace catnet
