#pragma once

#include <torch/nn.h>

#include <array>

#include "occmocap/transformer.hpp"

namespace occmocap {

/// Joint-level spatial-temporal layer: parallel dilated 3x3 convolutions over
/// the (frame, joint) grid, concatenated on the channel axis.
struct STLayerConfig {
  std::array<int64_t, 3> dilations{1, 2, 5};
  int64_t branch_channels = 16;

  int64_t feature_dim() const { return static_cast<int64_t>(dilations.size()) * branch_channels; }
};

struct PriorConfig {
  int64_t frames = 16;
  int64_t joints = 14;
  STLayerConfig st;
  TransformerConfig spatial;
  TransformerConfig temporal;
  /// When false the occlusion token is frozen at zero (zero-fill ablation).
  bool learn_token = true;

  int64_t feature_dim() const { return st.feature_dim(); }
  /// Throws ConfigError for non-positive sizes or head counts that do not
  /// divide the token widths.
  void validate() const;
};

class STLayerImpl : public torch::nn::Module {
 public:
  explicit STLayerImpl(const STLayerConfig& cfg);

  /// [B, F, K, 2] -> [B, F, K, D], zero padding keeps F x K.
  torch::Tensor forward(const torch::Tensor& map);

  int64_t feature_dim() const { return cfg_.feature_dim(); }

 private:
  STLayerConfig cfg_;
  torch::nn::ModuleList branches_;
};
TORCH_MODULE(STLayer);

struct PriorOutput {
  torch::Tensor map;                ///< [B, F, K, 2] reconstructed full 2D map
  torch::Tensor temporal_features;  ///< [B, F, K*D] before the regression head
  torch::Tensor st_features;        ///< [B, F, K, D] ST layer output
};

/// Self-supervised motion prior: ST layer -> + spatial positional embedding
/// -> spatial transformer over the K joints of each frame -> flatten to
/// F x (K*D) -> + temporal positional embedding -> temporal transformer over
/// the F frames -> LayerNorm + linear head back to F x K x 2.
class MotionPriorImpl : public torch::nn::Module {
 public:
  explicit MotionPriorImpl(const PriorConfig& cfg);

  /// Replaces the masked pixels of `map` ([B, F, K, 2]) with the learned
  /// occlusion token. `mask` is [B, F, K] or [F, K].
  torch::Tensor occlude(const torch::Tensor& map, const torch::Tensor& mask) const;

  /// `occluded` is [B, F, K, 2] with the token already substituted.
  PriorOutput forward(const torch::Tensor& occluded);

  const PriorConfig& config() const { return cfg_; }
  const torch::Tensor& occlusion_token() const { return token_; }
  STLayer& st_layer() { return st_; }

 private:
  PriorConfig cfg_;
  STLayer st_{nullptr};
  torch::Tensor spatial_pos_;   // [K, D]
  TransformerEncoder spatial_{nullptr};
  torch::Tensor temporal_pos_;  // [F, K*D]
  TransformerEncoder temporal_{nullptr};
  torch::nn::LayerNorm head_norm_{nullptr};
  torch::nn::Linear head_{nullptr};
  torch::Tensor token_;         // [2]
};
TORCH_MODULE(MotionPrior);

/// Masked L1: mean over occluded joint-frames of |pred - gt| summed over the
/// two coordinates. Returns 0 when nothing is masked. `mask` is [B, F, K].
torch::Tensor masked_l1_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask);

}  // namespace occmocap
