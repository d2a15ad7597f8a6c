#pragma once

#include <torch/nn.h>

#include "occmocap/body_model.hpp"
#include "occmocap/prior_net.hpp"

namespace occmocap {

struct LiftingConfig {
  int64_t body_joints = kBodyJoints;
  int64_t shape_dim = kShapeDim;
  TransformerConfig transformer;  ///< same structure as the prior's spatial transformer
  int64_t head_hidden = 256;
  /// Fuse the prior's temporal features into the lifting features.
  bool fuse_prior = true;
};

struct LiftingOutput {
  torch::Tensor map3d;  ///< [B, F, N, 6]
  torch::Tensor beta;   ///< [B, S], one shape per sequence
};

/// Lifting network. Shares the prior's ST layer: its features go through a
/// spatial transformer whose output is added to the prior's temporal
/// features (reshaped to F x K x D). A per-frame MLP head regresses the 3D
/// motion map, and a temporally mean-pooled MLP head regresses the shape.
class LiftingNetImpl : public torch::nn::Module {
 public:
  LiftingNetImpl(const LiftingConfig& cfg, MotionPrior prior);

  LiftingOutput forward(const torch::Tensor& occluded);

  MotionPrior& prior() { return prior_; }
  const LiftingConfig& config() const { return cfg_; }

 private:
  LiftingConfig cfg_;
  MotionPrior prior_{nullptr};
  torch::Tensor spatial_pos_;
  TransformerEncoder encoder_{nullptr};
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Sequential pose_head_{nullptr};
  torch::nn::Sequential shape_head_{nullptr};
};
TORCH_MODULE(LiftingNet);

struct MotionLossWeights {
  double map = 1.0;
  double vertices = 1.0;
  double joints = 1.0;
  double shape = 1.0;
  double smooth = 1.0;
};

/// Ground truth for a batch. `vertices` and `joints` must come from the same
/// body model that scores the prediction (make_motion_targets does this).
struct MotionTargets {
  torch::Tensor map3d;     ///< [B, F, N, 6]
  torch::Tensor beta;      ///< [B, S]
  torch::Tensor vertices;  ///< [B, F, V, 3]
  torch::Tensor joints;    ///< [B, F, 14, 3] LSP joints
};

MotionTargets make_motion_targets(const torch::Tensor& map3d, const torch::Tensor& beta, const BodyModel& body);

struct MotionLoss {
  torch::Tensor total;
  torch::Tensor rec_map;
  torch::Tensor rec_vertices;
  torch::Tensor rec_joints;
  torch::Tensor shape;
  torch::Tensor smooth;
};

/// Reconstruction (map, vertices, LSP joints), shape (fit + magnitude) and
/// smoothness (consecutive map rows) terms, each a mean squared error, then
/// weighted and summed. Throws InvalidArgument for missing or mismatched
/// targets.
MotionLoss motion_loss(const LiftingOutput& out, const MotionTargets& gt, const BodyModel& body,
                       const MotionLossWeights& weights = {});

/// Vertices [B, F, V, 3] and LSP joints [B, F, 14, 3] of a 3D map.
BodyOutput pose_map3d(const torch::Tensor& map3d, const torch::Tensor& beta, const BodyModel& body);

}  // namespace occmocap
