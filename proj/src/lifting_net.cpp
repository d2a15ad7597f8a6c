#include "occmocap/lifting_net.hpp"

#include <torch/torch.h>

#include <sstream>

#include "occmocap/errors.hpp"
#include "occmocap/motion_repr.hpp"
#include "occmocap/rotation.hpp"

namespace occmocap {

LiftingNetImpl::LiftingNetImpl(const LiftingConfig& cfg, MotionPrior prior) : cfg_(cfg) {
  if (!prior) {
    throw ConfigError("lifting: a prior module is required");
  }
  if (cfg_.body_joints <= 0 || cfg_.shape_dim <= 0 || cfg_.head_hidden <= 0) {
    throw ConfigError("lifting: sizes must be positive");
  }
  const auto& pc = prior->config();
  const int64_t d = pc.feature_dim();
  if (cfg_.transformer.heads <= 0 || d % cfg_.transformer.heads != 0) {
    throw ConfigError("lifting: transformer heads must divide the prior feature dim " + std::to_string(d));
  }
  const int64_t width = pc.joints * d;
  prior_ = register_module("prior", std::move(prior));
  spatial_pos_ = register_parameter("spatial_pos", torch::randn({pc.joints, d}) * 0.02);
  encoder_ = register_module("encoder", TransformerEncoder(d, cfg_.transformer));
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  pose_head_ = register_module(
      "pose_head", torch::nn::Sequential(torch::nn::Linear(width, cfg_.head_hidden), torch::nn::GELU(),
                                         torch::nn::Linear(cfg_.head_hidden, cfg_.body_joints * 6)));
  shape_head_ = register_module(
      "shape_head", torch::nn::Sequential(torch::nn::Linear(width, cfg_.head_hidden), torch::nn::GELU(),
                                          torch::nn::Linear(cfg_.head_hidden, cfg_.shape_dim)));
  // Start from identity rotations and the mean shape.
  torch::NoGradGuard no_grad;
  auto last_pose = pose_head_[2]->as<torch::nn::LinearImpl>();
  last_pose->weight.mul_(0.1);
  last_pose->bias.copy_(torch::tensor({1.0, 0.0, 0.0, 0.0, 1.0, 0.0}).repeat({cfg_.body_joints}));
  auto last_shape = shape_head_[2]->as<torch::nn::LinearImpl>();
  last_shape->weight.mul_(0.1);
  last_shape->bias.zero_();
}

LiftingOutput LiftingNetImpl::forward(const torch::Tensor& occluded) {
  const auto& pc = prior_->config();
  check_shape(occluded, {-1, pc.frames, pc.joints, 2}, "lifting input");
  const auto batch = occluded.size(0);
  const int64_t d = pc.feature_dim();
  const auto prior_out = prior_->forward(occluded);
  auto x = (prior_out.st_features + spatial_pos_).reshape({batch * pc.frames, pc.joints, d});
  x = encoder_->forward(x).reshape({batch, pc.frames, pc.joints * d});
  if (cfg_.fuse_prior) {
    x = x + prior_out.temporal_features;
  }
  x = norm_(x);
  const auto map3d = pose_head_->forward(x).reshape({batch, pc.frames, cfg_.body_joints, 6});
  const auto beta = shape_head_->forward(x.mean(1));
  return {map3d, beta};
}

BodyOutput pose_map3d(const torch::Tensor& map3d, const torch::Tensor& beta, const BodyModel& body) {
  check_shape(map3d, {-1, -1, body.num_joints(), 6}, "pose_map3d map");
  check_shape(beta, {map3d.size(0), body.num_shape()}, "pose_map3d beta");
  const auto batch = map3d.size(0);
  const auto frames = map3d.size(1);
  const auto rot = rot6d_to_matrix(map3d).reshape({batch * frames, body.num_joints(), 3, 3});
  const auto b = beta.unsqueeze(1).expand({batch, frames, beta.size(1)}).reshape({batch * frames, beta.size(1)});
  const auto posed = body.forward(rot, b);
  const auto lsp = body.regress_joints_lsp(posed.vertices);
  return {posed.vertices.reshape({batch, frames, body.num_vertices(), 3}),
          lsp.reshape({batch, frames, kLspJoints, 3})};
}

MotionTargets make_motion_targets(const torch::Tensor& map3d, const torch::Tensor& beta, const BodyModel& body) {
  torch::NoGradGuard no_grad;
  const auto posed = pose_map3d(map3d, beta, body);
  return {map3d, beta, posed.vertices, posed.joints};
}

MotionLoss motion_loss(const LiftingOutput& out, const MotionTargets& gt, const BodyModel& body,
                       const MotionLossWeights& weights) {
  if (!gt.map3d.defined() || !gt.beta.defined() || !gt.vertices.defined() || !gt.joints.defined()) {
    throw InvalidArgument("motion_loss: ground truth is missing map3d, beta, vertices or joints");
  }
  if (!out.map3d.defined() || !out.beta.defined()) {
    throw InvalidArgument("motion_loss: prediction is missing map3d or beta");
  }
  if (out.map3d.sizes() != gt.map3d.sizes() || out.beta.sizes() != gt.beta.sizes()) {
    std::ostringstream os;
    os << "motion_loss: prediction " << out.map3d.sizes() << "/" << out.beta.sizes() << " vs ground truth "
       << gt.map3d.sizes() << "/" << gt.beta.sizes();
    throw InvalidArgument(os.str());
  }
  const auto posed = pose_map3d(out.map3d, out.beta, body);
  if (posed.vertices.sizes() != gt.vertices.sizes() || posed.joints.sizes() != gt.joints.sizes()) {
    throw InvalidArgument("motion_loss: ground-truth vertices/joints do not match the body model");
  }
  MotionLoss loss;
  loss.rec_map = torch::mse_loss(out.map3d, gt.map3d);
  loss.rec_vertices = torch::mse_loss(posed.vertices, gt.vertices);
  loss.rec_joints = torch::mse_loss(posed.joints, gt.joints);
  loss.shape = torch::mse_loss(out.beta, gt.beta) + out.beta.square().mean();
  const auto frames = out.map3d.size(1);
  if (frames > 1) {
    loss.smooth = (out.map3d.narrow(1, 1, frames - 1) - out.map3d.narrow(1, 0, frames - 1)).square().mean();
  } else {
    loss.smooth = torch::zeros({}, out.map3d.options());
  }
  loss.total = weights.map * loss.rec_map + weights.vertices * loss.rec_vertices + weights.joints * loss.rec_joints +
               weights.shape * loss.shape + weights.smooth * loss.smooth;
  return loss;
}

}  // namespace occmocap
