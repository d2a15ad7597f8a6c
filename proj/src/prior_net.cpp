#include "occmocap/prior_net.hpp"

#include <torch/torch.h>

#include <sstream>

#include "occmocap/errors.hpp"
#include "occmocap/motion_repr.hpp"

namespace occmocap {

void PriorConfig::validate() const {
  if (frames <= 0 || joints <= 0 || st.branch_channels <= 0) {
    throw ConfigError("prior: frames, joints and branch_channels must be positive");
  }
  for (const auto d : st.dilations) {
    if (d <= 0) {
      throw ConfigError("prior: dilations must be positive");
    }
  }
  const int64_t d = feature_dim();
  if (spatial.heads <= 0 || d % spatial.heads != 0) {
    throw ConfigError("prior: spatial heads must divide the feature dim " + std::to_string(d));
  }
  if (temporal.heads <= 0 || (joints * d) % temporal.heads != 0) {
    throw ConfigError("prior: temporal heads must divide K*D = " + std::to_string(joints * d));
  }
}

STLayerImpl::STLayerImpl(const STLayerConfig& cfg) : cfg_(cfg) {
  branches_ = register_module("branches", torch::nn::ModuleList());
  for (const auto dilation : cfg.dilations) {
    branches_->push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(2, cfg.branch_channels, 3).dilation(dilation).padding(dilation)));
  }
}

torch::Tensor STLayerImpl::forward(const torch::Tensor& map) {
  check_shape(map, {-1, -1, -1, 2}, "st_layer");
  const auto x = map.permute({0, 3, 1, 2});  // [B, 2, F, K]
  std::vector<torch::Tensor> outs;
  outs.reserve(branches_->size());
  for (const auto& branch : *branches_) {
    outs.push_back(branch->as<torch::nn::Conv2dImpl>()->forward(x));
  }
  return torch::cat(outs, 1).permute({0, 2, 3, 1});  // [B, F, K, D]
}

MotionPriorImpl::MotionPriorImpl(const PriorConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int64_t d = cfg_.feature_dim();
  st_ = register_module("st_layer", STLayer(cfg_.st));
  spatial_pos_ = register_parameter("spatial_pos", torch::randn({cfg_.joints, d}) * 0.02);
  spatial_ = register_module("spatial", TransformerEncoder(d, cfg_.spatial));
  temporal_pos_ = register_parameter("temporal_pos", torch::randn({cfg_.frames, cfg_.joints * d}) * 0.02);
  temporal_ = register_module("temporal", TransformerEncoder(cfg_.joints * d, cfg_.temporal));
  head_norm_ = register_module("head_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.joints * d})));
  head_ = register_module("head", torch::nn::Linear(cfg_.joints * d, cfg_.joints * 2));
  token_ = register_parameter("occlusion_token", torch::zeros({2}), cfg_.learn_token);
}

torch::Tensor MotionPriorImpl::occlude(const torch::Tensor& map, const torch::Tensor& mask) const {
  return apply_occlusion_token(map, mask, token_);
}

PriorOutput MotionPriorImpl::forward(const torch::Tensor& occluded) {
  check_shape(occluded, {-1, cfg_.frames, cfg_.joints, 2}, "motion prior input");
  const auto batch = occluded.size(0);
  const int64_t d = cfg_.feature_dim();
  const auto f = st_->forward(occluded);  // [B, F, K, D]
  auto x = (f + spatial_pos_).reshape({batch * cfg_.frames, cfg_.joints, d});
  x = spatial_->forward(x);
  x = x.reshape({batch, cfg_.frames, cfg_.joints * d}) + temporal_pos_;
  const auto features = temporal_->forward(x);
  const auto map = head_(head_norm_(features)).reshape({batch, cfg_.frames, cfg_.joints, 2});
  return {map, features, f};
}

torch::Tensor masked_l1_loss(const torch::Tensor& pred, const torch::Tensor& gt, const torch::Tensor& mask) {
  if (pred.sizes() != gt.sizes() || pred.dim() < 2 || pred.size(-1) != 2 ||
      mask.sizes() != pred.sizes().slice(0, pred.dim() - 1)) {
    std::ostringstream os;
    os << "masked_l1_loss: shape mismatch pred " << pred.sizes() << ", gt " << gt.sizes() << ", mask "
       << mask.sizes();
    throw InvalidArgument(os.str());
  }
  const auto m = mask.to(pred.dtype());
  const auto per_joint = (pred - gt).abs().sum(-1);
  return (per_joint * m).sum() / m.sum().clamp_min(1.0);
}

}  // namespace occmocap
