#pragma once

#include <torch/nn.h>

namespace occmocap {

struct TransformerConfig {
  int64_t depth = 2;
  int64_t heads = 4;
  double mlp_ratio = 2.0;
};

/// Pre-norm encoder block: x + MHA(LN(x)), then x + MLP(LN(x)) with GELU.
class EncoderBlockImpl : public torch::nn::Module {
 public:
  EncoderBlockImpl(int64_t dim, int64_t heads, double mlp_ratio);

  /// x: [B, T, dim] -> [B, T, dim]
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int64_t dim_;
  int64_t heads_;
  torch::nn::LayerNorm norm1_{nullptr};
  torch::nn::Linear qkv_{nullptr};
  torch::nn::Linear proj_{nullptr};
  torch::nn::LayerNorm norm2_{nullptr};
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(EncoderBlock);

class TransformerEncoderImpl : public torch::nn::Module {
 public:
  TransformerEncoderImpl(int64_t dim, const TransformerConfig& cfg);
  torch::Tensor forward(torch::Tensor x);

 private:
  torch::nn::ModuleList blocks_;
};
TORCH_MODULE(TransformerEncoder);

}  // namespace occmocap
