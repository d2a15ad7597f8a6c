#include "occmocap/transformer.hpp"

#include <torch/torch.h>

#include <cmath>

#include "occmocap/errors.hpp"

namespace occmocap {

EncoderBlockImpl::EncoderBlockImpl(int64_t dim, int64_t heads, double mlp_ratio) : dim_(dim), heads_(heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("transformer: dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const auto hidden = static_cast<int64_t>(std::lround(static_cast<double>(dim) * mlp_ratio));
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor EncoderBlockImpl::forward(const torch::Tensor& x) {
  const auto batch = x.size(0);
  const auto tokens = x.size(1);
  const auto head_dim = dim_ / heads_;
  // [B, T, 3, H, Dh] -> [3, B, H, T, Dh]
  const auto qkv = qkv_(norm1_(x)).reshape({batch, tokens, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  const auto q = qkv[0];
  const auto k = qkv[1];
  const auto v = qkv[2];
  const auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim)), -1);
  const auto mixed = torch::matmul(attn, v).transpose(1, 2).reshape({batch, tokens, dim_});
  auto y = x + proj_(mixed);
  return y + fc2_(torch::gelu(fc1_(norm2_(y))));
}

TransformerEncoderImpl::TransformerEncoderImpl(int64_t dim, const TransformerConfig& cfg) {
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < cfg.depth; ++i) {
    blocks_->push_back(EncoderBlock(dim, cfg.heads, cfg.mlp_ratio));
  }
}

torch::Tensor TransformerEncoderImpl::forward(torch::Tensor x) {
  for (const auto& block : *blocks_) {
    x = block->as<EncoderBlockImpl>()->forward(x);
  }
  return x;
}

}  // namespace occmocap
