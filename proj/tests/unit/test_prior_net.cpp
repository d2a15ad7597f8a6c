#include <doctest.h>
#include <torch/torch.h>

#include <random>

#include "occmocap/errors.hpp"
#include "occmocap/prior_net.hpp"

using namespace occmocap;

namespace {

PriorConfig small_config() {
  PriorConfig cfg;
  cfg.frames = 8;
  cfg.joints = 14;
  cfg.st.branch_channels = 4;
  cfg.spatial = {1, 2, 2.0};
  cfg.temporal = {1, 2, 2.0};
  return cfg;
}

torch::Tensor random_mask(std::mt19937_64& rng, int64_t b, int64_t f, int64_t k, double p) {
  std::bernoulli_distribution bern(p);
  auto m = torch::zeros({b, f, k}, torch::kBool);
  auto acc = m.accessor<bool, 3>();
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < f; ++j)
      for (int64_t l = 0; l < k; ++l) acc[i][j][l] = bern(rng);
  return m;
}

}  // namespace

TEST_SUITE("prior_net") {
  TEST_CASE("ST layer keeps the grid and concatenates the branches") {
    torch::manual_seed(0);
    STLayer st(STLayerConfig{});
    const auto out = st->forward(torch::randn({2, 16, 14, 2}));
    CHECK((out.sizes() == torch::IntArrayRef({2, 16, 14, 48})));
  }

  TEST_CASE("ST layer without bias maps zero to zero") {
    torch::manual_seed(1);
    STLayer st(STLayerConfig{});
    torch::NoGradGuard no_grad;
    for (auto& p : st->named_parameters()) {
      if (p.key().find("bias") != std::string::npos) p.value().zero_();
    }
    CHECK(st->forward(torch::zeros({1, 16, 14, 2})).abs().max().item<double>() == 0.0);
  }

  TEST_CASE("each ST branch reaches exactly its dilated 3x3 neighbourhood") {
    torch::manual_seed(2);
    STLayerConfig cfg;
    cfg.branch_channels = 3;
    STLayer st(cfg);
    torch::NoGradGuard no_grad;
    const auto base = torch::randn({1, 16, 14, 2}, torch::kFloat64);
    st->to(torch::kFloat64);
    const int f0 = 8, k0 = 7;
    auto bumped = base.clone();
    bumped[0][f0][k0][0] += 1.0;
    const auto diff = (st->forward(bumped) - st->forward(base)).abs();
    for (size_t b = 0; b < cfg.dilations.size(); ++b) {
      const auto d = cfg.dilations[b];
      const auto changed = diff[0].narrow(-1, static_cast<int64_t>(b) * 3, 3).amax(-1) > 0.0;
      for (int f = 0; f < 16; ++f) {
        for (int k = 0; k < 14; ++k) {
          const int df = f - f0, dk = k - k0;
          const bool reach = (df == 0 || std::abs(df) == d) && (dk == 0 || std::abs(dk) == d);
          CHECK(changed[f][k].item<bool>() == reach);
        }
      }
    }
  }

  TEST_CASE("prior forward shapes") {
    torch::manual_seed(3);
    MotionPrior prior(small_config());
    const auto out = prior->forward(torch::randn({3, 8, 14, 2}));
    CHECK((out.map.sizes() == torch::IntArrayRef({3, 8, 14, 2})));
    CHECK((out.temporal_features.sizes() == torch::IntArrayRef({3, 8, 14 * 12})));
    CHECK((out.st_features.sizes() == torch::IntArrayRef({3, 8, 14, 12})));
    CHECK_THROWS_AS(prior->forward(torch::randn({3, 9, 14, 2})), InvalidArgument);
  }

  TEST_CASE("prior is permutation-equivariant over the batch and deterministic") {
    torch::manual_seed(4);
    MotionPrior prior(small_config());
    prior->eval();
    torch::NoGradGuard no_grad;
    const auto x = torch::randn({4, 8, 14, 2});
    const auto perm = torch::tensor({2, 0, 3, 1});
    const auto a = prior->forward(x).map;
    const auto b = prior->forward(x.index_select(0, perm)).map;
    CHECK(torch::allclose(a.index_select(0, perm), b, 1e-5, 1e-6));
    CHECK(torch::equal(a, prior->forward(x).map));

    torch::manual_seed(4);
    MotionPrior twin(small_config());
    twin->eval();
    CHECK(torch::equal(twin->forward(x).map, a));
  }

  TEST_CASE("occlusion token starts at zero and can be frozen") {
    auto cfg = small_config();
    MotionPrior learned(cfg);
    CHECK(learned->occlusion_token().requires_grad());
    CHECK(learned->occlusion_token().abs().sum().item<double>() == 0.0);
    cfg.learn_token = false;
    MotionPrior frozen(cfg);
    CHECK_FALSE(frozen->occlusion_token().requires_grad());
  }

  TEST_CASE("masked L1 on hand-computed examples") {
    auto pred = torch::zeros({1, 1, 3, 2}, torch::kFloat64);
    auto gt = torch::zeros({1, 1, 3, 2}, torch::kFloat64);
    pred[0][0][0][0] = 0.3;
    pred[0][0][0][1] = -0.4;
    pred[0][0][1][0] = 5.0;
    gt[0][0][2][1] = 1.0;
    auto mask = torch::zeros({1, 1, 3}, torch::kBool);
    mask[0][0][0] = true;
    CHECK(masked_l1_loss(pred, gt, mask).item<double>() == doctest::Approx(0.7));
    mask[0][0][2] = true;
    CHECK(masked_l1_loss(pred, gt, mask).item<double>() == doctest::Approx(0.85));
    CHECK(masked_l1_loss(pred, gt, torch::zeros({1, 1, 3}, torch::kBool)).item<double>() == 0.0);
    CHECK_THROWS_AS(masked_l1_loss(pred, gt, torch::zeros({1, 3}, torch::kBool)), InvalidArgument);
  }

  TEST_CASE("masked L1 gradient is exactly zero at unmasked pixels") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      const auto pred = torch::randn({2, 8, 14, 2}, torch::dtype(torch::kFloat64).requires_grad(true));
      const auto gt = torch::randn({2, 8, 14, 2}, torch::kFloat64);
      const auto mask = random_mask(rng, 2, 8, 14, 0.3);
      masked_l1_loss(pred, gt, mask).backward();
      const auto g = pred.grad().abs().sum(-1);
      CHECK(g.masked_select(mask.logical_not()).abs().max().item<double>() == 0.0);
      if (mask.any().item<bool>()) CHECK(g.masked_select(mask).min().item<double>() > 0.0);
    }
  }

  TEST_CASE("token gradient flows only through masked pixels") {
    torch::manual_seed(6);
    MotionPrior prior(small_config());
    const auto clean = torch::randn({2, 8, 14, 2});
    auto none = torch::zeros({2, 8, 14}, torch::kBool);
    auto out = prior->forward(prior->occlude(clean, none));
    out.map.sum().backward();
    const auto& tok = prior->occlusion_token();
    CHECK((!tok.grad().defined() || tok.grad().abs().sum().item<double>() == 0.0));

    prior->zero_grad();
    auto some = none.clone();
    some[0][3][4] = true;
    out = prior->forward(prior->occlude(clean, some));
    masked_l1_loss(out.map, clean, some).backward();
    CHECK(tok.grad().abs().sum().item<double>() > 0.0);
  }

  TEST_CASE("invalid prior configurations raise ConfigError") {
    auto cfg = small_config();
    cfg.spatial.heads = 5;
    CHECK_THROWS_AS(MotionPrior{cfg}, ConfigError);
    cfg = small_config();
    cfg.st.dilations = {1, 0, 2};
    CHECK_THROWS_AS(MotionPrior{cfg}, ConfigError);
    cfg = small_config();
    cfg.frames = 0;
    CHECK_THROWS_AS(MotionPrior{cfg}, ConfigError);
  }
}
