#include <doctest.h>
#include <torch/torch.h>

#include <filesystem>
#include <random>

#include "../support/oracles.hpp"
#include "occmocap/archive.hpp"
#include "occmocap/body_model.hpp"
#include "occmocap/errors.hpp"
#include "occmocap/rotation.hpp"

using namespace occmocap;

namespace {

torch::Tensor random_pose(std::mt19937_64& rng, int64_t joints, double max_angle = 1.2) {
  std::vector<torch::Tensor> r;
  for (int64_t j = 0; j < joints; ++j) r.push_back(oracle::to_tensor(oracle::random_rotation(rng, max_angle)));
  return torch::stack(r);
}

torch::Tensor random_beta(std::mt19937_64& rng, int64_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  auto b = torch::zeros({n}, torch::kFloat64);
  for (int64_t i = 0; i < n; ++i) b[i] = g(rng);
  return b;
}

}  // namespace

TEST_SUITE("body_model") {
  TEST_CASE("procedural model satisfies the structural invariants") {
    const auto body = BodyModel::procedural();
    const auto& d = body.data();
    CHECK(body.num_joints() == 24);
    CHECK(body.num_shape() == 10);
    CHECK(body.num_vertices() == 120);
    CHECK((d.joint_regressor.sum(1) - 1.0).abs().max().item<double>() < 1e-6);
    CHECK((d.lsp_regressor.sum(1) - 1.0).abs().max().item<double>() < 1e-6);
    CHECK((d.skinning_weights.sum(1) - 1.0).abs().max().item<double>() < 1e-6);
    CHECK(d.joint_regressor.min().item<double>() >= 0.0);
    CHECK(d.skinning_weights.min().item<double>() >= 0.0);
    int roots = 0;
    for (size_t j = 0; j < d.parents.size(); ++j) {
      if (d.parents[j] < 0) ++roots;
      else CHECK(d.parents[j] < static_cast<int64_t>(j));
    }
    CHECK(roots == 1);
  }

  TEST_CASE("invalid model data is rejected") {
    auto d = BodyModel::procedural().data();
    auto bad = d;
    bad.joint_regressor = d.joint_regressor * 1.1;
    CHECK_THROWS_AS(BodyModel{bad}, InvalidArgument);
    bad = d;
    bad.parents[3] = 5;  // child before parent
    CHECK_THROWS_AS(BodyModel{bad}, InvalidArgument);
    bad = d;
    bad.parents[1] = -1;  // second root
    CHECK_THROWS_AS(BodyModel{bad}, InvalidArgument);
    bad = d;
    bad.skinning_weights = d.skinning_weights.narrow(1, 0, 23);
    CHECK_THROWS_AS(BodyModel{bad}, InvalidArgument);
  }

  TEST_CASE("identity pose with zero shape reproduces the rest configuration") {
    const auto body = BodyModel::procedural();
    const auto eye = torch::eye(3, torch::kFloat64).expand({24, 3, 3});
    const auto beta = torch::zeros({10}, torch::kFloat64);
    const auto out = body.forward(eye, beta);
    const auto rest = body.rest_joints(beta);
    CHECK((out.joints - rest[0]).abs().max().item<double>() < 1e-12);
    const auto& d = body.data();
    const auto root = torch::matmul(d.joint_regressor[0], d.template_vertices);
    CHECK((out.vertices - (d.template_vertices - root)).abs().max().item<double>() < 1e-12);
    CHECK(root.abs().max().item<double>() < 1e-12);
  }

  TEST_CASE("identity pose with beta = e1 adds the first shape direction") {
    const auto body = BodyModel::procedural();
    const auto eye = torch::eye(3, torch::kFloat64).expand({24, 3, 3});
    auto beta = torch::zeros({10}, torch::kFloat64);
    beta[0] = 1.0;
    const auto out = body.forward(eye, beta);
    const auto& d = body.data();
    const auto expected = d.template_vertices + d.shape_dirs.select(2, 0);
    CHECK((out.vertices - expected).abs().max().item<double>() < 1e-12);
  }

  TEST_CASE("90 degree root rotation about z rotates the rest configuration") {
    const auto body = BodyModel::procedural();
    auto pose = torch::eye(3, torch::kFloat64).repeat({24, 1, 1});
    Eigen::Matrix3d rz;
    rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    pose[0] = oracle::to_tensor(rz);
    const auto beta = torch::zeros({10}, torch::kFloat64);
    const auto rest = body.forward(torch::eye(3, torch::kFloat64).expand({24, 3, 3}), beta);
    const auto out = body.forward(pose, beta);
    const auto r = oracle::to_tensor(rz);
    CHECK((out.joints - torch::matmul(rest.joints, r.t())).abs().max().item<double>() < 1e-12);
    CHECK((out.vertices - torch::matmul(rest.vertices, r.t())).abs().max().item<double>() < 1e-12);
  }

  TEST_CASE("forward matches the per-vertex skinning oracle") {
    const auto body = BodyModel::procedural();
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 5; ++trial) {
      const auto pose = random_pose(rng, 24);
      const auto beta = random_beta(rng, 10);
      std::vector<Eigen::Matrix3d> rots;
      for (int j = 0; j < 24; ++j) rots.push_back(oracle::to_matrix3(pose[j]));
      Eigen::VectorXd b(10);
      for (int i = 0; i < 10; ++i) b[i] = beta[i].item<double>();
      const auto expected = oracle::body_forward(body.data(), rots, b);
      const auto out = body.forward(pose, beta);
      CHECK((oracle::to_matrix(out.vertices) - expected.vertices).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((oracle::to_matrix(out.joints) - expected.joints).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((oracle::to_matrix(body.regress_joints_lsp(out.vertices)) - expected.lsp).cwiseAbs().maxCoeff() <
            1e-12);
    }
  }

  TEST_CASE("rigid equivariance at the root") {
    const auto body = BodyModel::procedural();
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
      auto pose = random_pose(rng, 24);
      const auto beta = random_beta(rng, 10);
      const auto r0 = oracle::to_tensor(oracle::random_rotation(rng));
      const auto base = body.forward(pose, beta);
      auto rotated_pose = pose.clone();
      rotated_pose[0] = torch::matmul(r0, pose[0]);
      const auto rotated = body.forward(rotated_pose, beta);
      CHECK((rotated.joints - torch::matmul(base.joints, r0.t())).abs().max().item<double>() < 1e-9);
      CHECK((rotated.vertices - torch::matmul(base.vertices, r0.t())).abs().max().item<double>() < 1e-9);
    }
  }

  TEST_CASE("bone lengths do not depend on the pose") {
    const auto body = BodyModel::procedural();
    std::mt19937_64 rng(29);
    const auto beta = random_beta(rng, 10);
    const auto rest = body.rest_joints(beta)[0];
    const auto& parents = body.data().parents;
    const auto out = body.forward(random_pose(rng, 24, 3.1), beta);
    for (size_t j = 1; j < parents.size(); ++j) {
      const auto p = parents[j];
      const double a = (rest[j] - rest[p]).norm().item<double>();
      const double b = (out.joints[j] - out.joints[p]).norm().item<double>();
      CHECK(std::abs(a - b) < 1e-12);
    }
  }

  TEST_CASE("regress_joints_lsp is the weighted vertex sum") {
    const auto body = BodyModel::procedural();
    CHECK(body.regress_joints_lsp(torch::zeros({120, 3}, torch::kFloat64)).abs().max().item<double>() == 0.0);
    torch::manual_seed(1);
    const auto v = torch::randn({120, 3}, torch::kFloat64);
    const auto out = body.regress_joints_lsp(v);
    const auto t = torch::tensor({0.3, -1.2, 2.5}, torch::kFloat64);
    CHECK((body.regress_joints_lsp(v + t) - (out + t)).abs().max().item<double>() < 1e-12);
    const Eigen::MatrixXd reg = oracle::to_matrix(body.data().lsp_regressor);
    const Eigen::MatrixXd vv = oracle::to_matrix(v);
    for (int j = 0; j < 14; ++j) {
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int i = 0; i < 120; ++i) s += reg(j, i) * vv(i, c);
        CHECK(std::abs(out[j][c].item<double>() - s) < 1e-12);
      }
    }
    CHECK_THROWS_AS(body.regress_joints_lsp(torch::zeros({119, 3})), InvalidArgument);
  }

  TEST_CASE("joint gradients match central differences") {
    const auto body = BodyModel::procedural();
    std::mt19937_64 rng(31);
    const double h = 1e-4;
    for (int trial = 0; trial < 3; ++trial) {
      const auto pose6 = matrix_to_rot6d(random_pose(rng, 24)).clone().requires_grad_(true);
      const auto beta = random_beta(rng, 10).requires_grad_(true);
      torch::manual_seed(trial);
      const auto probe = torch::randn({24, 3}, torch::kFloat64);
      auto f = [&](const torch::Tensor& p6, const torch::Tensor& b) {
        return (body.forward(rot6d_to_matrix(p6), b).joints * probe).sum();
      };
      f(pose6, beta).backward();
      const auto g6 = pose6.grad().clone();
      const auto gb = beta.grad().clone();
      torch::NoGradGuard no_grad;
      for (int k = 0; k < 10; ++k) {
        auto plus = beta.detach().clone(), minus = beta.detach().clone();
        plus[k] += h;
        minus[k] -= h;
        const double fd = (f(pose6.detach(), plus) - f(pose6.detach(), minus)).item<double>() / (2 * h);
        CHECK(std::abs(fd - gb[k].item<double>()) <= 1e-3 * std::max(1.0, std::abs(fd)));
      }
      for (int j = 0; j < 24; j += 5) {
        for (int k = 0; k < 6; ++k) {
          auto plus = pose6.detach().clone(), minus = pose6.detach().clone();
          plus[j][k] += h;
          minus[j][k] -= h;
          const double fd = (f(plus, beta.detach()) - f(minus, beta.detach())).item<double>() / (2 * h);
          CHECK(std::abs(fd - g6[j][k].item<double>()) <= 1e-3 * std::max(1.0, std::abs(fd)));
        }
      }
    }
  }

  TEST_CASE("invalid inputs throw") {
    const auto body = BodyModel::procedural();
    const auto beta = torch::zeros({10}, torch::kFloat64);
    auto pose = torch::eye(3, torch::kFloat64).repeat({24, 1, 1});
    pose[4] *= 1.5;
    CHECK_THROWS_AS(body.forward(pose, beta), InvalidArgument);
    auto reflect = torch::eye(3, torch::kFloat64).repeat({24, 1, 1});
    reflect[2][2][2] = -1.0;
    CHECK_THROWS_AS(body.forward(reflect, beta), InvalidArgument);
    CHECK_THROWS_AS(body.forward(torch::eye(3, torch::kFloat64).expand({23, 3, 3}), beta), InvalidArgument);
    CHECK_THROWS_AS(body.forward(torch::eye(3, torch::kFloat64).expand({24, 3, 3}), torch::zeros({9})),
                    InvalidArgument);
  }

  TEST_CASE("batched and float32 inputs") {
    const auto body = BodyModel::procedural();
    std::mt19937_64 rng(37);
    const auto pose = torch::stack({random_pose(rng, 24), random_pose(rng, 24)});
    const auto beta = torch::stack({random_beta(rng, 10), random_beta(rng, 10)});
    const auto out = body.forward(pose, beta);
    CHECK((out.vertices.sizes() == torch::IntArrayRef({2, 120, 3})));
    const auto single = body.forward(pose[1], beta[1]);
    CHECK((out.vertices[1] - single.vertices).abs().max().item<double>() < 1e-12);
    const auto f32 = body.forward(pose.to(torch::kFloat32), beta.to(torch::kFloat32));
    CHECK((f32.vertices.scalar_type() == torch::kFloat32));
    CHECK((f32.vertices.to(torch::kFloat64) - out.vertices).abs().max().item<double>() < 1e-4);
  }

  TEST_CASE("parameter archive round-trip") {
    const auto body = BodyModel::procedural();
    const auto path = std::filesystem::temp_directory_path() / "occmocap_body_roundtrip.ocm";
    body.save(path);
    const auto loaded = BodyModel::load(path);
    CHECK(torch::equal(loaded.data().template_vertices, body.data().template_vertices));
    CHECK(torch::equal(loaded.data().shape_dirs, body.data().shape_dirs));
    CHECK(loaded.data().parents == body.data().parents);
    ArrayArchive a = ArrayArchive::load(path);
    CHECK(a.contains("v_template"));
    CHECK(a.contains("J_regressor"));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(BodyModel::load(path), DataError);
  }
}
