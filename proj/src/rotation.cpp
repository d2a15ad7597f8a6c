#include "occmocap/rotation.hpp"

#include <torch/torch.h>

#include <Eigen/Geometry>

#include "occmocap/errors.hpp"

namespace occmocap {

Eigen::Matrix3d rot6d_to_matrix(const Rot6d& v) {
  const Eigen::Vector3d a1 = v.head<3>();
  const Eigen::Vector3d a2 = v.tail<3>();
  const double n1 = a1.norm();
  if (!(n1 > 1e-12)) {
    throw InvalidArgument("rot6d_to_matrix: first column is zero");
  }
  const Eigen::Vector3d b1 = a1 / n1;
  const Eigen::Vector3d u2 = a2 - b1.dot(a2) * b1;
  const double n2 = u2.norm();
  if (!(n2 > 1e-9 * std::max(1.0, a2.norm()))) {
    throw InvalidArgument("rot6d_to_matrix: columns are parallel or second column is zero");
  }
  const Eigen::Vector3d b2 = u2 / n2;
  Eigen::Matrix3d r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = b1.cross(b2);
  return r;
}

Rot6d matrix_to_rot6d(const Eigen::Matrix3d& r) {
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho <= kOrthonormalTolerance) || std::abs(r.determinant() - 1.0) > kOrthonormalTolerance) {
    throw InvalidArgument("matrix_to_rot6d: input is not a rotation matrix");
  }
  Rot6d v;
  v << r.col(0), r.col(1);
  return v;
}

torch::Tensor rot6d_to_matrix(const torch::Tensor& v) {
  TORCH_CHECK(v.dim() >= 1 && v.size(-1) == 6, "rot6d_to_matrix: expected [..., 6], got ", v.sizes());
  const auto a1 = v.narrow(-1, 0, 3);
  const auto a2 = v.narrow(-1, 3, 3);
  const auto b1 = a1 / a1.norm(2, -1, true).clamp_min(kGramSchmidtEpsilon);
  const auto u2 = a2 - (b1 * a2).sum(-1, true) * b1;
  const auto b2 = u2 / u2.norm(2, -1, true).clamp_min(kGramSchmidtEpsilon);
  const auto b3 = torch::linalg_cross(b1, b2, -1);
  return torch::stack({b1, b2, b3}, -1);
}

torch::Tensor matrix_to_rot6d(const torch::Tensor& r) {
  TORCH_CHECK(r.dim() >= 2 && r.size(-1) == 3 && r.size(-2) == 3, "matrix_to_rot6d: expected [..., 3, 3], got ",
              r.sizes());
  return torch::cat({r.select(-1, 0), r.select(-1, 1)}, -1);
}

torch::Tensor axis_angle_to_matrix(const torch::Tensor& axis_angle) {
  TORCH_CHECK(axis_angle.size(-1) == 3, "axis_angle_to_matrix: expected [..., 3]");
  const auto angle = axis_angle.norm(2, -1, true).unsqueeze(-1);  // [..., 1, 1]
  const auto zero = torch::zeros_like(axis_angle.select(-1, 0));
  const auto x = axis_angle.select(-1, 0);
  const auto y = axis_angle.select(-1, 1);
  const auto z = axis_angle.select(-1, 2);
  // Skew matrix of the (unnormalized) axis.
  auto skew = torch::stack({zero, -z, y, z, zero, -x, -y, x, zero}, -1);
  auto shape = axis_angle.sizes().vec();
  shape.back() = 3;
  shape.push_back(3);
  skew = skew.reshape(shape);
  const auto safe = torch::where(angle > 1e-12, angle, torch::ones_like(angle));
  // sin(t)/t and (1-cos(t))/t^2, with Taylor limits at t -> 0.
  const auto c1 = torch::where(angle > 1e-6, torch::sin(safe) / safe, 1.0 - angle * angle / 6.0);
  const auto c2 = torch::where(angle > 1e-6, (1.0 - torch::cos(safe)) / (safe * safe), 0.5 - angle * angle / 24.0);
  const auto eye = torch::eye(3, axis_angle.options()).expand(shape);
  return eye + c1 * skew + c2 * torch::matmul(skew, skew);
}

}  // namespace occmocap
