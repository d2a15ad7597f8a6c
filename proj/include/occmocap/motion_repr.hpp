#pragma once

#include <torch/types.h>

#include <Eigen/Core>
#include <span>

#include "occmocap/geometry.hpp"

namespace occmocap {

// Motion maps are plain tensors with these layouts:
//   2D map        [F, K, 2]   (batched: [B, F, K, 2]) normalized image units
//   occlusion mask [F, K]     bool, true = occluded
//   occlusion token [2]       shared by every joint and frame
//   3D map        [F, N, 6]   6D rotation per body joint

/// Square crop used to normalize 2D joints.
struct Bbox {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double scale = 1.0;  ///< max(width, height) in pixels, > 0
};

/// Smallest axis-aligned box around `pixels`, grown by `padding` (0.2 = 20%).
Bbox bbox_from_points(const Points2& pixels, double padding = 0.2);

/// (joints - center) / scale. Throws InvalidArgument if scale <= 0.
Points2 normalize_pose2d(const Points2& joints, const Bbox& bbox);
Points2 denormalize_pose2d(const Points2& normalized, const Bbox& bbox);

/// Returns a copy of `map` with masked pixels replaced by `token`. Works on
/// batched maps as long as `mask` broadcasts to map.shape[:-1]. Gradients
/// flow into `token` and into the unmasked part of `map`.
torch::Tensor apply_occlusion_token(const torch::Tensor& map, const torch::Tensor& mask,
                                    const torch::Tensor& token);

/// Throws InvalidArgument unless `t` has exactly `sizes` (use -1 as wildcard).
void check_shape(const torch::Tensor& t, std::span<const int64_t> sizes, const char* what);
inline void check_shape(const torch::Tensor& t, std::initializer_list<int64_t> sizes, const char* what) {
  check_shape(t, std::span<const int64_t>(sizes.begin(), sizes.size()), what);
}

/// Conversions between [M, C] tensors and Eigen row-major point sets.
Points2 to_points2(const torch::Tensor& t);
Points3 to_points3(const torch::Tensor& t);
Sequence3 to_sequence3(const torch::Tensor& t);  ///< [F, M, 3]
torch::Tensor from_points(const Eigen::MatrixXd& points);

}  // namespace occmocap
