#pragma once

#include <torch/types.h>

#include <Eigen/Core>

namespace occmocap {

/// Two stacked rotation-matrix columns: (R[:,0], R[:,1]).
using Rot6d = Eigen::Matrix<double, 6, 1>;

/// Added to norms in the batched Gram-Schmidt so near-degenerate training
/// iterates stay finite.
inline constexpr double kGramSchmidtEpsilon = 1e-8;

/// Orthonormality tolerance accepted by matrix_to_rot6d.
inline constexpr double kOrthonormalTolerance = 1e-5;

/// Decodes a 6D vector with exact Gram-Schmidt. Throws InvalidArgument when
/// either half is (near) zero or the halves are (near) parallel.
Eigen::Matrix3d rot6d_to_matrix(const Rot6d& v);

/// First two columns of `r`. Throws InvalidArgument if `r` is not a proper
/// rotation within kOrthonormalTolerance.
Rot6d matrix_to_rot6d(const Eigen::Matrix3d& r);

/// Batched, differentiable decode: [..., 6] -> [..., 3, 3]. Norms are
/// floored at kGramSchmidtEpsilon instead of throwing.
torch::Tensor rot6d_to_matrix(const torch::Tensor& v);

/// Batched encode: [..., 3, 3] -> [..., 6].
torch::Tensor matrix_to_rot6d(const torch::Tensor& r);

/// Rodrigues map for axis-angle vectors, [..., 3] -> [..., 3, 3].
torch::Tensor axis_angle_to_matrix(const torch::Tensor& axis_angle);

}  // namespace occmocap
