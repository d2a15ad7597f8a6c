#pragma once

#include <Eigen/Core>
#include <vector>

namespace occmocap {

/// One row per point.
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// A per-frame sequence of point sets (F x M x 3).
using Sequence3 = std::vector<Points3>;
using Sequence2 = std::vector<Points2>;

}  // namespace occmocap
