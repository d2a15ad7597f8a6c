#pragma once

#include <Eigen/Core>
#include <vector>

#include "occmocap/geometry.hpp"

namespace occmocap {

struct CameraIntrinsics {
  Eigen::Vector2d focal{1000.0, 1000.0};            ///< pixels, > 0
  Eigen::Vector2d principal_point{500.0, 500.0};  ///< pixels

  void validate() const;  ///< throws InvalidArgument for non-positive focal
};

/// Pinhole projection: u = fx x / z + cx, v = fy y / z + cy. Throws
/// InvalidArgument when any depth is not positive.
Points2 project(const CameraIntrinsics& camera, const Points3& points);

struct TranslationFitOptions {
  double smoothness_weight = 100.0;  ///< pixels per meter
  int max_iterations = 50;
  double step_tolerance = 1e-6;  ///< meters
  int max_backtracks = 10;
  int min_joints_for_init = 2;
};

struct TranslationFit {
  std::vector<Eigen::Vector3d> translations;  ///< one per frame, camera frame
  double objective = 0.0;
  /// Objective of the initialization followed by every accepted iterate.
  std::vector<double> objective_history;
  int iterations = 0;
  bool converged = false;
};

/// Per-frame model translations minimizing
///
///   sum_t sum_j w_tj |project(J_tj + T_t) - P_tj|^2
///     + lambda^2 sum_t |T_{t+1} - T_t|^2
///
/// by Gauss-Newton with halving line search. Each frame starts from a
/// weak-perspective estimate (z = f * size3d / size2d). Frames without
/// enough confident joints borrow the nearest initialized frame.
///
/// joints: F x J x 3 (model frame, meters); detections: F x J x 2 pixels;
/// confidences: F vectors of J weights >= 0. Throws InvalidArgument for
/// inconsistent shapes and NumericalError when every confidence is zero or
/// no frame has enough confident joints. A run that hits max_iterations
/// returns the best iterate with converged = false.
TranslationFit solve_translation(const Sequence3& joints, const Sequence2& detections,
                                 const std::vector<Eigen::VectorXd>& confidences, const CameraIntrinsics& camera,
                                 const TranslationFitOptions& options = {});

/// The objective above; +inf if any point ends up at non-positive depth.
double translation_objective(const Sequence3& joints, const Sequence2& detections,
                             const std::vector<Eigen::VectorXd>& confidences, const CameraIntrinsics& camera,
                             const std::vector<Eigen::Vector3d>& translations, double smoothness_weight);

}  // namespace occmocap
