#pragma once

#include <Eigen/Core>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "occmocap/body_model.hpp"
#include "occmocap/geometry.hpp"

namespace occmocap {

// All metrics take meters and report millimeters (accel: mm / frame^2).
// Sequences are F x M x 3. Shape mismatches throw InvalidArgument.

/// Root-aligned mean per-joint position error. The root of each frame is the
/// mean of `root_joints` (LSP: the two hips).
double mpjpe(const Sequence3& pred, const Sequence3& gt, std::span<const int> root_joints = kLspHips);

/// s * R * p + t with R a proper rotation.
struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Points3 apply(const Points3& points) const;
};

/// Least-squares similarity aligning `source` onto `target` (SVD of the
/// cross-covariance, reflection-corrected). Throws InvalidArgument when the
/// target points are collinear or fewer than three.
SimilarityTransform procrustes_align(const Points3& source, const Points3& target);

/// Mean per-joint error after per-frame similarity Procrustes alignment.
double pa_mpjpe(const Sequence3& pred, const Sequence3& gt);

/// Mean per-vertex error after aligning each mesh by its root position
/// (F x 3 rows, one root per frame).
double pve(const Sequence3& pred_vertices, const Sequence3& gt_vertices, const Points3& pred_roots,
           const Points3& gt_roots);
/// Same, aligning by the vertex centroid.
double pve(const Sequence3& pred_vertices, const Sequence3& gt_vertices);

/// Mean norm of the second-difference mismatch. Throws InvalidArgument for
/// fewer than three frames.
double accel_error(const Sequence3& pred, const Sequence3& gt);

/// Metric name -> value, per sequence plus an aggregate.
struct EvaluationReport {
  std::vector<std::string> sequence_names;
  std::vector<std::map<std::string, double>> per_sequence;
  std::map<std::string, double> aggregate;  ///< means over sequences

  void add(const std::string& name, std::map<std::string, double> metrics);
  void finalize();
  /// JSON text.
  std::string to_json(const std::string& config_echo = {}) const;
};

}  // namespace occmocap
