#include "occmocap/global_fit.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <limits>

#include "occmocap/errors.hpp"

namespace occmocap {

void CameraIntrinsics::validate() const {
  if (!(focal.x() > 0.0) || !(focal.y() > 0.0)) {
    throw InvalidArgument("camera intrinsics: focal lengths must be positive");
  }
}

Points2 project(const CameraIntrinsics& camera, const Points3& points) {
  camera.validate();
  Points2 out(points.rows(), 2);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const double z = points(i, 2);
    if (!(z > 0.0)) {
      throw InvalidArgument("project: point " + std::to_string(i) + " has non-positive depth");
    }
    out(i, 0) = camera.focal.x() * points(i, 0) / z + camera.principal_point.x();
    out(i, 1) = camera.focal.y() * points(i, 1) / z + camera.principal_point.y();
  }
  return out;
}

namespace {

void check_inputs(const Sequence3& joints, const Sequence2& detections, const std::vector<Eigen::VectorXd>& conf) {
  if (joints.empty() || joints.size() != detections.size() || joints.size() != conf.size()) {
    throw InvalidArgument("solve_translation: joints, detections and confidences need the same non-zero frame count");
  }
  for (size_t t = 0; t < joints.size(); ++t) {
    if (joints[t].rows() != detections[t].rows() || joints[t].rows() != conf[t].size()) {
      throw InvalidArgument("solve_translation: joint count mismatch at frame " + std::to_string(t));
    }
    if ((conf[t].array() < 0.0).any()) {
      throw InvalidArgument("solve_translation: negative confidence at frame " + std::to_string(t));
    }
  }
}

// Weak-perspective guess for one frame; false if too few confident joints.
bool initial_translation(const Points3& joints, const Points2& pixels, const Eigen::VectorXd& w,
                         const CameraIntrinsics& camera, int min_joints, Eigen::Vector3d& out) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    if (w[j] > 0.0) idx.push_back(j);
  }
  if (static_cast<int>(idx.size()) < min_joints) {
    return false;
  }
  Eigen::Vector3d c3 = Eigen::Vector3d::Zero();
  Eigen::Vector2d c2 = Eigen::Vector2d::Zero();
  for (auto j : idx) {
    c3 += joints.row(j).transpose();
    c2 += pixels.row(j).transpose();
  }
  c3 /= static_cast<double>(idx.size());
  c2 /= static_cast<double>(idx.size());
  double s3 = 0.0;
  double s2 = 0.0;
  for (auto j : idx) {
    s3 += (joints.row(j).head<2>().transpose() - c3.head<2>()).squaredNorm();
    s2 += (pixels.row(j).transpose() - c2).squaredNorm();
  }
  if (!(s2 > 0.0) || !(s3 > 0.0)) {
    return false;
  }
  const double f = 0.5 * (camera.focal.x() + camera.focal.y());
  const double z = f * std::sqrt(s3 / s2);
  out.z() = z - c3.z();
  out.x() = (c2.x() - camera.principal_point.x()) * z / camera.focal.x() - c3.x();
  out.y() = (c2.y() - camera.principal_point.y()) * z / camera.focal.y() - c3.y();
  return true;
}

}  // namespace

double translation_objective(const Sequence3& joints, const Sequence2& detections,
                             const std::vector<Eigen::VectorXd>& confidences, const CameraIntrinsics& camera,
                             const std::vector<Eigen::Vector3d>& translations, double smoothness_weight) {
  double total = 0.0;
  for (size_t t = 0; t < joints.size(); ++t) {
    for (Eigen::Index j = 0; j < joints[t].rows(); ++j) {
      const Eigen::Vector3d x = joints[t].row(j).transpose() + translations[t];
      if (!(x.z() > 0.0)) {
        return std::numeric_limits<double>::infinity();
      }
      const double w = confidences[t][j];
      if (w == 0.0) continue;
      const double u = camera.focal.x() * x.x() / x.z() + camera.principal_point.x() - detections[t](j, 0);
      const double v = camera.focal.y() * x.y() / x.z() + camera.principal_point.y() - detections[t](j, 1);
      total += w * (u * u + v * v);
    }
  }
  const double l2 = smoothness_weight * smoothness_weight;
  for (size_t t = 0; t + 1 < translations.size(); ++t) {
    total += l2 * (translations[t + 1] - translations[t]).squaredNorm();
  }
  return total;
}

TranslationFit solve_translation(const Sequence3& joints, const Sequence2& detections,
                                 const std::vector<Eigen::VectorXd>& confidences, const CameraIntrinsics& camera,
                                 const TranslationFitOptions& options) {
  camera.validate();
  check_inputs(joints, detections, confidences);
  const auto frames = static_cast<Eigen::Index>(joints.size());

  bool any_weight = false;
  for (const auto& w : confidences) {
    any_weight = any_weight || (w.array() > 0.0).any();
  }
  if (!any_weight) {
    throw NumericalError("solve_translation: all confidences are zero");
  }

  // Initialization, filling frames without enough joints from the nearest
  // initialized frame.
  std::vector<Eigen::Vector3d> init(static_cast<size_t>(frames));
  std::vector<bool> have(static_cast<size_t>(frames), false);
  for (Eigen::Index t = 0; t < frames; ++t) {
    have[t] = initial_translation(joints[t], detections[t], confidences[t], camera, options.min_joints_for_init, init[t]);
  }
  if (std::none_of(have.begin(), have.end(), [](bool b) { return b; })) {
    throw NumericalError("solve_translation: no frame has enough confident joints to initialize");
  }
  for (Eigen::Index t = 0; t < frames; ++t) {
    if (have[t]) continue;
    for (Eigen::Index d = 1; d < frames; ++d) {
      if (t - d >= 0 && have[t - d]) {
        init[t] = init[t - d];
        break;
      }
      if (t + d < frames && have[t + d]) {
        init[t] = init[t + d];
        break;
      }
    }
  }

  TranslationFit fit;
  fit.translations = init;
  const double lambda = options.smoothness_weight;
  auto objective = [&](const std::vector<Eigen::Vector3d>& tr) {
    return translation_objective(joints, detections, confidences, camera, tr, lambda);
  };
  fit.objective = objective(fit.translations);
  if (!std::isfinite(fit.objective)) {
    throw NumericalError("solve_translation: initialization places joints behind the camera");
  }
  fit.objective_history.push_back(fit.objective);

  const Eigen::Index n = 3 * frames;
  for (int it = 0; it < options.max_iterations; ++it) {
    fit.iterations = it + 1;
    // Normal equations H dx = -g of the stacked residual system.
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
    for (Eigen::Index t = 0; t < frames; ++t) {
      Eigen::Matrix3d block = Eigen::Matrix3d::Zero();
      for (Eigen::Index j = 0; j < joints[t].rows(); ++j) {
        const double w = confidences[t][j];
        if (w == 0.0) continue;
        const Eigen::Vector3d x = joints[t].row(j).transpose() + fit.translations[t];
        const double iz = 1.0 / x.z();
        Eigen::Matrix<double, 2, 3> jac;
        jac << camera.focal.x() * iz, 0.0, -camera.focal.x() * x.x() * iz * iz,  //
            0.0, camera.focal.y() * iz, -camera.focal.y() * x.y() * iz * iz;
        const Eigen::Vector2d r(camera.focal.x() * x.x() * iz + camera.principal_point.x() - detections[t](j, 0),
                                camera.focal.y() * x.y() * iz + camera.principal_point.y() - detections[t](j, 1));
        block += w * jac.transpose() * jac;
        grad.segment<3>(3 * t) += w * jac.transpose() * r;
      }
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          if (block(a, b) != 0.0) triplets.emplace_back(3 * t + a, 3 * t + b, block(a, b));
        }
      }
    }
    const double l2 = lambda * lambda;
    for (Eigen::Index t = 0; t + 1 < frames; ++t) {
      const Eigen::Vector3d d = fit.translations[t + 1] - fit.translations[t];
      grad.segment<3>(3 * t) -= l2 * d;
      grad.segment<3>(3 * (t + 1)) += l2 * d;
      for (int a = 0; a < 3; ++a) {
        triplets.emplace_back(3 * t + a, 3 * t + a, l2);
        triplets.emplace_back(3 * (t + 1) + a, 3 * (t + 1) + a, l2);
        triplets.emplace_back(3 * t + a, 3 * (t + 1) + a, -l2);
        triplets.emplace_back(3 * (t + 1) + a, 3 * t + a, -l2);
      }
    }
    Eigen::SparseMatrix<double> hessian(n, n);
    hessian.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(hessian);
    Eigen::VectorXd step;
    if (solver.info() == Eigen::Success) {
      step = solver.solve(-grad);
    }
    if (solver.info() != Eigen::Success || !step.allFinite()) {
      // Rank-deficient system (e.g. a frame nothing constrains): damp lightly.
      Eigen::SparseMatrix<double> damped = hessian;
      const double scale = std::max(1e-12, hessian.diagonal().cwiseAbs().maxCoeff());
      for (Eigen::Index i = 0; i < n; ++i) damped.coeffRef(i, i) += 1e-9 * scale;
      solver.compute(damped);
      step = solver.solve(-grad);
      if (solver.info() != Eigen::Success || !step.allFinite()) {
        throw NumericalError("solve_translation: normal equations are singular");
      }
    }

    // Halving line search; only objective-decreasing iterates are accepted.
    double alpha = 1.0;
    bool accepted = false;
    std::vector<Eigen::Vector3d> trial(fit.translations.size());
    for (int bt = 0; bt <= options.max_backtracks; ++bt, alpha *= 0.5) {
      for (Eigen::Index t = 0; t < frames; ++t) {
        trial[t] = fit.translations[t] + alpha * step.segment<3>(3 * t);
      }
      const double value = objective(trial);
      if (value <= fit.objective) {
        fit.translations = trial;
        fit.objective = value;
        fit.objective_history.push_back(value);
        accepted = true;
        break;
      }
    }
    const double step_norm = alpha * step.norm();
    if (!accepted || step_norm < options.step_tolerance) {
      // No further decrease possible along the Gauss-Newton direction.
      fit.converged = true;
      break;
    }
  }
  return fit;
}

}  // namespace occmocap
