#include "occmocap/metrics.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include "occmocap/errors.hpp"

namespace occmocap {

namespace {

void check_pair(const Sequence3& a, const Sequence3& b, const char* what) {
  if (a.size() != b.size() || a.empty()) {
    throw InvalidArgument(std::string(what) + ": frame counts differ or are zero");
  }
  for (size_t t = 0; t < a.size(); ++t) {
    if (a[t].rows() != b[t].rows() || a[t].rows() == 0) {
      throw InvalidArgument(std::string(what) + ": point counts differ at frame " + std::to_string(t));
    }
  }
}

Eigen::RowVector3d root_of(const Points3& p, std::span<const int> root_joints) {
  Eigen::RowVector3d r = Eigen::RowVector3d::Zero();
  for (int j : root_joints) {
    if (j < 0 || j >= p.rows()) {
      throw InvalidArgument("mpjpe: root joint index out of range");
    }
    r += p.row(j);
  }
  return r / static_cast<double>(root_joints.size());
}

double mean_distance(const Points3& a, const Points3& b) {
  return (a - b).rowwise().norm().mean();
}

}  // namespace

double mpjpe(const Sequence3& pred, const Sequence3& gt, std::span<const int> root_joints) {
  check_pair(pred, gt, "mpjpe");
  if (root_joints.empty()) {
    throw InvalidArgument("mpjpe: no root joints given");
  }
  double total = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    const Points3 p = pred[t].rowwise() - root_of(pred[t], root_joints);
    const Points3 g = gt[t].rowwise() - root_of(gt[t], root_joints);
    total += mean_distance(p, g);
  }
  return 1000.0 * total / static_cast<double>(pred.size());
}

Points3 SimilarityTransform::apply(const Points3& points) const {
  return ((scale * points * rotation.transpose()).rowwise() + translation.transpose());
}

SimilarityTransform procrustes_align(const Points3& source, const Points3& target) {
  if (source.rows() != target.rows()) {
    throw InvalidArgument("procrustes_align: point counts differ");
  }
  if (source.rows() < 3) {
    throw InvalidArgument("procrustes_align: need at least three points");
  }
  const Eigen::RowVector3d mu_s = source.colwise().mean();
  const Eigen::RowVector3d mu_t = target.colwise().mean();
  const Points3 s = source.rowwise() - mu_s;
  const Points3 t = target.rowwise() - mu_t;

  Eigen::JacobiSVD<Eigen::MatrixXd> target_svd(t);
  const auto tsv = target_svd.singularValues();
  if (!(tsv[1] > 1e-9 * std::max(1.0, tsv[0]))) {
    throw InvalidArgument("procrustes_align: target points are collinear");
  }
  const double var_s = s.squaredNorm();
  if (!(var_s > 0.0)) {
    throw InvalidArgument("procrustes_align: source points coincide");
  }

  // Cross-covariance target^T source; R maximizes tr(R^T M).
  const Eigen::Matrix3d cov = t.transpose() * s;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
  }
  SimilarityTransform out;
  out.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  out.scale = (svd.singularValues().asDiagonal() * d).trace() / var_s;
  out.translation = mu_t.transpose() - out.scale * out.rotation * mu_s.transpose();
  return out;
}

double pa_mpjpe(const Sequence3& pred, const Sequence3& gt) {
  check_pair(pred, gt, "pa_mpjpe");
  double total = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    const auto tr = procrustes_align(pred[t], gt[t]);
    total += mean_distance(tr.apply(pred[t]), gt[t]);
  }
  return 1000.0 * total / static_cast<double>(pred.size());
}

double pve(const Sequence3& pred_vertices, const Sequence3& gt_vertices, const Points3& pred_roots,
           const Points3& gt_roots) {
  check_pair(pred_vertices, gt_vertices, "pve");
  const auto frames = static_cast<Eigen::Index>(pred_vertices.size());
  if (pred_roots.rows() != frames || gt_roots.rows() != frames) {
    throw InvalidArgument("pve: need one root per frame");
  }
  double total = 0.0;
  for (Eigen::Index t = 0; t < frames; ++t) {
    total += mean_distance(pred_vertices[t].rowwise() - pred_roots.row(t), gt_vertices[t].rowwise() - gt_roots.row(t));
  }
  return 1000.0 * total / static_cast<double>(frames);
}

double pve(const Sequence3& pred_vertices, const Sequence3& gt_vertices) {
  check_pair(pred_vertices, gt_vertices, "pve");
  Points3 pred_roots(pred_vertices.size(), 3);
  Points3 gt_roots(gt_vertices.size(), 3);
  for (size_t t = 0; t < pred_vertices.size(); ++t) {
    pred_roots.row(t) = pred_vertices[t].colwise().mean();
    gt_roots.row(t) = gt_vertices[t].colwise().mean();
  }
  return pve(pred_vertices, gt_vertices, pred_roots, gt_roots);
}

double accel_error(const Sequence3& pred, const Sequence3& gt) {
  check_pair(pred, gt, "accel_error");
  if (pred.size() < 3) {
    throw InvalidArgument("accel_error: need at least three frames");
  }
  double total = 0.0;
  for (size_t t = 1; t + 1 < pred.size(); ++t) {
    const Points3 ap = pred[t + 1] - 2.0 * pred[t] + pred[t - 1];
    const Points3 ag = gt[t + 1] - 2.0 * gt[t] + gt[t - 1];
    total += (ap - ag).rowwise().norm().mean();
  }
  return 1000.0 * total / static_cast<double>(pred.size() - 2);
}

void EvaluationReport::add(const std::string& name, std::map<std::string, double> metrics) {
  sequence_names.push_back(name);
  per_sequence.push_back(std::move(metrics));
}

void EvaluationReport::finalize() {
  aggregate.clear();
  std::map<std::string, int> counts;
  for (const auto& m : per_sequence) {
    for (const auto& [k, v] : m) {
      aggregate[k] += v;
      ++counts[k];
    }
  }
  for (auto& [k, v] : aggregate) {
    v /= counts[k];
  }
}

std::string EvaluationReport::to_json(const std::string& config_echo) const {
  nlohmann::ordered_json j;
  j["aggregate"] = aggregate;
  auto seqs = nlohmann::ordered_json::array();
  for (size_t i = 0; i < per_sequence.size(); ++i) {
    seqs.push_back({{"name", sequence_names[i]}, {"metrics", per_sequence[i]}});
  }
  j["sequences"] = seqs;
  if (!config_echo.empty()) {
    j["config"] = nlohmann::ordered_json::parse(config_echo);
  }
  return j.dump(2);
}

}  // namespace occmocap
