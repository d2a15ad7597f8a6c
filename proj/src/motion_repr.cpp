#include "occmocap/motion_repr.hpp"

#include <torch/torch.h>

#include <sstream>

#include "occmocap/errors.hpp"

namespace occmocap {

namespace {

void check_bbox(const Bbox& bbox) {
  if (!(bbox.scale > 0.0) || !std::isfinite(bbox.scale)) {
    throw InvalidArgument("invalid bbox: scale must be positive, got " + std::to_string(bbox.scale));
  }
}

}  // namespace

Bbox bbox_from_points(const Points2& pixels, double padding) {
  if (pixels.rows() == 0) {
    throw InvalidArgument("bbox_from_points: no points");
  }
  const Eigen::Vector2d lo = pixels.colwise().minCoeff();
  const Eigen::Vector2d hi = pixels.colwise().maxCoeff();
  Bbox box;
  box.center = 0.5 * (lo + hi);
  box.scale = (hi - lo).maxCoeff() * (1.0 + padding);
  if (!(box.scale > 0.0)) {
    box.scale = 1.0;  // a single point
  }
  return box;
}

Points2 normalize_pose2d(const Points2& joints, const Bbox& bbox) {
  check_bbox(bbox);
  return (joints.rowwise() - bbox.center.transpose()) / bbox.scale;
}

Points2 denormalize_pose2d(const Points2& normalized, const Bbox& bbox) {
  check_bbox(bbox);
  return (normalized * bbox.scale).rowwise() + bbox.center.transpose();
}

torch::Tensor apply_occlusion_token(const torch::Tensor& map, const torch::Tensor& mask, const torch::Tensor& token) {
  if (map.dim() < 2 || map.size(-1) != 2) {
    throw InvalidArgument("apply_occlusion_token: map must be [..., 2]");
  }
  if (token.numel() != 2) {
    throw InvalidArgument("apply_occlusion_token: token must have 2 elements");
  }
  // The mask must equal map.shape[:-1], or a trailing part of it (one mask
  // shared across a batch).
  const auto prefix = map.sizes().slice(0, map.dim() - 1);
  const bool fits = mask.dim() >= 1 && static_cast<size_t>(mask.dim()) <= prefix.size() &&
                    mask.sizes() == prefix.slice(prefix.size() - mask.dim());
  if (!fits) {
    std::ostringstream os;
    os << "apply_occlusion_token: mask shape " << mask.sizes() << " does not match map " << map.sizes();
    throw InvalidArgument(os.str());
  }
  const auto m = mask.to(torch::kBool).unsqueeze(-1);
  return torch::where(m, token.reshape({2}).to(map.dtype()), map);
}

void check_shape(const torch::Tensor& t, std::span<const int64_t> sizes, const char* what) {
  bool ok = t.defined() && t.dim() == static_cast<int64_t>(sizes.size());
  for (size_t i = 0; ok && i < sizes.size(); ++i) {
    ok = sizes[i] < 0 || t.size(static_cast<int64_t>(i)) == sizes[i];
  }
  if (!ok) {
    std::ostringstream os;
    os << what << ": expected shape [";
    for (size_t i = 0; i < sizes.size(); ++i) {
      os << (i ? ", " : "") << (sizes[i] < 0 ? std::string("*") : std::to_string(sizes[i]));
    }
    os << "], got ";
    if (t.defined()) {
      os << t.sizes();
    } else {
      os << "undefined";
    }
    throw InvalidArgument(os.str());
  }
}

Points2 to_points2(const torch::Tensor& t) {
  check_shape(t, {-1, 2}, "to_points2");
  const auto c = t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  Points2 out(c.size(0), 2);
  const double* p = c.data_ptr<double>();
  for (int64_t i = 0; i < c.size(0); ++i) {
    out(i, 0) = p[2 * i];
    out(i, 1) = p[2 * i + 1];
  }
  return out;
}

Points3 to_points3(const torch::Tensor& t) {
  check_shape(t, {-1, 3}, "to_points3");
  const auto c = t.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  Points3 out(c.size(0), 3);
  const double* p = c.data_ptr<double>();
  for (int64_t i = 0; i < c.size(0); ++i) {
    for (int j = 0; j < 3; ++j) {
      out(i, j) = p[3 * i + j];
    }
  }
  return out;
}

Sequence3 to_sequence3(const torch::Tensor& t) {
  check_shape(t, {-1, -1, 3}, "to_sequence3");
  Sequence3 out;
  out.reserve(static_cast<size_t>(t.size(0)));
  for (int64_t f = 0; f < t.size(0); ++f) {
    out.push_back(to_points3(t[f]));
  }
  return out;
}

torch::Tensor from_points(const Eigen::MatrixXd& points) {
  auto out = torch::empty({points.rows(), points.cols()}, torch::kFloat64);
  auto acc = out.accessor<double, 2>();
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
      acc[i][j] = points(i, j);
    }
  }
  return out;
}

}  // namespace occmocap
