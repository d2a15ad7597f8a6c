#include "occmocap/occlusion.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "occmocap/errors.hpp"
#include "occmocap/motion_repr.hpp"

namespace occmocap {

namespace {

void rebuild_path(OccluderTrack& track, const Eigen::Vector2d& first_center) {
  track.center_path.clear();
  for (int f = track.start_frame; f <= track.end_frame; ++f) {
    track.center_path.push_back(first_center + track.drift_velocity * static_cast<double>(f - track.start_frame));
  }
}

struct MapPoints {
  int64_t frames = 0;
  int64_t joints = 0;
  std::vector<Eigen::Vector2d> points;  // frame-major
};

MapPoints extract_points(const torch::Tensor& map) {
  check_shape(map, {-1, -1, 2}, "occlusion");
  const auto values = map.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  MapPoints out{values.size(0), values.size(1), {}};
  out.points.reserve(static_cast<size_t>(out.frames * out.joints));
  const double* p = values.data_ptr<double>();
  for (int64_t i = 0; i < out.frames * out.joints; ++i) {
    out.points.emplace_back(p[2 * i], p[2 * i + 1]);
  }
  return out;
}

bool covered(const MapPoints& pts, int64_t f, int64_t k, std::span<const OccluderTrack> tracks) {
  const auto& p = pts.points[static_cast<size_t>(f * pts.joints + k)];
  return std::any_of(tracks.begin(), tracks.end(),
                     [&](const OccluderTrack& t) { return t.covers(static_cast<int>(f), p); });
}

double occluded_fraction(const MapPoints& pts, std::span<const OccluderTrack> tracks) {
  int64_t hits = 0;
  for (int64_t f = 0; f < pts.frames; ++f) {
    for (int64_t k = 0; k < pts.joints; ++k) {
      hits += covered(pts, f, k, tracks) ? 1 : 0;
    }
  }
  return pts.points.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pts.points.size());
}

// Fraction of frames in which at least one track is active: the most any
// rescaling can reach.
double reachable_fraction(std::span<const OccluderTrack> tracks, int frames) {
  int active = 0;
  for (int f = 0; f < frames; ++f) {
    active += std::any_of(tracks.begin(), tracks.end(), [f](const auto& t) { return t.active(f); }) ? 1 : 0;
  }
  return frames > 0 ? static_cast<double>(active) / frames : 0.0;
}

std::vector<OccluderTrack> scaled(const std::vector<OccluderTrack>& tracks, double factor) {
  auto out = tracks;
  for (auto& t : out) {
    t.half_extent *= factor;
  }
  return out;
}

}  // namespace

bool OccluderTrack::covers(int frame, const Eigen::Vector2d& point) const {
  if (!active(frame)) {
    return false;
  }
  const Eigen::Vector2d d = (point - center_path[static_cast<size_t>(frame - start_frame)]).cwiseAbs();
  return d.x() <= half_extent.x() && d.y() <= half_extent.y();
}

void OcclusionConfig::validate() const {
  auto ordered = [](const auto& r) { return r.first <= r.second; };
  if (!(target_ratio >= 0.0 && target_ratio <= 0.5)) {
    throw ConfigError("occlusion: target_ratio must lie in [0, 0.5]");
  }
  if (!ordered(occluder_count_range) || occluder_count_range.first < 0) {
    throw ConfigError("occlusion: bad occluder_count_range");
  }
  if (!ordered(size_range) || size_range.first <= 0.0) {
    throw ConfigError("occlusion: size_range must be positive and ordered");
  }
  if (!ordered(lifetime_range) || lifetime_range.first <= 0.0 || lifetime_range.second > 1.0) {
    throw ConfigError("occlusion: lifetime_range must lie in (0, 1]");
  }
  if (!ordered(drift_range) || drift_range.first < 0.0) {
    throw ConfigError("occlusion: bad drift_range");
  }
  if (!ordered(center_range)) {
    throw ConfigError("occlusion: bad center_range");
  }
}

std::vector<OccluderTrack> sample_occluders(const OcclusionConfig& cfg, int frame_count, std::mt19937_64& rng) {
  if (frame_count <= 0) {
    throw InvalidArgument("sample_occluders: frame_count must be positive");
  }
  using Uniform = std::uniform_real_distribution<double>;
  const int count = std::uniform_int_distribution<int>(cfg.occluder_count_range.first,
                                                       cfg.occluder_count_range.second)(rng);
  std::vector<OccluderTrack> tracks;
  tracks.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    OccluderTrack t;
    const double life = Uniform(cfg.lifetime_range.first, cfg.lifetime_range.second)(rng);
    const int length = std::clamp(static_cast<int>(std::lround(life * frame_count)), 1, frame_count);
    t.start_frame = std::uniform_int_distribution<int>(0, frame_count - length)(rng);
    t.end_frame = t.start_frame + length - 1;
    Uniform center(cfg.center_range.first, cfg.center_range.second);
    const double cx = center(rng);
    const double cy = center(rng);
    Uniform size(cfg.size_range.first, cfg.size_range.second);
    const double hx = size(rng);
    const double hy = size(rng);
    t.half_extent = Eigen::Vector2d(hx, hy);
    const double speed = Uniform(cfg.drift_range.first, cfg.drift_range.second)(rng);
    const double heading = Uniform(0.0, 2.0 * std::numbers::pi)(rng);
    t.drift_velocity = speed * Eigen::Vector2d(std::cos(heading), std::sin(heading));
    rebuild_path(t, Eigen::Vector2d(cx, cy));
    tracks.push_back(std::move(t));
  }
  return tracks;
}

torch::Tensor occlusion_mask(const torch::Tensor& map, std::span<const OccluderTrack> tracks) {
  const auto pts = extract_points(map);
  auto mask = torch::zeros({pts.frames, pts.joints}, torch::kBool);
  auto out = mask.accessor<bool, 2>();
  for (int64_t f = 0; f < pts.frames; ++f) {
    for (int64_t k = 0; k < pts.joints; ++k) {
      out[f][k] = covered(pts, f, k, tracks);
    }
  }
  return mask;
}

OccludedMap synthesize_occlusion(const torch::Tensor& map, std::span<const OccluderTrack> tracks,
                                 const torch::Tensor& token) {
  auto mask = occlusion_mask(map, tracks);
  return {apply_occlusion_token(map, mask, token), mask};
}

double calibrate_to_ratio(std::vector<OccluderTrack>& tracks, const torch::Tensor& map, double target_ratio) {
  if (target_ratio <= 0.0 || tracks.empty()) {
    tracks.clear();
    return 0.0;
  }
  double min_extent = std::numeric_limits<double>::infinity();
  for (const auto& t : tracks) {
    min_extent = std::min(min_extent, t.half_extent.minCoeff());
  }
  const auto pts = extract_points(map);
  double max_abs = 0.0;
  for (const auto& p : pts.points) {
    max_abs = std::max(max_abs, p.cwiseAbs().maxCoeff());
  }
  double max_center = 0.0;
  for (const auto& t : tracks) {
    for (const auto& c : t.center_path) {
      max_center = std::max(max_center, c.cwiseAbs().maxCoeff());
    }
  }
  // Large enough to swallow every point of the map.
  double lo = 0.0;
  double hi = (max_abs + max_center + 1.0) / min_extent;
  double ratio_lo = occluded_fraction(pts, scaled(tracks, lo));
  double ratio_hi = occluded_fraction(pts, scaled(tracks, hi));
  if (ratio_hi < target_ratio) {
    tracks = scaled(tracks, hi);
    return ratio_hi;
  }
  if (ratio_lo >= target_ratio) {
    tracks = scaled(tracks, lo);
    return ratio_lo;
  }
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double r = occluded_fraction(pts, scaled(tracks, mid));
    if (r >= target_ratio) {
      hi = mid;
      ratio_hi = r;
    } else {
      lo = mid;
      ratio_lo = r;
    }
  }
  const bool take_hi = (ratio_hi - target_ratio) <= (target_ratio - ratio_lo);
  tracks = scaled(tracks, take_hi ? hi : lo);
  return take_hi ? ratio_hi : ratio_lo;
}

std::vector<OccluderTrack> sample_calibrated_occluders(const OcclusionConfig& cfg, const torch::Tensor& map,
                                                       std::mt19937_64& rng) {
  check_shape(map, {-1, -1, 2}, "sample_calibrated_occluders");
  const int frames = static_cast<int>(map.size(0));
  if (cfg.target_ratio <= 0.0 || cfg.occluder_count_range.second == 0) {
    return {};
  }
  constexpr int kMaxAttempts = 20;
  std::vector<OccluderTrack> tracks;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    tracks = sample_occluders(cfg, frames, rng);
    if (!tracks.empty() && reachable_fraction(tracks, frames) >= cfg.target_ratio) {
      calibrate_to_ratio(tracks, map, cfg.target_ratio);
      return tracks;
    }
  }
  if (tracks.empty()) {
    return tracks;
  }
  auto longest = std::max_element(tracks.begin(), tracks.end(), [](const auto& a, const auto& b) {
    return (a.end_frame - a.start_frame) < (b.end_frame - b.start_frame);
  });
  const Eigen::Vector2d first = longest->center_path.front() - longest->drift_velocity * longest->start_frame;
  longest->start_frame = 0;
  longest->end_frame = frames - 1;
  rebuild_path(*longest, first);
  calibrate_to_ratio(tracks, map, cfg.target_ratio);
  return tracks;
}

}  // namespace occmocap
