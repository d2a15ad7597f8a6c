#pragma once

#include <torch/types.h>

#include <Eigen/Core>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace occmocap {

/// A rectangle in normalized map coordinates that drifts linearly while
/// active on the contiguous frame interval [start_frame, end_frame].
struct OccluderTrack {
  int start_frame = 0;
  int end_frame = 0;
  std::vector<Eigen::Vector2d> center_path;  ///< one center per active frame
  Eigen::Vector2d half_extent = Eigen::Vector2d::Constant(0.1);
  Eigen::Vector2d drift_velocity = Eigen::Vector2d::Zero();  ///< per frame

  bool active(int frame) const { return frame >= start_frame && frame <= end_frame; }
  /// Closed-rectangle test; false when the track is inactive at `frame`.
  bool covers(int frame, const Eigen::Vector2d& point) const;
};

struct OcclusionConfig {
  double target_ratio = 0.3;  ///< fraction of joint-frames to occlude, in [0, 0.5]
  std::pair<int, int> occluder_count_range{1, 3};
  std::pair<double, double> size_range{0.1, 0.4};       ///< half extent
  std::pair<double, double> lifetime_range{0.25, 1.0};  ///< fraction of F
  std::pair<double, double> drift_range{0.0, 0.02};     ///< speed per frame
  std::pair<double, double> center_range{-0.5, 0.5};    ///< initial center, both axes
  uint64_t seed = 0;

  /// Throws ConfigError on empty ranges or a ratio outside [0, 0.5].
  void validate() const;
};

/// Raw random tracks (no ratio calibration). Deterministic for a given RNG
/// state.
std::vector<OccluderTrack> sample_occluders(const OcclusionConfig& cfg, int frame_count, std::mt19937_64& rng);

/// Mask [F, K]: (f, k) is occluded iff map[f, k] lies inside a track active
/// at frame f. `map` is [F, K, 2].
torch::Tensor occlusion_mask(const torch::Tensor& map, std::span<const OccluderTrack> tracks);

struct OccludedMap {
  torch::Tensor map;   ///< [F, K, 2], token at masked pixels
  torch::Tensor mask;  ///< [F, K] bool
};

OccludedMap synthesize_occlusion(const torch::Tensor& map, std::span<const OccluderTrack> tracks,
                                 const torch::Tensor& token);

/// Rescales every half extent by one common factor so the occluded fraction
/// of `map` is as close as possible to `target_ratio`. Returns the achieved
/// fraction. A non-positive target clears `tracks`.
double calibrate_to_ratio(std::vector<OccluderTrack>& tracks, const torch::Tensor& map, double target_ratio);

/// sample_occluders + calibrate_to_ratio. Track sets whose lifetimes cannot
/// reach the target are rejected and resampled; after a bounded number of
/// attempts the longest track is stretched over the whole sequence.
std::vector<OccluderTrack> sample_calibrated_occluders(const OcclusionConfig& cfg, const torch::Tensor& map,
                                                       std::mt19937_64& rng);

}  // namespace occmocap
