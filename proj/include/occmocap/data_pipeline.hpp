#pragma once

#include <torch/types.h>

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "occmocap/body_model.hpp"
#include "occmocap/global_fit.hpp"
#include "occmocap/motion_repr.hpp"
#include "occmocap/occlusion.hpp"

namespace occmocap {

/// Everything one training or evaluation sequence carries. Tensors are
/// float64 on the CPU.
struct MotionSample {
  torch::Tensor clean2d;       ///< [F, K, 2] bbox-normalized
  torch::Tensor occluded2d;    ///< [F, K, 2] zero token at masked pixels
  torch::Tensor mask;          ///< [F, K] bool
  torch::Tensor gt3d;          ///< [F, N, 6]
  torch::Tensor beta;          ///< [S]
  torch::Tensor translations;  ///< [F, 3] meters, camera frame
  CameraIntrinsics intrinsics;
  std::vector<Bbox> bboxes;  ///< one per frame
  double frame_rate = 10.0;

  int64_t frames() const { return clean2d.size(0); }
  int64_t joints2d() const { return clean2d.size(1); }
  /// Throws InvalidArgument when fields disagree on F, K or N.
  void validate() const;
};

struct SynthConfig {
  int frames = 16;
  /// Scales every joint angle and the translation wobble; 0
  /// yields a static pose.
  double amplitude_scale = 1.0;
  double shape_std = 1.0;
  double frame_rate = 10.0;
  std::pair<double, double> depth_range{4.0, 7.0};  ///< meters
  double lateral_range = 0.4;                        ///< meters, start offset
  double max_speed = 0.03;                           ///< meters per frame
  double yaw_range = 3.14159265358979323846;         ///< +/- radians about the body axis
  double focal = 1000.0;
  Eigen::Vector2d principal_point{500.0, 500.0};
  double bbox_padding = 0.2;
  /// Occlusion written into the sample's mask; target_ratio 0 disables.
  OcclusionConfig occlusion{.target_ratio = 0.0};

  void validate() const;
};

/// Per-sample stream seed derived from (seed, index) so workers can
/// generate samples independently.
uint64_t sample_seed(uint64_t seed, uint64_t index);

/// Smooth random joint-angle trajectories (up to three sinusoids per joint
/// axis) and a smooth translation track. The 2D map holds the projected LSP
/// joints, normalized per frame by their padded bounding box.
MotionSample generate_synthetic_motion(std::mt19937_64& rng, const SynthConfig& cfg, const BodyModel& body);

std::vector<MotionSample> generate_dataset(uint64_t seed, size_t count, const SynthConfig& cfg,
                                           const BodyModel& body);

/// Sample archive entries (see ArrayArchive): schema, schema_version,
/// clean2d f64 [F,K,2], occluded2d f64 [F,K,2], mask u8 [F,K], gt3d f64
/// [F,N,6], beta f64 [S], translations f64 [F,3], intrinsics f64 [4]
/// (fx, fy, cx, cy), bboxes f64 [F,3] (cx, cy, scale), frame_rate f64 [1].
inline constexpr int64_t kSampleSchemaVersion = 1;
void save_sample(const MotionSample& sample, const std::filesystem::path& path);
MotionSample load_sample(const std::filesystem::path& path);

/// A dataset directory holds seq_00000.ocm, seq_00001.ocm, ...
void save_dataset(const std::vector<MotionSample>& samples, const std::filesystem::path& dir);
std::vector<MotionSample> load_dataset(const std::filesystem::path& dir);

/// Joints [F, 14, 3] (local, root at the origin) and vertices [F, V, 3] of
/// the ground-truth body.
BodyOutput sample_body(const MotionSample& sample, const BodyModel& body);

/// 2D detector output for one sequence.
struct DetectionFile {
  int64_t joints = 0;
  CameraIntrinsics intrinsics;
  Sequence2 keypoints;                      ///< F x K x 2 pixels
  std::vector<Eigen::VectorXd> confidences;  ///< F x K, in [0, 1]
  std::vector<std::optional<Bbox>> bboxes;   ///< per frame, optional

  int64_t frames() const { return static_cast<int64_t>(keypoints.size()); }
};

/// Text format, one record per line, '#' starts a comment:
///
///     occmocap-detections 1
///     joints K
///     frames F
///     intrinsics fx fy cx cy
///     frame 0 [bbox cx cy scale]
///     x y conf        (K lines)
///     frame 1 ...
///
/// Throws DataError with the offending line number.
DetectionFile parse_detections(std::istream& in);
DetectionFile read_detections(const std::filesystem::path& path);
void write_detections(const DetectionFile& file, std::ostream& out);

/// Pixels of the sample's clean 2D map, confidence 1 everywhere except
/// masked joints, which get confidence 0.
DetectionFile detections_from_sample(const MotionSample& sample);

struct IngestedDetections {
  torch::Tensor normalized;  ///< [F, K, 2] before token substitution
  torch::Tensor occluded;    ///< [F, K, 2]
  torch::Tensor mask;        ///< [F, K] bool, confidence < threshold
  std::vector<Bbox> bboxes;
};

inline constexpr double kConfidenceThreshold = 0.6;

/// Normalizes each frame by its bbox (given in the file, else the padded box
/// of its confident joints, else the nearest frame's box) and marks joints
/// with confidence strictly below `threshold` as occluded.
IngestedDetections ingest_detections(const DetectionFile& file, double threshold, const torch::Tensor& token);

/// Index batches covering [0, count), shuffled by `shuffle_seed`; the last
/// batch may be partial. Throws InvalidArgument for count == 0.
std::vector<std::vector<size_t>> make_batches(size_t count, size_t batch_size, uint64_t shuffle_seed);

/// Stacked tensors of a batch (float64).
struct SampleBatch {
  torch::Tensor clean2d;  ///< [B, F, K, 2]
  torch::Tensor mask;     ///< [B, F, K]
  torch::Tensor gt3d;     ///< [B, F, N, 6]
  torch::Tensor beta;     ///< [B, S]
};
SampleBatch collate(const std::vector<MotionSample>& samples, const std::vector<size_t>& indices);

}  // namespace occmocap
