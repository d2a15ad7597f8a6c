#pragma once

#include <torch/types.h>

#include <array>
#include <filesystem>
#include <vector>

namespace occmocap {

inline constexpr int64_t kBodyJoints = 24;
inline constexpr int64_t kShapeDim = 10;
inline constexpr int64_t kLspJoints = 14;

/// LSP order: R ankle, R knee, R hip, L hip, L knee, L ankle, R wrist,
/// R elbow, R shoulder, L shoulder, L elbow, L wrist, neck, head top.
/// The pelvis is the midpoint of the two hips.
inline constexpr std::array<int, 2> kLspHips = {2, 3};

/// Raw arrays of an SMPL-like body. All floating arrays share one dtype.
struct BodyModelData {
  torch::Tensor template_vertices;  ///< [V, 3] meters
  torch::Tensor shape_dirs;         ///< [V, 3, B]
  torch::Tensor joint_regressor;    ///< [N, V], rows sum to 1
  torch::Tensor lsp_regressor;      ///< [14, V], rows sum to 1
  torch::Tensor skinning_weights;   ///< [V, N], rows sum to 1
  std::vector<int64_t> parents;     ///< parent per joint, -1 for the root
};

struct BodyOutput {
  torch::Tensor vertices;  ///< [B, V, 3], root joint at the origin
  torch::Tensor joints;    ///< [B, N, 3]
};

/// Shape blending, forward kinematics along the kinematic tree and linear
/// blend skinning. Outputs are expressed relative to the posed root joint.
/// Immutable after construction; forward() is reentrant.
class BodyModel {
 public:
  /// Validates the invariants (single rooted tree, parents before children,
  /// nonnegative rows summing to 1) and throws InvalidArgument otherwise.
  explicit BodyModel(BodyModelData data);

  /// Stick-figure body with 24 joints, 10 shape coefficients and 120
  /// vertices (a ring of four around every joint plus one vertex at each
  /// bone midpoint). Float64.
  static BodyModel procedural();

  /// Reads a user-supplied parameter archive (see ArrayArchive) with entries
  ///   v_template [V,3], shapedirs [V,3,B], J_regressor [N,V],
  ///   lsp_regressor [14,V], weights [V,N], parents [N] (int, root = -1).
  static BodyModel load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  BodyModel to(torch::Dtype dtype) const;

  /// rotations: [B, N, 3, 3] (or [N, 3, 3]); beta: [B, S] (or [S]).
  /// Throws InvalidArgument when a rotation is not orthonormal with det +1.
  BodyOutput forward(const torch::Tensor& rotations, const torch::Tensor& beta) const;

  /// lsp_regressor . vertices, for [..., V, 3] inputs.
  torch::Tensor regress_joints_lsp(const torch::Tensor& vertices) const;

  /// Rest joints of the shaped body, root at the origin: [B, N, 3].
  torch::Tensor rest_joints(const torch::Tensor& beta) const;

  int64_t num_vertices() const { return data_.template_vertices.size(0); }
  int64_t num_joints() const { return static_cast<int64_t>(data_.parents.size()); }
  int64_t num_shape() const { return data_.shape_dirs.size(2); }
  const BodyModelData& data() const { return data_; }

 private:
  torch::Tensor shaped_vertices(const torch::Tensor& beta) const;

  BodyModelData data_;
};

}  // namespace occmocap
