#include "occmocap/body_model.hpp"

#include <torch/torch.h>

#include <Eigen/Geometry>
#include <cmath>
#include <sstream>

#include "occmocap/archive.hpp"
#include "occmocap/errors.hpp"

namespace occmocap {

namespace {

// SMPL joint order: pelvis, L hip, R hip, spine1, L knee, R knee, spine2,
// L ankle, R ankle, spine3, L foot, R foot, neck, L collar, R collar, head,
// L shoulder, R shoulder, L elbow, R elbow, L wrist, R wrist, L hand, R hand.
constexpr std::array<int64_t, kBodyJoints> kSmplParents = {-1, 0,  0,  0,  1,  2,  3,  4,  5,  6,  7,  8,
                                                           9,  9,  9,  12, 13, 14, 16, 17, 18, 19, 20, 21};

// Approximate neutral rest pose, y up, root at the origin.
constexpr double kRestJoints[kBodyJoints][3] = {
    {0.00, 0.00, 0.00},    {0.06, -0.09, 0.00},   {-0.06, -0.09, 0.00},  {0.00, 0.11, -0.02},
    {0.10, -0.47, 0.01},   {-0.10, -0.47, 0.01},  {0.00, 0.24, 0.00},    {0.09, -0.87, -0.03},
    {-0.09, -0.87, -0.03}, {0.00, 0.30, 0.02},    {0.11, -0.93, 0.09},   {-0.11, -0.93, 0.09},
    {0.00, 0.52, -0.01},   {0.08, 0.44, 0.00},    {-0.08, 0.44, 0.00},   {0.00, 0.62, 0.03},
    {0.18, 0.46, -0.01},   {-0.18, 0.46, -0.01},  {0.44, 0.45, -0.03},   {-0.44, 0.45, -0.03},
    {0.70, 0.46, -0.02},   {-0.70, 0.46, -0.02},  {0.78, 0.45, -0.03},   {-0.78, 0.45, -0.03}};

constexpr double kRingRadius[kBodyJoints] = {0.10, 0.07, 0.07, 0.10, 0.05, 0.05, 0.10, 0.04,
                                             0.04, 0.10, 0.03, 0.03, 0.05, 0.05, 0.05, 0.08,
                                             0.05, 0.05, 0.04, 0.04, 0.03, 0.03, 0.03, 0.03};

// SMPL joint feeding each LSP joint.
constexpr std::array<int64_t, kLspJoints> kLspSource = {8, 5, 2, 1, 4, 7, 21, 19, 17, 16, 18, 20, 12, 15};

constexpr int64_t kVerticesPerJoint = 5;  // four ring vertices + one bone midpoint

bool in(int64_t j, std::initializer_list<int64_t> set) {
  return std::find(set.begin(), set.end(), j) != set.end();
}

void check_rows_sum_to_one(const torch::Tensor& m, const char* what) {
  if ((m < -1e-12).any().item<bool>()) {
    throw InvalidArgument(std::string("body model: negative entries in ") + what);
  }
  const double err = (m.sum(1) - 1.0).abs().max().item<double>();
  if (err > 1e-6) {
    throw InvalidArgument(std::string("body model: rows of ") + what + " do not sum to 1 (max error " +
                          std::to_string(err) + ")");
  }
}

}  // namespace

BodyModel::BodyModel(BodyModelData data) : data_(std::move(data)) {
  const auto& d = data_;
  if (!d.template_vertices.defined() || !d.shape_dirs.defined() || !d.joint_regressor.defined() ||
      !d.lsp_regressor.defined() || !d.skinning_weights.defined()) {
    throw InvalidArgument("body model: missing arrays");
  }
  const int64_t nv = d.template_vertices.size(0);
  const auto nj = static_cast<int64_t>(d.parents.size());
  std::ostringstream err;
  if (d.template_vertices.dim() != 2 || d.template_vertices.size(1) != 3) err << "template_vertices must be [V,3]; ";
  if (d.shape_dirs.dim() != 3 || d.shape_dirs.size(0) != nv || d.shape_dirs.size(1) != 3) err << "shape_dirs must be [V,3,B]; ";
  if (d.joint_regressor.dim() != 2 || d.joint_regressor.size(0) != nj || d.joint_regressor.size(1) != nv)
    err << "joint_regressor must be [N,V]; ";
  if (d.lsp_regressor.dim() != 2 || d.lsp_regressor.size(0) != kLspJoints || d.lsp_regressor.size(1) != nv)
    err << "lsp_regressor must be [14,V]; ";
  if (d.skinning_weights.dim() != 2 || d.skinning_weights.size(0) != nv || d.skinning_weights.size(1) != nj)
    err << "skinning_weights must be [V,N]; ";
  if (!err.str().empty()) {
    throw InvalidArgument("body model: " + err.str());
  }
  int roots = 0;
  for (int64_t j = 0; j < nj; ++j) {
    const int64_t p = d.parents[static_cast<size_t>(j)];
    if (p < 0) {
      ++roots;
    } else if (p >= j) {
      // Parents listed before children rules out cycles.
      throw InvalidArgument("body model: joint " + std::to_string(j) + " has parent " + std::to_string(p) +
                            " not preceding it");
    }
  }
  if (roots != 1 || d.parents.empty() || d.parents[0] >= 0) {
    throw InvalidArgument("body model: kinematic tree must have exactly one root at index 0");
  }
  const auto dtype = d.template_vertices.scalar_type();
  for (const auto* t : {&d.shape_dirs, &d.joint_regressor, &d.lsp_regressor, &d.skinning_weights}) {
    if (t->scalar_type() != dtype) {
      throw InvalidArgument("body model: arrays must share one floating dtype");
    }
  }
  check_rows_sum_to_one(d.joint_regressor, "joint_regressor");
  check_rows_sum_to_one(d.lsp_regressor, "lsp_regressor");
  check_rows_sum_to_one(d.skinning_weights, "skinning_weights");
}

BodyModel BodyModel::procedural() {
  using Eigen::Vector3d;
  const int64_t nv = kBodyJoints * kVerticesPerJoint;
  std::vector<Vector3d> joints(kBodyJoints);
  for (int64_t j = 0; j < kBodyJoints; ++j) {
    joints[j] = Vector3d(kRestJoints[j][0], kRestJoints[j][1], kRestJoints[j][2]);
  }

  auto tmpl = torch::zeros({nv, 3}, torch::kFloat64);
  auto jreg = torch::zeros({kBodyJoints, nv}, torch::kFloat64);
  auto weights = torch::zeros({nv, kBodyJoints}, torch::kFloat64);
  std::vector<int64_t> group(nv);
  std::vector<bool> is_ring(nv);

  for (int64_t j = 0; j < kBodyJoints; ++j) {
    const int64_t p = kSmplParents[j];
    const Vector3d dir = p < 0 ? Vector3d::UnitY() : (joints[j] - joints[p]).normalized();
    const Vector3d helper = std::abs(dir.x()) < 0.9 ? Vector3d::UnitX() : Vector3d::UnitZ();
    const Vector3d u = dir.cross(helper).normalized();
    const Vector3d w = dir.cross(u);
    const std::array<Vector3d, 4> ring = {joints[j] + kRingRadius[j] * u, joints[j] + kRingRadius[j] * w,
                                          joints[j] - kRingRadius[j] * u, joints[j] - kRingRadius[j] * w};
    const int64_t base = j * kVerticesPerJoint;
    for (int64_t r = 0; r < 4; ++r) {
      for (int c = 0; c < 3; ++c) tmpl[base + r][c] = ring[r][c];
      jreg[j][base + r] = 0.25;
      if (p < 0) {
        weights[base + r][j] = 1.0;
      } else {
        weights[base + r][j] = 0.5;
        weights[base + r][p] = 0.5;
      }
      group[base + r] = j;
      is_ring[base + r] = true;
    }
    const Vector3d mid = p < 0 ? Vector3d(joints[j] - 0.05 * Vector3d::UnitY()) : Vector3d(0.5 * (joints[j] + joints[p]));
    for (int c = 0; c < 3; ++c) tmpl[base + 4][c] = mid[c];
    weights[base + 4][p < 0 ? j : p] = 1.0;
    group[base + 4] = j;
    is_ring[base + 4] = false;
  }

  auto lsp = torch::zeros({kLspJoints, nv}, torch::kFloat64);
  for (int64_t i = 0; i < kLspJoints; ++i) {
    lsp[i] = jreg[kLspSource[i]];
  }

  // Shape directions: global scale, leg length, arm span, torso height,
  // girth, then five small smooth perturbations.
  auto dirs = torch::zeros({nv, 3, kShapeDim}, torch::kFloat64);
  for (int64_t v = 0; v < nv; ++v) {
    const int64_t j = group[v];
    const Vector3d pos(tmpl[v][0].item<double>(), tmpl[v][1].item<double>(), tmpl[v][2].item<double>());
    for (int c = 0; c < 3; ++c) dirs[v][c][0] = 0.06 * pos[c];
    if (in(j, {1, 2, 4, 5, 7, 8, 10, 11})) dirs[v][1][1] = 0.08 * (pos.y() + 0.09);
    if (in(j, {13, 14, 16, 17, 18, 19, 20, 21, 22, 23}))
      dirs[v][0][2] = 0.08 * (pos.x() - std::copysign(0.08, pos.x()));
    if (in(j, {3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23})) dirs[v][1][3] = 0.06 * pos.y();
    if (is_ring[v]) {
      for (int c = 0; c < 3; ++c) dirs[v][c][4] = 0.4 * (pos[c] - joints[j][c]);
    }
    const double x = static_cast<double>(v);
    for (int64_t k = 0; k < 5; ++k) {
      const double kk = static_cast<double>(k);
      dirs[v][0][5 + k] = 0.01 * std::sin(0.7 * x + 1.3 * kk);
      dirs[v][1][5 + k] = 0.01 * std::cos(1.1 * x + 0.5 * kk);
      dirs[v][2][5 + k] = 0.01 * std::sin(0.3 * x + 2.1 * kk);
    }
  }
  // Keep the root joint fixed at the origin for every shape.
  const auto root_shift = torch::einsum("v,vcb->cb", {jreg[0], dirs});  // [3, B]
  dirs = dirs - root_shift.unsqueeze(0);

  BodyModelData data;
  data.template_vertices = tmpl;
  data.shape_dirs = dirs;
  data.joint_regressor = jreg;
  data.lsp_regressor = lsp;
  data.skinning_weights = weights;
  data.parents.assign(kSmplParents.begin(), kSmplParents.end());
  return BodyModel(std::move(data));
}

BodyModel BodyModel::load(const std::filesystem::path& path) {
  const auto archive = ArrayArchive::load(path);
  BodyModelData data;
  try {
    data.template_vertices = archive.get("v_template").to(torch::kFloat64);
    data.shape_dirs = archive.get("shapedirs").to(torch::kFloat64);
    data.joint_regressor = archive.get("J_regressor").to(torch::kFloat64);
    data.lsp_regressor = archive.get("lsp_regressor").to(torch::kFloat64);
    data.skinning_weights = archive.get("weights").to(torch::kFloat64);
    const auto parents = archive.get("parents").to(torch::kInt64).contiguous();
    data.parents.assign(parents.data_ptr<int64_t>(), parents.data_ptr<int64_t>() + parents.numel());
  } catch (const DataError& e) {
    throw DataError("body model archive " + path.string() + ": " + e.what());
  }
  return BodyModel(std::move(data));
}

void BodyModel::save(const std::filesystem::path& path) const {
  ArrayArchive archive;
  archive.put("v_template", data_.template_vertices);
  archive.put("shapedirs", data_.shape_dirs);
  archive.put("J_regressor", data_.joint_regressor);
  archive.put("lsp_regressor", data_.lsp_regressor);
  archive.put("weights", data_.skinning_weights);
  archive.put("parents", torch::tensor(data_.parents, torch::kInt64));
  archive.save(path);
}

BodyModel BodyModel::to(torch::Dtype dtype) const {
  BodyModelData d = data_;
  d.template_vertices = d.template_vertices.to(dtype);
  d.shape_dirs = d.shape_dirs.to(dtype);
  d.joint_regressor = d.joint_regressor.to(dtype);
  d.lsp_regressor = d.lsp_regressor.to(dtype);
  d.skinning_weights = d.skinning_weights.to(dtype);
  BodyModel out = *this;
  out.data_ = std::move(d);
  return out;
}

torch::Tensor BodyModel::shaped_vertices(const torch::Tensor& beta) const {
  const int64_t nv = num_vertices();
  const auto dirs = data_.shape_dirs.to(beta.dtype()).reshape({nv * 3, num_shape()});
  // [B, V*3] = beta [B, S] . dirs^T
  const auto offsets = torch::matmul(beta, dirs.t()).reshape({beta.size(0), nv, 3});
  return data_.template_vertices.to(beta.dtype()).unsqueeze(0) + offsets;
}

torch::Tensor BodyModel::rest_joints(const torch::Tensor& beta) const {
  const auto b = beta.dim() == 1 ? beta.unsqueeze(0) : beta;
  const auto joints = torch::matmul(data_.joint_regressor.to(b.dtype()), shaped_vertices(b));
  return joints - joints.narrow(1, 0, 1);
}

BodyOutput BodyModel::forward(const torch::Tensor& rotations, const torch::Tensor& beta) const {
  const bool batched = rotations.dim() == 4;
  const auto rot = batched ? rotations : rotations.unsqueeze(0);
  const auto b = beta.dim() == 2 ? beta : beta.unsqueeze(0);
  const int64_t nj = num_joints();
  if (rot.dim() != 4 || rot.size(1) != nj || rot.size(2) != 3 || rot.size(3) != 3) {
    std::ostringstream os;
    os << "body model forward: rotations must be [B," << nj << ",3,3], got " << rotations.sizes();
    throw InvalidArgument(os.str());
  }
  if (b.dim() != 2 || b.size(0) != rot.size(0) || b.size(1) != num_shape()) {
    std::ostringstream os;
    os << "body model forward: beta must be [B," << num_shape() << "], got " << beta.sizes();
    throw InvalidArgument(os.str());
  }
  {
    torch::NoGradGuard no_grad;
    const double tol = rot.scalar_type() == torch::kFloat64 ? 1e-6 : 1e-3;
    const auto eye = torch::eye(3, rot.options());
    const auto ortho = (torch::matmul(rot.transpose(-1, -2), rot) - eye).abs().amax();
    const auto det_err = (torch::linalg_det(rot) - 1.0).abs().amax();
    if (!(ortho.item<double>() <= tol) || !(det_err.item<double>() <= tol)) {
      throw InvalidArgument("body model forward: pose contains an invalid rotation matrix");
    }
  }

  const auto dtype = rot.scalar_type();
  const auto v_shaped = shaped_vertices(b.to(dtype));                            // [B, V, 3]
  const auto joints = torch::matmul(data_.joint_regressor.to(dtype), v_shaped);  // [B, N, 3]

  std::vector<torch::Tensor> global_rot(static_cast<size_t>(nj));
  std::vector<torch::Tensor> global_pos(static_cast<size_t>(nj));
  for (int64_t j = 0; j < nj; ++j) {
    const int64_t p = data_.parents[static_cast<size_t>(j)];
    const auto local = rot.select(1, j);
    if (p < 0) {
      global_rot[j] = local;
      global_pos[j] = joints.select(1, j);
    } else {
      const auto bone = (joints.select(1, j) - joints.select(1, p)).unsqueeze(-1);
      global_rot[j] = torch::matmul(global_rot[p], local);
      global_pos[j] = torch::matmul(global_rot[p], bone).squeeze(-1) + global_pos[p];
    }
  }
  const auto grot = torch::stack(global_rot, 1);  // [B, N, 3, 3]
  const auto gpos = torch::stack(global_pos, 1);  // [B, N, 3]
  // Skinning transforms map rest-space points to posed space.
  const auto offset = gpos - torch::matmul(grot, joints.unsqueeze(-1)).squeeze(-1);
  const int64_t batch = rot.size(0);
  const auto weights = data_.skinning_weights.to(dtype);
  const auto blend_rot =
      torch::matmul(weights, grot.reshape({batch, nj, 9})).reshape({batch, num_vertices(), 3, 3});
  const auto blend_off = torch::matmul(weights, offset);
  auto vertices = torch::matmul(blend_rot, v_shaped.unsqueeze(-1)).squeeze(-1) + blend_off;

  const auto root = gpos.narrow(1, 0, 1);
  BodyOutput out{vertices - root, gpos - root};
  if (!batched) {
    out.vertices = out.vertices.squeeze(0);
    out.joints = out.joints.squeeze(0);
  }
  return out;
}

torch::Tensor BodyModel::regress_joints_lsp(const torch::Tensor& vertices) const {
  if (vertices.dim() < 2 || vertices.size(-1) != 3 || vertices.size(-2) != num_vertices()) {
    std::ostringstream os;
    os << "regress_joints_lsp: expected [..., " << num_vertices() << ", 3], got " << vertices.sizes();
    throw InvalidArgument(os.str());
  }
  return torch::matmul(data_.lsp_regressor.to(vertices.dtype()), vertices);
}

}  // namespace occmocap
