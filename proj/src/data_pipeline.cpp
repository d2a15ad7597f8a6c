#include "occmocap/data_pipeline.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "occmocap/archive.hpp"
#include "occmocap/errors.hpp"
#include "occmocap/rotation.hpp"

namespace occmocap {

namespace {

// Per-axis joint-angle range (radians): angle = center + amplitude * s(t)
// with |s| <= 1. Knees and elbows bend one way only.
struct JointRange {
  std::array<double, 3> center;
  std::array<double, 3> amplitude;
};

constexpr JointRange kJointRanges[kBodyJoints] = {
    {{0.0, 0.0, 0.0}, {0.15, 0.15, 0.15}},   // pelvis
    {{-0.2, 0.0, 0.1}, {0.6, 0.2, 0.2}},     // L hip
    {{-0.2, 0.0, -0.1}, {0.6, 0.2, 0.2}},    // R hip
    {{0.0, 0.0, 0.0}, {0.2, 0.1, 0.1}},      // spine1
    {{0.7, 0.0, 0.0}, {0.6, 0.05, 0.05}},    // L knee
    {{0.7, 0.0, 0.0}, {0.6, 0.05, 0.05}},    // R knee
    {{0.0, 0.0, 0.0}, {0.15, 0.1, 0.1}},     // spine2
    {{0.0, 0.0, 0.0}, {0.25, 0.1, 0.1}},     // L ankle
    {{0.0, 0.0, 0.0}, {0.25, 0.1, 0.1}},     // R ankle
    {{0.0, 0.0, 0.0}, {0.1, 0.1, 0.1}},      // spine3
    {{0.0, 0.0, 0.0}, {0.1, 0.05, 0.05}},    // L foot
    {{0.0, 0.0, 0.0}, {0.1, 0.05, 0.05}},    // R foot
    {{0.0, 0.0, 0.0}, {0.2, 0.2, 0.1}},      // neck
    {{0.0, 0.0, 0.0}, {0.1, 0.1, 0.1}},      // L collar
    {{0.0, 0.0, 0.0}, {0.1, 0.1, 0.1}},      // R collar
    {{0.0, 0.0, 0.0}, {0.2, 0.3, 0.1}},      // head
    {{0.0, 0.0, -1.0}, {0.3, 0.5, 0.4}},     // L shoulder
    {{0.0, 0.0, 1.0}, {0.3, 0.5, 0.4}},      // R shoulder
    {{0.0, -0.8, 0.0}, {0.1, 0.7, 0.05}},    // L elbow
    {{0.0, 0.8, 0.0}, {0.1, 0.7, 0.05}},     // R elbow
    {{0.0, 0.0, 0.0}, {0.2, 0.2, 0.2}},      // L wrist
    {{0.0, 0.0, 0.0}, {0.2, 0.2, 0.2}},      // R wrist
    {{0.0, 0.0, 0.0}, {0.1, 0.1, 0.1}},      // L hand
    {{0.0, 0.0, 0.0}, {0.1, 0.1, 0.1}},      // R hand
};

using Uniform = std::uniform_real_distribution<double>;

// Euler-angle trajectory [F, 3] for one joint: per axis an offset plus up
// to three sinusoids, normalized so the excursion stays within the range.
torch::Tensor oscillation(std::mt19937_64& rng, int frames, const JointRange& range, double scale) {
  auto out = torch::zeros({frames, 3}, torch::kFloat64);
  auto acc = out.accessor<double, 2>();
  for (int axis = 0; axis < 3; ++axis) {
    const double base = Uniform(-0.5, 0.5)(rng);
    const int terms = std::uniform_int_distribution<int>(1, 3)(rng);
    std::array<double, 3> amp{}, freq{}, phase{};
    double bound = 0.5;
    for (int m = 0; m < terms; ++m) {
      amp[m] = Uniform(0.0, 1.0)(rng) / (m + 1);
      freq[m] = Uniform(0.05, 0.35)(rng);
      phase[m] = Uniform(0.0, 2.0 * std::numbers::pi)(rng);
      bound += amp[m];
    }
    const double a = range.amplitude[axis] * scale / bound;
    for (int t = 0; t < frames; ++t) {
      double v = base;
      for (int m = 0; m < terms; ++m) {
        v += amp[m] * std::sin(freq[m] * t + phase[m]);
      }
      acc[t][axis] = range.center[axis] * scale + a * v;
    }
  }
  return out;
}

// Rotation R_z(c) R_y(b) R_x(a) for rows (a, b, c) of `angles` [F, 3].
torch::Tensor euler_to_matrix(const torch::Tensor& angles) {
  const auto ex = torch::zeros_like(angles);
  auto rx = ex.clone(), ry = ex.clone(), rz = ex.clone();
  rx.select(1, 0).copy_(angles.select(1, 0));
  ry.select(1, 1).copy_(angles.select(1, 1));
  rz.select(1, 2).copy_(angles.select(1, 2));
  return torch::matmul(axis_angle_to_matrix(rz), torch::matmul(axis_angle_to_matrix(ry), axis_angle_to_matrix(rx)));
}

torch::Tensor rotation_x(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return torch::tensor({1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c}, torch::kFloat64).reshape({3, 3});
}

torch::Tensor rotation_y(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return torch::tensor({c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c}, torch::kFloat64).reshape({3, 3});
}

[[noreturn]] void parse_error(int line, const std::string& msg) {
  throw DataError("detections line " + std::to_string(line) + ": " + msg);
}

}  // namespace

void MotionSample::validate() const {
  check_shape(clean2d, {-1, -1, 2}, "sample clean2d");
  const auto f = clean2d.size(0);
  const auto k = clean2d.size(1);
  check_shape(occluded2d, {f, k, 2}, "sample occluded2d");
  check_shape(mask, {f, k}, "sample mask");
  check_shape(gt3d, {f, -1, 6}, "sample gt3d");
  check_shape(beta, {-1}, "sample beta");
  check_shape(translations, {f, 3}, "sample translations");
  if (static_cast<int64_t>(bboxes.size()) != f) {
    throw InvalidArgument("sample: need one bbox per frame");
  }
  intrinsics.validate();
}

void SynthConfig::validate() const {
  if (frames < 3) throw ConfigError("synth: frames must be >= 3");
  if (amplitude_scale < 0.0 || shape_std < 0.0) throw ConfigError("synth: amplitude_scale and shape_std must be >= 0");
  if (!(depth_range.first > 1.5) || depth_range.second < depth_range.first) {
    throw ConfigError("synth: depth_range must be ordered and keep the body in front of the camera (> 1.5 m)");
  }
  if (!(focal > 0.0) || !(frame_rate > 0.0)) throw ConfigError("synth: focal and frame_rate must be positive");
  occlusion.validate();
}

uint64_t sample_seed(uint64_t seed, uint64_t index) {
  // splitmix64 of the combined key
  uint64_t z = seed * 0x9E3779B97F4A7C15ull + index + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

MotionSample generate_synthetic_motion(std::mt19937_64& rng, const SynthConfig& cfg, const BodyModel& body) {
  cfg.validate();
  const int frames = cfg.frames;
  const auto nj = body.num_joints();
  const auto body64 = body.to(torch::kFloat64);

  // Joint rotations [F, N, 3, 3].
  std::vector<torch::Tensor> per_joint;
  per_joint.reserve(static_cast<size_t>(nj));
  const double yaw = Uniform(-cfg.yaw_range, cfg.yaw_range)(rng);
  const auto upright = torch::matmul(rotation_x(std::numbers::pi), rotation_y(yaw));
  for (int64_t j = 0; j < nj; ++j) {
    const auto& range = kJointRanges[std::min<int64_t>(j, kBodyJoints - 1)];
    auto local = euler_to_matrix(oscillation(rng, frames, range, cfg.amplitude_scale));
    if (j == 0) {
      local = torch::matmul(upright, local);
    }
    per_joint.push_back(local);
  }
  const auto rotations = torch::stack(per_joint, 1);

  MotionSample s;
  s.beta = torch::zeros({body.num_shape()}, torch::kFloat64);
  {
    std::normal_distribution<double> normal(0.0, 1.0);
    auto acc = s.beta.accessor<double, 1>();
    for (int64_t i = 0; i < body.num_shape(); ++i) acc[i] = cfg.shape_std * normal(rng);
  }
  s.gt3d = matrix_to_rot6d(rotations);

  // Translation: start point, constant velocity, small wobble.
  const double z0 = Uniform(cfg.depth_range.first, cfg.depth_range.second)(rng);
  const double x0 = Uniform(-cfg.lateral_range, cfg.lateral_range)(rng);
  const double y0 = Uniform(-cfg.lateral_range, cfg.lateral_range)(rng);
  Eigen::Vector3d velocity;
  for (int c = 0; c < 3; ++c) velocity[c] = Uniform(-cfg.max_speed, cfg.max_speed)(rng);
  const double wobble_freq = Uniform(0.1, 0.4)(rng);
  const double wobble_phase = Uniform(0.0, 2.0 * std::numbers::pi)(rng);
  s.translations = torch::zeros({frames, 3}, torch::kFloat64);
  {
    auto acc = s.translations.accessor<double, 2>();
    for (int t = 0; t < frames; ++t) {
      const double wob = 0.03 * cfg.amplitude_scale * std::sin(wobble_freq * t + wobble_phase);
      acc[t][0] = x0 + velocity.x() * t + wob;
      acc[t][1] = y0 + velocity.y() * t;
      acc[t][2] = z0 + velocity.z() * t;
    }
  }

  s.intrinsics.focal = Eigen::Vector2d(cfg.focal, cfg.focal);
  s.intrinsics.principal_point = cfg.principal_point;
  s.frame_rate = cfg.frame_rate;

  const auto posed = body64.forward(rotations, s.beta.unsqueeze(0).expand({frames, body.num_shape()}));
  const auto lsp = body64.regress_joints_lsp(posed.vertices);  // [F, 14, 3]
  const auto world = lsp + s.translations.unsqueeze(1);
  s.clean2d = torch::zeros({frames, kLspJoints, 2}, torch::kFloat64);
  for (int t = 0; t < frames; ++t) {
    const Points2 pixels = project(s.intrinsics, to_points3(world[t]));
    const Bbox box = bbox_from_points(pixels, cfg.bbox_padding);
    s.bboxes.push_back(box);
    s.clean2d[t] = from_points(normalize_pose2d(pixels, box));
  }

  const auto token = torch::zeros({2}, torch::kFloat64);
  if (cfg.occlusion.target_ratio > 0.0) {
    const auto tracks = sample_calibrated_occluders(cfg.occlusion, s.clean2d, rng);
    auto occ = synthesize_occlusion(s.clean2d, tracks, token);
    s.occluded2d = occ.map;
    s.mask = occ.mask;
  } else {
    s.mask = torch::zeros({frames, kLspJoints}, torch::kBool);
    s.occluded2d = s.clean2d.clone();
  }
  return s;
}

std::vector<MotionSample> generate_dataset(uint64_t seed, size_t count, const SynthConfig& cfg,
                                           const BodyModel& body) {
  std::vector<MotionSample> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(sample_seed(seed, i));
    out.push_back(generate_synthetic_motion(rng, cfg, body));
  }
  return out;
}

void save_sample(const MotionSample& sample, const std::filesystem::path& path) {
  sample.validate();
  ArrayArchive a;
  a.put_string("schema", "occmocap.motion_sample");
  a.put_int("schema_version", kSampleSchemaVersion);
  a.put("clean2d", sample.clean2d.to(torch::kFloat64));
  a.put("occluded2d", sample.occluded2d.to(torch::kFloat64));
  a.put("mask", sample.mask.to(torch::kUInt8));
  a.put("gt3d", sample.gt3d.to(torch::kFloat64));
  a.put("beta", sample.beta.to(torch::kFloat64));
  a.put("translations", sample.translations.to(torch::kFloat64));
  const auto& k = sample.intrinsics;
  a.put("intrinsics", torch::tensor({k.focal.x(), k.focal.y(), k.principal_point.x(), k.principal_point.y()},
                                    torch::kFloat64));
  auto boxes = torch::zeros({static_cast<int64_t>(sample.bboxes.size()), 3}, torch::kFloat64);
  for (size_t i = 0; i < sample.bboxes.size(); ++i) {
    boxes[i][0] = sample.bboxes[i].center.x();
    boxes[i][1] = sample.bboxes[i].center.y();
    boxes[i][2] = sample.bboxes[i].scale;
  }
  a.put("bboxes", boxes);
  a.put_double("frame_rate", sample.frame_rate);
  a.save(path);
}

MotionSample load_sample(const std::filesystem::path& path) {
  const auto a = ArrayArchive::load(path);
  if (!a.contains("schema") || a.get_string("schema") != "occmocap.motion_sample") {
    throw DataError(path.string() + ": not a motion sample archive");
  }
  if (a.get_int("schema_version") != kSampleSchemaVersion) {
    throw DataError(path.string() + ": unsupported sample schema version " +
                    std::to_string(a.get_int("schema_version")));
  }
  MotionSample s;
  try {
    s.clean2d = a.get("clean2d").to(torch::kFloat64);
    s.occluded2d = a.get("occluded2d").to(torch::kFloat64);
    s.mask = a.get("mask").to(torch::kBool);
    s.gt3d = a.get("gt3d").to(torch::kFloat64);
    s.beta = a.get("beta").to(torch::kFloat64);
    s.translations = a.get("translations").to(torch::kFloat64);
    const auto k = a.get("intrinsics").to(torch::kFloat64);
    if (k.numel() != 4) throw DataError("intrinsics must have 4 entries");
    s.intrinsics.focal = {k[0].item<double>(), k[1].item<double>()};
    s.intrinsics.principal_point = {k[2].item<double>(), k[3].item<double>()};
    const auto boxes = a.get("bboxes").to(torch::kFloat64);
    check_shape(boxes, {-1, 3}, "bboxes");
    for (int64_t i = 0; i < boxes.size(0); ++i) {
      s.bboxes.push_back({{boxes[i][0].item<double>(), boxes[i][1].item<double>()}, boxes[i][2].item<double>()});
    }
    s.frame_rate = a.get_double("frame_rate");
    s.validate();
  } catch (const Error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return s;
}

void save_dataset(const std::vector<MotionSample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < samples.size(); ++i) {
    std::ostringstream name;
    name << "seq_" << std::setw(5) << std::setfill('0') << i << ".ocm";
    save_sample(samples[i], dir / name.str());
  }
}

std::vector<MotionSample> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("dataset directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".ocm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw DataError("dataset directory has no .ocm files: " + dir.string());
  }
  std::vector<MotionSample> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_sample(f));
  return out;
}

BodyOutput sample_body(const MotionSample& sample, const BodyModel& body) {
  torch::NoGradGuard no_grad;
  const auto frames = sample.frames();
  const auto rot = rot6d_to_matrix(sample.gt3d.to(torch::kFloat64));
  const auto posed = body.to(torch::kFloat64).forward(rot, sample.beta.unsqueeze(0).expand({frames, sample.beta.size(0)}));
  return {posed.vertices, body.regress_joints_lsp(posed.vertices)};
}

DetectionFile parse_detections(std::istream& in) {
  DetectionFile file;
  std::string raw;
  int line_no = 0;
  int64_t frames = -1;
  bool header = false;
  bool have_intrinsics = false;
  int64_t current = -1;  // frame being filled
  int64_t filled = 0;

  auto next_tokens = [&](std::vector<std::string>& tokens) {
    while (std::getline(in, raw)) {
      ++line_no;
      const auto hash = raw.find('#');
      std::istringstream ls(hash == std::string::npos ? raw : raw.substr(0, hash));
      tokens.clear();
      for (std::string tok; ls >> tok;) tokens.push_back(tok);
      if (!tokens.empty()) return true;
    }
    return false;
  };
  auto number = [&](const std::string& s) {
    try {
      size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      parse_error(line_no, "expected a number, got '" + s + "'");
    }
  };

  std::vector<std::string> tok;
  while (next_tokens(tok)) {
    if (!header) {
      if (tok.size() != 2 || tok[0] != "occmocap-detections") parse_error(line_no, "missing 'occmocap-detections' header");
      if (tok[1] != "1") parse_error(line_no, "unsupported detection format version " + tok[1]);
      header = true;
    } else if (tok[0] == "joints") {
      if (tok.size() != 2) parse_error(line_no, "expected 'joints K'");
      file.joints = static_cast<int64_t>(number(tok[1]));
      if (file.joints <= 0) parse_error(line_no, "joint count must be positive");
    } else if (tok[0] == "frames") {
      if (tok.size() != 2) parse_error(line_no, "expected 'frames F'");
      frames = static_cast<int64_t>(number(tok[1]));
      if (frames <= 0) parse_error(line_no, "frame count must be positive");
    } else if (tok[0] == "intrinsics") {
      if (tok.size() != 5) parse_error(line_no, "expected 'intrinsics fx fy cx cy'");
      file.intrinsics.focal = {number(tok[1]), number(tok[2])};
      file.intrinsics.principal_point = {number(tok[3]), number(tok[4])};
      if (!(file.intrinsics.focal.minCoeff() > 0.0)) parse_error(line_no, "focal lengths must be positive");
      have_intrinsics = true;
    } else if (tok[0] == "frame") {
      if (file.joints <= 0 || frames <= 0 || !have_intrinsics) {
        parse_error(line_no, "'joints', 'frames' and 'intrinsics' must precede the first frame");
      }
      if (current >= 0 && filled != file.joints) {
        parse_error(line_no, "frame " + std::to_string(current) + " has " + std::to_string(filled) + " joints, expected " +
                                 std::to_string(file.joints));
      }
      if (tok.size() != 2 && tok.size() != 6) parse_error(line_no, "expected 'frame i [bbox cx cy scale]'");
      const auto index = static_cast<int64_t>(number(tok[1]));
      if (index != file.frames()) parse_error(line_no, "frame " + std::to_string(index) + " out of order");
      if (index >= frames) parse_error(line_no, "more frames than declared");
      std::optional<Bbox> box;
      if (tok.size() == 6) {
        if (tok[2] != "bbox") parse_error(line_no, "expected 'bbox' after the frame index");
        box = Bbox{{number(tok[3]), number(tok[4])}, number(tok[5])};
        if (!(box->scale > 0.0)) parse_error(line_no, "bbox scale must be positive");
      }
      current = index;
      filled = 0;
      file.keypoints.push_back(Points2::Zero(file.joints, 2));
      file.confidences.push_back(Eigen::VectorXd::Zero(file.joints));
      file.bboxes.push_back(box);
    } else {
      if (current < 0) parse_error(line_no, "unexpected '" + tok[0] + "' before the first frame");
      if (tok.size() != 3) parse_error(line_no, "expected 'x y conf' in frame " + std::to_string(current));
      if (filled >= file.joints) parse_error(line_no, "too many joints in frame " + std::to_string(current));
      const double conf = number(tok[2]);
      if (conf < 0.0 || conf > 1.0) parse_error(line_no, "confidence outside [0, 1] in frame " + std::to_string(current));
      file.keypoints.back()(filled, 0) = number(tok[0]);
      file.keypoints.back()(filled, 1) = number(tok[1]);
      file.confidences.back()[filled] = conf;
      ++filled;
    }
  }
  if (!header) {
    throw DataError("detections: empty file");
  }
  if (current < 0) parse_error(line_no, "no frames");
  if (filled != file.joints) {
    parse_error(line_no, "frame " + std::to_string(current) + " has " + std::to_string(filled) + " joints, expected " +
                             std::to_string(file.joints));
  }
  if (file.frames() != frames) {
    parse_error(line_no, "declared " + std::to_string(frames) + " frames, found " + std::to_string(file.frames()));
  }
  return file;
}

DetectionFile read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open detection file " + path.string());
  }
  try {
    return parse_detections(in);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_detections(const DetectionFile& file, std::ostream& out) {
  out << std::setprecision(17);
  out << "occmocap-detections 1\n";
  out << "joints " << file.joints << "\n";
  out << "frames " << file.frames() << "\n";
  out << "intrinsics " << file.intrinsics.focal.x() << " " << file.intrinsics.focal.y() << " "
      << file.intrinsics.principal_point.x() << " " << file.intrinsics.principal_point.y() << "\n";
  for (int64_t t = 0; t < file.frames(); ++t) {
    out << "frame " << t;
    if (t < static_cast<int64_t>(file.bboxes.size()) && file.bboxes[t]) {
      const auto& b = *file.bboxes[t];
      out << " bbox " << b.center.x() << " " << b.center.y() << " " << b.scale;
    }
    out << "\n";
    for (int64_t k = 0; k < file.joints; ++k) {
      out << file.keypoints[t](k, 0) << " " << file.keypoints[t](k, 1) << " " << file.confidences[t][k] << "\n";
    }
  }
}

DetectionFile detections_from_sample(const MotionSample& sample) {
  sample.validate();
  DetectionFile file;
  file.joints = sample.joints2d();
  file.intrinsics = sample.intrinsics;
  const auto mask = sample.mask.to(torch::kBool);
  for (int64_t t = 0; t < sample.frames(); ++t) {
    file.keypoints.push_back(denormalize_pose2d(to_points2(sample.clean2d[t]), sample.bboxes[t]));
    Eigen::VectorXd conf = Eigen::VectorXd::Ones(file.joints);
    for (int64_t k = 0; k < file.joints; ++k) {
      if (mask[t][k].item<bool>()) conf[k] = 0.0;
    }
    file.confidences.push_back(conf);
    file.bboxes.emplace_back(sample.bboxes[t]);
  }
  return file;
}

IngestedDetections ingest_detections(const DetectionFile& file, double threshold, const torch::Tensor& token) {
  const auto frames = file.frames();
  if (frames == 0 || file.joints <= 0) {
    throw DataError("ingest_detections: no detections");
  }
  // Bboxes: explicit, else from confident joints, else nearest known frame.
  std::vector<std::optional<Bbox>> boxes(static_cast<size_t>(frames));
  for (int64_t t = 0; t < frames; ++t) {
    if (t < static_cast<int64_t>(file.bboxes.size()) && file.bboxes[t]) {
      boxes[t] = file.bboxes[t];
      continue;
    }
    std::vector<Eigen::Index> visible;
    for (Eigen::Index k = 0; k < file.joints; ++k) {
      if (file.confidences[t][k] >= threshold) visible.push_back(k);
    }
    if (visible.size() >= 2) {
      Points2 pts(static_cast<Eigen::Index>(visible.size()), 2);
      for (size_t i = 0; i < visible.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = file.keypoints[t].row(visible[i]);
      const auto box = bbox_from_points(pts, 0.2);
      if (box.scale > 1.0) boxes[t] = box;
    }
  }
  if (std::none_of(boxes.begin(), boxes.end(), [](const auto& b) { return b.has_value(); })) {
    // Nothing confident anywhere: fall back to every joint of each frame.
    for (int64_t t = 0; t < frames; ++t) boxes[t] = bbox_from_points(file.keypoints[t], 0.2);
  }
  std::vector<Bbox> resolved(static_cast<size_t>(frames));
  for (int64_t t = 0; t < frames; ++t) {
    if (boxes[t]) {
      resolved[t] = *boxes[t];
      continue;
    }
    for (int64_t d = 1; d < frames; ++d) {
      if (t - d >= 0 && boxes[t - d]) {
        resolved[t] = *boxes[t - d];
        break;
      }
      if (t + d < frames && boxes[t + d]) {
        resolved[t] = *boxes[t + d];
        break;
      }
    }
  }

  IngestedDetections out;
  out.bboxes = resolved;
  out.normalized = torch::zeros({frames, file.joints, 2}, torch::kFloat64);
  out.mask = torch::zeros({frames, file.joints}, torch::kBool);
  auto mask = out.mask.accessor<bool, 2>();
  for (int64_t t = 0; t < frames; ++t) {
    out.normalized[t] = from_points(normalize_pose2d(file.keypoints[t], resolved[t]));
    for (int64_t k = 0; k < file.joints; ++k) {
      mask[t][k] = file.confidences[t][k] < threshold;
    }
  }
  out.occluded = apply_occlusion_token(out.normalized, out.mask, token.detach().to(torch::kFloat64));
  return out;
}

std::vector<std::vector<size_t>> make_batches(size_t count, size_t batch_size, uint64_t shuffle_seed) {
  if (count == 0) {
    throw InvalidArgument("make_batches: empty sample set");
  }
  if (batch_size == 0) {
    throw InvalidArgument("make_batches: batch size must be positive");
  }
  std::vector<size_t> order(count);
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(shuffle_seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<size_t>> batches;
  for (size_t start = 0; start < count; start += batch_size) {
    const size_t end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

SampleBatch collate(const std::vector<MotionSample>& samples, const std::vector<size_t>& indices) {
  if (indices.empty()) {
    throw InvalidArgument("collate: empty batch");
  }
  std::vector<torch::Tensor> clean, mask, gt3d, beta;
  for (const auto i : indices) {
    if (i >= samples.size()) throw InvalidArgument("collate: index out of range");
    const auto& s = samples[i];
    clean.push_back(s.clean2d);
    mask.push_back(s.mask.to(torch::kBool));
    gt3d.push_back(s.gt3d);
    beta.push_back(s.beta);
  }
  return {torch::stack(clean), torch::stack(mask), torch::stack(gt3d), torch::stack(beta)};
}

}  // namespace occmocap
