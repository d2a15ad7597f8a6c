#include "occmocap/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <json.hpp>
#include <set>
#include <sstream>

#include "occmocap/archive.hpp"
#include "occmocap/errors.hpp"
#include "occmocap/rotation.hpp"

namespace occmocap {

using json = nlohmann::ordered_json;

namespace {

// Stream salts so the stages never share random numbers.
constexpr uint64_t kTrainStream = 0x7261696e;
constexpr uint64_t kEvalStream = 0x6576616c;
constexpr uint64_t kPriorShuffle = 0x70736875;
constexpr uint64_t kPriorOcclusion = 0x706f6363;
constexpr uint64_t kLiftShuffle = 0x6c736875;
constexpr uint64_t kLiftOcclusion = 0x6c6f6363;

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError(path_ + ": expected an object");
    }
  }

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<int64_t>() < 0) {
            throw ConfigError("expected a nonnegative integer");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("expected a number");
      }
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  void read_vec2(const std::string& key, Eigen::Vector2d& out) {
    std::array<double, 2> a{out.x(), out.y()};
    read(key, a);
    out = {a[0], a[1]};
  }

  template <class F>
  void child(const std::string& key, F&& fn) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    ObjectReader sub(*it, path_ + "." + key);
    fn(sub);
    sub.finish();
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) {
        throw ConfigError(path_ + ": unknown key '" + item.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_transformer(ObjectReader& r, TransformerConfig& t) {
  r.read("depth", t.depth);
  r.read("heads", t.heads);
  r.read("mlp_ratio", t.mlp_ratio);
}

json transformer_json(const TransformerConfig& t) {
  return {{"depth", t.depth}, {"heads", t.heads}, {"mlp_ratio", t.mlp_ratio}};
}

void check_range(std::pair<double, double> r, double lo, double hi, const char* what) {
  if (!(r.first >= lo) || !(r.second <= hi) || r.first > r.second) {
    std::ostringstream os;
    os << what << " must be an ordered pair within [" << lo << ", " << hi << "]";
    throw ConfigError(os.str());
  }
}

bool same_prior_architecture(const PriorConfig& a, const PriorConfig& b) {
  auto same_t = [](const TransformerConfig& x, const TransformerConfig& y) {
    return x.depth == y.depth && x.heads == y.heads && x.mlp_ratio == y.mlp_ratio;
  };
  return a.frames == b.frames && a.joints == b.joints && a.st.dilations == b.st.dilations &&
         a.st.branch_channels == b.st.branch_channels && same_t(a.spatial, b.spatial) &&
         same_t(a.temporal, b.temporal) && a.learn_token == b.learn_token;
}

bool same_lifting_architecture(const LiftingConfig& a, const LiftingConfig& b) {
  return a.body_joints == b.body_joints && a.shape_dim == b.shape_dim && a.head_hidden == b.head_hidden &&
         a.fuse_prior == b.fuse_prior && a.transformer.depth == b.transformer.depth &&
         a.transformer.heads == b.transformer.heads && a.transformer.mlp_ratio == b.transformer.mlp_ratio;
}

std::unique_ptr<torch::optim::AdamW> make_optimizer(torch::nn::Module& module, const TrainingConfig& t) {
  std::vector<torch::Tensor> params;
  for (const auto& p : module.parameters()) {
    if (p.requires_grad()) params.push_back(p);
  }
  if (params.empty()) {
    throw ConfigError("training: no trainable parameters");
  }
  return std::make_unique<torch::optim::AdamW>(
      params, torch::optim::AdamWOptions(t.learning_rate).weight_decay(t.weight_decay));
}

struct CheckpointHeader {
  std::string stage;
  std::string config;
  int64_t step = 0;
  std::vector<StepLog> history;
};

void write_header(torch::serialize::OutputArchive& ar, const CheckpointHeader& h) {
  ar.write("format_version", torch::tensor(kCheckpointVersion));
  ar.write("stage", c10::IValue(h.stage));
  ar.write("config", c10::IValue(h.config));
  ar.write("step", torch::tensor(h.step));
  auto hist = torch::zeros({static_cast<int64_t>(h.history.size()), 3}, torch::kFloat64);
  auto acc = hist.accessor<double, 2>();
  for (size_t i = 0; i < h.history.size(); ++i) {
    acc[i][0] = static_cast<double>(h.history[i].step);
    acc[i][1] = static_cast<double>(h.history[i].epoch);
    acc[i][2] = h.history[i].loss;
  }
  ar.write("loss_history", hist);
}

CheckpointHeader read_header(torch::serialize::InputArchive& ar, const std::filesystem::path& path) {
  CheckpointHeader h;
  try {
    torch::Tensor version;
    ar.read("format_version", version);
    if (version.item<int64_t>() != kCheckpointVersion) {
      throw ConfigError(path.string() + ": unsupported checkpoint version " + std::to_string(version.item<int64_t>()));
    }
    c10::IValue v;
    ar.read("stage", v);
    h.stage = v.toStringRef();
    ar.read("config", v);
    h.config = v.toStringRef();
    torch::Tensor step, hist;
    ar.read("step", step);
    h.step = step.item<int64_t>();
    ar.read("loss_history", hist);
    auto acc = hist.accessor<double, 2>();
    for (int64_t i = 0; i < hist.size(0); ++i) {
      h.history.push_back({static_cast<int64_t>(acc[i][0]), static_cast<int64_t>(acc[i][1]), acc[i][2]});
    }
  } catch (const c10::Error& e) {
    throw DataError(path.string() + ": not an occmocap checkpoint (" + e.what_without_backtrace() + ")");
  }
  return h;
}

torch::serialize::InputArchive open_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw DataError("checkpoint not found: " + path.string());
  }
  torch::serialize::InputArchive ar;
  try {
    ar.load_from(path.string());
  } catch (const c10::Error& e) {
    throw DataError(path.string() + ": unreadable checkpoint (" + e.what_without_backtrace() + ")");
  }
  return ar;
}

void load_module(torch::serialize::InputArchive& ar, const std::string& key, torch::nn::Module& module,
                 const std::filesystem::path& path) {
  torch::serialize::InputArchive sub;
  try {
    if (!ar.try_read(key, sub)) {
      throw DataError(path.string() + ": checkpoint has no '" + key + "' weights");
    }
    module.load(sub);
  } catch (const c10::Error& e) {
    throw ConfigError(path.string() + ": weights do not fit the configured model (" + e.what_without_backtrace() +
                      ")");
  }
}

void load_optimizer(torch::serialize::InputArchive& ar, torch::optim::Optimizer& opt,
                    const std::filesystem::path& path) {
  torch::serialize::InputArchive sub;
  if (!ar.try_read("optimizer", sub)) {
    throw DataError(path.string() + ": checkpoint has no optimizer state");
  }
  try {
    opt.load(sub);
  } catch (const c10::Error& e) {
    throw ConfigError(path.string() + ": optimizer state does not fit (" + e.what_without_backtrace() + ")");
  }
}

std::string xml_escape(const std::string& text) {
  std::string out;
  for (const char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  synth.validate();
  if (prior.frames != synth.frames || prior.joints != kLspJoints) {
    throw ConfigError("prior frames/joints must match the synthetic maps (" + std::to_string(synth.frames) + " x " +
                      std::to_string(kLspJoints) + ")");
  }
  prior.validate();
  const auto d = prior.feature_dim();
  if (lifting.transformer.heads <= 0 || d % lifting.transformer.heads != 0) {
    throw ConfigError("lifting: transformer heads must divide the feature dim " + std::to_string(d));
  }
  if (lifting.transformer.depth < 0 || prior.spatial.depth < 0 || prior.temporal.depth < 0) {
    throw ConfigError("transformer depth must be >= 0");
  }
  if (lifting.body_joints != kBodyJoints || lifting.shape_dim != kShapeDim || lifting.head_hidden <= 0) {
    throw ConfigError("lifting: body_joints/shape_dim must match the body model and head_hidden must be positive");
  }
  if (train_samples <= 0 || eval_samples <= 0) {
    throw ConfigError("data: train_samples and eval_samples must be positive");
  }
  if (!(eval_occlusion_ratio >= 0.0 && eval_occlusion_ratio <= 0.5)) {
    throw ConfigError("data: eval_occlusion_ratio must lie in [0, 0.5]");
  }
  const auto& t = training;
  if (!(t.learning_rate > 0.0) || t.weight_decay < 0.0 || t.batch_size <= 0 || t.prior_epochs < 0 ||
      t.lifting_epochs < 0) {
    throw ConfigError("training: learning_rate and batch_size must be positive, epochs and weight_decay >= 0");
  }
  check_range(t.occlusion_ratio_range, 0.0, 0.5, "training.occlusion_ratio_range");
  const auto& w = t.loss;
  if (w.map < 0 || w.vertices < 0 || w.joints < 0 || w.shape < 0 || w.smooth < 0) {
    throw ConfigError("training.loss: weights must be >= 0");
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("inference.threshold must lie in [0, 1]");
  }
  if (translation.smoothness_weight < 0.0 || translation.max_iterations <= 0 || !(translation.step_tolerance > 0.0) ||
      translation.max_backtracks < 0 || translation.min_joints_for_init < 1) {
    throw ConfigError("inference.translation: invalid solver options");
  }
  if (sweep_ratios.empty()) {
    throw ConfigError("sweep.ratios must not be empty");
  }
  for (const auto r : sweep_ratios) {
    if (!(r >= 0.0 && r <= 0.5)) throw ConfigError("sweep.ratios must lie in [0, 0.5]");
  }
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig cfg;
  ObjectReader root(j, "config");
  root.read("seed", cfg.seed);
  root.child("synth", [&](ObjectReader& r) {
    auto& s = cfg.synth;
    r.read("frames", s.frames);
    r.read("amplitude_scale", s.amplitude_scale);
    r.read("shape_std", s.shape_std);
    r.read("frame_rate", s.frame_rate);
    r.read("depth_range", s.depth_range);
    r.read("lateral_range", s.lateral_range);
    r.read("max_speed", s.max_speed);
    r.read("yaw_range", s.yaw_range);
    r.read("focal", s.focal);
    r.read_vec2("principal_point", s.principal_point);
    r.read("bbox_padding", s.bbox_padding);
  });
  root.child("occlusion", [&](ObjectReader& r) {
    auto& o = cfg.synth.occlusion;
    r.read("count_range", o.occluder_count_range);
    r.read("size_range", o.size_range);
    r.read("lifetime_range", o.lifetime_range);
    r.read("drift_range", o.drift_range);
    r.read("center_range", o.center_range);
  });
  root.child("data", [&](ObjectReader& r) {
    r.read("train_samples", cfg.train_samples);
    r.read("eval_samples", cfg.eval_samples);
    r.read("eval_occlusion_ratio", cfg.eval_occlusion_ratio);
  });
  root.child("prior", [&](ObjectReader& r) {
    r.read("dilations", cfg.prior.st.dilations);
    r.read("branch_channels", cfg.prior.st.branch_channels);
    r.child("spatial", [&](ObjectReader& t) { read_transformer(t, cfg.prior.spatial); });
    r.child("temporal", [&](ObjectReader& t) { read_transformer(t, cfg.prior.temporal); });
    r.read("learn_token", cfg.prior.learn_token);
  });
  root.child("lifting", [&](ObjectReader& r) {
    r.child("transformer", [&](ObjectReader& t) { read_transformer(t, cfg.lifting.transformer); });
    r.read("head_hidden", cfg.lifting.head_hidden);
    r.read("fuse_prior", cfg.lifting.fuse_prior);
  });
  root.child("training", [&](ObjectReader& r) {
    auto& t = cfg.training;
    r.read("learning_rate", t.learning_rate);
    r.read("weight_decay", t.weight_decay);
    r.read("batch_size", t.batch_size);
    r.read("prior_epochs", t.prior_epochs);
    r.read("lifting_epochs", t.lifting_epochs);
    r.read("occlusion_ratio_range", t.occlusion_ratio_range);
    r.read("freeze_prior", t.freeze_prior);
    r.read("no_prior", t.no_prior);
    r.child("loss", [&](ObjectReader& l) {
      l.read("map", t.loss.map);
      l.read("vertices", t.loss.vertices);
      l.read("joints", t.loss.joints);
      l.read("shape", t.loss.shape);
      l.read("smooth", t.loss.smooth);
    });
  });
  root.child("inference", [&](ObjectReader& r) {
    r.read("threshold", cfg.threshold);
    r.child("translation", [&](ObjectReader& t) {
      t.read("smoothness_weight", cfg.translation.smoothness_weight);
      t.read("max_iterations", cfg.translation.max_iterations);
      t.read("step_tolerance", cfg.translation.step_tolerance);
      t.read("max_backtracks", cfg.translation.max_backtracks);
      t.read("min_joints_for_init", cfg.translation.min_joints_for_init);
    });
  });
  root.child("sweep", [&](ObjectReader& r) { r.read("ratios", cfg.sweep_ratios); });
  root.finish();
  cfg.prior.frames = cfg.synth.frames;
  cfg.prior.joints = kLspJoints;
  cfg.validate();
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  const auto& s = cfg.synth;
  const auto& o = s.occlusion;
  const auto& t = cfg.training;
  json j;
  j["seed"] = cfg.seed;
  j["synth"] = {{"frames", s.frames},
                {"amplitude_scale", s.amplitude_scale},
                {"shape_std", s.shape_std},
                {"frame_rate", s.frame_rate},
                {"depth_range", s.depth_range},
                {"lateral_range", s.lateral_range},
                {"max_speed", s.max_speed},
                {"yaw_range", s.yaw_range},
                {"focal", s.focal},
                {"principal_point", {s.principal_point.x(), s.principal_point.y()}},
                {"bbox_padding", s.bbox_padding}};
  j["occlusion"] = {{"count_range", o.occluder_count_range},
                    {"size_range", o.size_range},
                    {"lifetime_range", o.lifetime_range},
                    {"drift_range", o.drift_range},
                    {"center_range", o.center_range}};
  j["data"] = {{"train_samples", cfg.train_samples},
               {"eval_samples", cfg.eval_samples},
               {"eval_occlusion_ratio", cfg.eval_occlusion_ratio}};
  j["prior"] = {{"dilations", cfg.prior.st.dilations},
                {"branch_channels", cfg.prior.st.branch_channels},
                {"spatial", transformer_json(cfg.prior.spatial)},
                {"temporal", transformer_json(cfg.prior.temporal)},
                {"learn_token", cfg.prior.learn_token}};
  j["lifting"] = {{"transformer", transformer_json(cfg.lifting.transformer)},
                  {"head_hidden", cfg.lifting.head_hidden},
                  {"fuse_prior", cfg.lifting.fuse_prior}};
  j["training"] = {{"learning_rate", t.learning_rate},
                   {"weight_decay", t.weight_decay},
                   {"batch_size", t.batch_size},
                   {"prior_epochs", t.prior_epochs},
                   {"lifting_epochs", t.lifting_epochs},
                   {"occlusion_ratio_range", t.occlusion_ratio_range},
                   {"freeze_prior", t.freeze_prior},
                   {"no_prior", t.no_prior},
                   {"loss",
                    {{"map", t.loss.map},
                     {"vertices", t.loss.vertices},
                     {"joints", t.loss.joints},
                     {"shape", t.loss.shape},
                     {"smooth", t.loss.smooth}}}};
  j["inference"] = {{"threshold", cfg.threshold},
                    {"translation",
                     {{"smoothness_weight", cfg.translation.smoothness_weight},
                      {"max_iterations", cfg.translation.max_iterations},
                      {"step_tolerance", cfg.translation.step_tolerance},
                      {"max_backtracks", cfg.translation.max_backtracks},
                      {"min_joints_for_init", cfg.translation.min_joints_for_init}}}};
  j["sweep"] = {{"ratios", cfg.sweep_ratios}};
  return j.dump(2);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return config_from_json(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<MotionSample> make_train_set(const ExperimentConfig& cfg, const BodyModel& body) {
  SynthConfig s = cfg.synth;
  s.occlusion.target_ratio = 0.0;
  return generate_dataset(sample_seed(cfg.seed, kTrainStream), static_cast<size_t>(cfg.train_samples), s, body);
}

std::vector<MotionSample> make_eval_set(const ExperimentConfig& cfg, const BodyModel& body) {
  SynthConfig s = cfg.synth;
  s.occlusion.target_ratio = cfg.eval_occlusion_ratio;
  return generate_dataset(sample_seed(cfg.seed, kEvalStream), static_cast<size_t>(cfg.eval_samples), s, body);
}

OccludedBatch make_occluded_batch(const std::vector<MotionSample>& samples, const std::vector<size_t>& indices,
                                  const OcclusionConfig& occlusion, std::pair<double, double> ratio_range,
                                  uint64_t step_seed) {
  const auto b = collate(samples, indices);
  auto mask = torch::zeros_like(b.mask);
  for (size_t i = 0; i < indices.size(); ++i) {
    std::mt19937_64 rng(sample_seed(step_seed, i));
    OcclusionConfig occ = occlusion;
    occ.target_ratio = std::uniform_real_distribution<double>(ratio_range.first, ratio_range.second)(rng);
    const auto tracks = sample_calibrated_occluders(occ, samples[indices[i]].clean2d, rng);
    mask[static_cast<int64_t>(i)] = occlusion_mask(samples[indices[i]].clean2d, tracks);
  }
  return {b.clean2d.to(torch::kFloat32), mask, b.gt3d.to(torch::kFloat32), b.beta.to(torch::kFloat32)};
}

std::vector<MotionSample> reocclude(const std::vector<MotionSample>& samples, const OcclusionConfig& occlusion,
                                    double ratio, uint64_t seed) {
  std::vector<MotionSample> out = samples;
  OcclusionConfig occ = occlusion;
  occ.target_ratio = ratio;
  occ.validate();
  const auto token = torch::zeros({2}, torch::kFloat64);
  for (size_t i = 0; i < out.size(); ++i) {
    std::mt19937_64 rng(sample_seed(seed, i));
    const auto tracks = sample_calibrated_occluders(occ, out[i].clean2d, rng);
    auto occluded = synthesize_occlusion(out[i].clean2d, tracks, token);
    out[i].occluded2d = occluded.map;
    out[i].mask = occluded.mask;
  }
  return out;
}

// ---------------------------------------------------------------- prior

PriorTrainer::PriorTrainer(ExperimentConfig cfg, std::vector<MotionSample> train)
    : cfg_(std::move(cfg)), train_(std::move(train)) {
  cfg_.validate();
  if (train_.empty()) {
    throw DataError("train-prior: no training samples");
  }
  for (const auto& s : train_) {
    if (s.frames() != cfg_.prior.frames || s.joints2d() != cfg_.prior.joints) {
      throw DataError("train-prior: sample shape does not match the configured frames/joints");
    }
  }
  torch::manual_seed(cfg_.seed);
  prior_ = MotionPrior(cfg_.prior);
  optimizer_ = make_optimizer(*prior_, cfg_.training);
}

int64_t PriorTrainer::steps_per_epoch() const {
  const auto n = static_cast<int64_t>(train_.size());
  return (n + cfg_.training.batch_size - 1) / cfg_.training.batch_size;
}

double PriorTrainer::step() {
  const auto spe = steps_per_epoch();
  const auto epoch = step_ / spe;
  const auto batches = make_batches(train_.size(), static_cast<size_t>(cfg_.training.batch_size),
                                    sample_seed(cfg_.seed ^ kPriorShuffle, static_cast<uint64_t>(epoch)));
  const auto& indices = batches[static_cast<size_t>(step_ % spe)];
  const auto batch = make_occluded_batch(train_, indices, cfg_.synth.occlusion, cfg_.training.occlusion_ratio_range,
                                         sample_seed(cfg_.seed ^ kPriorOcclusion, static_cast<uint64_t>(step_)));
  prior_->train();
  const auto out = prior_->forward(prior_->occlude(batch.clean2d, batch.mask));
  const auto loss = masked_l1_loss(out.map, batch.clean2d, batch.mask);
  optimizer_->zero_grad();
  loss.backward();
  optimizer_->step();
  const double value = loss.item<double>();
  history_.push_back({step_, epoch, value});
  ++step_;
  return value;
}

void PriorTrainer::run_until(int64_t total_steps, const std::function<void(const StepLog&)>& on_step) {
  while (step_ < total_steps) {
    step();
    if (on_step) on_step(history_.back());
  }
}

double PriorTrainer::evaluate_batch(const std::vector<size_t>& indices, uint64_t occlusion_seed) {
  torch::NoGradGuard no_grad;
  const auto batch = make_occluded_batch(train_, indices, cfg_.synth.occlusion, cfg_.training.occlusion_ratio_range,
                                         occlusion_seed);
  prior_->eval();
  const auto out = prior_->forward(prior_->occlude(batch.clean2d, batch.mask));
  return masked_l1_loss(out.map, batch.clean2d, batch.mask).item<double>();
}

void PriorTrainer::save(const std::filesystem::path& path) const {
  torch::serialize::OutputArchive ar;
  write_header(ar, {"prior", config_to_json(cfg_), step_, history_});
  torch::serialize::OutputArchive weights;
  prior_->save(weights);
  ar.write("prior", weights);
  torch::serialize::OutputArchive opt;
  optimizer_->save(opt);
  ar.write("optimizer", opt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  ar.save_to(path.string());
}

void PriorTrainer::load(const std::filesystem::path& path) {
  auto ar = open_checkpoint(path);
  const auto header = read_header(ar, path);
  if (header.stage != "prior") {
    throw ConfigError(path.string() + ": expected a prior checkpoint, found '" + header.stage + "'");
  }
  const auto saved = config_from_json(header.config);
  if (!same_prior_architecture(saved.prior, cfg_.prior)) {
    throw ConfigError(path.string() + ": prior architecture differs from the configured one");
  }
  load_module(ar, "prior", *prior_, path);
  load_optimizer(ar, *optimizer_, path);
  step_ = header.step;
  history_ = header.history;
}

// ---------------------------------------------------------------- lifting

LiftingTrainer::LiftingTrainer(ExperimentConfig cfg, std::vector<MotionSample> train, const BodyModel& body,
                               const std::filesystem::path& prior_checkpoint)
    : cfg_(std::move(cfg)), train_(std::move(train)), body_(body.to(torch::kFloat32)) {
  cfg_.validate();
  if (train_.empty()) {
    throw DataError("train-lifting: no training samples");
  }
  for (const auto& s : train_) {
    if (s.frames() != cfg_.prior.frames || s.joints2d() != cfg_.prior.joints ||
        s.gt3d.size(1) != cfg_.lifting.body_joints) {
      throw DataError("train-lifting: sample shape does not match the configured model");
    }
  }
  torch::manual_seed(cfg_.seed);
  MotionPrior prior(cfg_.prior);
  if (!prior_checkpoint.empty() && !cfg_.training.no_prior) {
    ExperimentConfig prior_cfg;
    auto loaded = load_prior(prior_checkpoint, &prior_cfg);
    if (!same_prior_architecture(prior_cfg.prior, cfg_.prior)) {
      throw ConfigError(prior_checkpoint.string() + ": prior architecture differs from the configured one");
    }
    torch::NoGradGuard no_grad;
    auto dst = prior->named_parameters();
    for (const auto& p : loaded->named_parameters()) {
      dst[p.key()].copy_(p.value());
    }
  }
  model_ = LiftingNet(cfg_.lifting, prior);
  if (cfg_.training.freeze_prior) {
    for (auto& p : model_->prior()->parameters()) p.set_requires_grad(false);
  }
  optimizer_ = make_optimizer(*model_, cfg_.training);
}

int64_t LiftingTrainer::steps_per_epoch() const {
  const auto n = static_cast<int64_t>(train_.size());
  return (n + cfg_.training.batch_size - 1) / cfg_.training.batch_size;
}

double LiftingTrainer::step() {
  const auto spe = steps_per_epoch();
  const auto epoch = step_ / spe;
  const auto batches = make_batches(train_.size(), static_cast<size_t>(cfg_.training.batch_size),
                                    sample_seed(cfg_.seed ^ kLiftShuffle, static_cast<uint64_t>(epoch)));
  const auto& indices = batches[static_cast<size_t>(step_ % spe)];
  const auto batch = make_occluded_batch(train_, indices, cfg_.synth.occlusion, cfg_.training.occlusion_ratio_range,
                                         sample_seed(cfg_.seed ^ kLiftOcclusion, static_cast<uint64_t>(step_)));
  model_->train();
  const auto targets = make_motion_targets(batch.gt3d, batch.beta, body_);
  const auto out = model_->forward(model_->prior()->occlude(batch.clean2d, batch.mask));
  const auto loss = motion_loss(out, targets, body_, cfg_.training.loss);
  optimizer_->zero_grad();
  loss.total.backward();
  optimizer_->step();
  const double value = loss.total.item<double>();
  history_.push_back({step_, epoch, value});
  ++step_;
  return value;
}

void LiftingTrainer::run_until(int64_t total_steps, const std::function<void(const StepLog&)>& on_step) {
  while (step_ < total_steps) {
    step();
    if (on_step) on_step(history_.back());
  }
}

void LiftingTrainer::save(const std::filesystem::path& path) const {
  torch::serialize::OutputArchive ar;
  write_header(ar, {"lifting", config_to_json(cfg_), step_, history_});
  torch::serialize::OutputArchive weights;
  model_->save(weights);
  ar.write("lifting", weights);
  torch::serialize::OutputArchive opt;
  optimizer_->save(opt);
  ar.write("optimizer", opt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  ar.save_to(path.string());
}

void LiftingTrainer::load(const std::filesystem::path& path) {
  auto ar = open_checkpoint(path);
  const auto header = read_header(ar, path);
  if (header.stage != "lifting") {
    throw ConfigError(path.string() + ": expected a lifting checkpoint, found '" + header.stage + "'");
  }
  const auto saved = config_from_json(header.config);
  if (!same_prior_architecture(saved.prior, cfg_.prior) || !same_lifting_architecture(saved.lifting, cfg_.lifting)) {
    throw ConfigError(path.string() + ": model architecture differs from the configured one");
  }
  load_module(ar, "lifting", *model_, path);
  load_optimizer(ar, *optimizer_, path);
  step_ = header.step;
  history_ = header.history;
}

MotionPrior load_prior(const std::filesystem::path& path, ExperimentConfig* cfg_out) {
  auto ar = open_checkpoint(path);
  const auto header = read_header(ar, path);
  const auto cfg = config_from_json(header.config);
  MotionPrior prior(cfg.prior);
  if (header.stage == "prior") {
    load_module(ar, "prior", *prior, path);
  } else if (header.stage == "lifting") {
    LiftingNet lifting(cfg.lifting, prior);
    load_module(ar, "lifting", *lifting, path);
  } else {
    throw DataError(path.string() + ": unknown checkpoint stage '" + header.stage + "'");
  }
  if (cfg_out) *cfg_out = cfg;
  return prior;
}

LoadedModel load_lifting(const std::filesystem::path& path) {
  auto ar = open_checkpoint(path);
  const auto header = read_header(ar, path);
  if (header.stage != "lifting") {
    throw ConfigError(path.string() + ": expected a lifting checkpoint, found '" + header.stage + "'");
  }
  LoadedModel out;
  out.config = config_from_json(header.config);
  out.model = LiftingNet(out.config.lifting, MotionPrior(out.config.prior));
  load_module(ar, "lifting", *out.model, path);
  out.model->eval();
  return out;
}

// ---------------------------------------------------------------- evaluation

Predictions predict(LiftingNet& model, const std::vector<MotionSample>& samples, const BodyModel& body,
                    int64_t batch_size) {
  if (samples.empty()) {
    throw DataError("predict: no samples");
  }
  torch::NoGradGuard no_grad;
  model->eval();
  const auto body64 = body.to(torch::kFloat64);
  std::vector<torch::Tensor> maps, betas;
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
    std::vector<size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto b = collate(samples, idx);
    const auto out = model->forward(model->prior()->occlude(b.clean2d.to(torch::kFloat32), b.mask));
    maps.push_back(out.map3d.to(torch::kFloat64));
    betas.push_back(out.beta.to(torch::kFloat64));
  }
  Predictions p;
  p.map3d = torch::cat(maps);
  p.beta = torch::cat(betas);
  const auto posed = pose_map3d(p.map3d, p.beta, body64);
  for (int64_t i = 0; i < p.map3d.size(0); ++i) {
    p.joints.push_back(to_sequence3(posed.joints[i]));
    p.vertices.push_back(to_sequence3(posed.vertices[i]));
  }
  return p;
}

EvaluationReport evaluate(LiftingNet& model, const std::vector<MotionSample>& samples, const BodyModel& body) {
  const auto pred = predict(model, samples, body);
  EvaluationReport report;
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto gt_body = sample_body(samples[i], body);
    const auto gt_joints = to_sequence3(gt_body.joints);
    const auto gt_vertices = to_sequence3(gt_body.vertices);
    const auto frames = static_cast<Eigen::Index>(gt_joints.size());
    Points3 pred_roots(frames, 3), gt_roots(frames, 3);
    for (Eigen::Index t = 0; t < frames; ++t) {
      pred_roots.row(t) = 0.5 * (pred.joints[i][t].row(kLspHips[0]) + pred.joints[i][t].row(kLspHips[1]));
      gt_roots.row(t) = 0.5 * (gt_joints[t].row(kLspHips[0]) + gt_joints[t].row(kLspHips[1]));
    }
    std::ostringstream name;
    name << "seq_" << std::setw(5) << std::setfill('0') << i;
    report.add(name.str(), {{"mpjpe", mpjpe(pred.joints[i], gt_joints)},
                            {"pa_mpjpe", pa_mpjpe(pred.joints[i], gt_joints)},
                            {"pve", pve(pred.vertices[i], gt_vertices, pred_roots, gt_roots)},
                            {"accel", accel_error(pred.joints[i], gt_joints)}});
  }
  report.finalize();
  return report;
}

// ---------------------------------------------------------------- inference

InferenceResult infer(LiftingNet& model, const ExperimentConfig& cfg, const DetectionFile& detections,
                      const BodyModel& body) {
  torch::NoGradGuard no_grad;
  model->eval();
  const auto& pc = model->prior()->config();
  if (detections.joints != pc.joints) {
    throw DataError("infer: detections have " + std::to_string(detections.joints) + " joints, the model expects " +
                    std::to_string(pc.joints));
  }
  const auto ingested = ingest_detections(detections, cfg.threshold, model->prior()->occlusion_token());
  const int64_t total = detections.frames();
  const int64_t window = pc.frames;

  // Pad short sequences by repeating the last frame.
  auto normalized = ingested.normalized.to(torch::kFloat32);
  auto mask = ingested.mask;
  if (total < window) {
    const auto pad = window - total;
    normalized = torch::cat({normalized, normalized.narrow(0, total - 1, 1).expand({pad, pc.joints, 2})});
    mask = torch::cat({mask, mask.narrow(0, total - 1, 1).expand({pad, pc.joints})});
  }
  const int64_t padded = std::max(total, window);
  std::vector<int64_t> starts;
  for (int64_t s = 0; s + window <= padded; s += window) starts.push_back(s);
  if (starts.back() + window < padded) starts.push_back(padded - window);

  auto map3d = torch::zeros({padded, cfg.lifting.body_joints, 6}, torch::kFloat64);
  auto beta = torch::zeros({cfg.lifting.shape_dim}, torch::kFloat64);
  int64_t filled = 0;
  for (const auto s : starts) {
    const auto x = normalized.narrow(0, s, window).unsqueeze(0);
    const auto m = mask.narrow(0, s, window).unsqueeze(0);
    const auto out = model->forward(model->prior()->occlude(x, m));
    const auto from = std::max(filled, s);
    map3d.narrow(0, from, s + window - from).copy_(out.map3d[0].narrow(0, from - s, s + window - from));
    filled = s + window;
    beta += out.beta[0].to(torch::kFloat64);
  }
  beta /= static_cast<double>(starts.size());
  map3d = map3d.narrow(0, 0, total).contiguous();

  InferenceResult r;
  r.map3d = map3d;
  r.rotations = rot6d_to_matrix(map3d);
  r.beta = beta;
  r.mask = ingested.mask;
  const auto body64 = body.to(torch::kFloat64);
  const auto posed = body64.forward(r.rotations, beta.unsqueeze(0).expand({total, beta.size(0)}));
  r.vertices = posed.vertices;
  r.joints = body64.regress_joints_lsp(posed.vertices);
  r.translations = torch::zeros({total, 3}, torch::kFloat64);

  // Occluded joints carry no weight in the reprojection term.
  std::vector<Eigen::VectorXd> weights;
  for (int64_t t = 0; t < total; ++t) {
    Eigen::VectorXd w = detections.confidences[t];
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      if (w[k] < cfg.threshold) w[k] = 0.0;
    }
    weights.push_back(w);
  }
  try {
    const auto fit =
        solve_translation(to_sequence3(r.joints), detections.keypoints, weights, detections.intrinsics, cfg.translation);
    for (int64_t t = 0; t < total; ++t) {
      for (int c = 0; c < 3; ++c) r.translations[t][c] = fit.translations[t][c];
    }
    r.translation_ok = true;
    r.translation_converged = fit.converged;
    if (!fit.converged) r.warning = "translation fit stopped at the iteration limit";
  } catch (const NumericalError& e) {
    r.warning = std::string("translation fit failed: ") + e.what();
  }
  return r;
}

void save_inference(const InferenceResult& result, const std::filesystem::path& path) {
  ArrayArchive a;
  a.put_string("schema", "occmocap.motion_output");
  a.put_int("schema_version", 1);
  a.put("map3d", result.map3d);
  a.put("rotations", result.rotations);
  a.put("beta", result.beta);
  a.put("joints_local", result.joints);
  a.put("vertices_local", result.vertices);
  a.put("translations", result.translations);
  a.put("joints_camera", result.joints + result.translations.unsqueeze(1));
  a.put("occlusion_mask", result.mask.to(torch::kUInt8));
  a.put_int("translation_ok", result.translation_ok ? 1 : 0);
  a.put_int("translation_converged", result.translation_converged ? 1 : 0);
  a.put_string("warning", result.warning);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  a.save(path);
}

// ---------------------------------------------------------------- sweep

SweepResult sensitivity_sweep(const std::vector<std::pair<std::string, LiftingNet>>& models,
                              const std::vector<MotionSample>& eval, const OcclusionConfig& occlusion,
                              const std::vector<double>& ratios, uint64_t seed, const BodyModel& body) {
  SweepResult result;
  result.ratios = ratios;
  for (const auto& [label, net] : models) result.curves.push_back({label, {}, {}});
  for (const auto ratio : ratios) {
    const auto occluded = reocclude(eval, occlusion, ratio, seed);
    for (size_t m = 0; m < models.size(); ++m) {
      auto net = models[m].second;
      const auto report = evaluate(net, occluded, body);
      result.curves[m].mpjpe.push_back(report.aggregate.at("mpjpe"));
      result.curves[m].pa_mpjpe.push_back(report.aggregate.at("pa_mpjpe"));
    }
  }
  return result;
}

std::string sweep_to_json(const SweepResult& result, const std::string& config_echo) {
  json j;
  j["ratios"] = result.ratios;
  auto curves = json::array();
  for (const auto& c : result.curves) {
    curves.push_back({{"label", c.label}, {"mpjpe", c.mpjpe}, {"pa_mpjpe", c.pa_mpjpe}});
  }
  j["curves"] = curves;
  if (!config_echo.empty()) j["config"] = json::parse(config_echo);
  return j.dump(2);
}

std::string sweep_to_svg(const SweepResult& result) {
  constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 170, kTop = 30, kBottom = 60;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double ymax = 0.0;
  for (const auto& c : result.curves) {
    for (const auto v : c.mpjpe) ymax = std::max(ymax, v);
  }
  ymax = ymax > 0.0 ? ymax * 1.1 : 1.0;
  const double xmin = result.ratios.empty() ? 0.0 : *std::min_element(result.ratios.begin(), result.ratios.end());
  double xmax = result.ratios.empty() ? 1.0 : *std::max_element(result.ratios.begin(), result.ratios.end());
  if (xmax <= xmin) xmax = xmin + 1.0;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return kTop + ph - y / ymax * ph; };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph
     << "\" stroke=\"black\"/>\n";
  for (const auto r : result.ratios) {
    os << "<text x=\"" << px(r) << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">"
       << static_cast<int>(std::lround(r * 100)) << "%</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double y = ymax * i / 5.0;
    os << "<line x1=\"" << kLeft << "\" y1=\"" << py(y) << "\" x2=\"" << kLeft + pw << "\" y2=\"" << py(y)
       << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << std::setprecision(0)
       << y << std::setprecision(2) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 15 << "\" text-anchor=\"middle\">occlusion ratio</text>\n";
  os << "<text x=\"18\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << kTop + ph / 2 << ")\">MPJPE (mm)</text>\n";
  for (size_t c = 0; c < result.curves.size(); ++c) {
    const auto& curve = result.curves[c];
    const char* color = kColors[c % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < curve.mpjpe.size() && i < result.ratios.size(); ++i) {
      os << px(result.ratios[i]) << "," << py(curve.mpjpe[i]) << " ";
    }
    os << "\"/>\n";
    for (size_t i = 0; i < curve.mpjpe.size() && i < result.ratios.size(); ++i) {
      os << "<circle cx=\"" << px(result.ratios[i]) << "\" cy=\"" << py(curve.mpjpe[i]) << "\" r=\"3\" fill=\""
         << color << "\"/>\n";
    }
    const double ly = kTop + 10 + 20.0 * static_cast<double>(c);
    os << "<line x1=\"" << kLeft + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + pw + 35 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kLeft + pw + 40 << "\" y=\"" << ly + 4 << "\">" << xml_escape(curve.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace occmocap
