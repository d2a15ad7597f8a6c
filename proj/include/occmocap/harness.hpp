#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "occmocap/body_model.hpp"
#include "occmocap/data_pipeline.hpp"
#include "occmocap/global_fit.hpp"
#include "occmocap/lifting_net.hpp"
#include "occmocap/metrics.hpp"
#include "occmocap/prior_net.hpp"

namespace occmocap {

struct TrainingConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-2;
  int64_t batch_size = 32;
  int64_t prior_epochs = 5;
  int64_t lifting_epochs = 10;
  /// Each training sequence gets a fresh occlusion per step with a ratio
  /// drawn uniformly from this range.
  std::pair<double, double> occlusion_ratio_range{0.0, 0.5};
  bool freeze_prior = false;
  /// Train the lifting network from a randomly initialized prior instead of
  /// the pretrained one.
  bool no_prior = false;
  MotionLossWeights loss;
};

struct ExperimentConfig {
  uint64_t seed = 0;
  SynthConfig synth;
  int64_t train_samples = 2000;
  int64_t eval_samples = 200;
  /// Occlusion applied to the evaluation set.
  double eval_occlusion_ratio = 0.3;
  PriorConfig prior;
  LiftingConfig lifting;
  TrainingConfig training;
  double threshold = kConfidenceThreshold;
  TranslationFitOptions translation;
  std::vector<double> sweep_ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};

  /// Throws ConfigError on inconsistent values (e.g. prior sizes that do not
  /// match the synthetic data).
  void validate() const;
};

/// JSON config tree. Missing keys keep their defaults; unknown keys and
/// wrongly typed values throw ConfigError.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Clean training sequences and an occluded evaluation set, both drawn from
/// independent streams of `cfg.seed`.
std::vector<MotionSample> make_train_set(const ExperimentConfig& cfg, const BodyModel& body);
std::vector<MotionSample> make_eval_set(const ExperimentConfig& cfg, const BodyModel& body);

/// Batch with freshly synthesized occlusion: clean [B,F,K,2] float32, mask
/// [B,F,K]. Sample i of the batch draws from stream (step_seed, i).
struct OccludedBatch {
  torch::Tensor clean2d;
  torch::Tensor mask;
  torch::Tensor gt3d;  ///< float32
  torch::Tensor beta;  ///< float32
};
OccludedBatch make_occluded_batch(const std::vector<MotionSample>& samples, const std::vector<size_t>& indices,
                                  const OcclusionConfig& occlusion, std::pair<double, double> ratio_range,
                                  uint64_t step_seed);

/// Copies the samples and re-synthesizes their occlusion at `ratio`.
std::vector<MotionSample> reocclude(const std::vector<MotionSample>& samples, const OcclusionConfig& occlusion,
                                    double ratio, uint64_t seed);

struct StepLog {
  int64_t step = 0;
  int64_t epoch = 0;
  double loss = 0.0;
};

/// Checkpoint: a torch archive holding the format version, the resolved
/// config JSON, the stage name, the step counter, the loss history, the
/// module parameters under "prior." / "lifting." and the optimizer state.
inline constexpr int64_t kCheckpointVersion = 1;

/// Self-supervised prior training. Step t uses epoch t / steps_per_epoch,
/// the batch order of that epoch and occlusion stream (seed, t), so a
/// resumed run continues bit-identically in single-threaded mode.
class PriorTrainer {
 public:
  PriorTrainer(ExperimentConfig cfg, std::vector<MotionSample> train);

  int64_t steps_per_epoch() const;
  /// One optimizer step; returns the masked L1 of that step.
  double step();
  /// Runs until `total_steps` steps have been taken.
  void run_until(int64_t total_steps, const std::function<void(const StepLog&)>& on_step = {});
  /// Masked L1 on a fixed batch without updating (for progress reports).
  double evaluate_batch(const std::vector<size_t>& indices, uint64_t occlusion_seed);

  void save(const std::filesystem::path& path) const;
  /// Restores weights, optimizer state and step counter. Throws ConfigError
  /// when the checkpoint's config does not match.
  void load(const std::filesystem::path& path);

  MotionPrior& prior() { return prior_; }
  int64_t global_step() const { return step_; }
  const std::vector<StepLog>& history() const { return history_; }
  const ExperimentConfig& config() const { return cfg_; }

 private:
  ExperimentConfig cfg_;
  std::vector<MotionSample> train_;
  MotionPrior prior_{nullptr};
  std::unique_ptr<torch::optim::AdamW> optimizer_;
  int64_t step_ = 0;
  std::vector<StepLog> history_;
};

/// Lifting training with the motion loss. The prior is finetuned jointly
/// unless cfg.training.freeze_prior is set.
class LiftingTrainer {
 public:
  /// `prior_checkpoint` empty or cfg.training.no_prior set: fresh prior.
  LiftingTrainer(ExperimentConfig cfg, std::vector<MotionSample> train, const BodyModel& body,
                 const std::filesystem::path& prior_checkpoint = {});

  int64_t steps_per_epoch() const;
  double step();
  void run_until(int64_t total_steps, const std::function<void(const StepLog&)>& on_step = {});

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

  LiftingNet& model() { return model_; }
  int64_t global_step() const { return step_; }
  const std::vector<StepLog>& history() const { return history_; }
  const ExperimentConfig& config() const { return cfg_; }

 private:
  ExperimentConfig cfg_;
  std::vector<MotionSample> train_;
  BodyModel body_;
  LiftingNet model_{nullptr};
  std::unique_ptr<torch::optim::AdamW> optimizer_;
  int64_t step_ = 0;
  std::vector<StepLog> history_;
};

/// Loads a prior into a fresh module built from the checkpoint's config.
/// Accepts prior and lifting checkpoints.
MotionPrior load_prior(const std::filesystem::path& path, ExperimentConfig* cfg_out = nullptr);

/// Inference-ready lifting model from a lifting checkpoint.
struct LoadedModel {
  ExperimentConfig config;
  LiftingNet model{nullptr};
};
LoadedModel load_lifting(const std::filesystem::path& path);

/// Predicted LSP joints and vertices for every sample.
struct Predictions {
  std::vector<Sequence3> joints;    ///< per sample, F x 14 x 3
  std::vector<Sequence3> vertices;  ///< per sample, F x V x 3
  torch::Tensor map3d;              ///< [S, F, N, 6]
  torch::Tensor beta;               ///< [S, B]
};
Predictions predict(LiftingNet& model, const std::vector<MotionSample>& samples, const BodyModel& body,
                    int64_t batch_size = 64);

/// MPJPE, PA-MPJPE, PVE and accel error per sequence plus their means.
EvaluationReport evaluate(LiftingNet& model, const std::vector<MotionSample>& samples, const BodyModel& body);

struct InferenceResult {
  torch::Tensor map3d;         ///< [F, N, 6]
  torch::Tensor rotations;     ///< [F, N, 3, 3]
  torch::Tensor beta;          ///< [B]
  torch::Tensor joints;        ///< [F, 14, 3] local
  torch::Tensor vertices;      ///< [F, V, 3] local
  torch::Tensor translations;  ///< [F, 3] camera frame
  torch::Tensor mask;          ///< [F, K]
  bool translation_ok = false;
  bool translation_converged = false;
  std::string warning;
};

/// Full pipeline on one detection sequence: ingest, lift in windows of the
/// model's frame count (the last window is aligned to the end; sequences
/// shorter than one window are padded by repeating their last frame), then
/// solve the global translation. A failed translation fit leaves zero
/// translations and sets `warning`.
InferenceResult infer(LiftingNet& model, const ExperimentConfig& cfg, const DetectionFile& detections,
                      const BodyModel& body);
void save_inference(const InferenceResult& result, const std::filesystem::path& path);

struct SweepCurve {
  std::string label;
  std::vector<double> mpjpe;
  std::vector<double> pa_mpjpe;
};
struct SweepResult {
  std::vector<double> ratios;
  std::vector<SweepCurve> curves;
};

/// Re-occludes `eval` at each ratio (same seed for every model) and
/// evaluates every model.
SweepResult sensitivity_sweep(const std::vector<std::pair<std::string, LiftingNet>>& models,
                              const std::vector<MotionSample>& eval, const OcclusionConfig& occlusion,
                              const std::vector<double>& ratios, uint64_t seed, const BodyModel& body);
std::string sweep_to_json(const SweepResult& result, const std::string& config_echo = {});
/// Line plot of MPJPE against occlusion ratio, one polyline per model.
std::string sweep_to_svg(const SweepResult& result);

}  // namespace occmocap
