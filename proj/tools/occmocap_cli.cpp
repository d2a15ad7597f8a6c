// occmocap: synthetic data, prior/lifting training, evaluation, inference and
// the occlusion-sensitivity sweep.

#include <torch/torch.h>

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>

#include "occmocap/errors.hpp"
#include "occmocap/harness.hpp"

namespace fs = std::filesystem;
using namespace occmocap;

namespace {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kConfig = 2,
  kData = 3,
  kNumerical = 4,
  kInvalidArgument = 5,
};

struct CommonOptions {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
  std::optional<double> threshold;
  int threads = 1;
};

ExperimentConfig resolve_config(const CommonOptions& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.threshold) cfg.threshold = *o.threshold;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_loss_log(const fs::path& path, const std::vector<StepLog>& history) {
  std::ostringstream os;
  os << "step,epoch,loss\n";
  for (const auto& h : history) os << h.step << "," << h.epoch << "," << h.loss << "\n";
  write_text(path, os.str());
}

std::vector<MotionSample> train_data(const ExperimentConfig& cfg, const std::string& data_dir, const BodyModel& body) {
  if (!data_dir.empty()) return load_dataset(fs::path(data_dir) / "train");
  std::cerr << "synthesizing " << cfg.train_samples << " training sequences\n";
  return make_train_set(cfg, body);
}

std::vector<MotionSample> eval_data(const ExperimentConfig& cfg, const std::string& data_dir, const BodyModel& body) {
  if (!data_dir.empty()) return load_dataset(fs::path(data_dir) / "eval");
  return make_eval_set(cfg, body);
}

std::function<void(const StepLog&)> progress(int64_t total, int64_t every) {
  return [total, every](const StepLog& s) {
    if ((s.step + 1) % every == 0 || s.step + 1 == total) {
      std::cerr << "step " << s.step + 1 << "/" << total << " epoch " << s.epoch << " loss " << s.loss << "\n";
    }
  };
}

int run_synth(const CommonOptions& o) {
  const auto cfg = resolve_config(o);
  const auto body = BodyModel::procedural();
  const fs::path out = o.out.empty() ? "data" : o.out;
  save_dataset(make_train_set(cfg, body), out / "train");
  save_dataset(make_eval_set(cfg, body), out / "eval");
  write_text(out / "config.json", config_to_json(cfg));
  std::cout << "wrote " << cfg.train_samples << " training and " << cfg.eval_samples << " evaluation sequences to "
            << out << "\n";
  return kOk;
}

int run_train_prior(const CommonOptions& o, const std::string& data, const std::string& resume,
                    std::optional<int64_t> epochs) {
  auto cfg = resolve_config(o);
  if (epochs) cfg.training.prior_epochs = *epochs;
  cfg.validate();
  const auto body = BodyModel::procedural();
  PriorTrainer trainer(cfg, train_data(cfg, data, body));
  if (!resume.empty()) trainer.load(resume);
  std::vector<size_t> probe(std::min<size_t>(static_cast<size_t>(cfg.train_samples), 64));
  std::iota(probe.begin(), probe.end(), size_t{0});
  const double before = trainer.evaluate_batch(probe, cfg.seed);
  const auto total = cfg.training.prior_epochs * trainer.steps_per_epoch();
  trainer.run_until(total, progress(total, 20));
  const double after = trainer.evaluate_batch(probe, cfg.seed);
  const fs::path out = o.out.empty() ? "run" : o.out;
  trainer.save(out / "prior.ckpt");
  write_loss_log(out / "prior_loss.csv", trainer.history());
  write_text(out / "prior_config.json", config_to_json(cfg));
  std::cout << "masked L1 on probe batch: " << before << " -> " << after << "\n";
  std::cout << "checkpoint: " << (out / "prior.ckpt").string() << "\n";
  return kOk;
}

int run_train_lifting(const CommonOptions& o, const std::string& data, const std::string& prior,
                      const std::string& resume, bool freeze, bool no_prior, bool no_smooth,
                      std::optional<int64_t> epochs) {
  auto cfg = resolve_config(o);
  if (freeze) cfg.training.freeze_prior = true;
  if (no_prior) cfg.training.no_prior = true;
  if (no_smooth) cfg.training.loss.smooth = 0.0;
  if (epochs) cfg.training.lifting_epochs = *epochs;
  cfg.validate();
  if (prior.empty() && !cfg.training.no_prior) {
    throw ConfigError("train-lifting: --prior CKPT is required unless --no-prior is given");
  }
  const auto body = BodyModel::procedural();
  LiftingTrainer trainer(cfg, train_data(cfg, data, body), body, prior);
  if (!resume.empty()) trainer.load(resume);
  const auto total = cfg.training.lifting_epochs * trainer.steps_per_epoch();
  trainer.run_until(total, progress(total, 20));
  const fs::path out = o.out.empty() ? "run" : o.out;
  trainer.save(out / "lifting.ckpt");
  write_loss_log(out / "lifting_loss.csv", trainer.history());
  write_text(out / "lifting_config.json", config_to_json(cfg));
  const auto report = evaluate(trainer.model(), eval_data(cfg, data, body), body);
  std::cout << "eval MPJPE " << report.aggregate.at("mpjpe") << " mm, PA-MPJPE " << report.aggregate.at("pa_mpjpe")
            << " mm, accel " << report.aggregate.at("accel") << " mm/frame^2\n";
  std::cout << "checkpoint: " << (out / "lifting.ckpt").string() << "\n";
  return kOk;
}

int run_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& data) {
  auto loaded = load_lifting(checkpoint);
  const auto body = BodyModel::procedural();
  const auto report = evaluate(loaded.model, eval_data(loaded.config, data, body), body);
  const fs::path out = o.out.empty() ? "eval_report.json" : o.out;
  write_text(out, report.to_json(config_to_json(loaded.config)));
  for (const auto& [k, v] : report.aggregate) std::cout << k << " " << v << "\n";
  return kOk;
}

int run_infer(const CommonOptions& o, const std::string& checkpoint, const std::string& detections) {
  auto loaded = load_lifting(checkpoint);
  if (o.threshold) loaded.config.threshold = *o.threshold;
  const auto file = read_detections(detections);
  const auto result = infer(loaded.model, loaded.config, file, BodyModel::procedural());
  const fs::path out = o.out.empty() ? "motion.ocm" : o.out;
  save_inference(result, out);
  if (!result.warning.empty()) std::cerr << "warning: " << result.warning << "\n";
  std::cout << "wrote " << file.frames() << " frames to " << out.string() << "\n";
  return kOk;
}

int run_sweep(const CommonOptions& o, const std::vector<std::string>& checkpoints, std::vector<std::string> labels,
              const std::string& data) {
  if (checkpoints.empty()) throw ConfigError("sweep: at least one --checkpoint is required");
  if (!labels.empty() && labels.size() != checkpoints.size()) {
    throw ConfigError("sweep: give one --label per --checkpoint");
  }
  std::vector<std::pair<std::string, LiftingNet>> models;
  ExperimentConfig cfg;
  for (size_t i = 0; i < checkpoints.size(); ++i) {
    auto loaded = load_lifting(checkpoints[i]);
    if (i == 0) cfg = loaded.config;
    models.emplace_back(labels.empty() ? fs::path(checkpoints[i]).parent_path().filename().string() : labels[i],
                        loaded.model);
  }
  if (!o.config.empty()) cfg.sweep_ratios = load_config(o.config).sweep_ratios;
  if (o.seed) cfg.seed = *o.seed;
  const auto body = BodyModel::procedural();
  const auto result = sensitivity_sweep(models, eval_data(cfg, data, body), cfg.synth.occlusion, cfg.sweep_ratios,
                                        cfg.seed, body);
  const fs::path out = o.out.empty() ? "sweep" : o.out;
  write_text(out / "sweep.json", sweep_to_json(result, config_to_json(cfg)));
  write_text(out / "sweep.svg", sweep_to_svg(result));
  std::cout << "ratio";
  for (const auto& c : result.curves) std::cout << "\t" << c.label;
  std::cout << "\n";
  for (size_t r = 0; r < result.ratios.size(); ++r) {
    std::cout << result.ratios[r];
    for (const auto& c : result.curves) std::cout << "\t" << c.mpjpe[r];
    std::cout << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occlusion-robust human motion capture from 2D motion maps"};
  app.require_subcommand(1);

  CommonOptions common;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", common.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", common.seed, "Override the config seed");
    cmd->add_option("--out", common.out, "Output directory or file");
    cmd->add_option("--threshold", common.threshold, "Confidence below which a joint counts as occluded")
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--threads", common.threads, "Intra-op threads (1 keeps runs deterministic)")
        ->check(CLI::PositiveNumber);
  };

  std::string data, checkpoint, prior, resume, detections;
  std::vector<std::string> checkpoints, labels;
  std::optional<int64_t> epochs;
  bool freeze = false, no_prior = false, no_smooth = false;

  auto* synth = app.add_subcommand("synth-data", "Generate synthetic training and evaluation sequences");
  add_common(synth);

  auto* train_prior = app.add_subcommand("train-prior", "Self-supervised prior training");
  add_common(train_prior);
  train_prior->add_option("--data", data, "Dataset directory from synth-data (default: synthesize)");
  train_prior->add_option("--resume", resume, "Continue from a prior checkpoint");
  train_prior->add_option("--epochs", epochs, "Override training.prior_epochs");

  auto* train_lift = app.add_subcommand("train-lifting", "Lifting network training");
  add_common(train_lift);
  train_lift->add_option("--data", data, "Dataset directory from synth-data (default: synthesize)");
  train_lift->add_option("--prior", prior, "Prior checkpoint");
  train_lift->add_option("--resume", resume, "Continue from a lifting checkpoint");
  train_lift->add_option("--epochs", epochs, "Override training.lifting_epochs");
  train_lift->add_flag("--freeze-prior", freeze, "Keep the prior weights fixed");
  train_lift->add_flag("--no-prior", no_prior, "Start from an untrained prior");
  train_lift->add_flag("--no-smoothness", no_smooth, "Drop the smoothness loss");

  auto* eval = app.add_subcommand("eval", "Evaluate a lifting checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "Lifting checkpoint")->required();
  eval->add_option("--data", data, "Dataset directory (default: the checkpoint's synthetic eval set)");

  auto* infer_cmd = app.add_subcommand("infer", "Run the full pipeline on a detection file");
  add_common(infer_cmd);
  infer_cmd->add_option("--checkpoint", checkpoint, "Lifting checkpoint")->required();
  infer_cmd->add_option("--detections", detections, "Detection text file")->required();

  auto* sweep = app.add_subcommand("sweep", "MPJPE against occlusion ratio for one or more models");
  add_common(sweep);
  sweep->add_option("--checkpoint", checkpoints, "Lifting checkpoint (repeatable)")->required();
  sweep->add_option("--label", labels, "Curve label per checkpoint");
  sweep->add_option("--data", data, "Dataset directory (default: synthetic eval set)");

  CLI11_PARSE(app, argc, argv);

  at::set_num_threads(common.threads);
  try {
    if (synth->parsed()) return run_synth(common);
    if (train_prior->parsed()) return run_train_prior(common, data, resume, epochs);
    if (train_lift->parsed()) {
      return run_train_lifting(common, data, prior, resume, freeze, no_prior, no_smooth, epochs);
    }
    if (eval->parsed()) return run_eval(common, checkpoint, data);
    if (infer_cmd->parsed()) return run_infer(common, checkpoint, detections);
    if (sweep->parsed()) return run_sweep(common, checkpoints, labels, data);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kInvalidArgument;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUnexpected;
}
