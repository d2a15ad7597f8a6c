#include <doctest.h>
#include <json.hpp>
#include <torch/torch.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "occmocap/errors.hpp"
#include "occmocap/harness.hpp"

using namespace occmocap;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.seed = 17;
  cfg.train_samples = 8;
  cfg.eval_samples = 4;
  cfg.prior.st.branch_channels = 4;
  cfg.prior.spatial = {1, 2, 2.0};
  cfg.prior.temporal = {1, 2, 2.0};
  cfg.lifting.transformer = {1, 2, 2.0};
  cfg.lifting.head_hidden = 32;
  cfg.training.batch_size = 4;
  cfg.training.learning_rate = 1e-3;
  return cfg;
}

const BodyModel& body() {
  static const auto b = BodyModel::procedural();
  return b;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("occmocap_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_parameters(torch::nn::Module& a, torch::nn::Module& b) {
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (const auto& item : pa) {
    const auto* other = pb.find(item.key());
    if (other == nullptr || !torch::equal(item.value(), *other)) return false;
  }
  return true;
}

int run_cli(const std::string& args) {
  const char* cli = std::getenv("OCCMOCAP_CLI_PATH");
  REQUIRE_MESSAGE(cli != nullptr, "OCCMOCAP_CLI_PATH is not set");
  const int status = std::system((std::string(cli) + " " + args + " > /dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("config JSON round-trips and rejects unknown or mistyped keys") {
    auto cfg = tiny_config();
    cfg.sweep_ratios = {0.0, 0.25};
    cfg.training.loss.smooth = 0.0;
    cfg.synth.occlusion.occluder_count_range = {2, 4};
    const auto text = config_to_json(cfg);
    const auto back = config_from_json(text);
    CHECK(config_to_json(back) == text);
    CHECK(back.training.loss.smooth == 0.0);
    CHECK(back.synth.occlusion.occluder_count_range == std::make_pair(2, 4));

    CHECK(config_from_json("{}").training.batch_size == 32);
    CHECK_THROWS_AS(config_from_json(R"({"bogus": 1})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"training": {"learning_rat": 0.1}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"training": {"batch_size": "big"}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"training": {"batch_size": 0}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json(R"({"prior": {"spatial": {"heads": 7}}})"), ConfigError);
    CHECK_THROWS_AS(config_from_json("{not json"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
  }

  TEST_CASE("train and eval sets are deterministic, clean and occluded respectively") {
    const auto cfg = tiny_config();
    const auto a = make_train_set(cfg, body());
    const auto b = make_train_set(cfg, body());
    const auto e = make_eval_set(cfg, body());
    REQUIRE(a.size() == 8);
    REQUIRE(e.size() == 4);
    CHECK(torch::equal(a[3].clean2d, b[3].clean2d));
    CHECK_FALSE(a[0].mask.any().item<bool>());
    double ratio = 0.0;
    for (const auto& s : e) ratio += s.mask.to(torch::kFloat64).mean().item<double>() / 4.0;
    CHECK(ratio == doctest::Approx(0.3).epsilon(0.5));
    CHECK_FALSE(torch::equal(a[0].clean2d, e[0].clean2d));
  }

  TEST_CASE("a zero-step prior checkpoint reloads the initialization exactly") {
    const auto dir = temp_dir("prior0");
    const auto cfg = tiny_config();
    PriorTrainer t(cfg, make_train_set(cfg, body()));
    t.save(dir / "prior.ckpt");
    ExperimentConfig loaded_cfg;
    auto prior = load_prior(dir / "prior.ckpt", &loaded_cfg);
    CHECK(same_parameters(*prior, *t.prior()));
    CHECK(config_to_json(loaded_cfg) == config_to_json(cfg));
    fs::remove_all(dir);
  }

  TEST_CASE("resumed prior training is bit-identical to an uninterrupted run") {
    const auto dir = temp_dir("resume");
    const auto cfg = tiny_config();
    const auto train = make_train_set(cfg, body());
    PriorTrainer full(cfg, train);
    full.run_until(5);

    PriorTrainer first(cfg, train);
    first.run_until(3);
    first.save(dir / "prior.ckpt");
    PriorTrainer second(cfg, train);
    second.load(dir / "prior.ckpt");
    CHECK(second.global_step() == 3);
    second.run_until(5);

    CHECK(same_parameters(*full.prior(), *second.prior()));
    REQUIRE(second.history().size() == 5);
    for (size_t i = 0; i < 5; ++i) CHECK(full.history()[i].loss == second.history()[i].loss);

    auto other = cfg;
    other.prior.st.branch_channels = 6;
    PriorTrainer mismatched(other, train);
    CHECK_THROWS_AS(mismatched.load(dir / "prior.ckpt"), ConfigError);
    fs::remove_all(dir);
  }

  TEST_CASE("resumed lifting training is bit-identical to an uninterrupted run") {
    const auto dir = temp_dir("resume_lift");
    const auto cfg = tiny_config();
    const auto train = make_train_set(cfg, body());
    LiftingTrainer full(cfg, train, body());
    full.run_until(4);
    LiftingTrainer first(cfg, train, body());
    first.run_until(2);
    first.save(dir / "lifting.ckpt");
    LiftingTrainer second(cfg, train, body());
    second.load(dir / "lifting.ckpt");
    second.run_until(4);
    CHECK(same_parameters(*full.model(), *second.model()));
    fs::remove_all(dir);
  }

  TEST_CASE("lifting starts from the pretrained prior unless told otherwise") {
    const auto dir = temp_dir("lift_prior");
    const auto cfg = tiny_config();
    const auto train = make_train_set(cfg, body());
    PriorTrainer p(cfg, train);
    p.run_until(2);
    p.save(dir / "prior.ckpt");

    LiftingTrainer with(cfg, train, body(), dir / "prior.ckpt");
    CHECK(same_parameters(*with.model()->prior(), *p.prior()));

    auto no = cfg;
    no.training.no_prior = true;
    LiftingTrainer without(no, train, body(), dir / "prior.ckpt");
    CHECK_FALSE(same_parameters(*without.model()->prior(), *p.prior()));

    auto frozen = cfg;
    frozen.training.freeze_prior = true;
    LiftingTrainer fixed(frozen, train, body(), dir / "prior.ckpt");
    fixed.run_until(2);
    CHECK(same_parameters(*fixed.model()->prior(), *p.prior()));

    auto other = cfg;
    other.prior.st.branch_channels = 6;
    CHECK_THROWS_AS(LiftingTrainer(other, train, body(), dir / "prior.ckpt"), ConfigError);
    CHECK_THROWS_AS(LiftingTrainer(cfg, train, body(), dir / "missing.ckpt"), DataError);
    fs::remove_all(dir);
  }

  TEST_CASE("inference fills every frame and joint, including low-confidence ones") {
    const auto dir = temp_dir("infer");
    auto cfg = tiny_config();
    LiftingTrainer t(cfg, make_train_set(cfg, body()), body());
    t.save(dir / "lifting.ckpt");
    auto loaded = load_lifting(dir / "lifting.ckpt");

    for (const int frames : {20, 10}) {
      SynthConfig synth = cfg.synth;
      synth.frames = frames;
      synth.occlusion.target_ratio = 0.3;
      std::mt19937_64 rng(static_cast<uint64_t>(frames));
      const auto sample = generate_synthetic_motion(rng, synth, body());
      const auto det = detections_from_sample(sample);
      const auto r = infer(loaded.model, loaded.config, det, body());
      CHECK((r.map3d.sizes() == torch::IntArrayRef({frames, kBodyJoints, 6})));
      CHECK((r.rotations.sizes() == torch::IntArrayRef({frames, kBodyJoints, 3, 3})));
      CHECK((r.joints.sizes() == torch::IntArrayRef({frames, kLspJoints, 3})));
      CHECK((r.vertices.sizes() == torch::IntArrayRef({frames, body().num_vertices(), 3})));
      CHECK((r.translations.sizes() == torch::IntArrayRef({frames, 3})));
      CHECK(torch::isfinite(r.joints).all().item<bool>());
      CHECK(torch::isfinite(r.translations).all().item<bool>());
      CHECK(torch::equal(r.mask, sample.mask));
      CHECK(r.translation_ok);
      CHECK(r.translations.select(1, 2).min().item<double>() > 0.0);
      save_inference(r, dir / "motion.ocm");
      CHECK(fs::file_size(dir / "motion.ocm") > 0);
    }
    fs::remove_all(dir);
  }

  TEST_CASE("sensitivity sweep output") {
    const auto cfg = tiny_config();
    torch::manual_seed(1);
    LiftingNet a(cfg.lifting, MotionPrior(cfg.prior));
    torch::manual_seed(2);
    LiftingNet b(cfg.lifting, MotionPrior(cfg.prior));
    const auto eval = make_eval_set(cfg, body());
    const auto result =
        sensitivity_sweep({{"plain", a}, {"a<b & c", b}}, eval, cfg.synth.occlusion, {0.0, 0.3}, 5, body());
    REQUIRE(result.curves.size() == 2);
    CHECK(result.curves[0].mpjpe.size() == 2);
    CHECK(result.curves[1].pa_mpjpe[1] <= result.curves[1].mpjpe[1]);

    const auto j = nlohmann::json::parse(sweep_to_json(result));
    CHECK(j["ratios"].size() == 2);
    CHECK(j.dump().find("a<b & c") != std::string::npos);
    const auto svg = sweep_to_svg(result);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("a&lt;b &amp; c") != std::string::npos);
    CHECK(svg.find("a<b") == std::string::npos);
  }

  TEST_CASE("command-line exit codes") {
    const auto dir = temp_dir("cli");
    std::ofstream(dir / "bad.json") << R"({"training": {"unknown": 1}})";
    CHECK(run_cli("synth-data --config " + (dir / "bad.json").string() + " --out " + (dir / "d").string()) == 2);

    const auto cfg = tiny_config();
    LiftingTrainer t(cfg, make_train_set(cfg, body()), body());
    t.save(dir / "lifting.ckpt");
    std::ofstream(dir / "empty.txt").close();
    const auto ck = (dir / "lifting.ckpt").string();
    CHECK(run_cli("infer --checkpoint " + ck + " --detections " + (dir / "empty.txt").string() + " --out " +
                  (dir / "m.ocm").string()) == 3);
    CHECK(run_cli("infer --checkpoint " + ck + " --detections " + (dir / "missing.txt").string()) == 3);
    CHECK(run_cli("eval --checkpoint " + (dir / "empty.txt").string()) == 3);
    CHECK(run_cli("no-such-command") != 0);
    fs::remove_all(dir);
  }
}
