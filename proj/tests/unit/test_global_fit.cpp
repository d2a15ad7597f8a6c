#include <doctest.h>
#include <torch/torch.h>

#include <random>

#include "../support/oracles.hpp"
#include "occmocap/data_pipeline.hpp"
#include "occmocap/errors.hpp"
#include "occmocap/global_fit.hpp"

using namespace occmocap;

namespace {

struct Scene {
  Sequence3 joints;
  Sequence2 detections;
  std::vector<Eigen::VectorXd> conf;
  std::vector<Eigen::Vector3d> truth;
  CameraIntrinsics camera;
};

// LSP joints of a synthetic clip, projected at the given translations.
Scene make_scene(uint64_t seed, const std::vector<Eigen::Vector3d>& truth) {
  static const auto body = BodyModel::procedural();
  SynthConfig synth;
  synth.frames = std::max(3, static_cast<int>(truth.size()));
  std::mt19937_64 rng(seed);
  const auto sample = generate_synthetic_motion(rng, synth, body);
  const auto lsp = sample_body(sample, body).joints;
  Scene s;
  s.truth = truth;
  for (size_t t = 0; t < truth.size(); ++t) {
    const Points3 j = oracle::to_matrix(lsp[static_cast<int64_t>(t)]);
    s.joints.push_back(j);
    s.detections.push_back(project(s.camera, j.rowwise() + truth[t].transpose()));
    s.conf.push_back(Eigen::VectorXd::Ones(j.rows()));
  }
  return s;
}

double max_error(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b) {
  double e = 0.0;
  for (size_t t = 0; t < a.size(); ++t) e = std::max(e, (a[t] - b[t]).norm());
  return e;
}

double frame_objective(const Scene& s, const std::vector<Eigen::Vector3d>& T, double lambda) {
  return oracle::reprojection_objective(s.joints, s.detections, s.conf, s.camera, T, lambda);
}

}  // namespace

TEST_SUITE("global_fit") {
  TEST_CASE("projection examples") {
    CameraIntrinsics cam;
    Points3 x(2, 3);
    x << 0, 0, 1, 0.5, 0, 1;
    const Points2 p = project(cam, x);
    CHECK(p(0, 0) == 500.0);
    CHECK(p(0, 1) == 500.0);
    CHECK(p(1, 0) == 1000.0);
    CHECK(p(1, 1) == 500.0);
    CHECK((project(cam, 2.0 * x) - p).cwiseAbs().maxCoeff() < 1e-12);
    Points3 behind(1, 3);
    behind << 0, 0, 0;
    CHECK_THROWS_AS(project(cam, behind), InvalidArgument);
    cam.focal.x() = 0.0;
    CHECK_THROWS_AS(project(cam, x), InvalidArgument);
  }

  TEST_CASE("inverse crime: constant translation with smoothness") {
    const std::vector<Eigen::Vector3d> truth(12, Eigen::Vector3d(0.3, -0.2, 5.0));
    const auto s = make_scene(1, truth);
    const auto fit = solve_translation(s.joints, s.detections, s.conf, s.camera);
    CHECK(fit.converged);
    CHECK(max_error(fit.translations, truth) < 1e-4);
  }

  TEST_CASE("inverse crime: moving translation without smoothness") {
    std::vector<Eigen::Vector3d> truth;
    for (int t = 0; t < 12; ++t) truth.emplace_back(0.1 + 0.03 * t, -0.1 + 0.01 * std::sin(t), 4.5 - 0.05 * t);
    const auto s = make_scene(2, truth);
    TranslationFitOptions opt;
    opt.smoothness_weight = 0.0;
    const auto fit = solve_translation(s.joints, s.detections, s.conf, s.camera, opt);
    CHECK(max_error(fit.translations, truth) < 1e-4);
  }

  TEST_CASE("inverse crime: a single frame") {
    const std::vector<Eigen::Vector3d> truth{Eigen::Vector3d(-0.4, 0.25, 6.0)};
    const auto s = make_scene(3, truth);
    const auto fit = solve_translation(s.joints, s.detections, s.conf, s.camera);
    CHECK(max_error(fit.translations, truth) < 1e-4);
  }

  TEST_CASE("a fully occluded frame is interpolated like the grid-search oracle") {
    const std::vector<Eigen::Vector3d> truth(3, Eigen::Vector3d(0.2, 0.1, 4.0));
    auto s = make_scene(4, truth);
    s.conf[1].setZero();
    s.detections[1].setConstant(1e4);
    const auto fit = solve_translation(s.joints, s.detections, s.conf, s.camera);
    CHECK(max_error(fit.translations, truth) < 1e-3);

    const Eigen::Vector3d best = oracle::grid_search_frame(s.joints, s.detections, s.conf, s.camera, fit.translations,
                                                           1, 100.0, truth[1] + Eigen::Vector3d(0.05, -0.05, 0.05));
    CHECK((fit.translations[1] - best).norm() < 1e-3);
  }

  TEST_CASE("accepted iterates never increase the objective") {
    std::vector<Eigen::Vector3d> truth;
    for (int t = 0; t < 10; ++t) truth.emplace_back(0.02 * t, 0.0, 5.0 + 0.02 * t);
    auto s = make_scene(5, truth);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> noise(0.0, 3.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& d : s.detections)
      for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] += noise(rng);
    for (auto& c : s.conf)
      for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = u(rng);
    const auto fit = solve_translation(s.joints, s.detections, s.conf, s.camera);
    REQUIRE(fit.objective_history.size() >= 2);
    for (size_t i = 1; i < fit.objective_history.size(); ++i)
      CHECK(fit.objective_history[i] <= fit.objective_history[i - 1]);
    CHECK(fit.objective == doctest::Approx(fit.objective_history.back()));
    CHECK(fit.objective == doctest::Approx(frame_objective(s, fit.translations, 100.0)).epsilon(1e-9));
    CHECK(translation_objective(s.joints, s.detections, s.conf, s.camera, fit.translations, 100.0) ==
          doctest::Approx(fit.objective).epsilon(1e-12));
  }

  TEST_CASE("a lateral image shift moves the solution by the matching lateral offset") {
    const std::vector<Eigen::Vector3d> truth(6, Eigen::Vector3d(0.0, 0.0, 3.0));
    const auto s = make_scene(7, truth);
    const auto base = solve_translation(s.joints, s.detections, s.conf, s.camera);
    const double delta = 0.01;
    auto shifted = s;
    for (auto& d : shifted.detections) d.col(0).array() += s.camera.focal.x() * delta / 3.0;
    const auto moved = solve_translation(shifted.joints, shifted.detections, shifted.conf, shifted.camera);
    for (size_t t = 0; t < truth.size(); ++t) {
      const Eigen::Vector3d d = moved.translations[t] - base.translations[t];
      CHECK((d - Eigen::Vector3d(delta, 0.0, 0.0)).norm() < 1e-3);
    }
  }

  TEST_CASE("a zero-confidence joint has no influence") {
    std::vector<Eigen::Vector3d> truth;
    for (int t = 0; t < 5; ++t) truth.emplace_back(0.1, 0.05 * t, 4.0);
    auto s = make_scene(8, truth);
    for (auto& c : s.conf) c[4] = 0.0;
    const auto a = solve_translation(s.joints, s.detections, s.conf, s.camera);
    for (auto& d : s.detections) d.row(4) << -3000.0, 7000.0;
    const auto b = solve_translation(s.joints, s.detections, s.conf, s.camera);
    CHECK(max_error(a.translations, b.translations) < 1e-12);
  }

  TEST_CASE("solver errors") {
    const std::vector<Eigen::Vector3d> truth(3, Eigen::Vector3d(0.0, 0.0, 4.0));
    auto s = make_scene(9, truth);
    auto zero = s.conf;
    for (auto& c : zero) c.setZero();
    CHECK_THROWS_AS(solve_translation(s.joints, s.detections, zero, s.camera), NumericalError);
    auto short_det = s.detections;
    short_det.pop_back();
    CHECK_THROWS_AS(solve_translation(s.joints, short_det, s.conf, s.camera), InvalidArgument);
    auto neg = s.conf;
    neg[0][0] = -1.0;
    CHECK_THROWS_AS(solve_translation(s.joints, s.detections, neg, s.camera), InvalidArgument);
  }
}
