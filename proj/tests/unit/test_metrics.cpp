#include <ceres/ceres.h>
#include <ceres/rotation.h>
// glog's CHECK macros collide with doctest's.
#undef CHECK
#undef CHECK_EQ
#undef CHECK_NE
#undef CHECK_LT
#undef CHECK_LE
#undef CHECK_GT
#undef CHECK_GE
#include <doctest.h>

#include <random>

#include "../support/oracles.hpp"
#include "occmocap/errors.hpp"
#include "occmocap/metrics.hpp"

using namespace occmocap;

namespace {

Points3 random_points(std::mt19937_64& rng, int n, double spread = 0.5) {
  std::normal_distribution<double> d(0.0, spread);
  Points3 p(n, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = d(rng);
  return p;
}

struct AlignResidual {
  AlignResidual(Eigen::Vector3d src, Eigen::Vector3d dst) : src_(std::move(src)), dst_(std::move(dst)) {}

  template <typename T>
  bool operator()(const T* const aa, const T* const st, T* residual) const {
    const T p[3] = {T(src_.x()), T(src_.y()), T(src_.z())};
    T r[3];
    ceres::AngleAxisRotatePoint(aa, p, r);
    for (int i = 0; i < 3; ++i) residual[i] = st[0] * r[i] + st[1 + i] - T(dst_[i]);
    return true;
  }

  Eigen::Vector3d src_, dst_;
};

// Brute-force similarity alignment: nonlinear least squares over
// (axis-angle, scale, translation) from random restarts.
double brute_force_pa(const Points3& pred, const Points3& gt, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  double best_cost = std::numeric_limits<double>::infinity();
  double best_err = 0.0;
  for (int restart = 0; restart < 20; ++restart) {
    double aa[3] = {u(rng), u(rng), u(rng)};
    double st[4] = {1.0 + 0.3 * u(rng), 0.0, 0.0, 0.0};
    ceres::Problem problem;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
      problem.AddResidualBlock(new ceres::AutoDiffCostFunction<AlignResidual, 3, 3, 4>(
                                   new AlignResidual(pred.row(i).transpose(), gt.row(i).transpose())),
                               nullptr, aa, st);
    }
    ceres::Solver::Options opt;
    opt.function_tolerance = 1e-16;
    opt.gradient_tolerance = 1e-16;
    opt.parameter_tolerance = 1e-16;
    opt.max_num_iterations = 500;
    ceres::Solver::Summary summary;
    ceres::Solve(opt, &problem, &summary);
    if (summary.final_cost < best_cost) {
      best_cost = summary.final_cost;
      double err = 0.0;
      for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        const double p[3] = {pred(i, 0), pred(i, 1), pred(i, 2)};
        double r[3];
        ceres::AngleAxisRotatePoint(aa, p, r);
        Eigen::Vector3d q(st[0] * r[0] + st[1], st[0] * r[1] + st[2], st[0] * r[2] + st[3]);
        err += (q - gt.row(i).transpose()).norm();
      }
      best_err = 1000.0 * err / static_cast<double>(pred.rows());
    }
  }
  return best_err;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("mpjpe examples") {
    std::mt19937_64 rng(1);
    const Sequence3 gt{random_points(rng, 14)};
    CHECK(mpjpe(gt, gt) == 0.0);
    Sequence3 offset{gt[0].rowwise() + Eigen::RowVector3d(0.3, -1.0, 2.0)};
    CHECK(mpjpe(offset, gt) < 1e-9);
    Sequence3 one = gt;
    one[0].row(6) += Eigen::RowVector3d(0.0, 0.05, 0.0);
    CHECK(mpjpe(one, gt) == doctest::Approx(50.0 / 14.0).epsilon(1e-12));
    Sequence3 bad{random_points(rng, 13)};
    CHECK_THROWS_AS(mpjpe(bad, gt), InvalidArgument);
  }

  TEST_CASE("pve examples") {
    std::mt19937_64 rng(2);
    const Sequence3 gt{random_points(rng, 120)};
    Points3 roots = Points3::Zero(1, 3);
    CHECK(pve(gt, gt, roots, roots) == 0.0);
    Sequence3 one = gt;
    one[0].row(17) += Eigen::RowVector3d(0.01, 0.0, 0.0);
    CHECK(pve(one, gt, roots, roots) == doctest::Approx(10.0 / 120.0).epsilon(1e-12));
    Sequence3 moved{gt[0].rowwise() + Eigen::RowVector3d(1.0, 2.0, 3.0)};
    Points3 moved_root(1, 3);
    moved_root << 1.0, 2.0, 3.0;
    CHECK(pve(moved, gt, moved_root, roots) < 1e-9);
    CHECK(pve(moved, gt) < 1e-9);
  }

  TEST_CASE("accel error examples") {
    std::mt19937_64 rng(3);
    Sequence3 gt;
    for (int t = 0; t < 8; ++t) gt.push_back(random_points(rng, 5));
    CHECK(accel_error(gt, gt) == 0.0);
    const Eigen::RowVector3d v(0.01, -0.02, 0.005), a(0.003, 0.004, 0.0);
    Sequence3 drift = gt, quad = gt;
    for (int t = 0; t < 8; ++t) {
      drift[t].rowwise() += t * v;
      quad[t].rowwise() += 0.5 * t * t * a;
    }
    CHECK(accel_error(drift, gt) < 1e-9);
    CHECK(accel_error(quad, gt) == doctest::Approx(5.0).epsilon(1e-9));
    const Sequence3 two(gt.begin(), gt.begin() + 2);
    CHECK_THROWS_AS(accel_error(two, two), InvalidArgument);
  }

  TEST_CASE("pa_mpjpe vanishes under similarity transforms") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> s(0.2, 5.0), t(-3.0, 3.0);
    for (int i = 0; i < 100; ++i) {
      Sequence3 gt{random_points(rng, 14), random_points(rng, 14)};
      Sequence3 pred;
      for (const auto& f : gt) {
        SimilarityTransform x{s(rng), oracle::random_rotation(rng), Eigen::Vector3d(t(rng), t(rng), t(rng))};
        pred.push_back(x.apply(f));
      }
      CHECK(pa_mpjpe(pred, gt) < 1e-9);
      CHECK(pa_mpjpe(gt, gt) < 1e-9);
    }
  }

  TEST_CASE("procrustes recovers the transform it is given") {
    std::mt19937_64 rng(5);
    const Points3 src = random_points(rng, 10);
    const SimilarityTransform x{1.7, oracle::random_rotation(rng), Eigen::Vector3d(0.1, 0.2, -0.3)};
    const auto fit = procrustes_align(src, x.apply(src));
    CHECK(fit.scale == doctest::Approx(1.7).epsilon(1e-12));
    CHECK((fit.rotation - x.rotation).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((fit.translation - x.translation).norm() < 1e-12);
    CHECK(fit.rotation.determinant() == doctest::Approx(1.0));
  }

  TEST_CASE("pa_mpjpe never exceeds mpjpe on pose-like errors") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> noise(0.005, 0.1);
    for (int i = 0; i < 1000; ++i) {
      const Sequence3 gt{random_points(rng, 14)};
      const Sequence3 pred{gt[0] + random_points(rng, 14, noise(rng))};
      CHECK(pa_mpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-9);
    }
  }

  TEST_CASE("aligned RMS error never exceeds root-aligned RMS error") {
    // The mean-distance inequality can fail for near-random pairs; the
    // squared form is what the alignment minimizes and always holds.
    std::mt19937_64 rng(16);
    auto rms = [](const Points3& a, const Points3& b) { return std::sqrt((a - b).rowwise().squaredNorm().mean()); };
    for (int i = 0; i < 1000; ++i) {
      const Points3 gt = random_points(rng, 14);
      const Points3 pred = gt + random_points(rng, 14, 0.5);
      const Eigen::RowVector3d rp = 0.5 * (pred.row(2) + pred.row(3)), rg = 0.5 * (gt.row(2) + gt.row(3));
      const double root_aligned = rms(pred.rowwise() - rp, gt.rowwise() - rg);
      const double aligned = rms(procrustes_align(pred, gt).apply(pred), gt);
      CHECK(aligned <= root_aligned + 1e-12);
    }
  }

  TEST_CASE("pa_mpjpe matches the brute-force alignment oracle") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 10; ++i) {
      const Points3 gt = random_points(rng, 14);
      const Eigen::Matrix3d r = oracle::random_rotation(rng);
      const Points3 pred = 0.8 * (gt + random_points(rng, 14, 0.1)) * r.transpose();
      CHECK(std::abs(pa_mpjpe({pred}, {gt}) - brute_force_pa(pred, gt, rng)) < 1e-6);
    }
  }

  TEST_CASE("degenerate alignments throw") {
    Points3 line(4, 3);
    line << 0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3;
    CHECK_THROWS_AS(procrustes_align(line, line), InvalidArgument);
    CHECK_THROWS_AS(pa_mpjpe({line}, {line}), InvalidArgument);
    Points3 two(2, 3);
    two << 0, 0, 0, 1, 0, 0;
    CHECK_THROWS_AS(procrustes_align(two, two), InvalidArgument);
  }

  TEST_CASE("evaluation report aggregates and serializes") {
    EvaluationReport r;
    r.add("a", {{"mpjpe", 10.0}, {"accel", 1.0}});
    r.add("b", {{"mpjpe", 20.0}, {"accel", 3.0}});
    r.finalize();
    CHECK(r.aggregate.at("mpjpe") == 15.0);
    CHECK(r.aggregate.at("accel") == 2.0);
    const auto j = r.to_json();
    CHECK(j.find("\"mpjpe\"") != std::string::npos);
    CHECK(j.find("\"b\"") != std::string::npos);
  }
}
