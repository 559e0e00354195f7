#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "magsense/fieldsim.hpp"
#include "magsense/preprocess.hpp"
#include "magsense/random.hpp"

using namespace magsense;
using namespace magsense::preprocess;

namespace {

Vector filled(double v, Eigen::Index n = 9) { return Vector::Constant(n, v); }

Eigen::Matrix<double, Eigen::Dynamic, 3> sphere_points(const Vec3& c, double r, std::size_t n, std::uint64_t seed,
                                                       double noise = 0.0) {
  Rng rng(seed);
  Eigen::Matrix<double, Eigen::Dynamic, 3> p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const Vec3 u = Vec3(gaussian(rng), gaussian(rng), gaussian(rng)).normalized();
    p.row(i) = (c + r * u + Vec3(gaussian(rng, noise), gaussian(rng, noise), gaussian(rng, noise))).transpose();
  }
  return p;
}

Window random_window(std::uint64_t seed) {
  Rng rng(seed);
  Window w{Matrix(16, 9), 0};
  for (Eigen::Index i = 0; i < 16; ++i)
    for (Eigen::Index j = 0; j < 9; ++j) w.data(i, j) = uniform(rng, -300, 300);
  return w;
}

}  // namespace

TEST_CASE("smoothing worked example") {
  ExpSmoother f(0.5);
  f.reset(filled(0.0));
  CHECK(f.step(filled(10.0))(0) == doctest::Approx(5.0));
}

TEST_CASE("first sample initializes the estimate") {
  ExpSmoother f(0.3);
  CHECK_FALSE(f.primed());
  CHECK(f.step(filled(7.0))(3) == 7.0);
  CHECK(f.primed());
}

TEST_CASE("constant input is a fixed point") {
  ExpSmoother f(0.5);
  const Vector c = filled(42.5);
  for (int i = 0; i < 50; ++i) CHECK((f.step(c) - c).norm() == 0.0);
}

TEST_CASE("step response follows (1 - alpha)^t") {
  for (double alpha : {0.2, 0.5, 0.8}) {
    ExpSmoother f(alpha);
    f.reset(filled(0.0));
    for (int t = 1; t <= 10; ++t) {
      const double out = f.step(filled(1.0))(0);
      CHECK(std::abs(out - 1.0) == doctest::Approx(std::pow(1.0 - alpha, t)).epsilon(1e-12));
    }
  }
}

TEST_CASE("smoothing is a contraction toward the input") {
  Rng rng(4);
  for (double alpha : {0.1, 0.5, 0.9}) {
    ExpSmoother f(alpha);
    f.step(filled(0.0));
    for (int i = 0; i < 100; ++i) {
      Vector y(9);
      for (Eigen::Index j = 0; j < 9; ++j) y(j) = uniform(rng, -50, 50);
      const Vector prev = *f.estimate();
      const Vector out = f.step(y);
      CHECK((out - y).norm() == doctest::Approx((1.0 - alpha) * (prev - y).norm()).epsilon(1e-9));
    }
  }
}

TEST_CASE("steady-state variance ratio is alpha / (2 - alpha)") {
  Rng rng(77);
  ExpSmoother f(0.5);
  const int n = 200000, burn = 100;
  double in_ss = 0.0, out_ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = gaussian(rng, 2.0);
    const double y = f.step(Vector::Constant(1, x))(0);
    if (i >= burn) {
      in_ss += x * x;
      out_ss += y * y;
    }
  }
  const double ratio = out_ss / in_ss;
  CHECK(std::abs(ratio / (1.0 / 3.0) - 1.0) < 0.10);
}

TEST_CASE("invalid smoothing input") {
  CHECK_THROWS_AS(ExpSmoother(0.0), ValidationError);
  CHECK_THROWS_AS(ExpSmoother(1.0), ValidationError);
  ExpSmoother f;
  CHECK_THROWS_AS(f.step(filled(std::numeric_limits<double>::infinity())), ValidationError);
}

TEST_CASE("smooth_recording restarts per recording") {
  Matrix m = Matrix::Zero(5, 9);
  m.row(0).setConstant(10.0);
  const Recording a = recording_from_matrix(m, 17.0);
  const Recording sa = smooth_recording(a);
  CHECK(sa.frames[0].flat()(0) == 10.0);
  CHECK(sa.frames[1].flat()(0) == 5.0);
  // same data again starts from its own first sample, not from the previous tail
  CHECK(smooth_recording(a).frames[0].flat()(0) == 10.0);
}

TEST_CASE("sphere fit recovers a known center and radius") {
  const auto fit = fit_sphere(sphere_points(Vec3(30, 0, 0), 50.0, 400, 1));
  CHECK((fit.center - Vec3(30, 0, 0)).norm() < 0.01 * 30.0);
  CHECK(fit.radius == doctest::Approx(50.0).epsilon(0.01));
  const auto noisy = fit_sphere(sphere_points(Vec3(-12, 25, 8), 48.0, 400, 2, 1.0));
  CHECK((noisy.center - Vec3(-12, 25, 8)).norm() < 0.01 * Vec3(-12, 25, 8).norm());
}

TEST_CASE("zero bias stays near zero") {
  const auto fit = fit_sphere(sphere_points(Vec3::Zero(), 50.0, 300, 3, 0.6));
  CHECK(fit.center.norm() < 0.5);
}

TEST_CASE("degenerate orientation data is refused") {
  // every reading on one line: no sphere is determined
  Eigen::Matrix<double, Eigen::Dynamic, 3> line(50, 3);
  for (Eigen::Index i = 0; i < 50; ++i) line.row(i) = Eigen::RowVector3d(static_cast<double>(i), 0.0, 0.0);
  CHECK_THROWS_AS(fit_sphere(line), CalibrationError);
  CHECK_THROWS_AS(fit_sphere(line.topRows(3)), CalibrationError);
}

TEST_CASE("device bias calibration recenters the readings") {
  const auto user = fieldsim::make_user(2, 5);
  const Recording rec = fieldsim::calibration_recording(user, 9);
  const CalibrationProfile p = calibrate_device_bias(rec);
  for (std::size_t k = 0; k < 3; ++k) CHECK((p.device_bias[k] - user.device_bias[k]).norm() < 1.0);
  // after correction the readings sit on an origin-centred sphere
  const Recording fixed = apply_bias_correction(rec, p);
  for (std::size_t k = 0; k < 3; ++k) {
    Eigen::Matrix<double, Eigen::Dynamic, 3> pts(static_cast<Eigen::Index>(fixed.size()), 3);
    for (std::size_t i = 0; i < fixed.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = fixed.frames[i].sensor(k).transpose();
    CHECK(fit_sphere(pts).center.norm() < 0.5);
  }
  CHECK_THROWS_AS(calibrate_device_bias(rec, 60.0), CalibrationError);
}

TEST_CASE("normalization keeps zeros and scales by the field magnitude") {
  const auto p = CalibrationProfile::identity(3, 50.0);
  Window zero{Matrix::Zero(16, 9), 0};
  CHECK(normalize_window(zero, p).data.cwiseAbs().maxCoeff() == 0.0);
  Window full{Matrix::Constant(16, 9, 50.0), 0};
  CHECK((normalize_window(full, p).data.array() - 1.0).abs().maxCoeff() == 0.0);

  CalibrationProfile biased = p;
  biased.device_bias = {Vec3(1, 2, 3), Vec3(4, 5, 6), Vec3(7, 8, 9)};
  Window at_bias{Matrix(16, 9), 0};
  for (Eigen::Index i = 0; i < 16; ++i) at_bias.data.row(i) = biased.bias_flat().transpose();
  CHECK(normalize_window(at_bias, biased).data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("normalization round-trips") {
  CalibrationProfile p;
  p.device_bias = {Vec3(10, -3, 2), Vec3(0, 4, -8), Vec3(1, 1, 1)};
  p.earth_field_magnitude = 47.3;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Window w = random_window(s);
    const Window back = denormalize_window(normalize_window(w, p), p);
    CHECK(((back.data - w.data).cwiseAbs().array() / (1.0 + w.data.cwiseAbs().array())).maxCoeff() < 1e-9);
  }
}

TEST_CASE("normalization commutes with windowing") {
  Rng rng(6);
  Matrix frames(40, 9);
  for (Eigen::Index i = 0; i < 40; ++i)
    for (Eigen::Index j = 0; j < 9; ++j) frames(i, j) = uniform(rng, -100, 100);
  CalibrationProfile p;
  p.device_bias = {Vec3(3, 0, 1), Vec3(-2, 2, 0), Vec3(5, 5, 5)};
  p.earth_field_magnitude = 51.0;
  const auto windows_then_norm = sliding_windows(frames, 16, 3);
  const auto norm_then_windows = sliding_windows(normalize_frames(frames, p), 16, 3);
  REQUIRE(windows_then_norm.size() == norm_then_windows.size());
  for (std::size_t i = 0; i < norm_then_windows.size(); ++i)
    CHECK((normalize_window(windows_then_norm[i], p).data - norm_then_windows[i].data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("profile text round-trip and validation") {
  CalibrationProfile p;
  p.device_bias = {Vec3(1.25, -2.5, 3.125), Vec3(0, 0, 0), Vec3(-7, 8, 9)};
  p.earth_field_magnitude = 49.75;
  const CalibrationProfile back = parse_profile(format_profile(p));
  CHECK(back.earth_field_magnitude == p.earth_field_magnitude);
  for (std::size_t k = 0; k < 3; ++k) CHECK(back.device_bias[k] == p.device_bias[k]);
  CHECK_THROWS(parse_profile("format=something-else\n"));
  CalibrationProfile bad = p;
  bad.earth_field_magnitude = 0.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}
