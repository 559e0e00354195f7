#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "magsense/core.hpp"

namespace magsense::preprocess {

// Causal exponential smoothing: estate <- alpha * y + (1 - alpha) * estate.
class ExpSmoother {
 public:
  explicit ExpSmoother(double alpha = 0.5);

  double alpha() const { return alpha_; }
  bool primed() const { return estimate_.has_value(); }
  const std::optional<Vector>& estimate() const { return estimate_; }

  // Seeds the estimate, e.g. to start from zero instead of the first sample.
  void reset(std::optional<Vector> estimate = std::nullopt) { estimate_ = std::move(estimate); }

  // First call initializes the estimate to y. Throws on non-finite input.
  const Vector& step(const Vector& y);

 private:
  double alpha_;
  std::optional<Vector> estimate_;
};

// Smooths every frame of a recording with a fresh filter.
Recording smooth_recording(const Recording& rec, double alpha = 0.5);

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CalibrationProfile {
  std::vector<Vec3> device_bias;      // per sensor, uT
  double earth_field_magnitude = 50.0;  // uT; scale for normalization

  static CalibrationProfile identity(std::size_t sensors = kDefaultSensors, double magnitude = 50.0);
  void validate() const;
  Vector bias_flat() const;
  // Same scale, zero bias: for data whose bias was already removed.
  CalibrationProfile scale_only() const;
};

struct SphereFit {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
  double condition = 0.0;  // condition number of the normal equations
  double rms_residual = 0.0;
};

// Least-squares sphere through the points (rows). Throws CalibrationError if
// the points do not span enough orientations.
SphereFit fit_sphere(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points, double max_condition = 1e6);

// Hard-iron fit per sensor over the first duration_s of data.
CalibrationProfile calibrate_device_bias(const Recording& rec, double duration_s = 10.0, double max_condition = 1e6);

// (w - bias) / magnitude, with no mean removal, so zero field stays zero.
Window normalize_window(const Window& w, const CalibrationProfile& profile);
Window denormalize_window(const Window& w, const CalibrationProfile& profile);
Matrix normalize_frames(const Matrix& frames, const CalibrationProfile& profile);

// Removes the device bias frame by frame.
Recording apply_bias_correction(const Recording& rec, const CalibrationProfile& profile);

std::string format_profile(const CalibrationProfile& profile);
CalibrationProfile parse_profile(const std::string& text);
void write_profile(const CalibrationProfile& profile, const std::filesystem::path& path);
CalibrationProfile read_profile(const std::filesystem::path& path);

}  // namespace magsense::preprocess
