#include "magsense/preprocess.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <Eigen/SVD>

namespace magsense::preprocess {

ExpSmoother::ExpSmoother(double alpha) : alpha_(alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("smoothing alpha must lie in (0, 1)");
}

const Vector& ExpSmoother::step(const Vector& y) {
  if (!y.allFinite()) throw ValidationError("non-finite sample rejected by smoother");
  if (!estimate_) {
    estimate_ = y;
  } else {
    if (estimate_->size() != y.size()) throw ValidationError("smoother input width changed");
    *estimate_ = alpha_ * y + (1.0 - alpha_) * *estimate_;
  }
  return *estimate_;
}

Recording smooth_recording(const Recording& rec, double alpha) {
  ExpSmoother filter(alpha);
  Recording out = rec;
  for (auto& f : out.frames) f = SampleFrame::from_flat(f.timestamp_ms, filter.step(f.flat()));
  return out;
}

CalibrationProfile CalibrationProfile::identity(std::size_t sensors, double magnitude) {
  CalibrationProfile p;
  p.device_bias.assign(sensors, Vec3::Zero());
  p.earth_field_magnitude = magnitude;
  return p;
}

void CalibrationProfile::validate() const {
  if (!(earth_field_magnitude > 0.0) || !std::isfinite(earth_field_magnitude))
    throw ValidationError("earth_field_magnitude must be positive");
  for (const auto& b : device_bias)
    if (!b.allFinite()) throw ValidationError("device bias must be finite");
}

Vector CalibrationProfile::bias_flat() const {
  Vector v(static_cast<Eigen::Index>(3 * device_bias.size()));
  for (std::size_t k = 0; k < device_bias.size(); ++k) v.segment<3>(static_cast<Eigen::Index>(3 * k)) = device_bias[k];
  return v;
}

CalibrationProfile CalibrationProfile::scale_only() const {
  return identity(device_bias.size(), earth_field_magnitude);
}

SphereFit fit_sphere(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points, double max_condition) {
  const Eigen::Index n = points.rows();
  if (n < 4) throw CalibrationError("sphere fit needs at least 4 points");
  const Eigen::RowVector3d mean = points.colwise().mean();
  const Eigen::Matrix<double, Eigen::Dynamic, 3> q = points.rowwise() - mean;
  // |q|^2 = 2 q.c + k, solved on column-scaled design for a meaningful condition number
  Matrix a(n, 4);
  a.leftCols<3>() = 2.0 * q;
  a.col(3).setOnes();
  Vector scale(4);
  for (Eigen::Index j = 0; j < 4; ++j) {
    const double s = a.col(j).norm() / std::sqrt(static_cast<double>(n));
    scale(j) = s > 1e-12 ? s : 1.0;
  }
  const Matrix as = a * scale.cwiseInverse().asDiagonal();
  const Vector b = q.rowwise().squaredNorm();
  Eigen::JacobiSVD<Matrix> svd(as, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
  if (!(cond <= max_condition))
    throw CalibrationError("insufficient orientation diversity for calibration (condition " + std::to_string(cond) + ")");
  const Vector x = svd.solve(b).cwiseQuotient(scale);
  SphereFit fit;
  fit.center = x.head<3>() + mean.transpose();
  const Vec3 c = x.head<3>();
  fit.radius = std::sqrt(std::max(0.0, x(3) + c.squaredNorm()));
  fit.condition = cond;
  double ss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = (points.row(i).transpose() - fit.center).norm() - fit.radius;
    ss += r * r;
  }
  fit.rms_residual = std::sqrt(ss / static_cast<double>(n));
  return fit;
}

CalibrationProfile calibrate_device_bias(const Recording& rec, double duration_s, double max_condition) {
  rec.validate();
  if (rec.empty()) throw CalibrationError("calibration recording is empty");
  const std::int64_t t0 = rec.frames.front().timestamp_ms;
  const double span_s = static_cast<double>(rec.frames.back().timestamp_ms - t0) / 1000.0;
  const double one_frame = 1.0 / rec.sample_rate_hz;
  if (span_s + one_frame < duration_s - 1e-9)
    throw CalibrationError("calibration needs " + std::to_string(duration_s) + " s of data, got " +
                           std::to_string(span_s + one_frame));
  std::size_t used = 0;
  while (used < rec.size() &&
         static_cast<double>(rec.frames[used].timestamp_ms - t0) / 1000.0 < duration_s - 1e-9)
    ++used;
  CalibrationProfile profile;
  double radius_sum = 0.0;
  for (std::size_t s = 0; s < rec.sensor_count(); ++s) {
    Eigen::Matrix<double, Eigen::Dynamic, 3> pts(static_cast<Eigen::Index>(used), 3);
    for (std::size_t i = 0; i < used; ++i) pts.row(static_cast<Eigen::Index>(i)) = rec.frames[i].sensor(s).transpose();
    const SphereFit fit = fit_sphere(pts, max_condition);
    profile.device_bias.push_back(fit.center);
    radius_sum += fit.radius;
  }
  profile.earth_field_magnitude = radius_sum / static_cast<double>(rec.sensor_count());
  profile.validate();
  return profile;
}

Window normalize_window(const Window& w, const CalibrationProfile& profile) {
  return Window{normalize_frames(w.data, profile), w.origin};
}

Matrix normalize_frames(const Matrix& frames, const CalibrationProfile& profile) {
  const Vector bias = profile.bias_flat();
  if (bias.size() != frames.cols()) throw ValidationError("profile sensor count does not match data");
  return (frames.rowwise() - bias.transpose()) / profile.earth_field_magnitude;
}

Window denormalize_window(const Window& w, const CalibrationProfile& profile) {
  const Vector bias = profile.bias_flat();
  return Window{(w.data * profile.earth_field_magnitude).rowwise() + bias.transpose(), w.origin};
}

Recording apply_bias_correction(const Recording& rec, const CalibrationProfile& profile) {
  const Vector bias = profile.bias_flat();
  Recording out = rec;
  for (auto& f : out.frames) {
    if (static_cast<Eigen::Index>(3 * f.sensor_count()) != bias.size())
      throw ValidationError("profile sensor count does not match recording");
    f = SampleFrame::from_flat(f.timestamp_ms, f.flat() - bias);
  }
  return out;
}

std::string format_profile(const CalibrationProfile& profile) {
  std::string out = "format=magsense-calibration-v1\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "sensors=%zu\n", profile.device_bias.size());
  out += buf;
  std::snprintf(buf, sizeof(buf), "earth_field_magnitude=%.17g\n", profile.earth_field_magnitude);
  out += buf;
  for (std::size_t k = 0; k < profile.device_bias.size(); ++k) {
    const Vec3& b = profile.device_bias[k];
    std::snprintf(buf, sizeof(buf), "bias%zu=%.17g,%.17g,%.17g\n", k, b.x(), b.y(), b.z());
    out += buf;
  }
  return out;
}

CalibrationProfile parse_profile(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::map<std::string, std::string> kv;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("malformed profile line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (kv["format"] != "magsense-calibration-v1") throw ValidationError("unsupported calibration profile format");
  CalibrationProfile p;
  p.earth_field_magnitude = std::stod(kv.at("earth_field_magnitude"));
  const auto sensors = std::stoul(kv.at("sensors"));
  for (std::size_t k = 0; k < sensors; ++k) {
    const std::string v = kv.at("bias" + std::to_string(k));
    Vec3 b;
    if (std::sscanf(v.c_str(), "%lf,%lf,%lf", &b.x(), &b.y(), &b.z()) != 3)
      throw ValidationError("malformed bias entry '" + v + "'");
    p.device_bias.push_back(b);
  }
  p.validate();
  return p;
}

void write_profile(const CalibrationProfile& profile, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_profile(profile);
}

CalibrationProfile read_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_profile(ss.str());
}

}  // namespace magsense::preprocess
