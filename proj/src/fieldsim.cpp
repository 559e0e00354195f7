#include "magsense/fieldsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "magsense/random.hpp"

namespace magsense::fieldsim {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Vec3 random_unit(Rng& rng) {
  Vec3 v(gaussian(rng), gaussian(rng), gaussian(rng));
  const double n = v.norm();
  return n > 0 ? Vec3(v / n) : Vec3::UnitZ();
}

Vec3 gaussian_vec(Rng& rng, double sigma) { return {gaussian(rng, sigma), gaussian(rng, sigma), gaussian(rng, sigma)}; }

}  // namespace

SensorArray SensorArray::linear(std::size_t n, double spacing, bool centered) {
  SensorArray a;
  const double shift = centered ? spacing * (static_cast<double>(n) - 1.0) / 2.0 : 0.0;
  for (std::size_t k = 0; k < n; ++k) a.positions.emplace_back(spacing * static_cast<double>(k) - shift, 0.0, 0.0);
  return a;
}

Vec3 SensorArray::center() const {
  Vec3 c = Vec3::Zero();
  for (const auto& p : positions) c += p;
  return positions.empty() ? c : Vec3(c / static_cast<double>(positions.size()));
}

void SensorArray::validate() const {
  if (positions.empty()) throw ValidationError("sensor array needs at least one sensor");
  for (std::size_t i = 0; i < positions.size(); ++i)
    for (std::size_t j = i + 1; j < positions.size(); ++j)
      if ((positions[i] - positions[j]).norm() < 1e-9) throw ValidationError("sensor positions must be distinct");
  if ((noise_std.array() < 0.0).any()) throw ValidationError("noise_std must be non-negative");
  if (!(sample_rate_hz > 0.0)) throw ValidationError("sample_rate_hz must be positive");
}

void MagnetTrajectory::validate() const {
  if (!(duration_s > 0.0)) throw ValidationError("trajectory duration must be positive");
  if (waypoints.empty()) throw ValidationError("trajectory needs at least one waypoint");
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    const double t = waypoints[i].t_s;
    if (t < 0.0 || t > duration_s + 1e-9) throw ValidationError("waypoint time outside [0, duration]");
    if (i > 0 && t <= waypoints[i - 1].t_s) throw ValidationError("waypoint times must increase");
  }
}

Waypoint MagnetTrajectory::at(double t_s) const {
  if (t_s <= waypoints.front().t_s) return Waypoint{t_s, waypoints.front().position, waypoints.front().moment};
  if (t_s >= waypoints.back().t_s) return Waypoint{t_s, waypoints.back().position, waypoints.back().moment};
  const auto it = std::upper_bound(waypoints.begin(), waypoints.end(), t_s,
                                   [](double t, const Waypoint& w) { return t < w.t_s; });
  const Waypoint& b = *it;
  const Waypoint& a = *(it - 1);
  const double u = (t_s - a.t_s) / (b.t_s - a.t_s);
  return Waypoint{t_s, a.position + u * (b.position - a.position), a.moment + u * (b.moment - a.moment)};
}

void EnvironmentField::validate() const {
  if (!uniform_field.allFinite()) throw ValidationError("uniform field must be finite");
  if (uniform_field.norm() > max_uniform_magnitude) throw ValidationError("uniform field exceeds configured bound");
}

DipoleField dipole_field(const Vec3& moment, const Vec3& magnet_pos, const Vec3& sensor_pos, double r_min) {
  Vec3 r = sensor_pos - magnet_pos;
  double d = r.norm();
  DipoleField out;
  if (d < r_min) {
    out.clamped = true;
    // keep the direction when defined, otherwise look along the moment
    r = d > 1e-12 ? Vec3(r / d) : (moment.norm() > 0 ? Vec3(moment.normalized()) : Vec3::UnitZ());
    d = r_min;
  } else {
    r /= d;
  }
  out.field = kDipoleScale * (3.0 * moment.dot(r) * r - moment) / (d * d * d);
  return out;
}

SensorReadings magnet_field(const std::vector<Waypoint>& magnets, const SensorArray& array) {
  SensorReadings out = SensorReadings::Zero(static_cast<Eigen::Index>(array.size()), 3);
  for (const auto& m : magnets)
    for (std::size_t k = 0; k < array.size(); ++k)
      out.row(static_cast<Eigen::Index>(k)) += dipole_field(m.moment, m.position, array.positions[k]).field.transpose();
  return out;
}

double dipole_pair_delta(const Vec3& moment, const Vec3& magnet_pos, const SensorArray& array) {
  const SensorReadings b = magnet_field({Waypoint{0.0, magnet_pos, moment}}, array);
  double best = 0.0;
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = i + 1; j < b.rows(); ++j) best = std::max(best, (b.row(i) - b.row(j)).norm());
  return best;
}

Recording simulate_recording(const std::vector<MagnetTrajectory>& magnets, const SensorArray& array,
                             const EnvironmentField& env, std::uint64_t seed) {
  array.validate();
  env.validate();
  double duration = 0.0;
  for (const auto& m : magnets) {
    m.validate();
    duration = std::max(duration, m.duration_s);
  }
  const auto ticks = static_cast<std::size_t>(std::floor(duration * array.sample_rate_hz + 1e-9)) + 1;
  Rng rng(seed);
  Recording rec;
  rec.sample_rate_hz = array.sample_rate_hz;
  rec.frames.reserve(ticks);
  std::vector<Waypoint> now(magnets.size());
  for (std::size_t i = 0; i < ticks; ++i) {
    const double t = static_cast<double>(i) / array.sample_rate_hz;
    for (std::size_t m = 0; m < magnets.size(); ++m) now[m] = magnets[m].at(t);
    SampleFrame f;
    f.timestamp_ms = tick_timestamp_ms(i, array.sample_rate_hz);
    f.readings = magnet_field(now, array);
    for (std::size_t k = 0; k < array.size(); ++k) {
      const Vec3 base = env.uniform_field + env.bias(k);
      for (int a = 0; a < 3; ++a) {
        const double noise = array.noise_std(a) > 0.0 ? gaussian(rng, array.noise_std(a)) : 0.0;
        f.readings(static_cast<Eigen::Index>(k), a) += base(a) + noise;
      }
    }
    rec.frames.push_back(std::move(f));
  }
  return rec;
}

Recording simulate_recording(const MagnetTrajectory& traj, const SensorArray& array, const EnvironmentField& env,
                             std::uint64_t seed) {
  return simulate_recording(std::vector<MagnetTrajectory>{traj}, array, env, seed);
}

double calibrate_moment(const SensorArray& array, double range_cm, double threshold_ut) {
  const double unit = dipole_pair_delta(Vec3::UnitZ(), array.center() + range_cm * Vec3::UnitZ(), array);
  return threshold_ut / unit;
}

double preset_moment(MagnetPreset preset) {
  static const double ring = calibrate_moment(SensorArray::linear(), 11.0, 18.0);
  return preset == MagnetPreset::ring ? ring : ring / 10.0;
}

Vec3 earth_field(double heading_deg, double horizontal_ut, double vertical_ut) {
  const double h = heading_deg * kDeg;
  return {horizontal_ut * std::cos(h), -vertical_ut, horizontal_ut * std::sin(h)};
}

std::map<int, std::vector<MagnetTrajectory>> design_study_trajectories(std::size_t n_directions, double jitter_std_cm,
                                                                       std::size_t samples_per_action,
                                                                       std::uint64_t seed,
                                                                       const DesignStudyGeometry& geometry) {
  if (n_directions < 2) throw ValidationError("design study needs at least two directions");
  const double moment_mag = geometry.moment > 0 ? geometry.moment : preset_moment(MagnetPreset::ring);
  const Vec3 moment = moment_mag * geometry.moment_dir.normalized();
  const Vec3 lift = geometry.plane_offset_cm * Vec3::UnitZ();
  std::map<int, std::vector<MagnetTrajectory>> out;
  for (std::size_t k = 0; k < n_directions; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_directions);
    const Vec3 dir(std::cos(angle), std::sin(angle), 0.0);
    Rng rng(mix_seed(seed, k));
    auto& list = out[static_cast<int>(k)];
    list.reserve(samples_per_action);
    for (std::size_t s = 0; s < samples_per_action; ++s) {
      const Vec3 start = -geometry.half_length_cm * dir + lift + gaussian_vec(rng, jitter_std_cm);
      const Vec3 end = geometry.half_length_cm * dir + lift + gaussian_vec(rng, jitter_std_cm);
      MagnetTrajectory traj;
      traj.duration_s = geometry.pass_duration_s;
      traj.waypoints = {Waypoint{0.0, start, moment}, Waypoint{geometry.pass_duration_s, end, moment}};
      list.push_back(std::move(traj));
    }
  }
  return out;
}

GestureTask parse_task(const std::string& name) {
  if (name == "face8") return GestureTask::face8;
  if (name == "scratch9") return GestureTask::scratch9;
  if (name == "scratch_binary") return GestureTask::scratch_binary;
  throw ValidationError("unknown task '" + name + "'");
}

std::string task_name(GestureTask task) {
  switch (task) {
    case GestureTask::face8: return "face8";
    case GestureTask::scratch9: return "scratch9";
    case GestureTask::scratch_binary: return "scratch_binary";
  }
  return "?";
}

std::vector<std::string> class_names(GestureTask task) {
  switch (task) {
    case GestureTask::face8:
      return {"forehead", "left_eye", "right_eye", "nose", "left_cheek", "right_cheek", "lips", "no_touch"};
    case GestureTask::scratch9:
      return {"cell0", "cell1", "cell2", "cell3", "lesion", "cell5", "cell6", "cell7", "cell8"};
    case GestureTask::scratch_binary:
      return {"no_scratch", "scratch"};
  }
  return {};
}

std::size_t class_count(GestureTask task) { return class_names(task).size(); }

MagnetPreset task_magnet(GestureTask task) {
  return task == GestureTask::face8 ? MagnetPreset::ring : MagnetPreset::silicon;
}

std::vector<Vec3> task_anchors(GestureTask task) {
  const Vec3 c = SensorArray::linear().center();
  std::vector<Vec3> out;
  if (task == GestureTask::face8) {
    // seven regions on a ring of the hemisphere plus the pole, radius 6 cm
    const double radius = 8.0;
    const double polar = 55.0 * kDeg;
    for (int k = 0; k < 7; ++k) {
      const double az = 2.0 * std::numbers::pi * k / 7.0;
      out.push_back(c + radius * Vec3(std::sin(polar) * std::cos(az), std::sin(polar) * std::sin(az), std::cos(polar)));
    }
    out.push_back(c + radius * Vec3::UnitZ());
  } else {
    // 3x3 skin grid, 3 cm pitch, 2.5 cm above the unit; cell 4 is the centre
    for (int j = -1; j <= 1; ++j)
      for (int i = -1; i <= 1; ++i) out.push_back(c + Vec3(3.0 * i, 3.0 * j, 2.5));
  }
  return out;
}

UserProfile make_user(int id, std::uint64_t seed) {
  UserProfile u;
  u.id = id;
  Rng rng(mix_seed(seed ^ 0x5553455253ULL, static_cast<std::uint64_t>(id)));
  // device bias is a property of the host device, present for everybody
  for (std::size_t k = 0; k < kDefaultSensors; ++k) u.device_bias.push_back(gaussian_vec(rng, 4.0));
  if (id == 0) return u;
  u.anchor_offset = gaussian_vec(rng, 0.4);
  u.anchor_scale = 1.0 + gaussian(rng, 0.06);
  u.moment_scale = std::clamp(1.0 + gaussian(rng, 0.12), 0.7, 1.3);
  u.moment_dir = (Vec3::UnitZ() + gaussian_vec(rng, 0.15)).normalized();
  u.speed_scale = std::clamp(1.0 + gaussian(rng, 0.15), 0.7, 1.4);
  return u;
}

namespace {

struct TimelineBuilder {
  MagnetTrajectory traj;
  double t = 0.0;

  void hold(const Vec3& p, const Vec3& m, double dt) {
    add(p, m);
    t += dt;
    add(p, m);
  }
  void move(const Vec3& p, const Vec3& m, double dt) {
    t += dt;
    add(p, m);
  }
  void add(const Vec3& p, const Vec3& m) {
    if (!traj.waypoints.empty() && t <= traj.waypoints.back().t_s + 1e-9) {
      traj.waypoints.back().position = p;
      traj.waypoints.back().moment = m;
      return;
    }
    traj.waypoints.push_back(Waypoint{t, p, m});
  }
  MagnetTrajectory finish() {
    traj.duration_s = t;
    return traj;
  }
};

Vec3 rest_position(const Vec3& center, Rng& rng) {
  const Vec3 dir = (Vec3(0.3, -1.0, 0.5) + gaussian_vec(rng, 0.1)).normalized();
  return center + 35.0 * dir;
}

// Interval [start, end) of the longest run where the magnet alone exceeds the
// threshold, with runs split by fewer than `merge_gap` quiet ticks joined;
// (0, 0) when it never does.
std::pair<std::size_t, std::size_t> truth_interval(const MagnetTrajectory& traj, const SensorArray& array,
                                                   std::size_t ticks, double threshold, std::size_t merge_gap) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  std::size_t run_s = 0;
  bool in = false;
  for (std::size_t i = 0; i <= ticks; ++i) {
    bool above = false;
    if (i < ticks) {
      const Waypoint w = traj.at(static_cast<double>(i) / array.sample_rate_hz);
      above = dipole_pair_delta(w.moment, w.position, array) > threshold;
    }
    if (above && !in) {
      run_s = i;
      in = true;
    } else if (!above && in) {
      in = false;
      if (!runs.empty() && run_s - runs.back().second < merge_gap)
        runs.back().second = i;
      else
        runs.emplace_back(run_s, i);
    }
  }
  std::pair<std::size_t, std::size_t> best{0, 0};
  for (const auto& r : runs)
    if (r.second - r.first > best.second - best.first) best = r;
  return best;
}

SensorArray placed_array(const CorpusOptions& opts) {
  SensorArray a = opts.array;
  for (auto& p : a.positions) p += opts.array_offset;
  return a;
}

}  // namespace

LabeledRecording synth_gesture(GestureTask task, int label, std::uint64_t seed, const CorpusOptions& opts) {
  const GestureTask geometry_task = task == GestureTask::scratch_binary ? GestureTask::scratch9 : task;
  const auto anchors = task_anchors(geometry_task);
  if (label < 0 || static_cast<std::size_t>(label) >= anchors.size()) throw ValidationError("label out of range");
  const UserProfile& user = opts.user;
  Rng rng(seed);

  const Vec3 center = SensorArray::linear().center();
  const Vec3 anchor = center + user.anchor_scale * (anchors[static_cast<std::size_t>(label)] - center) +
                      user.anchor_offset + gaussian_vec(rng, 0.3);
  const double moment_mag = preset_moment(task_magnet(geometry_task)) * user.moment_scale;
  const Vec3 moment = moment_mag * user.moment_dir.normalized();
  const bool face = geometry_task == GestureTask::face8;
  const double dwell = face ? uniform(rng, 3.0, 15.0) : uniform(rng, 2.0, 12.0);
  const double speed = user.speed_scale;

  TimelineBuilder tl;
  const Vec3 rest = rest_position(center, rng);
  tl.hold(rest, moment, uniform(rng, 2.0, 3.0));
  tl.move(anchor, moment, uniform(rng, 0.9, 1.3) / speed);
  if (face) {
    // small tremor around the touch point
    for (double t = 0.0; t < dwell; t += 0.5) tl.move(anchor + gaussian_vec(rng, 0.15), moment, 0.5);
  } else {
    // back-and-forth scratching along a random in-plane direction
    const double az = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const Vec3 stroke = 0.6 * Vec3(std::cos(az), std::sin(az), 0.0);
    int sign = 1;
    for (double t = 0.0; t < dwell; t += 0.25, sign = -sign) tl.move(anchor + sign * stroke, moment, 0.25);
  }
  tl.move(rest_position(center, rng), moment, uniform(rng, 0.9, 1.3) / speed);
  tl.hold(tl.traj.waypoints.back().position, moment, uniform(rng, 1.5, 2.5));
  MagnetTrajectory traj = tl.finish();

  const SensorArray array = placed_array(opts);
  EnvironmentField env;
  env.uniform_field = earth_field(opts.orientation_deg);
  env.device_bias = user.device_bias;

  LabeledRecording out;
  out.recording = simulate_recording(traj, array, env, mix_seed(seed, 1));
  const auto [ts, te] = truth_interval(traj, array, out.recording.size(), opts.threshold_ut, opts.truth_merge_gap);
  out.truth_start = ts;
  out.truth_end = te;
  out.label = task == GestureTask::scratch_binary ? (label == 4 ? 1 : 0) : label;

  auto& meta = out.recording.meta;
  meta["task"] = task_name(task);
  meta["label"] = std::to_string(out.label);
  meta["label_name"] = class_names(task)[static_cast<std::size_t>(out.label)];
  meta["user"] = std::to_string(user.id);
  meta["orientation_deg"] = std::to_string(static_cast<int>(std::lround(opts.orientation_deg)));
  meta["truth_start"] = std::to_string(ts);
  meta["truth_end"] = std::to_string(te);
  return out;
}

std::vector<LabeledRecording> synth_gesture_corpus(GestureTask task, std::size_t n_per_class, std::uint64_t seed,
                                                   const CorpusOptions& opts) {
  if (n_per_class < 1) throw ValidationError("n_per_class must be >= 1");
  const GestureTask geometry_task = task == GestureTask::scratch_binary ? GestureTask::scratch9 : task;
  const std::size_t classes = task_anchors(geometry_task).size();
  std::vector<LabeledRecording> out;
  out.reserve(classes * n_per_class);
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const std::uint64_t item_seed = mix_seed(seed, c * 100003 + i);
      auto rec = synth_gesture(task, static_cast<int>(c), item_seed, opts);
      rec.recording.meta["seed"] = std::to_string(item_seed);
      out.push_back(std::move(rec));
    }
  return out;
}

std::vector<Recording> pretraining_corpus(const std::vector<int>& users, std::size_t sessions_per_user,
                                          std::uint64_t seed, double duration_s) {
  std::vector<Recording> out;
  const SensorArray array = SensorArray::linear();
  const Vec3 center = array.center();
  for (int uid : users) {
    const UserProfile user = make_user(uid, seed);
    for (std::size_t s = 0; s < sessions_per_user; ++s) {
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(uid) * 1000 + s));
      const MagnetPreset preset = (s % 2 == 0) ? MagnetPreset::ring : MagnetPreset::silicon;
      const Vec3 moment = preset_moment(preset) * user.moment_scale * user.moment_dir.normalized();
      TimelineBuilder tl;
      tl.hold(rest_position(center, rng), moment, uniform(rng, 1.0, 2.0));
      while (tl.t < duration_s) {
        // approach a random nearby point, linger, leave
        Vec3 dir = random_unit(rng);
        dir.z() = std::abs(dir.z()) + 0.2;
        const double reach = preset == MagnetPreset::ring ? uniform(rng, 3.0, 9.0) : uniform(rng, 2.5, 5.0);
        const Vec3 target = center + reach * dir.normalized() + user.anchor_offset;
        tl.move(target, moment, uniform(rng, 0.6, 1.5) / user.speed_scale);
        const double linger = uniform(rng, 1.0, 5.0);
        for (double t = 0.0; t < linger; t += 0.4) tl.move(target + gaussian_vec(rng, 0.4), moment, 0.4);
        tl.move(rest_position(center, rng), moment, uniform(rng, 0.6, 1.5) / user.speed_scale);
        tl.hold(tl.traj.waypoints.back().position, moment, uniform(rng, 0.5, 3.0));
      }
      MagnetTrajectory traj = tl.finish();
      traj.duration_s = std::min(traj.duration_s, duration_s);
      while (traj.waypoints.size() > 1 && traj.waypoints.back().t_s > duration_s) traj.waypoints.pop_back();
      EnvironmentField env;
      env.uniform_field = earth_field(uniform(rng, 0.0, 360.0));
      env.device_bias = user.device_bias;
      Recording rec = simulate_recording(traj, array, env, mix_seed(seed, 7919 + uid * 1000 + s));
      rec.meta["user"] = std::to_string(uid);
      rec.meta["session"] = std::to_string(s);
      rec.meta["magnet"] = preset == MagnetPreset::ring ? "ring" : "silicon";
      out.push_back(std::move(rec));
    }
  }
  return out;
}

namespace {

Recording magnet_free(const UserProfile& user, std::uint64_t seed, double duration_s, double max_angle_deg) {
  const SensorArray array = SensorArray::linear();
  Rng rng(seed);
  const auto ticks = static_cast<std::size_t>(std::floor(duration_s * array.sample_rate_hz)) + 1;
  // smooth random rotation path: slerp between random key orientations every second
  std::vector<Eigen::Quaterniond> keys;
  for (double t = 0.0; t <= duration_s + 1.0; t += 1.0) {
    const Vec3 axis = random_unit(rng);
    const double angle = uniform(rng, -max_angle_deg, max_angle_deg) * kDeg;
    keys.emplace_back(Eigen::AngleAxisd(angle, axis));
  }
  const Vec3 world = earth_field(0.0);
  Matrix values(static_cast<Eigen::Index>(ticks), static_cast<Eigen::Index>(3 * array.size()));
  for (std::size_t i = 0; i < ticks; ++i) {
    const double t = static_cast<double>(i) / array.sample_rate_hz;
    const auto k = static_cast<std::size_t>(t);
    const Eigen::Quaterniond q = keys[k].slerp(t - static_cast<double>(k), keys[k + 1]);
    const Vec3 local = q.toRotationMatrix().transpose() * world;
    for (std::size_t s = 0; s < array.size(); ++s)
      for (int a = 0; a < 3; ++a)
        values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(3 * s + a)) =
            local(a) + (s < user.device_bias.size() ? user.device_bias[s](a) : 0.0) +
            gaussian(rng, array.noise_std(a));
  }
  Recording rec = recording_from_matrix(values, array.sample_rate_hz);
  rec.meta["user"] = std::to_string(user.id);
  return rec;
}

}  // namespace

Recording calibration_recording(const UserProfile& user, std::uint64_t seed, double duration_s) {
  return magnet_free(user, seed, duration_s, 180.0);
}

Recording quiet_recording(const UserProfile& user, std::uint64_t seed, double duration_s) {
  return magnet_free(user, seed, duration_s, 40.0);
}

}  // namespace magsense::fieldsim
