#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "magsense/core.hpp"

namespace magsense::fieldsim {

// mu0/4pi expressed for moments in A*cm^2, distances in cm and fields in uT.
inline constexpr double kDipoleScale = 10.0;
inline constexpr double kDefaultMinDistanceCm = 0.5;
inline constexpr double kSensorSpacingCm = 0.8;

struct SensorArray {
  std::vector<Vec3> positions;  // cm
  Vec3 noise_std{0.6, 0.6, 1.1};  // uT per axis
  double sample_rate_hz = kNominalSampleRateHz;

  // n sensors along +x at `spacing`; `centered` shifts the array so its
  // midpoint is the origin.
  static SensorArray linear(std::size_t n = kDefaultSensors, double spacing = kSensorSpacingCm, bool centered = false);

  std::size_t size() const { return positions.size(); }
  Vec3 center() const;
  void validate() const;
};

struct Waypoint {
  double t_s = 0.0;
  Vec3 position = Vec3::Zero();  // cm
  Vec3 moment = Vec3::Zero();    // A*cm^2
};

struct MagnetTrajectory {
  std::vector<Waypoint> waypoints;
  double duration_s = 0.0;

  void validate() const;
  // Piecewise-linear in position and moment; clamps outside [0, duration].
  Waypoint at(double t_s) const;
};

struct EnvironmentField {
  Vec3 uniform_field = Vec3::Zero();  // uT
  std::vector<Vec3> device_bias;      // per sensor, uT; empty means zero
  double max_uniform_magnitude = 100.0;

  void validate() const;
  Vec3 bias(std::size_t sensor) const { return sensor < device_bias.size() ? device_bias[sensor] : Vec3::Zero(); }
};

struct DipoleField {
  Vec3 field = Vec3::Zero();  // uT
  bool clamped = false;       // distance fell below r_min; near-field result is not physical
};

DipoleField dipole_field(const Vec3& moment, const Vec3& magnet_pos, const Vec3& sensor_pos,
                         double r_min = kDefaultMinDistanceCm);

// Largest |R_i - R_j| the magnet alone induces across the array.
double dipole_pair_delta(const Vec3& moment, const Vec3& magnet_pos, const SensorArray& array);

// Noise-free field of all magnets at every sensor, no environment.
SensorReadings magnet_field(const std::vector<Waypoint>& magnets, const SensorArray& array);

Recording simulate_recording(const std::vector<MagnetTrajectory>& magnets, const SensorArray& array,
                             const EnvironmentField& env, std::uint64_t seed);
Recording simulate_recording(const MagnetTrajectory& traj, const SensorArray& array, const EnvironmentField& env,
                             std::uint64_t seed);

// Moment magnitude such that a magnet `range_cm` above the array center,
// moment pointing along +z, produces a max pair delta of `threshold_ut`.
double calibrate_moment(const SensorArray& array, double range_cm, double threshold_ut);

enum class MagnetPreset { ring, silicon };
// ring: 18 uT pair delta at 11 cm on the default array. silicon: a tenth of that.
double preset_moment(MagnetPreset preset);

// Earth-like field for a wearer facing `heading_deg`. The array's y axis is
// the wearer's vertical, so orientation rotates the field about y.
Vec3 earth_field(double heading_deg, double horizontal_ut = 20.0, double vertical_ut = 45.0);

struct DesignStudyGeometry {
  double half_length_cm = 5.0;
  double plane_offset_cm = 2.0;  // height of the pass plane above the array plane
  Vec3 moment_dir{1.0, 0.0, 0.0};
  double moment = -1.0;  // A*cm^2; negative selects the ring preset
  double pass_duration_s = 2.0;
};

std::map<int, std::vector<MagnetTrajectory>> design_study_trajectories(std::size_t n_directions = 8,
                                                                       double jitter_std_cm = 1.0,
                                                                       std::size_t samples_per_action = 100,
                                                                       std::uint64_t seed = 0,
                                                                       const DesignStudyGeometry& geometry = {});

enum class GestureTask { face8, scratch9, scratch_binary };
GestureTask parse_task(const std::string& name);
std::string task_name(GestureTask task);
std::size_t class_count(GestureTask task);
std::vector<std::string> class_names(GestureTask task);
MagnetPreset task_magnet(GestureTask task);
std::vector<Vec3> task_anchors(GestureTask task);

// Per-wearer variation: how the anchors, magnet and device differ between people.
struct UserProfile {
  int id = 0;
  Vec3 anchor_offset = Vec3::Zero();
  double anchor_scale = 1.0;
  double moment_scale = 1.0;
  Vec3 moment_dir{0.0, 0.0, 1.0};
  std::vector<Vec3> device_bias;
  double speed_scale = 1.0;
};

// User 0 is the nominal wearer; others are drawn deterministically from (id, seed).
UserProfile make_user(int id, std::uint64_t seed = 0);

struct CorpusOptions {
  UserProfile user;
  double orientation_deg = 0.0;
  SensorArray array = SensorArray::linear();
  Vec3 array_offset = Vec3::Zero();  // rigid shift of the whole unit (remount)
  double threshold_ut = 18.0;        // defines the ground-truth event interval
  std::size_t truth_merge_gap = 3;   // quiet ticks shorter than this do not split it
};

struct LabeledRecording {
  Recording recording;
  int label = 0;
  std::size_t truth_start = 0;  // ground-truth event frames [start, end)
  std::size_t truth_end = 0;
};

LabeledRecording synth_gesture(GestureTask task, int label, std::uint64_t seed, const CorpusOptions& opts = {});
std::vector<LabeledRecording> synth_gesture_corpus(GestureTask task, std::size_t n_per_class, std::uint64_t seed,
                                                   const CorpusOptions& opts = {});

// Unlabeled 45 s sessions of free-form hand movement for encoder pretraining.
std::vector<Recording> pretraining_corpus(const std::vector<int>& users, std::size_t sessions_per_user,
                                          std::uint64_t seed, double duration_s = 45.0);

// Magnet-free recording while the wearer turns through many orientations;
// input for device-bias calibration.
Recording calibration_recording(const UserProfile& user, std::uint64_t seed, double duration_s = 10.0);

// Magnet-free recording of ordinary head movement, for threshold calibration.
Recording quiet_recording(const UserProfile& user, std::uint64_t seed, double duration_s = 6.0);

}  // namespace magsense::fieldsim
