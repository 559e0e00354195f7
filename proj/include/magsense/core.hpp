#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace magsense {

using Vec3 = Eigen::Vector3d;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Field readings of one frame: one row per sensor, columns x/y/z, in uT.
using SensorReadings = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

inline constexpr std::size_t kWindowLength = 16;
inline constexpr std::size_t kDefaultSensors = 3;
inline constexpr std::size_t kDefaultChannels = 3 * kDefaultSensors;
inline constexpr double kNominalSampleRateHz = 17.0;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SampleFrame {
  std::int64_t timestamp_ms = 0;
  SensorReadings readings;

  std::size_t sensor_count() const { return static_cast<std::size_t>(readings.rows()); }
  Vec3 sensor(std::size_t k) const { return readings.row(static_cast<Eigen::Index>(k)).transpose(); }
  // Row-major flattening: s0x, s0y, s0z, s1x, ...
  Vector flat() const;
  static SampleFrame from_flat(std::int64_t timestamp_ms, const Vector& values);
};

using Meta = std::map<std::string, std::string>;

struct Recording {
  std::vector<SampleFrame> frames;
  double sample_rate_hz = kNominalSampleRateHz;
  Meta meta;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  std::size_t sensor_count() const { return frames.empty() ? kDefaultSensors : frames.front().sensor_count(); }
  std::size_t channel_count() const { return 3 * sensor_count(); }

  // Frames as an N x (3 * sensors) matrix.
  Matrix as_matrix() const;

  // Throws ValidationError when an invariant does not hold.
  void validate() const;
};

// Builds frames at the given rate, timestamps rounded to whole milliseconds.
Recording recording_from_matrix(const Matrix& values, double sample_rate_hz, Meta meta = {});
std::int64_t tick_timestamp_ms(std::size_t tick, double sample_rate_hz);

struct Window {
  Matrix data;  // kWindowLength x channels
  std::size_t origin = 0;
};

struct GestureEvent {
  std::size_t start_idx = 0;
  std::size_t end_idx = 0;
  std::vector<int> window_labels;
  int voted_label = -1;
  double confidence = 0.0;

  void validate() const;
};

Recording read_recording(const std::filesystem::path& path);
void write_recording(const Recording& rec, const std::filesystem::path& path);
std::string format_recording(const Recording& rec);
Recording parse_recording(const std::string& text);

std::vector<Window> sliding_windows(const Recording& rec, std::size_t length = kWindowLength,
                                    std::size_t stride = 1);
std::vector<Window> sliding_windows(const Matrix& frames, std::size_t length = kWindowLength,
                                    std::size_t stride = 1);

std::string event_to_json(const GestureEvent& ev);
GestureEvent event_from_json(const std::string& line);
void write_events_jsonl(const std::vector<GestureEvent>& events, const std::filesystem::path& path);
std::vector<GestureEvent> read_events_jsonl(const std::filesystem::path& path);

}  // namespace magsense
