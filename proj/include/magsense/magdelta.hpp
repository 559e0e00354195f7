#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <vector>

#include "magsense/core.hpp"

namespace magsense::magdelta {

inline constexpr std::size_t kQueueCapacity = 16;
inline constexpr double kDefaultThresholdUt = 18.0;
inline constexpr std::size_t kDefaultMinEventFrames = 4;
inline constexpr std::size_t kDefaultHysteresisFrames = 3;

// Largest Euclidean distance between any two sensors' field vectors.
double pair_delta(const SampleFrame& frame);
double pair_delta(const Vector& flat_frame);

struct TriggerConfig {
  double threshold_ut = kDefaultThresholdUt;
  std::size_t hysteresis_frames = kDefaultHysteresisFrames;
  // Hold the background queue while an event is active so the magnet's own
  // field never becomes the environment estimate.
  bool freeze_queue_during_event = true;

  void validate() const;
};

struct TriggerDecision {
  bool detected = false;
  double max_pair_delta_ut = 0.0;
  Vector env_estimate;
};

// Streaming nearby-magnet detector with a 16-frame background queue.
class Trigger {
 public:
  explicit Trigger(TriggerConfig config = {});

  TriggerDecision step(const SampleFrame& frame);
  TriggerDecision step(const Vector& flat_frame);

  const TriggerConfig& config() const { return config_; }
  bool active() const { return active_; }
  // Background estimate frozen at the onset of the current event.
  const Vector& event_env() const { return event_env_; }
  const std::deque<Vector>& queue() const { return queue_; }
  void reset();

 private:
  TriggerConfig config_;
  std::deque<Vector> queue_;
  bool active_ = false;
  std::size_t quiet_run_ = 0;
  Vector event_env_;
};

struct SegmentedEvent {
  std::size_t start_idx = 0;
  std::size_t end_idx = 0;  // one past the last above-threshold frame
  Vector env_estimate;
};

struct SegmentConfig {
  TriggerConfig trigger;
  std::size_t min_event_frames = kDefaultMinEventFrames;
};

// Online segmenter: feed frames one at a time; completed events come back as
// soon as the hysteresis run closes them.
class EventSegmenter {
 public:
  explicit EventSegmenter(SegmentConfig config = {});

  std::optional<SegmentedEvent> push(const Vector& flat_frame);
  // Closes an event still open at end of stream.
  std::optional<SegmentedEvent> flush();

  const Trigger& trigger() const { return trigger_; }
  std::size_t frames_seen() const { return index_; }

 private:
  std::optional<SegmentedEvent> close();

  SegmentConfig config_;
  Trigger trigger_;
  std::size_t index_ = 0;
  bool open_ = false;
  SegmentedEvent current_;
  std::size_t last_detected_ = 0;
};

std::vector<SegmentedEvent> segment_events(const Recording& rec, const SegmentConfig& config = {});
std::vector<SegmentedEvent> segment_events(const Recording& rec, double threshold_ut, std::size_t min_event_frames);
std::vector<SegmentedEvent> segment_events(const Matrix& frames, const SegmentConfig& config = {});

Window subtract_env(const Window& w, const Vector& env_estimate);

struct ThresholdCalibration {
  double safety_factor = 3.0;
  double floor_ut = 5.0;
  double min_duration_s = 5.0;
};

// max observed pair delta * safety factor, never below the floor.
double calibrate_threshold(const Recording& quiet_rec, const ThresholdCalibration& options = {});

}  // namespace magsense::magdelta
