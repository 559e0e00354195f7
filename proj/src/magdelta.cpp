#include "magsense/magdelta.hpp"

#include <algorithm>
#include <cmath>

namespace magsense::magdelta {

double pair_delta(const Vector& flat_frame) {
  if (flat_frame.size() % 3 != 0) throw ValidationError("frame width must be a multiple of 3");
  const Eigen::Index n = flat_frame.size() / 3;
  if (n < 2) throw ValidationError("pair delta needs at least 2 sensors");
  double best = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      best = std::max(best, (flat_frame.segment<3>(3 * i) - flat_frame.segment<3>(3 * j)).norm());
  return best;
}

double pair_delta(const SampleFrame& frame) { return pair_delta(frame.flat()); }

void TriggerConfig::validate() const {
  if (!(threshold_ut > 0.0) || !std::isfinite(threshold_ut)) throw ValidationError("threshold must be positive");
}

Trigger::Trigger(TriggerConfig config) : config_(config) { config_.validate(); }

void Trigger::reset() {
  queue_.clear();
  active_ = false;
  quiet_run_ = 0;
  event_env_ = Vector();
}

TriggerDecision Trigger::step(const SampleFrame& frame) { return step(frame.flat()); }

TriggerDecision Trigger::step(const Vector& flat_frame) {
  if (!flat_frame.allFinite()) throw ValidationError("non-finite frame");
  if (!queue_.empty() && queue_.front().size() != flat_frame.size()) throw ValidationError("frame width changed");
  TriggerDecision d;
  d.max_pair_delta_ut = pair_delta(flat_frame);
  d.detected = d.max_pair_delta_ut > config_.threshold_ut;

  const Vector env = queue_.empty() ? flat_frame : queue_.front();
  if (d.detected) {
    if (!active_) event_env_ = env;
    active_ = true;
    quiet_run_ = 0;
  } else if (active_) {
    if (++quiet_run_ >= config_.hysteresis_frames) {
      active_ = false;
      quiet_run_ = 0;
    }
  }
  d.env_estimate = active_ || d.detected ? event_env_ : env;

  const bool hold = d.detected || (config_.freeze_queue_during_event && active_);
  if (!hold) {
    queue_.push_back(flat_frame);
    if (queue_.size() > kQueueCapacity) queue_.pop_front();
  }
  return d;
}

EventSegmenter::EventSegmenter(SegmentConfig config) : config_(config), trigger_(config.trigger) {}

std::optional<SegmentedEvent> EventSegmenter::close() {
  open_ = false;
  current_.end_idx = last_detected_ + 1;
  if (current_.end_idx - current_.start_idx < config_.min_event_frames) return std::nullopt;
  return current_;
}

std::optional<SegmentedEvent> EventSegmenter::push(const Vector& flat_frame) {
  const std::size_t idx = index_++;
  const TriggerDecision d = trigger_.step(flat_frame);
  if (d.detected) {
    if (!open_) {
      open_ = true;
      current_ = SegmentedEvent{idx, idx + 1, d.env_estimate};
    }
    last_detected_ = idx;
    return std::nullopt;
  }
  if (open_ && !trigger_.active()) return close();
  return std::nullopt;
}

std::optional<SegmentedEvent> EventSegmenter::flush() {
  if (!open_) return std::nullopt;
  return close();
}

std::vector<SegmentedEvent> segment_events(const Matrix& frames, const SegmentConfig& config) {
  EventSegmenter seg(config);
  std::vector<SegmentedEvent> out;
  for (Eigen::Index i = 0; i < frames.rows(); ++i)
    if (auto e = seg.push(frames.row(i).transpose())) out.push_back(std::move(*e));
  if (auto e = seg.flush()) out.push_back(std::move(*e));
  return out;
}

std::vector<SegmentedEvent> segment_events(const Recording& rec, const SegmentConfig& config) {
  return segment_events(rec.as_matrix(), config);
}

std::vector<SegmentedEvent> segment_events(const Recording& rec, double threshold_ut, std::size_t min_event_frames) {
  SegmentConfig c;
  c.trigger.threshold_ut = threshold_ut;
  c.min_event_frames = min_event_frames;
  return segment_events(rec, c);
}

Window subtract_env(const Window& w, const Vector& env_estimate) {
  if (env_estimate.size() != w.data.cols()) throw ValidationError("env estimate width does not match window");
  if (!env_estimate.allFinite()) throw ValidationError("env estimate is not finite");
  return Window{w.data.rowwise() - env_estimate.transpose(), w.origin};
}

double calibrate_threshold(const Recording& quiet_rec, const ThresholdCalibration& options) {
  if (quiet_rec.size() < 2) throw ValidationError("quiet recording too short");
  const double span_s =
      static_cast<double>(quiet_rec.frames.back().timestamp_ms - quiet_rec.frames.front().timestamp_ms) / 1000.0 +
      1.0 / quiet_rec.sample_rate_hz;
  if (span_s < options.min_duration_s - 1e-9)
    throw ValidationError("threshold calibration needs at least " + std::to_string(options.min_duration_s) +
                          " s of quiet data");
  double peak = 0.0;
  for (const auto& f : quiet_rec.frames) peak = std::max(peak, pair_delta(f));
  return std::max(options.floor_ut, options.safety_factor * peak);
}

}  // namespace magsense::magdelta
