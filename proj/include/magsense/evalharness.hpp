#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "magsense/classify.hpp"
#include "magsense/core.hpp"
#include "magsense/encoder.hpp"
#include "magsense/fieldsim.hpp"
#include "magsense/magdelta.hpp"
#include "magsense/metrics.hpp"
#include "magsense/preprocess.hpp"

namespace magsense::evalharness {

// ---- design study ----

struct DesignStudyConfig {
  std::size_t max_sensors = 6;
  std::size_t n_directions = 8;
  std::size_t samples_per_direction = 100;
  std::size_t train_per_direction = 10;
  double jitter_std_cm = 1.0;
  std::size_t resample_ticks = 32;
  double C = 10.0;
  double gamma = 0.0;  // 0 = 1 / features
  std::uint64_t seed = 0;
  fieldsim::DesignStudyGeometry geometry;
};

struct DesignStudyResult {
  std::vector<double> accuracy;  // index n - 1 for n sensors
};

// Smoothed readings, each sensor's vector scaled to unit length, linearly
// resampled to `ticks` samples and flattened.
Vector design_study_features(const Recording& rec, std::size_t ticks, double alpha = 0.5);
DesignStudyResult run_design_study(const DesignStudyConfig& cfg = {});

// ---- streaming pipeline ----

struct PipelineConfig {
  double smoothing_alpha = 0.5;
  magdelta::SegmentConfig segment;
  bool magdelta = true;
  std::size_t stride = 1;  // window stride inside an event
};

// Smoothed, bias-corrected frames (uT).
Matrix condition(const Recording& rec, const preprocess::CalibrationProfile& profile, double alpha);

// Normalized per-frame stream fed to encoder pretraining: each frame minus the
// trigger's environment estimate, divided by the field magnitude.
Matrix process_stream(const Recording& rec, const preprocess::CalibrationProfile& profile, const PipelineConfig& cfg);

// The gesture event of a single-gesture recording: the longest detected
// event, or a window around the strongest frame when nothing fires.
struct EventView {
  magdelta::SegmentedEvent event;
  bool detected = false;
};
EventView primary_event(const Matrix& conditioned, const PipelineConfig& cfg);

std::vector<Window> event_windows(const Matrix& conditioned, const magdelta::SegmentedEvent& ev, std::size_t stride);
Window centre_window(const Matrix& conditioned, const magdelta::SegmentedEvent& ev);

// Normalized classifier input for one conditioned window.
Window featurize(const Window& w, const Vector& env, const preprocess::CalibrationProfile& profile, bool magdelta);

preprocess::CalibrationProfile user_profile(const fieldsim::UserProfile& user, std::uint64_t seed);

struct PretrainSetup {
  std::vector<int> users{1, 2, 3, 4, 5, 6};
  std::size_t sessions_per_user = 4;
  double session_s = 45.0;
  std::uint64_t seed = 0;
  encoder::TrainConfig train;
  PipelineConfig pipeline;
};

std::vector<Matrix> pretraining_streams(const PretrainSetup& setup);
encoder::TrainResult pretrain_encoder(const PretrainSetup& setup);

// ---- experiment grid ----

struct ModelSpec {
  std::string name;
  bool uses_encoder = false;
  classify::ClassifierKind kind = classify::ClassifierKind::max_margin;
};

// "encoder+svm", "encoder+centroid", "svm", "rf", "pca+svm", "pca+rf", ...
ModelSpec parse_model(const std::string& name);
std::vector<std::string> default_models();

struct ExperimentSpec {
  std::string name = "grid";
  fieldsim::GestureTask task = fieldsim::GestureTask::face8;
  std::vector<std::uint64_t> seeds{0};
  std::vector<double> orientations_deg{0.0, 72.0, 144.0, 216.0, 288.0};
  std::vector<std::string> models = default_models();
  bool magdelta_enabled = true;
  std::size_t k_support = 3;
  std::size_t n_test_per_class = 4;
  int user = 0;
  double noise_scale = 1.0;
  std::size_t max_classes = 0;  // 0 = all classes of the task
  PipelineConfig pipeline;
  classify::FitOptions fit;

  void validate() const;
};

struct Cell {
  std::string model;
  double orientation_deg = 0.0;
  std::uint64_t seed = 0;
  metrics::ConfusionMatrix confusion;
  double auc = 0.0;
  double window_accuracy = 0.0;
  std::size_t missed_events = 0;  // recordings where the trigger never fired
};

struct MetricsReport {
  std::string task;
  std::vector<Cell> cells;  // sorted by model, seed, orientation

  // Per model, pooled confusion over all cells; AUC averaged over cells.
  std::vector<metrics::MetricRow> rows() const;
  double mean_accuracy(const std::string& model) const;
  std::string cells_csv() const;
};

MetricsReport run_grid(const ExperimentSpec& spec, const encoder::EncoderModel* enc);

// Fits on nominal placement, then evaluates the same test gestures with the
// whole unit shifted by Gaussian jitter of the given std.
struct RemountResult {
  MetricsReport before, after;
  std::vector<Vec3> offsets;  // per seed
};
RemountResult run_remount(const ExperimentSpec& spec, const encoder::EncoderModel* enc, double placement_jitter_cm = 0.3);

// Accuracy of one model as the number of classes grows from 2 to the task's count.
std::vector<std::pair<std::size_t, double>> run_class_curve(const ExperimentSpec& spec, const encoder::EncoderModel* enc,
                                                            const std::string& model);

// ---- latency ----

struct LatencyResult {
  std::size_t samples = 0;
  std::size_t classified = 0;  // samples that ran the full encode + predict path
  double mean_ms = 0.0;
  double p99_ms = 0.0;
  double max_ms = 0.0;
};

LatencyResult benchmark_latency(const encoder::EncoderModel& enc, const classify::ClassifierModel& clf,
                                const preprocess::CalibrationProfile& profile, const std::vector<Recording>& stream,
                                std::size_t n_samples = 1000, const PipelineConfig& cfg = {});

// ---- artifacts ----

std::uint64_t config_hash(const std::map<std::string, std::string>& config);
void write_manifest(const std::filesystem::path& path, const std::string& command,
                    const std::map<std::string, std::string>& config);
void write_design_csv(const DesignStudyResult& r, const std::filesystem::path& path);
void write_class_curve_csv(const std::vector<std::pair<std::size_t, double>>& curve, const std::filesystem::path& path);

}  // namespace magsense::evalharness
