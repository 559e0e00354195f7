#include "magsense/evalharness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "magsense/random.hpp"

namespace magsense::evalharness {

namespace {

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

// ---- design study ----

Vector design_study_features(const Recording& rec, std::size_t ticks, double alpha) {
  if (rec.size() < 2 || ticks < 2) throw ValidationError("design study pass needs at least 2 frames");
  const Recording sm = preprocess::smooth_recording(rec, alpha);
  const std::size_t n = sm.size(), sensors = sm.sensor_count();
  Matrix unit(idx(n), idx(3 * sensors));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < sensors; ++k) {
      const Vec3 v = sm.frames[i].sensor(k);
      unit.block<1, 3>(idx(i), idx(3 * k)) = (v / (v.norm() + 1e-9)).transpose();
    }
  Vector out(idx(ticks * 3 * sensors));
  for (std::size_t j = 0; j < ticks; ++j) {
    const double t = static_cast<double>(j) * static_cast<double>(n - 1) / static_cast<double>(ticks - 1);
    const auto i0 = static_cast<std::size_t>(std::floor(t));
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    const double w = t - static_cast<double>(i0);
    out.segment(idx(j * 3 * sensors), idx(3 * sensors)) =
        ((1.0 - w) * unit.row(idx(i0)) + w * unit.row(idx(i1))).transpose();
  }
  return out;
}

DesignStudyResult run_design_study(const DesignStudyConfig& cfg) {
  if (cfg.max_sensors < 1) throw ValidationError("max_sensors must be >= 1");
  if (cfg.train_per_direction < 1 || cfg.train_per_direction >= cfg.samples_per_direction)
    throw ValidationError("train_per_direction must leave test samples");
  const auto trajs = fieldsim::design_study_trajectories(cfg.n_directions, cfg.jitter_std_cm, cfg.samples_per_direction,
                                                         cfg.seed, cfg.geometry);
  DesignStudyResult result;
  for (std::size_t n = 1; n <= cfg.max_sensors; ++n) {
    const auto array = fieldsim::SensorArray::linear(n, fieldsim::kSensorSpacingCm, true);
    std::vector<Vector> train_x, test_x;
    std::vector<int> train_y, test_y;
    for (const auto& [dir, list] : trajs)
      for (std::size_t s = 0; s < list.size(); ++s) {
        const Recording rec = fieldsim::simulate_recording(list[s], array, fieldsim::EnvironmentField{},
                                                           mix_seed(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(dir)), s));
        Vector f = design_study_features(rec, cfg.resample_ticks);
        if (s < cfg.train_per_direction) {
          train_x.push_back(std::move(f));
          train_y.push_back(dir);
        } else {
          test_x.push_back(std::move(f));
          test_y.push_back(dir);
        }
      }
    Matrix x(idx(train_x.size()), train_x.front().size());
    for (std::size_t i = 0; i < train_x.size(); ++i) x.row(idx(i)) = train_x[i].transpose();
    classify::FitOptions opts;
    opts.C = cfg.C;
    opts.gamma = cfg.gamma;
    opts.standardize = true;
    opts.seed = cfg.seed;
    const auto model = classify::fit(x, train_y, classify::ClassifierKind::rbf_max_margin, opts);
    std::vector<int> labels;
    for (const auto& [dir, list] : trajs) labels.push_back(dir);
    metrics::ConfusionMatrix cm(labels);
    for (std::size_t i = 0; i < test_x.size(); ++i) cm.add(test_y[i], classify::predict_window(model, test_x[i]).label);
    result.accuracy.push_back(cm.recall());  // macro average over directions
  }
  return result;
}

// ---- streaming pipeline ----

Matrix condition(const Recording& rec, const preprocess::CalibrationProfile& profile, double alpha) {
  return preprocess::apply_bias_correction(preprocess::smooth_recording(rec, alpha), profile).as_matrix();
}

Matrix process_stream(const Recording& rec, const preprocess::CalibrationProfile& profile, const PipelineConfig& cfg) {
  const Matrix cond = condition(rec, profile, cfg.smoothing_alpha);
  magdelta::Trigger trig(cfg.segment.trigger);
  Matrix out(cond.rows(), cond.cols());
  for (Eigen::Index i = 0; i < cond.rows(); ++i) {
    const Vector f = cond.row(i).transpose();
    const auto d = trig.step(f);
    out.row(i) = (cfg.magdelta ? Vector(f - d.env_estimate) : f).transpose() / profile.earth_field_magnitude;
  }
  return out;
}

EventView primary_event(const Matrix& conditioned, const PipelineConfig& cfg) {
  if (conditioned.rows() == 0) throw ValidationError("empty recording");
  const auto events = magdelta::segment_events(conditioned, cfg.segment);
  EventView view;
  if (!events.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < events.size(); ++i)
      if (events[i].end_idx - events[i].start_idx > events[best].end_idx - events[best].start_idx) best = i;
    view.event = events[best];
    view.detected = true;
    return view;
  }
  Eigen::Index at = 0;
  double peak = -1.0;
  for (Eigen::Index i = 0; i < conditioned.rows(); ++i) {
    const double d = magdelta::pair_delta(Vector(conditioned.row(i).transpose()));
    if (d > peak) {
      peak = d;
      at = i;
    }
  }
  view.event = magdelta::SegmentedEvent{static_cast<std::size_t>(at), static_cast<std::size_t>(at) + 1,
                                        conditioned.row(0).transpose()};
  return view;
}

Window centre_window(const Matrix& conditioned, const magdelta::SegmentedEvent& ev) {
  const auto n = static_cast<std::size_t>(conditioned.rows());
  if (n < kWindowLength) throw ValidationError("recording shorter than one window");
  const std::size_t c = (ev.start_idx + ev.end_idx) / 2;
  const std::size_t s = std::min(c >= kWindowLength / 2 ? c - kWindowLength / 2 : 0, n - kWindowLength);
  return Window{conditioned.middleRows(idx(s), idx(kWindowLength)), s};
}

std::vector<Window> event_windows(const Matrix& conditioned, const magdelta::SegmentedEvent& ev, std::size_t stride) {
  if (stride == 0) throw ValidationError("stride must be >= 1");
  std::vector<Window> out;
  const std::size_t end = std::min(ev.end_idx, static_cast<std::size_t>(conditioned.rows()));
  for (std::size_t s = ev.start_idx; s + kWindowLength <= end; s += stride)
    out.push_back(Window{conditioned.middleRows(idx(s), idx(kWindowLength)), s});
  if (out.empty()) out.push_back(centre_window(conditioned, ev));
  return out;
}

Window featurize(const Window& w, const Vector& env, const preprocess::CalibrationProfile& profile, bool magdelta) {
  const auto scale = profile.scale_only();
  return magdelta ? preprocess::normalize_window(magdelta::subtract_env(w, env), scale)
                  : preprocess::normalize_window(w, scale);
}

preprocess::CalibrationProfile user_profile(const fieldsim::UserProfile& user, std::uint64_t seed) {
  return preprocess::calibrate_device_bias(fieldsim::calibration_recording(user, seed));
}

std::vector<Matrix> pretraining_streams(const PretrainSetup& setup) {
  const auto corpus = fieldsim::pretraining_corpus(setup.users, setup.sessions_per_user, setup.seed, setup.session_s);
  std::map<int, preprocess::CalibrationProfile> profiles;
  for (int u : setup.users)
    profiles[u] = user_profile(fieldsim::make_user(u, setup.seed), mix_seed(setup.seed, 500 + static_cast<std::uint64_t>(u)));
  std::vector<Matrix> out;
  for (const auto& rec : corpus) out.push_back(process_stream(rec, profiles.at(std::stoi(rec.meta.at("user"))), setup.pipeline));
  return out;
}

encoder::TrainResult pretrain_encoder(const PretrainSetup& setup) {
  return encoder::pretrain(pretraining_streams(setup), setup.train);
}

// ---- experiment grid ----

ModelSpec parse_model(const std::string& name) {
  ModelSpec m;
  m.name = name;
  std::string rest = name;
  if (rest.rfind("encoder+", 0) == 0) {
    m.uses_encoder = true;
    rest = rest.substr(8);
  }
  if (rest == "pca+svm") rest = "pca_svm";
  if (rest == "pca+rf") rest = "pca_rf";
  m.kind = classify::parse_kind(rest);
  return m;
}

std::vector<std::string> default_models() { return {"encoder+svm", "svm", "rf", "pca+svm", "pca+rf"}; }

void ExperimentSpec::validate() const {
  if (seeds.empty()) throw ValidationError("experiment needs at least one seed");
  if (orientations_deg.empty()) throw ValidationError("experiment needs at least one orientation");
  for (double o : orientations_deg)
    if (!(o >= 0.0 && o < 360.0)) throw ValidationError("orientations must lie in [0, 360)");
  if (models.empty()) throw ValidationError("experiment needs at least one model");
  for (const auto& m : models) parse_model(m);
  if (k_support < 1 || n_test_per_class < 1) throw ValidationError("k_support and n_test_per_class must be >= 1");
}

namespace {

struct PreparedRecording {
  int label = 0;
  std::vector<Window> windows;  // featurized
  Window centre;
  bool detected = false;
};

PreparedRecording prepare(const fieldsim::LabeledRecording& lr, const preprocess::CalibrationProfile& profile,
                          const ExperimentSpec& spec) {
  const Matrix cond = condition(lr.recording, profile, spec.pipeline.smoothing_alpha);
  const EventView ev = primary_event(cond, spec.pipeline);
  PreparedRecording p;
  p.label = lr.label;
  p.detected = ev.detected;
  const bool md = spec.magdelta_enabled;
  for (const auto& w : event_windows(cond, ev.event, spec.pipeline.stride))
    p.windows.push_back(featurize(w, ev.event.env_estimate, profile, md));
  p.centre = featurize(centre_window(cond, ev.event), ev.event.env_estimate, profile, md);
  return p;
}

std::size_t task_classes(const ExperimentSpec& spec) {
  const std::size_t all = fieldsim::class_count(spec.task);
  return spec.max_classes ? std::min(all, spec.max_classes) : all;
}

fieldsim::CorpusOptions corpus_options(const ExperimentSpec& spec, const fieldsim::UserProfile& user, double orientation,
                                       const Vec3& offset) {
  fieldsim::CorpusOptions o;
  o.user = user;
  o.orientation_deg = orientation;
  o.array.noise_std *= spec.noise_scale;
  o.array_offset = offset;
  o.threshold_ut = spec.pipeline.segment.trigger.threshold_ut;
  return o;
}

// Gesture recordings interleaved by repetition so the first k of any label
// cover as many geometric classes as possible.
std::vector<fieldsim::LabeledRecording> gesture_set(const ExperimentSpec& spec, std::size_t per_class, std::uint64_t seed,
                                                    const fieldsim::CorpusOptions& opts) {
  auto corpus = fieldsim::synth_gesture_corpus(spec.task, per_class, seed, opts);
  std::vector<fieldsim::LabeledRecording> out;
  const std::size_t geo = corpus.size() / per_class;
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < geo; ++c) {
      auto& r = corpus[c * per_class + i];
      if (static_cast<std::size_t>(r.label) < task_classes(spec)) out.push_back(std::move(r));
    }
  return out;
}

struct FittedModel {
  ModelSpec spec;
  classify::ClassifierModel model;
};

struct SeedState {
  preprocess::CalibrationProfile profile;
  fieldsim::UserProfile user;
  std::vector<FittedModel> models;
};

SeedState fit_seed(const ExperimentSpec& spec, const encoder::EncoderModel* enc, std::uint64_t seed,
                   const std::vector<std::string>& model_names) {
  SeedState st;
  st.user = fieldsim::make_user(spec.user, seed);
  st.profile = user_profile(st.user, mix_seed(seed, 11));
  const auto support_all = gesture_set(spec, spec.k_support, mix_seed(seed, 21),
                                       corpus_options(spec, st.user, 0.0, Vec3::Zero()));
  std::map<int, std::size_t> taken;
  std::vector<Window> windows;
  std::vector<int> labels;
  for (const auto& lr : support_all) {
    if (taken[lr.label] >= spec.k_support) continue;
    ++taken[lr.label];
    const PreparedRecording p = prepare(lr, st.profile, spec);
    windows.push_back(p.centre);
    labels.push_back(p.label);
  }
  for (const auto& name : model_names) {
    const ModelSpec ms = parse_model(name);
    FittedModel fm{ms, {}};
    classify::FitOptions fo = spec.fit;
    fo.seed = mix_seed(seed, 61);
    if (ms.uses_encoder) {
      if (!enc) throw ValidationError("model '" + name + "' needs a pretrained encoder");
      classify::FewShotSet fs;
      for (std::size_t i = 0; i < windows.size(); ++i) {
        fs.embeddings.push_back(encoder::encode(*enc, windows[i]));
        fs.labels.push_back(labels[i]);
      }
      fm.model = classify::fit(fs, ms.kind, fo);
    } else {
      fm.model = classify::fit_baseline(windows, labels, ms.kind, fo);
    }
    st.models.push_back(std::move(fm));
  }
  return st;
}

void evaluate_orientation(const ExperimentSpec& spec, const encoder::EncoderModel* enc, std::uint64_t seed,
                          std::size_t oi, const SeedState& st, const Vec3& offset, std::vector<Cell>& cells) {
  const double orientation = spec.orientations_deg[oi];
  const auto test = gesture_set(spec, spec.n_test_per_class, mix_seed(mix_seed(seed, 31), oi),
                                corpus_options(spec, st.user, orientation, offset));
  std::vector<PreparedRecording> prepared;
  for (const auto& lr : test) prepared.push_back(prepare(lr, st.profile, spec));
  bool need_enc = false;
  for (const auto& fm : st.models) need_enc = need_enc || fm.spec.uses_encoder;
  std::vector<std::vector<Vector>> embeddings(prepared.size());
  std::vector<std::vector<Vector>> flat(prepared.size());
  for (std::size_t r = 0; r < prepared.size(); ++r)
    for (const auto& w : prepared[r].windows) {
      if (need_enc) embeddings[r].push_back(encoder::encode(*enc, w));
      flat[r].push_back(classify::flatten_window(w));
    }
  std::size_t missed = 0;
  for (const auto& p : prepared) missed += p.detected ? 0 : 1;
  for (const auto& fm : st.models) {
    Cell cell;
    cell.model = fm.spec.name;
    cell.orientation_deg = orientation;
    cell.seed = seed;
    cell.confusion = metrics::ConfusionMatrix(fm.model.labels);
    cell.missed_events = missed;
    std::vector<Vector> event_scores;
    std::vector<int> truth;
    std::size_t win_ok = 0, win_total = 0;
    for (std::size_t r = 0; r < prepared.size(); ++r) {
      const auto& feats = fm.spec.uses_encoder ? embeddings[r] : flat[r];
      std::vector<classify::Prediction> preds;
      Vector mean = Vector::Zero(idx(fm.model.labels.size()));
      for (const auto& f : feats) {
        const Vector s = fm.model.scores(f);
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < s.size(); ++k)
          if (s(k) > s(best)) best = k;
        preds.push_back({fm.model.labels[static_cast<std::size_t>(best)], s(best)});
        mean += s;
        win_ok += preds.back().label == prepared[r].label ? 1 : 0;
        ++win_total;
      }
      const GestureEvent ev = classify::vote(preds);
      cell.confusion.add(prepared[r].label, ev.voted_label);
      event_scores.push_back(mean / static_cast<double>(feats.size()));
      truth.push_back(prepared[r].label);
    }
    cell.auc = metrics::macro_auc(event_scores, truth, fm.model.labels);
    cell.window_accuracy = win_total ? static_cast<double>(win_ok) / static_cast<double>(win_total) : 0.0;
    cells.push_back(std::move(cell));
  }
}

void sort_cells(std::vector<Cell>& cells) {
  std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) {
    if (a.model != b.model) return a.model < b.model;
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.orientation_deg < b.orientation_deg;
  });
}

Vec3 remount_offset(std::uint64_t seed, double jitter) {
  Rng rng(mix_seed(seed, 41));
  return Vec3(gaussian(rng, 1.0), gaussian(rng, 1.0), gaussian(rng, 1.0)) * jitter;
}

}  // namespace

std::vector<metrics::MetricRow> MetricsReport::rows() const {
  std::vector<metrics::MetricRow> out;
  std::vector<std::string> models;
  for (const auto& c : cells)
    if (std::find(models.begin(), models.end(), c.model) == models.end()) models.push_back(c.model);
  for (const auto& m : models) {
    std::optional<metrics::ConfusionMatrix> pooled;
    double auc = 0.0;
    std::size_t n = 0;
    for (const auto& c : cells) {
      if (c.model != m) continue;
      if (!pooled) pooled = metrics::ConfusionMatrix(c.confusion.labels);
      pooled->counts += c.confusion.counts;
      auc += c.auc;
      ++n;
    }
    out.push_back(metrics::summarize(task, m, *pooled, auc / static_cast<double>(n)));
  }
  return out;
}

double MetricsReport::mean_accuracy(const std::string& model) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& c : cells)
    if (c.model == model) {
      s += c.confusion.accuracy();
      ++n;
    }
  if (n == 0) throw ValidationError("no cells for model '" + model + "'");
  return s / static_cast<double>(n);
}

std::string MetricsReport::cells_csv() const {
  std::string out = "task,model,seed,orientation_deg,accuracy,f1,precision,recall,auc,window_accuracy,missed_events\n";
  for (const auto& c : cells) {
    out += task + "," + c.model + "," + std::to_string(c.seed) + "," + fmt(c.orientation_deg) + "," +
           fmt(c.confusion.accuracy()) + "," + fmt(c.confusion.f1()) + "," + fmt(c.confusion.precision()) + "," +
           fmt(c.confusion.recall()) + "," + fmt(c.auc) + "," + fmt(c.window_accuracy) + "," +
           std::to_string(c.missed_events) + "\n";
  }
  return out;
}

MetricsReport run_grid(const ExperimentSpec& spec, const encoder::EncoderModel* enc) {
  spec.validate();
  MetricsReport rep;
  rep.task = fieldsim::task_name(spec.task);
  for (auto seed : spec.seeds) {
    const SeedState st = fit_seed(spec, enc, seed, spec.models);
    for (std::size_t oi = 0; oi < spec.orientations_deg.size(); ++oi)
      evaluate_orientation(spec, enc, seed, oi, st, Vec3::Zero(), rep.cells);
  }
  sort_cells(rep.cells);
  return rep;
}

RemountResult run_remount(const ExperimentSpec& spec, const encoder::EncoderModel* enc, double placement_jitter_cm) {
  spec.validate();
  if (placement_jitter_cm < 0.0) throw ValidationError("placement jitter must be >= 0");
  RemountResult r;
  r.before.task = r.after.task = fieldsim::task_name(spec.task);
  for (auto seed : spec.seeds) {
    const SeedState st = fit_seed(spec, enc, seed, spec.models);
    const Vec3 off = remount_offset(seed, placement_jitter_cm);
    r.offsets.push_back(off);
    for (std::size_t oi = 0; oi < spec.orientations_deg.size(); ++oi) {
      evaluate_orientation(spec, enc, seed, oi, st, Vec3::Zero(), r.before.cells);
      evaluate_orientation(spec, enc, seed, oi, st, off, r.after.cells);
    }
  }
  sort_cells(r.before.cells);
  sort_cells(r.after.cells);
  return r;
}

std::vector<std::pair<std::size_t, double>> run_class_curve(const ExperimentSpec& spec, const encoder::EncoderModel* enc,
                                                            const std::string& model) {
  std::vector<std::pair<std::size_t, double>> out;
  const std::size_t all = fieldsim::class_count(spec.task);
  for (std::size_t c = 2; c <= all; ++c) {
    ExperimentSpec s = spec;
    s.models = {model};
    s.max_classes = c;
    out.emplace_back(c, run_grid(s, enc).mean_accuracy(model));
  }
  return out;
}

// ---- latency ----

LatencyResult benchmark_latency(const encoder::EncoderModel& enc, const classify::ClassifierModel& clf,
                                const preprocess::CalibrationProfile& profile, const std::vector<Recording>& stream,
                                std::size_t n_samples, const PipelineConfig& cfg) {
  if (stream.empty()) throw ValidationError("latency benchmark needs input recordings");
  preprocess::ExpSmoother smoother(cfg.smoothing_alpha);
  magdelta::Trigger trig(cfg.segment.trigger);
  const Vector bias = profile.bias_flat();
  const auto scale = profile.scale_only();
  std::deque<Vector> buf;
  std::vector<double> times;
  times.reserve(n_samples);
  LatencyResult res;
  std::size_t r = 0, f = 0;
  volatile int sink = 0;
  while (times.size() < n_samples) {
    const Recording& rec = stream[r];
    if (f >= rec.size()) {
      f = 0;
      r = (r + 1) % stream.size();
      continue;
    }
    const Vector raw = rec.frames[f++].flat();
    const auto t0 = std::chrono::steady_clock::now();
    const Vector x = smoother.step(raw) - bias;
    trig.step(x);
    buf.push_back(x);
    if (buf.size() > kWindowLength) buf.pop_front();
    if (trig.active() && buf.size() == kWindowLength) {
      Window w{Matrix(idx(kWindowLength), x.size()), 0};
      for (std::size_t i = 0; i < kWindowLength; ++i) w.data.row(idx(i)) = buf[i].transpose();
      const Window n = preprocess::normalize_window(magdelta::subtract_env(w, trig.event_env()), scale);
      sink = sink + classify::predict_window(clf, encoder::encode(enc, n)).label;
      ++res.classified;
    }
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  res.samples = times.size();
  res.mean_ms = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
  std::vector<double> sorted = times;
  std::sort(sorted.begin(), sorted.end());
  res.p99_ms = sorted[std::min(sorted.size() - 1, static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(sorted.size()))) - 1)];
  res.max_ms = sorted.back();
  return res;
}

// ---- artifacts ----

std::uint64_t config_hash(const std::map<std::string, std::string>& config) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (const auto& [k, v] : config)
    for (char c : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
  return h;
}

void write_manifest(const std::filesystem::path& path, const std::string& command,
                    const std::map<std::string, std::string>& config) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash(config)));
  out << "command=" << command << "\nconfig_hash=" << buf << "\n";
  for (const auto& [k, v] : config) out << k << "=" << v << "\n";
}

void write_design_csv(const DesignStudyResult& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "sensors,accuracy\n";
  for (std::size_t i = 0; i < r.accuracy.size(); ++i) out << i + 1 << "," << fmt(r.accuracy[i]) << "\n";
}

void write_class_curve_csv(const std::vector<std::pair<std::size_t, double>>& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "classes,accuracy\n";
  for (const auto& [c, a] : curve) out << c << "," << fmt(a) << "\n";
}

}  // namespace magsense::evalharness
