#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "magsense/classify.hpp"
#include "magsense/core.hpp"
#include "magsense/encoder.hpp"
#include "magsense/evalharness.hpp"
#include "magsense/fieldsim.hpp"
#include "magsense/magdelta.hpp"
#include "magsense/metrics.hpp"
#include "magsense/preprocess.hpp"
#include "magsense/random.hpp"

namespace fs = std::filesystem;
using namespace magsense;

namespace {

// bad arguments or inputs; exits with 2
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep))
    if (!trim(tok).empty()) out.push_back(trim(tok));
  return out;
}

// key = value lines; keys under [name] only apply to that subcommand
std::map<std::string, std::string> read_config_file(const fs::path& path, const std::string& command) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line, section;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError(path.string() + ":" + std::to_string(n) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path.string() + ":" + std::to_string(n) + ": expected key = value");
    if (section.empty() || section == command) out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::string env_name(const std::string& key) {
  std::string e = "MAGSENSE_";
  for (char c : key) e += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return e;
}

// Options of one subcommand, resolved as default < file < env < flag.
class Settings {
 public:
  Settings(CLI::App* app, std::string command) : app_(app), command_(std::move(command)) {
    add("seed", "0", "random seed");
    add("out-dir", "out", "directory for all artifacts");
    add("config", "", "key = value config file");
  }

  void add(const std::string& key, const std::string& def, const std::string& help) {
    defaults_[key] = def;
    options_[key] = app_->add_option("--" + key, flags_[key], help + " [" + env_name(key) + "]");
  }

  void resolve() {
    std::string cfg = pick("config", {});
    const auto file = cfg.empty() ? std::map<std::string, std::string>{} : read_config_file(cfg, command_);
    for (const auto& [k, v] : file)
      if (!defaults_.count(k)) throw UsageError("unknown key '" + k + "' in " + cfg);
    for (const auto& [k, def] : defaults_) values_[k] = pick(k, file);
  }

  const std::string& name() const { return command_; }
  const std::string& str(const std::string& key) const { return values_.at(key); }

  long integer(const std::string& key) const {
    try {
      std::size_t pos = 0;
      const long v = std::stol(str(key), &pos);
      if (pos == str(key).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError("--" + key + " expects an integer, got '" + str(key) + "'");
  }

  std::size_t count(const std::string& key) const {
    const long v = integer(key);
    if (v < 0) throw UsageError("--" + key + " must be >= 0");
    return static_cast<std::size_t>(v);
  }

  double real(const std::string& key) const {
    try {
      std::size_t pos = 0;
      const double v = std::stod(str(key), &pos);
      if (pos == str(key).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError("--" + key + " expects a number, got '" + str(key) + "'");
  }

  bool flag(const std::string& key) const {
    const std::string v = str(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw UsageError("--" + key + " expects true or false, got '" + v + "'");
  }

  std::uint64_t seed() const {
    try {
      return std::stoull(str("seed"));
    } catch (const std::exception&) {
      throw UsageError("--seed expects a non-negative integer");
    }
  }

  fs::path out_dir() const {
    const fs::path d = str("out-dir");
    fs::create_directories(d);
    return d;
  }

  void write_manifest() const {
    std::map<std::string, std::string> cfg = values_;
    cfg.erase("config");
    evalharness::write_manifest(out_dir() / "manifest.txt", command_, cfg);
  }

 private:
  std::string pick(const std::string& key, const std::map<std::string, std::string>& file) const {
    if (options_.at(key)->count() > 0) return flags_.at(key);
    if (const char* e = std::getenv(env_name(key).c_str()); e && *e) return e;
    if (auto it = file.find(key); it != file.end()) return it->second;
    return defaults_.at(key);
  }

  CLI::App* app_;
  std::string command_;
  std::map<std::string, std::string> defaults_, flags_, values_;
  std::map<std::string, CLI::Option*> options_;
};

fieldsim::GestureTask task_of(const std::string& name) {
  try {
    return fieldsim::parse_task(name);
  } catch (const ValidationError&) {
    throw UsageError("unknown task '" + name + "' (face8, scratch9, scratch_binary)");
  }
}

fs::path existing(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(what + " is required");
  if (!fs::exists(path)) throw UsageError(what + " not found: " + path);
  return path;
}

struct IndexEntry {
  fs::path path;
  int label = -1;
};

// A corpus index written by simulate, a directory of CSVs, or one CSV.
std::vector<IndexEntry> load_inputs(const std::string& input) {
  const fs::path p = existing(input, "--input");
  std::vector<IndexEntry> out;
  if (fs::is_directory(p)) {
    if (fs::exists(p / "index.csv")) return load_inputs((p / "index.csv").string());
    for (const auto& e : fs::directory_iterator(p))
      if (e.path().extension() == ".csv") out.push_back({e.path(), -1});
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    return out;
  }
  std::ifstream in(p);
  std::string header;
  std::getline(in, header);
  if (trim(header) != "path,label,task,seed") return {{p, -1}};
  std::string line;
  while (std::getline(in, line)) {
    const auto f = split(line);
    if (f.size() < 2) continue;
    out.push_back({p.parent_path() / f[0], std::stoi(f[1])});
  }
  return out;
}

preprocess::CalibrationProfile load_profile(const std::string& path) {
  if (path.empty()) return preprocess::CalibrationProfile::identity();
  return preprocess::read_profile(existing(path, "--profile"));
}

evalharness::PipelineConfig pipeline_from(const Settings& s) {
  evalharness::PipelineConfig pc;
  pc.magdelta = s.flag("magdelta");
  pc.segment.trigger.threshold_ut = s.real("threshold-ut");
  pc.segment.trigger.hysteresis_frames = s.count("hysteresis-frames");
  pc.segment.min_event_frames = s.count("min-event-frames");
  pc.segment.trigger.validate();
  return pc;
}

void add_pipeline_keys(Settings& s) {
  s.add("magdelta", "true", "subtract the environment estimate before classification");
  s.add("threshold-ut", "18", "trigger threshold in uT");
  s.add("min-event-frames", "4", "shortest event kept");
  s.add("hysteresis-frames", "3", "quiet frames that end an event");
}

std::vector<Window> featurized(const Matrix& cond, const magdelta::SegmentedEvent& ev,
                               const preprocess::CalibrationProfile& profile, const evalharness::PipelineConfig& pc) {
  std::vector<Window> out;
  for (const auto& w : evalharness::event_windows(cond, ev, pc.stride))
    out.push_back(evalharness::featurize(w, ev.env_estimate, profile, pc.magdelta));
  return out;
}

struct Models {
  std::optional<encoder::EncoderModel> enc;
  classify::ClassifierModel clf;
};

Models load_models(const Settings& s) {
  Models m;
  m.clf = classify::load_classifier(existing(s.str("classifier"), "--classifier"));
  if (m.clf.input_dim != kWindowLength * kDefaultChannels) {
    m.enc = encoder::load_model(existing(s.str("encoder"), "--encoder (the classifier expects embeddings)"));
    if (static_cast<std::size_t>(m.enc->embed_dim) != m.clf.input_dim)
      throw UsageError("encoder embedding size does not match the classifier");
  }
  return m;
}

GestureEvent classify_event(const Models& m, const std::vector<Window>& windows) {
  std::vector<classify::Prediction> preds;
  for (const auto& w : windows)
    preds.push_back(classify::predict_window(m.clf, m.enc ? encoder::encode(*m.enc, w) : classify::flatten_window(w)));
  return classify::vote(preds);
}

// ---- subcommands ----

int cmd_simulate(const Settings& s) {
  const auto task = task_of(s.str("task"));
  const std::size_t n = s.count("n");
  if (n < 1) throw UsageError("--n must be >= 1");
  fieldsim::CorpusOptions opts;
  opts.user = fieldsim::make_user(static_cast<int>(s.integer("user")), s.seed());
  opts.orientation_deg = s.real("orientation");
  opts.array.noise_std *= s.real("noise-scale");
  const auto corpus = fieldsim::synth_gesture_corpus(task, n, s.seed(), opts);
  const fs::path dir = s.out_dir();
  std::ofstream index(dir / "index.csv", std::ios::trunc);
  index << "path,label,task,seed\n";
  std::map<int, std::size_t> seen;
  for (const auto& lr : corpus) {
    char name[96];
    std::snprintf(name, sizeof(name), "%s_c%d_%03zu.csv", fieldsim::task_name(task).c_str(), lr.label, seen[lr.label]++);
    write_recording(lr.recording, dir / name);
    index << name << ',' << lr.label << ',' << fieldsim::task_name(task) << ',' << lr.recording.meta.at("seed") << '\n';
  }
  s.write_manifest();
  std::cout << "wrote " << corpus.size() << " recordings to " << dir.string() << "\n";
  return 0;
}

int cmd_calibrate(const Settings& s) {
  const auto user = fieldsim::make_user(static_cast<int>(s.integer("user")), s.seed());
  const Recording rot = s.str("input").empty() ? fieldsim::calibration_recording(user, s.seed())
                                               : read_recording(existing(s.str("input"), "--input"));
  const auto profile = preprocess::calibrate_device_bias(rot, s.real("duration"));
  const Recording quiet = s.str("quiet").empty() ? fieldsim::quiet_recording(user, mix_seed(s.seed(), 1))
                                                 : read_recording(existing(s.str("quiet"), "--quiet"));
  const double threshold = magdelta::calibrate_threshold(preprocess::apply_bias_correction(quiet, profile));
  const fs::path dir = s.out_dir();
  preprocess::write_profile(profile, dir / "profile.txt");
  std::ofstream(dir / "threshold.txt", std::ios::trunc) << threshold << "\n";
  s.write_manifest();
  for (std::size_t k = 0; k < profile.device_bias.size(); ++k) {
    const Vec3& b = profile.device_bias[k];
    std::printf("sensor %zu bias %.3f %.3f %.3f uT\n", k, b.x(), b.y(), b.z());
  }
  std::printf("field magnitude %.3f uT, suggested threshold %.2f uT\n", profile.earth_field_magnitude, threshold);
  return 0;
}

int cmd_pretrain(const Settings& s) {
  evalharness::PretrainSetup setup;
  setup.users.clear();
  for (const auto& u : split(s.str("users"))) setup.users.push_back(std::stoi(u));
  if (setup.users.empty()) throw UsageError("--users must list at least one user");
  setup.sessions_per_user = s.count("sessions");
  setup.session_s = s.real("session-s");
  setup.seed = s.seed();
  setup.pipeline = pipeline_from(s);
  auto& t = setup.train;
  t.seed = s.seed();
  t.max_epochs = s.count("epochs");
  t.batch_size = s.count("batch");
  t.learning_rate = s.real("lr");
  t.hidden = s.count("hidden");
  t.embed_dim = s.count("embed-dim");
  t.validate();
  std::cout << "pretraining on " << setup.users.size() << " users for " << t.max_epochs << " epochs\n";
  const auto res = evalharness::pretrain_encoder(setup);
  const fs::path dir = s.out_dir();
  encoder::save_model(res.model, dir / "encoder.model");
  encoder::write_loss_csv(res.epoch_loss, dir / "loss.csv");
  s.write_manifest();
  std::printf("loss %.4f -> %.4f\n", res.epoch_loss.front(), res.epoch_loss.back());
  return 0;
}

int cmd_finetune(const Settings& s) {
  const auto inputs = load_inputs(s.str("input"));
  const auto profile = load_profile(s.str("profile"));
  const auto pc = pipeline_from(s);
  const std::size_t k = s.count("k");
  if (k < 1) throw UsageError("--k must be >= 1");
  classify::ClassifierKind kind;
  try {
    kind = classify::parse_kind(s.str("classifier-kind"));
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  std::optional<encoder::EncoderModel> enc;
  if (!s.str("encoder").empty()) enc = encoder::load_model(existing(s.str("encoder"), "--encoder"));

  std::map<int, std::size_t> taken;
  std::vector<Window> windows;
  std::vector<int> labels;
  for (const auto& e : inputs) {
    if (e.label < 0) throw UsageError("finetune needs labeled input (an index from simulate)");
    if (taken[e.label] >= k) continue;
    ++taken[e.label];
    const Matrix cond = evalharness::condition(read_recording(e.path), profile, pc.smoothing_alpha);
    const auto ev = evalharness::primary_event(cond, pc);
    windows.push_back(evalharness::featurize(evalharness::centre_window(cond, ev.event), ev.event.env_estimate, profile,
                                             pc.magdelta));
    labels.push_back(e.label);
  }
  if (taken.size() < 2) throw UsageError("finetune needs at least 2 classes, got " + std::to_string(taken.size()));
  classify::FitOptions fo;
  fo.seed = s.seed();
  classify::ClassifierModel model;
  if (enc) {
    classify::FewShotSet fs_set;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      fs_set.embeddings.push_back(encoder::encode(*enc, windows[i]));
      fs_set.labels.push_back(labels[i]);
    }
    model = classify::fit(fs_set, kind, fo);
  } else {
    model = classify::fit_baseline(windows, labels, kind, fo);
  }
  const fs::path dir = s.out_dir();
  classify::save_classifier(model, dir / "classifier.json");
  s.write_manifest();
  std::cout << "fitted " << classify::kind_name(kind) << " on " << windows.size() << " recordings, " << taken.size()
            << " classes\n";
  return 0;
}

int cmd_infer(const Settings& s) {
  const Models m = load_models(s);
  const auto inputs = load_inputs(s.str("input"));
  const auto profile = load_profile(s.str("profile"));
  const auto pc = pipeline_from(s);
  const fs::path dir = s.out_dir();
  std::ofstream out(dir / "events.jsonl", std::ios::trunc);
  std::size_t n = 0;
  for (const auto& e : inputs) {
    const Recording rec = read_recording(e.path);
    if (rec.size() < kWindowLength) continue;
    const Matrix cond = evalharness::condition(rec, profile, pc.smoothing_alpha);
    for (const auto& seg : magdelta::segment_events(cond, pc.segment)) {
      GestureEvent ev = classify_event(m, featurized(cond, seg, profile, pc));
      ev.start_idx = seg.start_idx;
      ev.end_idx = seg.end_idx;
      auto j = nlohmann::ordered_json::parse(event_to_json(ev));
      j["recording"] = e.path.filename().string();
      out << j.dump() << '\n';
      ++n;
    }
  }
  s.write_manifest();
  std::cout << n << " events from " << inputs.size() << " recordings\n";
  return 0;
}

evalharness::ExperimentSpec grid_spec(const Settings& s) {
  evalharness::ExperimentSpec sp;
  sp.task = task_of(s.str("task"));
  sp.seeds.clear();
  for (const auto& v : split(s.str("seeds"))) sp.seeds.push_back(std::stoull(v));
  sp.orientations_deg.clear();
  for (const auto& v : split(s.str("orientations"))) sp.orientations_deg.push_back(std::stod(v));
  sp.models = split(s.str("models"));
  sp.magdelta_enabled = s.flag("magdelta");
  sp.k_support = s.count("k");
  sp.n_test_per_class = s.count("n-test");
  sp.user = static_cast<int>(s.integer("user"));
  sp.pipeline = pipeline_from(s);
  try {
    sp.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  return sp;
}

int eval_files(const Settings& s) {
  const Models m = load_models(s);
  const auto inputs = load_inputs(s.str("input"));
  const auto profile = load_profile(s.str("profile"));
  const auto pc = pipeline_from(s);
  metrics::ConfusionMatrix cm(m.clf.labels);
  std::vector<Vector> scores;
  std::vector<int> truth;
  for (const auto& e : inputs) {
    if (e.label < 0) throw UsageError("eval needs labeled input (an index from simulate)");
    const Matrix cond = evalharness::condition(read_recording(e.path), profile, pc.smoothing_alpha);
    const auto ev = evalharness::primary_event(cond, pc);
    const auto windows = featurized(cond, ev.event, profile, pc);
    Vector mean = Vector::Zero(static_cast<Eigen::Index>(m.clf.labels.size()));
    for (const auto& w : windows) mean += m.clf.scores(m.enc ? encoder::encode(*m.enc, w) : classify::flatten_window(w));
    scores.push_back(mean / static_cast<double>(windows.size()));
    truth.push_back(e.label);
    cm.add(e.label, classify_event(m, windows).voted_label);
  }
  const std::string model = (m.enc ? "encoder+" : "") + classify::kind_name(m.clf.kind);
  const fs::path dir = s.out_dir();
  const auto row = metrics::summarize(s.str("task"), model, cm, metrics::macro_auc(scores, truth, m.clf.labels));
  metrics::write_report({row}, dir / "metrics.csv");
  std::ofstream(dir / "confusion.csv", std::ios::trunc) << cm.format();
  s.write_manifest();
  std::printf("%s accuracy %.4f f1 %.4f auc %.4f\n", model.c_str(), row.accuracy, row.f1, row.auc);
  return 0;
}

int cmd_eval(const Settings& s) {
  if (!s.str("input").empty()) return eval_files(s);
  const auto spec = grid_spec(s);
  std::optional<encoder::EncoderModel> enc;
  if (!s.str("encoder").empty()) enc = encoder::load_model(existing(s.str("encoder"), "--encoder"));
  for (const auto& name : spec.models)
    if (evalharness::parse_model(name).uses_encoder && !enc) throw UsageError("model '" + name + "' needs --encoder");
  const encoder::EncoderModel* ep = enc ? &*enc : nullptr;
  const fs::path dir = s.out_dir();
  const double jitter = s.real("remount");
  if (jitter > 0.0) {
    const auto r = evalharness::run_remount(spec, ep, jitter);
    metrics::write_report(r.before.rows(), dir / "metrics.csv");
    metrics::write_report(r.after.rows(), dir / "metrics_remount.csv");
    for (const auto& name : spec.models)
      std::printf("%-14s before %.4f after %.4f\n", name.c_str(), r.before.mean_accuracy(name),
                  r.after.mean_accuracy(name));
  } else {
    const auto rep = evalharness::run_grid(spec, ep);
    metrics::write_report(rep.rows(), dir / "metrics.csv");
    std::ofstream(dir / "cells.csv", std::ios::trunc) << rep.cells_csv();
    for (const auto& r : rep.rows())
      std::printf("%-14s accuracy %.4f f1 %.4f auc %.4f\n", r.model.c_str(), r.accuracy, r.f1, r.auc);
  }
  if (s.flag("class-curve")) {
    const auto curve = evalharness::run_class_curve(spec, ep, spec.models.front());
    evalharness::write_class_curve_csv(curve, dir / "class_curve.csv");
  }
  s.write_manifest();
  return 0;
}

int cmd_bench(const Settings& s) {
  const Models m = load_models(s);
  if (!m.enc) throw UsageError("bench measures the encoder path; pass an embedding classifier and --encoder");
  const auto profile = load_profile(s.str("profile"));
  std::vector<Recording> stream;
  if (s.str("input").empty()) {
    for (auto& lr : fieldsim::synth_gesture_corpus(fieldsim::GestureTask::face8, 2, s.seed()))
      stream.push_back(std::move(lr.recording));
  } else {
    for (const auto& e : load_inputs(s.str("input"))) stream.push_back(read_recording(e.path));
  }
  const auto pc = pipeline_from(s);
  const auto r = evalharness::benchmark_latency(*m.enc, m.clf, profile, stream, s.count("samples"), pc);
  const fs::path dir = s.out_dir();
  std::ofstream out(dir / "latency.csv", std::ios::trunc);
  out << "samples,classified,mean_ms,p99_ms,max_ms,budget_ms\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu,%zu,%.6f,%.6f,%.6f,%.6f\n", r.samples, r.classified, r.mean_ms, r.p99_ms,
                r.max_ms, 1000.0 / kNominalSampleRateHz);
  out << buf;
  s.write_manifest();
  std::printf("%zu samples (%zu classified): mean %.4f ms, p99 %.4f ms, max %.4f ms\n", r.samples, r.classified,
              r.mean_ms, r.p99_ms, r.max_ms);
  return 0;
}

int cmd_design_study(const Settings& s) {
  evalharness::DesignStudyConfig cfg;
  cfg.max_sensors = s.count("max-sensors");
  cfg.n_directions = s.count("directions");
  cfg.samples_per_direction = s.count("samples");
  cfg.train_per_direction = s.count("train");
  cfg.jitter_std_cm = s.real("jitter");
  cfg.resample_ticks = s.count("ticks");
  cfg.C = s.real("C");
  cfg.seed = s.seed();
  const auto r = evalharness::run_design_study(cfg);
  evalharness::write_design_csv(r, s.out_dir() / "design_study.csv");
  s.write_manifest();
  for (std::size_t i = 0; i < r.accuracy.size(); ++i) std::printf("%zu sensors: %.4f\n", i + 1, r.accuracy[i]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"magsense: magnet-based self-touch gesture sensing"};
  app.require_subcommand(1, 1);
  std::vector<std::pair<std::unique_ptr<Settings>, int (*)(const Settings&)>> commands;
  auto sub = [&](const std::string& name, const std::string& help, int (*run)(const Settings&)) -> Settings& {
    CLI::App* a = app.add_subcommand(name, help);
    commands.emplace_back(std::make_unique<Settings>(a, name), run);
    return *commands.back().first;
  };

  {
    auto& s = sub("simulate", "write a synthetic gesture corpus", cmd_simulate);
    s.add("task", "face8", "face8, scratch9 or scratch_binary");
    s.add("n", "5", "recordings per class");
    s.add("user", "0", "synthetic wearer id");
    s.add("orientation", "0", "wearer heading in degrees");
    s.add("noise-scale", "1", "multiplier on sensor noise");
  }
  {
    auto& s = sub("calibrate", "fit the device bias and a trigger threshold", cmd_calibrate);
    s.add("input", "", "magnet-free rotation recording (simulated when empty)");
    s.add("quiet", "", "magnet-free recording for the threshold (simulated when empty)");
    s.add("user", "0", "synthetic wearer id for simulated input");
    s.add("duration", "10", "seconds of rotation data to use");
  }
  {
    auto& s = sub("pretrain", "contrastive encoder pretraining", cmd_pretrain);
    s.add("users", "1,2,3,4,5,6", "synthetic wearers in the pretraining corpus");
    s.add("sessions", "4", "sessions per user");
    s.add("session-s", "45", "session length in seconds");
    s.add("epochs", "60", "training epochs");
    s.add("batch", "16", "contexts per batch");
    s.add("lr", "0.001", "Adam learning rate");
    s.add("hidden", "32", "hidden channels");
    s.add("embed-dim", "64", "embedding size");
    add_pipeline_keys(s);
  }
  {
    auto& s = sub("finetune", "fit a few-shot classifier", cmd_finetune);
    s.add("input", "", "corpus index or directory");
    s.add("encoder", "", "pretrained encoder (raw windows when empty)");
    s.add("profile", "", "calibration profile");
    s.add("k", "3", "recordings per class");
    s.add("classifier-kind", "svm", "svm, centroid, rf, pca_svm, pca_rf or rbf_svm");
    add_pipeline_keys(s);
  }
  {
    auto& s = sub("infer", "detect and label gesture events", cmd_infer);
    s.add("input", "", "recording, directory or corpus index");
    s.add("encoder", "", "pretrained encoder");
    s.add("classifier", "", "fitted classifier");
    s.add("profile", "", "calibration profile");
    add_pipeline_keys(s);
  }
  {
    auto& s = sub("eval", "score a classifier on labeled files, or run the synthetic grid", cmd_eval);
    s.add("input", "", "labeled corpus; empty runs the synthetic grid");
    s.add("encoder", "", "pretrained encoder");
    s.add("classifier", "", "fitted classifier (file mode)");
    s.add("profile", "", "calibration profile (file mode)");
    s.add("task", "face8", "task");
    s.add("seeds", "0", "grid seeds");
    s.add("orientations", "0,72,144,216,288", "wearer headings in degrees");
    s.add("models", "encoder+svm,svm,rf,pca+svm,pca+rf", "models to compare");
    s.add("k", "3", "support recordings per class");
    s.add("n-test", "4", "test recordings per class and orientation");
    s.add("user", "0", "synthetic wearer id");
    s.add("remount", "0", "placement jitter in cm; > 0 also scores a remounted unit");
    s.add("class-curve", "false", "also write accuracy against class count");
    add_pipeline_keys(s);
  }
  {
    auto& s = sub("bench", "per-sample streaming latency", cmd_bench);
    s.add("input", "", "recordings to stream (simulated when empty)");
    s.add("encoder", "", "pretrained encoder");
    s.add("classifier", "", "fitted embedding classifier");
    s.add("profile", "", "calibration profile");
    s.add("samples", "1000", "samples to time");
    add_pipeline_keys(s);
  }
  {
    auto& s = sub("design-study", "sensor-count study on simulated passes", cmd_design_study);
    s.add("max-sensors", "6", "largest array");
    s.add("directions", "8", "pass directions");
    s.add("samples", "100", "passes per direction");
    s.add("train", "10", "training passes per direction");
    s.add("jitter", "1", "trajectory jitter std in cm");
    s.add("ticks", "32", "resampled length");
    s.add("C", "10", "max-margin penalty");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  for (auto& [settings, run] : commands) {
    if (chosen->get_name() != settings->name()) continue;
    try {
      settings->resolve();
      return run(*settings);
    } catch (const UsageError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    } catch (const ValidationError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    } catch (const ParseError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "failed: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}
