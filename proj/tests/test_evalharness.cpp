#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <tuple>

#include "magsense/evalharness.hpp"
#include "magsense/random.hpp"

using namespace magsense;
using namespace magsense::evalharness;

namespace {

ExperimentSpec small_spec(fieldsim::GestureTask task, std::vector<std::string> models = {"svm", "rf"}) {
  ExperimentSpec s;
  s.task = task;
  s.models = std::move(models);
  s.orientations_deg = {0.0, 144.0};
  s.n_test_per_class = 3;
  return s;
}

const encoder::EncoderModel& tiny_encoder() {
  static const encoder::EncoderModel m = [] {
    PretrainSetup setup;
    setup.users = {1, 2};
    setup.sessions_per_user = 2;
    setup.session_s = 30.0;
    setup.train.max_epochs = 5;
    return pretrain_encoder(setup).model;
  }();
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("design study accuracy grows with sensors and is deterministic") {
  DesignStudyConfig cfg;
  cfg.max_sensors = 3;
  cfg.samples_per_direction = 40;
  const auto a = run_design_study(cfg);
  const auto b = run_design_study(cfg);
  REQUIRE(a.accuracy.size() == 3);
  CHECK(a.accuracy == b.accuracy);
  for (double v : a.accuracy) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(a.accuracy[2] > a.accuracy[0]);
  DesignStudyConfig bad = cfg;
  bad.train_per_direction = bad.samples_per_direction;
  CHECK_THROWS_AS(run_design_study(bad), ValidationError);
}

TEST_CASE("design features are unit direction samples") {
  const auto trajs = fieldsim::design_study_trajectories(2, 0.0, 1, 3);
  const Recording rec = fieldsim::simulate_recording(trajs.begin()->second.front(), fieldsim::SensorArray::linear(2),
                                                     fieldsim::EnvironmentField{}, 3);
  // resampling to the recording's own length keeps the samples
  const Vector f = design_study_features(rec, rec.size());
  CHECK(f.size() == static_cast<Eigen::Index>(rec.size() * 6));
  CHECK(design_study_features(rec, 32).size() == 32 * 6);
  for (Eigen::Index i = 0; i < f.size(); i += 3) CHECK(f.segment(i, 3).norm() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("grid cells are consistent with their confusion matrices") {
  const auto rep = run_grid(small_spec(fieldsim::GestureTask::face8), nullptr);
  REQUIRE(rep.cells.size() == 2 * 2);
  CHECK(std::is_sorted(rep.cells.begin(), rep.cells.end(), [](const Cell& a, const Cell& b) {
    return std::tie(a.model, a.seed, a.orientation_deg) < std::tie(b.model, b.seed, b.orientation_deg);
  }));
  for (const auto& c : rep.cells) {
    CHECK(c.confusion.total() == 8 * 3);
    CHECK(c.confusion.labels.size() == 8);
  }
  for (const auto& row : rep.rows()) {
    metrics::ConfusionMatrix pooled;
    bool first = true;
    for (const auto& c : rep.cells)
      if (c.model == row.model) {
        if (first) pooled = c.confusion;
        else pooled.counts += c.confusion.counts;
        first = false;
      }
    CHECK(row.accuracy == doctest::Approx(pooled.accuracy()).epsilon(1e-12));
    CHECK(row.f1 == doctest::Approx(pooled.f1()).epsilon(1e-12));
    CHECK(rep.mean_accuracy(row.model) == doctest::Approx(row.accuracy).epsilon(1e-12));
  }
  CHECK(rep.cells_csv().rfind("task,model,", 0) == 0);
}

TEST_CASE("model order does not change results") {
  const auto a = run_grid(small_spec(fieldsim::GestureTask::scratch9, {"svm", "pca+rf"}), nullptr);
  const auto b = run_grid(small_spec(fieldsim::GestureTask::scratch9, {"pca+rf", "svm"}), nullptr);
  REQUIRE(a.cells.size() == b.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    CHECK(a.cells[i].model == b.cells[i].model);
    CHECK(a.cells[i].confusion.counts == b.cells[i].confusion.counts);
  }
}

TEST_CASE("grid runs are reproducible") {
  auto spec = small_spec(fieldsim::GestureTask::face8, {"encoder+svm"});
  spec.orientations_deg = {72.0};
  const auto a = run_grid(spec, &tiny_encoder());
  const auto b = run_grid(spec, &tiny_encoder());
  CHECK(a.cells_csv() == b.cells_csv());
  CHECK_THROWS_AS(run_grid(spec, nullptr), ValidationError);
}

TEST_CASE("experiment settings are validated") {
  auto s = small_spec(fieldsim::GestureTask::face8);
  s.k_support = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = small_spec(fieldsim::GestureTask::face8, {"knn"});
  CHECK_THROWS(s.validate());
  s = small_spec(fieldsim::GestureTask::face8);
  s.seeds.clear();
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("noise-free face gestures are classified perfectly") {
  auto spec = small_spec(fieldsim::GestureTask::face8, {"svm"});
  spec.noise_scale = 0.0;
  spec.orientations_deg = {0.0};
  const auto rep = run_grid(spec, nullptr);
  CHECK(rep.mean_accuracy("svm") == 1.0);
}

TEST_CASE("event voting is at least as accurate as single windows") {
  auto spec = small_spec(fieldsim::GestureTask::scratch9, {"svm", "rf"});
  spec.seeds = {0, 1};
  const auto rep = run_grid(spec, nullptr);
  double voted = 0.0, windows = 0.0;
  for (const auto& c : rep.cells) {
    voted += c.confusion.accuracy();
    windows += c.window_accuracy;
  }
  CHECK(voted >= windows);
}

TEST_CASE("remounting") {
  auto spec = small_spec(fieldsim::GestureTask::face8, {"svm"});
  const auto same = run_remount(spec, nullptr, 0.0);
  REQUIRE(same.before.cells.size() == same.after.cells.size());
  for (std::size_t i = 0; i < same.before.cells.size(); ++i)
    CHECK(same.before.cells[i].confusion.counts == same.after.cells[i].confusion.counts);
  for (const auto& o : same.offsets) CHECK(o.norm() == 0.0);
  spec.seeds = {0, 1, 2};
  const auto far = run_remount(spec, nullptr, 2.0);
  CHECK(far.after.mean_accuracy("svm") < far.before.mean_accuracy("svm"));
  CHECK_THROWS_AS(run_remount(spec, nullptr, -1.0), ValidationError);
}

TEST_CASE("class curve covers 2..K classes") {
  auto spec = small_spec(fieldsim::GestureTask::face8, {"svm"});
  spec.orientations_deg = {0.0};
  const auto curve = run_class_curve(spec, nullptr, "svm");
  REQUIRE(curve.size() == 7);
  CHECK(curve.front().first == 2);
  CHECK(curve.back().first == 8);
  for (const auto& [n, acc] : curve) CHECK((acc >= 0.0 && acc <= 1.0));
}

TEST_CASE("latency benchmark") {
  const auto& enc = tiny_encoder();
  Rng rng(4);
  Matrix x(6, enc.embed_dim);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = gaussian(rng) + (i < 3 ? 2.0 : -2.0);
  const auto clf = classify::fit(x, {0, 0, 0, 1, 1, 1}, classify::ClassifierKind::max_margin);
  std::vector<Recording> stream;
  for (const auto& r : fieldsim::synth_gesture_corpus(fieldsim::GestureTask::face8, 1, 2)) stream.push_back(r.recording);
  const auto profile = preprocess::CalibrationProfile::identity();
  const auto a = benchmark_latency(enc, clf, profile, stream, 300);
  CHECK(a.samples == 300);
  CHECK(a.classified > 0);
  CHECK(a.mean_ms > 0.0);
  CHECK(a.mean_ms <= a.max_ms);
  CHECK(a.p99_ms <= a.max_ms);
  CHECK(a.mean_ms < 1000.0 / 17.0);
  CHECK_THROWS_AS(benchmark_latency(enc, clf, profile, {}, 10), ValidationError);
}

TEST_CASE("latency is stable and does not depend on which gestures stream past") {
  const auto& enc = tiny_encoder();
  Rng rng(5);
  Matrix x(6, enc.embed_dim);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = gaussian(rng) + (i < 3 ? 2.0 : -2.0);
  const auto clf = classify::fit(x, {0, 0, 0, 1, 1, 1}, classify::ClassifierKind::max_margin);
  const auto profile = preprocess::CalibrationProfile::identity();
  std::vector<Recording> low, high;
  for (const auto& r : fieldsim::synth_gesture_corpus(fieldsim::GestureTask::face8, 2, 8))
    (r.label < 4 ? low : high).push_back(r.recording);
  auto runs = [&](const std::vector<Recording>& stream) {
    std::vector<double> means;
    for (int i = 0; i < 3; ++i) means.push_back(benchmark_latency(enc, clf, profile, stream, 1000).mean_ms);
    return means;
  };
  const auto a = runs(low), b = runs(high);
  const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
  CHECK(*hi < 1.3 * *lo);
  const double ma = *std::min_element(a.begin(), a.end()), mb = *std::min_element(b.begin(), b.end());
  CHECK(std::abs(ma - mb) <= 0.2 * std::max(ma, mb));
}

TEST_CASE("manifest and config hash") {
  const std::map<std::string, std::string> cfg{{"seed", "3"}, {"task", "face8"}};
  CHECK(config_hash(cfg) == config_hash(cfg));
  CHECK(config_hash(cfg) != config_hash({{"seed", "4"}, {"task", "face8"}}));
  CHECK(config_hash({}) == 1469598103934665603ULL);
  const auto dir = std::filesystem::temp_directory_path() / "magsense_manifest";
  std::filesystem::create_directories(dir);
  write_manifest(dir / "manifest.txt", "eval", cfg);
  const std::string text = slurp(dir / "manifest.txt");
  CHECK(text.rfind("command=eval\nconfig_hash=", 0) == 0);
  CHECK(text.find("seed=3\n") != std::string::npos);
  CHECK(text.find("task=face8\n") != std::string::npos);
}

TEST_CASE("model names") {
  CHECK(parse_model("encoder+svm").uses_encoder);
  CHECK_FALSE(parse_model("pca+rf").uses_encoder);
  CHECK(parse_model("pca+rf").kind == classify::ClassifierKind::pca_random_forest);
  const auto d = default_models();
  CHECK(d.front() == "encoder+svm");
  CHECK(d.size() == 5);
}
