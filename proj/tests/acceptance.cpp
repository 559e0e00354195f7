// One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "magsense/evalharness.hpp"
#include "magsense/random.hpp"

using namespace magsense;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const std::vector<fieldsim::GestureTask> kTasks{fieldsim::GestureTask::face8, fieldsim::GestureTask::scratch9};

evalharness::ExperimentSpec grid(fieldsim::GestureTask task, std::vector<std::string> models) {
  evalharness::ExperimentSpec s;
  s.task = task;
  s.models = std::move(models);
  s.seeds = {0, 1, 2};
  return s;
}

void design_study() {
  const auto t0 = Clock::now();
  const auto r = evalharness::run_design_study();
  const double dt = seconds_since(t0);
  const auto& a = r.accuracy;
  const bool ok = a.size() >= 4 && a[2] >= 0.95 && a[0] < a[1] && a[1] < a[2] && a[3] - a[2] <= 0.03 && dt < 120.0;
  report(1, "design study", ok,
         fmt("acc(1..4) = %.4f %.4f %.4f %.4f", a[0], a[1], a[2], a[3]) + fmt(", %.1f s", dt));
}

void magdelta_suite() {
  Rng rng(1);
  // uniform offsets never change the pair delta
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    Vector f(9);
    for (Eigen::Index j = 0; j < 9; ++j) f(j) = uniform(rng, -200, 200);
    const Vec3 u(uniform(rng, -100, 100), uniform(rng, -100, 100), uniform(rng, -100, 100));
    Vector g = f;
    for (int k = 0; k < 3; ++k) g.segment<3>(3 * k) += u;
    worst = std::max(worst, std::abs(magdelta::pair_delta(f) - magdelta::pair_delta(g)));
  }
  const bool immune = worst < 1e-9;

  // ring approach from 30 cm to 5 cm straight above the array centre
  const auto array = fieldsim::SensorArray::linear();
  const double m = fieldsim::preset_moment(fieldsim::MagnetPreset::ring);
  double worst_dist = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    fieldsim::MagnetTrajectory t;
    t.duration_s = 20.0;
    t.waypoints = {{0.0, array.center() + Vec3(0, 0, 30), Vec3(0, 0, m)},
                   {20.0, array.center() + Vec3(0, 0, 5), Vec3(0, 0, m)}};
    fieldsim::EnvironmentField env;
    env.uniform_field = fieldsim::earth_field(72.0 * static_cast<double>(s));
    const Recording rec = fieldsim::simulate_recording(t, array, env, s);
    magdelta::Trigger trig;
    double dist = -1.0;
    for (std::size_t i = 0; i < rec.size(); ++i)
      if (trig.step(rec.frames[i]).detected) {
        dist = 30.0 - 25.0 * (static_cast<double>(i) / rec.sample_rate_hz) / 20.0;
        break;
      }
    worst_dist = std::max(worst_dist, std::abs(dist - 11.0));
  }
  const bool boundary = worst_dist <= 0.5;

  // online segmentation equals offline on every prefix of a multi-gesture stream
  bool equivalent = true;
  Matrix stream(0, 9);
  for (const auto& lr : fieldsim::synth_gesture_corpus(fieldsim::GestureTask::scratch9, 1, 5)) {
    const Matrix m2 = lr.recording.as_matrix();
    Matrix joined(stream.rows() + m2.rows(), 9);
    joined << stream, m2;
    stream = joined;
  }
  {
    magdelta::EventSegmenter seg;
    std::vector<magdelta::SegmentedEvent> online;
    for (Eigen::Index i = 0; i < stream.rows(); ++i)
      if (auto e = seg.push(stream.row(i).transpose())) online.push_back(*e);
    if (auto e = seg.flush()) online.push_back(*e);
    const auto offline = magdelta::segment_events(stream);
    equivalent = online.size() == offline.size() && !offline.empty();
    for (std::size_t i = 0; equivalent && i < online.size(); ++i)
      equivalent = online[i].start_idx == offline[i].start_idx && online[i].end_idx == offline[i].end_idx &&
                   (online[i].env_estimate - offline[i].env_estimate).norm() == 0.0;
  }

  // events recovered within 3 frames at both ends
  std::string recovery;
  bool recovered = true;
  for (auto task : kTasks) {
    std::size_t ok = 0, total = 0;
    for (int u = 0; u < 4; ++u)
      for (double o : {0.0, 144.0, 288.0}) {
        fieldsim::CorpusOptions opts;
        opts.user = fieldsim::make_user(u, 0);
        opts.orientation_deg = o;
        const auto profile = evalharness::user_profile(opts.user, 99 + static_cast<std::uint64_t>(u));
        for (const auto& lr : fieldsim::synth_gesture_corpus(task, 5, mix_seed(static_cast<std::uint64_t>(u), static_cast<std::uint64_t>(o)), opts)) {
          ++total;
          for (const auto& e : magdelta::segment_events(preprocess::apply_bias_correction(lr.recording, profile)))
            if (std::labs(static_cast<long>(e.start_idx) - static_cast<long>(lr.truth_start)) <= 3 &&
                std::labs(static_cast<long>(e.end_idx) - static_cast<long>(lr.truth_end)) <= 3) {
              ++ok;
              break;
            }
        }
      }
    const double rate = static_cast<double>(ok) / static_cast<double>(total);
    recovered = recovered && rate >= 0.95;
    recovery += " " + fieldsim::task_name(task) + fmt(" %.3f", rate);
  }
  report(2, "magdelta", immune && boundary && equivalent && recovered,
         fmt("immunity max err %.2g, boundary err %.3f cm, online==offline", worst, worst_dist) +
             (equivalent ? " yes" : " no") + ", recovery" + recovery);
}

void ablation(const encoder::EncoderModel& enc) {
  double drop[2] = {0, 0};
  std::string detail;
  for (std::size_t t = 0; t < kTasks.size(); ++t) {
    auto spec = grid(kTasks[t], {"encoder+svm"});
    const double on = evalharness::run_grid(spec, &enc).mean_accuracy("encoder+svm");
    spec.magdelta_enabled = false;
    const double off = evalharness::run_grid(spec, &enc).mean_accuracy("encoder+svm");
    drop[t] = on - off;
    detail += fieldsim::task_name(kTasks[t]) + fmt(" %.4f -> %.4f; ", on, off);
  }
  report(3, "ablation", drop[0] > 0 && drop[1] > 0 && drop[1] > drop[0],
         detail + fmt("drops %.4f / %.4f", drop[0], drop[1]));
}

void encoder_validity(const encoder::TrainResult& full, const evalharness::PretrainSetup& setup) {
  // finite differences on a tiny model
  const auto m = encoder::EncoderModel::create(3, 9, 4, 8);
  std::vector<Matrix> ctx;
  Rng rng(8);
  for (int i = 0; i < 4; ++i) {
    Matrix c(32, 9);
    for (Eigen::Index r = 0; r < 32; ++r)
      for (Eigen::Index k = 0; k < 9; ++k) c(r, k) = gaussian(rng);
    ctx.push_back(c);
  }
  encoder::TrainConfig tiny;
  tiny.hidden = 4;
  tiny.embed_dim = 8;
  const auto batch = encoder::make_batch(ctx, tiny, 11);
  Vector grad;
  encoder::batch_loss(m, batch, 1.0, 4, &grad);
  double worst = 0.0;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < m.params.size(); ++i) {
    auto p = m, q = m;
    p.params(i) += h;
    q.params(i) -= h;
    const double num = (encoder::batch_loss(p, batch, 1.0, 4) - encoder::batch_loss(q, batch, 1.0, 4)) / (2 * h);
    worst = std::max(worst, std::abs(num - grad(i)) / std::max(1.0, std::abs(num)));
  }
  const double first = full.epoch_loss.front(), last = full.epoch_loss.back();
  const double decrease = 1.0 - last / first;
  const auto again = evalharness::pretrain_encoder(setup);
  const bool same = again.epoch_loss == full.epoch_loss && (again.model.params - full.model.params).cwiseAbs().maxCoeff() == 0.0;
  report(4, "encoder", worst < 1e-4 && full.epoch_loss.size() == 60 && decrease >= 0.20 && same,
         fmt("grad rel err %.2g, loss %.3f -> %.3f (%.1f%% lower)", worst, first, last, 100.0 * decrease) +
             ", retrain " + (same ? "identical" : "differs"));
}

void few_shot(const encoder::EncoderModel& enc) {
  bool ordering = true;
  std::string detail;
  for (auto task : kTasks) {
    const auto rep = evalharness::run_grid(grid(task, evalharness::default_models()), &enc);
    const double ours = rep.mean_accuracy("encoder+svm");
    double best = 0.0;
    std::string best_name;
    for (const auto& name : evalharness::default_models())
      if (name != "encoder+svm" && rep.mean_accuracy(name) > best) {
        best = rep.mean_accuracy(name);
        best_name = name;
      }
    ordering = ordering && ours >= best;
    detail += fieldsim::task_name(task) + fmt(" encoder+svm %.4f vs best baseline %.4f (", ours, best) + best_name + "); ";
  }
  // pretrain without the evaluated user
  double worst_ratio = 1e9;
  for (int held : {1, 2, 3}) {
    evalharness::PretrainSetup s;
    s.users.clear();
    for (int u = 1; u <= 6; ++u)
      if (u != held) s.users.push_back(u);
    const auto louo = evalharness::pretrain_encoder(s).model;
    for (auto task : kTasks) {
      auto spec = grid(task, {"encoder+svm"});
      spec.user = held;
      const double with = evalharness::run_grid(spec, &enc).mean_accuracy("encoder+svm");
      const double without = evalharness::run_grid(spec, &louo).mean_accuracy("encoder+svm");
      worst_ratio = std::min(worst_ratio, without / with);
    }
  }
  report(5, "few-shot", ordering && worst_ratio >= 0.85, detail + fmt("held-out-user retention min %.3f", worst_ratio));
}

void remount(const encoder::EncoderModel& enc) {
  const auto r = evalharness::run_remount(grid(fieldsim::GestureTask::face8, {"encoder+svm"}), &enc, 0.3);
  const double before = r.before.mean_accuracy("encoder+svm"), after = r.after.mean_accuracy("encoder+svm");
  const double delta = 100.0 * std::abs(after - before);
  report(6, "remount", delta <= 3.0, fmt("face8 %.4f -> %.4f (%.2f points)", before, after, delta));
}

void latency(const encoder::EncoderModel& enc) {
  // the deployed path: classifier fitted on the encoder's embeddings
  const auto spec = grid(fieldsim::GestureTask::face8, {"encoder+svm"});
  const auto profile = preprocess::CalibrationProfile::identity();
  classify::FewShotSet support;
  evalharness::PipelineConfig pc;
  for (const auto& lr : fieldsim::synth_gesture_corpus(spec.task, 3, 21)) {
    const Matrix cond = evalharness::condition(lr.recording, profile, pc.smoothing_alpha);
    const auto ev = evalharness::primary_event(cond, pc);
    const Window w = evalharness::featurize(evalharness::centre_window(cond, ev.event), ev.event.env_estimate, profile, true);
    support.embeddings.push_back(encoder::encode(enc, w));
    support.labels.push_back(lr.label);
  }
  const auto clf = classify::fit(support, classify::ClassifierKind::max_margin);
  std::vector<Recording> stream;
  for (auto& lr : fieldsim::synth_gesture_corpus(spec.task, 2, 22)) stream.push_back(std::move(lr.recording));
  const auto r = evalharness::benchmark_latency(enc, clf, profile, stream, 1000, pc);
  report(7, "latency", r.samples == 1000 && r.mean_ms < 58.8,
         fmt("mean %.4f ms, p99 %.4f ms, max %.4f ms over 1000 samples", r.mean_ms, r.p99_ms, r.max_ms) +
             " (" + std::to_string(r.classified) + " classified)");
}

void signal_processing() {
  // step response
  double step_err = 0.0;
  preprocess::ExpSmoother f(0.5);
  f.reset(Vector::Zero(9));
  for (int t = 1; t <= 20; ++t) step_err = std::max(step_err, std::abs((1.0 - f.step(Vector::Ones(9))(0)) - std::pow(0.5, t)));
  // steady-state variance
  Rng rng(77);
  preprocess::ExpSmoother g(0.5);
  double in_ss = 0.0, out_ss = 0.0;
  for (int i = 0; i < 200000; ++i) {
    const double x = gaussian(rng, 2.0);
    const double y = g.step(Vector::Constant(1, x))(0);
    if (i >= 100) {
      in_ss += x * x;
      out_ss += y * y;
    }
  }
  const double ratio = out_ss / in_ss;
  // normalization
  preprocess::CalibrationProfile p;
  p.device_bias = {Vec3(10, -3, 2), Vec3(0, 4, -8), Vec3(1, 1, 1)};
  p.earth_field_magnitude = 47.3;
  Window at_bias{Matrix(16, 9), 0};
  for (Eigen::Index i = 0; i < 16; ++i) at_bias.data.row(i) = p.bias_flat().transpose();
  const bool zeros = preprocess::normalize_window(at_bias, p).data.cwiseAbs().maxCoeff() == 0.0;
  double round_trip = 0.0;
  for (int s = 0; s < 20; ++s) {
    Window w{Matrix(16, 9), 0};
    for (Eigen::Index i = 0; i < 16; ++i)
      for (Eigen::Index j = 0; j < 9; ++j) w.data(i, j) = uniform(rng, -300, 300);
    const Window back = preprocess::denormalize_window(preprocess::normalize_window(w, p), p);
    round_trip = std::max(round_trip, (back.data - w.data).cwiseAbs().maxCoeff());
  }
  // sphere fit on a known bias
  const Vec3 bias(30, 0, 0);
  Eigen::Matrix<double, Eigen::Dynamic, 3> pts(400, 3);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const Vec3 u = Vec3(gaussian(rng), gaussian(rng), gaussian(rng)).normalized();
    pts.row(i) = (bias + 50.0 * u).transpose();
  }
  const auto sphere = preprocess::fit_sphere(pts);
  const double bias_err = (sphere.center - bias).norm() / bias.norm();
  const bool ok = step_err < 1e-12 && std::abs(ratio * 3.0 - 1.0) < 0.10 && zeros && round_trip < 1e-9 && bias_err < 0.01;
  report(8, "signal processing", ok,
         fmt("step err %.2g, variance ratio %.4f, round-trip %.2g, bias err %.2g", step_err, ratio, round_trip, bias_err) +
             (zeros ? ", zeros kept" : ", zeros lost"));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  design_study();
  magdelta_suite();
  evalharness::PretrainSetup setup;
  const auto trained = evalharness::pretrain_encoder(setup);
  ablation(trained.model);
  encoder_validity(trained, setup);
  few_shot(trained.model);
  remount(trained.model);
  latency(trained.model);
  signal_processing();
  std::printf("%d of 8 criteria failed (%.0f s)\n", failures, seconds_since(t0));
  return failures ? 1 : 0;
}
