#include "magsense/classify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "magsense/magdelta.hpp"
#include "magsense/random.hpp"

namespace magsense::classify {

namespace {

using json = nlohmann::ordered_json;

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

bool uses_pca(ClassifierKind k) { return k == ClassifierKind::pca_max_margin || k == ClassifierKind::pca_random_forest; }

// One-vs-rest dual coordinate descent for the L1-loss max-margin problem.
// Q is the (bias-augmented) Gram matrix; returns alpha per class (n x K).
Matrix dual_cd(const Matrix& q, const std::vector<int>& y, const std::vector<int>& labels, double C,
               std::size_t max_iter, double tol, std::uint64_t seed) {
  const Eigen::Index n = q.rows();
  Matrix alpha = Matrix::Zero(n, idx(labels.size()));
  for (std::size_t k = 0; k < labels.size(); ++k) {
    Vector yy(n);
    for (Eigen::Index i = 0; i < n; ++i) yy(i) = y[static_cast<std::size_t>(i)] == labels[k] ? 1.0 : -1.0;
    Vector f = Vector::Zero(n);  // sum_j alpha_j y_j Q_ij
    Vector a = Vector::Zero(n);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, k));
    for (std::size_t it = 0; it < max_iter; ++it) {
      std::shuffle(order.begin(), order.end(), rng);
      double pg_max = -INFINITY, pg_min = INFINITY;
      for (Eigen::Index i : order) {
        const double g = yy(i) * f(i) - 1.0;
        double pg = g;
        if (a(i) <= 0.0) pg = std::min(g, 0.0);
        else if (a(i) >= C) pg = std::max(g, 0.0);
        pg_max = std::max(pg_max, pg);
        pg_min = std::min(pg_min, pg);
        if (std::abs(pg) < 1e-14 || q(i, i) <= 0.0) continue;
        const double next = std::clamp(a(i) - g / q(i, i), 0.0, C);
        const double delta = next - a(i);
        if (delta == 0.0) continue;
        a(i) = next;
        f.noalias() += (delta * yy(i)) * q.col(i);
      }
      if (pg_max - pg_min < tol) break;
    }
    alpha.col(idx(k)) = a.cwiseProduct(yy);
  }
  return alpha;
}

double gini(const Vector& counts, double total) {
  if (total <= 0.0) return 0.0;
  return 1.0 - (counts / total).squaredNorm();
}

struct TreeBuilder {
  const Matrix& x;
  const std::vector<int>& cls;  // class index per sample
  std::size_t n_classes;
  const FitOptions& opts;
  Rng& rng;
  std::vector<TreeNode> nodes;

  int build(std::vector<Eigen::Index>& rows, std::size_t depth) {
    Vector counts = Vector::Zero(idx(n_classes));
    for (auto r : rows) counts(cls[static_cast<std::size_t>(r)]) += 1.0;
    const double total = static_cast<double>(rows.size());
    const int me = static_cast<int>(nodes.size());
    nodes.push_back(TreeNode{});
    nodes[static_cast<std::size_t>(me)].proba = counts / total;
    const bool pure = (counts.array() > 0).count() <= 1;
    if (pure || rows.size() < opts.min_samples_split || (opts.max_depth && depth >= opts.max_depth)) return me;

    const std::size_t d = static_cast<std::size_t>(x.cols());
    const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(d))));
    std::vector<std::size_t> feats(d);
    std::iota(feats.begin(), feats.end(), 0);
    for (std::size_t i = 0; i < m; ++i)
      std::swap(feats[i], feats[std::uniform_int_distribution<std::size_t>(i, d - 1)(rng)]);

    const double parent = gini(counts, total);
    double best = parent - 1e-12;
    int best_f = -1;
    double best_thr = 0.0;
    std::vector<std::pair<double, int>> vals(rows.size());
    for (std::size_t fi = 0; fi < m; ++fi) {
      const std::size_t f = feats[fi];
      for (std::size_t i = 0; i < rows.size(); ++i)
        vals[i] = {x(rows[i], idx(f)), cls[static_cast<std::size_t>(rows[i])]};
      std::sort(vals.begin(), vals.end());
      Vector left = Vector::Zero(idx(n_classes));
      for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
        left(vals[i].second) += 1.0;
        if (vals[i].first == vals[i + 1].first) continue;
        const double nl = static_cast<double>(i + 1), nr = total - nl;
        const double imp = (nl * gini(left, nl) + nr * gini(counts - left, nr)) / total;
        if (imp < best) {
          best = imp;
          best_f = static_cast<int>(f);
          best_thr = 0.5 * (vals[i].first + vals[i + 1].first);
        }
      }
    }
    if (best_f < 0) return me;
    std::vector<Eigen::Index> l, r;
    for (auto row : rows) (x(row, best_f) <= best_thr ? l : r).push_back(row);
    nodes[static_cast<std::size_t>(me)].feature = best_f;
    nodes[static_cast<std::size_t>(me)].threshold = best_thr;
    const int li = build(l, depth + 1);
    const int ri = build(r, depth + 1);
    nodes[static_cast<std::size_t>(me)].left = li;
    nodes[static_cast<std::size_t>(me)].right = ri;
    return me;
  }
};

Vector tree_proba(const std::vector<TreeNode>& nodes, const Vector& x) {
  std::size_t at = 0;
  while (nodes[at].feature >= 0) at = static_cast<std::size_t>(x(nodes[at].feature) <= nodes[at].threshold ? nodes[at].left : nodes[at].right);
  return nodes[at].proba;
}

Vector rbf_row(const Matrix& support, const Vector& x, double gamma) {
  return (-gamma * (support.rowwise() - x.transpose()).rowwise().squaredNorm()).array().exp();
}

json mat_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

Matrix json_mat(const json& j) {
  Matrix m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto& data = j.at("data");
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(i, c) = data.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(c)).get<double>();
  return m;
}

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
Vector json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), idx(v.size()));
}

}  // namespace

std::string kind_name(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::max_margin: return "svm";
    case ClassifierKind::nearest_centroid: return "centroid";
    case ClassifierKind::random_forest: return "rf";
    case ClassifierKind::pca_max_margin: return "pca_svm";
    case ClassifierKind::pca_random_forest: return "pca_rf";
    case ClassifierKind::rbf_max_margin: return "rbf_svm";
  }
  return "?";
}

ClassifierKind parse_kind(const std::string& name) {
  for (auto k : {ClassifierKind::max_margin, ClassifierKind::nearest_centroid, ClassifierKind::random_forest,
                 ClassifierKind::pca_max_margin, ClassifierKind::pca_random_forest, ClassifierKind::rbf_max_margin})
    if (kind_name(k) == name) return k;
  throw ValidationError("unknown classifier kind '" + name + "'");
}

Matrix Pca::transform(const Matrix& x) const { return (x.rowwise() - mean.transpose()) * components; }
Matrix Pca::inverse(const Matrix& z) const { return (z * components.transpose()).rowwise() + mean.transpose(); }

std::size_t Pca::effective_components(double rel_tol) const {
  if (variances.size() == 0) return 0;
  const double top = variances.maxCoeff();
  if (top <= 0.0) return 0;
  return static_cast<std::size_t>((variances.array() > rel_tol * top).count());
}

Pca fit_pca(const Matrix& x, std::size_t components) {
  if (x.rows() < 2) throw ValidationError("PCA needs at least 2 samples");
  Pca p;
  p.mean = x.colwise().mean().transpose();
  const Matrix c = x.rowwise() - p.mean.transpose();
  const Matrix cov = (c.transpose() * c) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Eigen::Index d = x.cols();
  const Eigen::Index q = std::min<Eigen::Index>(idx(components), d);
  p.components.resize(d, q);
  p.variances.resize(q);
  for (Eigen::Index j = 0; j < q; ++j) {
    Vector v = es.eigenvectors().col(d - 1 - j);
    Eigen::Index at;
    v.cwiseAbs().maxCoeff(&at);
    if (v(at) < 0) v = -v;
    p.components.col(j) = v;
    p.variances(j) = std::max(0.0, es.eigenvalues()(d - 1 - j));
  }
  return p;
}

Vector ClassifierModel::scores(const Vector& x_in) const {
  if (static_cast<std::size_t>(x_in.size()) != input_dim)
    throw ValidationError("feature dimension " + std::to_string(x_in.size()) + " does not match model dimension " +
                          std::to_string(input_dim));
  Vector x = x_in;
  if (pca) x = pca->transform(x_in.transpose()).transpose();
  const Eigen::Index K = idx(labels.size());
  switch (kind) {
    case ClassifierKind::max_margin:
    case ClassifierKind::pca_max_margin:
      return weights.leftCols(x.size()) * x + weights.col(x.size());
    case ClassifierKind::nearest_centroid:
      return -(centroids.rowwise() - x.transpose()).rowwise().norm();
    case ClassifierKind::random_forest:
    case ClassifierKind::pca_random_forest: {
      Vector p = Vector::Zero(K);
      for (const auto& t : forest) p += tree_proba(t, x);
      return p / static_cast<double>(forest.size());
    }
    case ClassifierKind::rbf_max_margin: {
      const Vector z = (x - feature_mean).cwiseQuotient(feature_scale);
      const Vector k = rbf_row(support, z, gamma).array() + 1.0;
      return dual.transpose() * k;
    }
  }
  return Vector::Zero(K);
}

ClassifierModel fit(const Matrix& x, const std::vector<int>& y, ClassifierKind kind, const FitOptions& opts) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw ValidationError("sample and label counts differ");
  if (!x.allFinite()) throw ValidationError("training features must be finite");
  ClassifierModel m;
  m.kind = kind;
  m.input_dim = static_cast<std::size_t>(x.cols());
  m.labels = y;
  std::sort(m.labels.begin(), m.labels.end());
  m.labels.erase(std::unique(m.labels.begin(), m.labels.end()), m.labels.end());
  if (m.labels.size() < 2) throw ValidationError("classifier needs at least 2 classes, got " + std::to_string(m.labels.size()));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j)
      if (y[static_cast<std::size_t>(i)] != y[static_cast<std::size_t>(j)] && x.row(i) == x.row(j))
        throw ValidationError("identical samples carry conflicting labels");

  Matrix f = x;
  if (uses_pca(kind)) {
    m.pca = fit_pca(x, opts.pca_components);
    f = m.pca->transform(x);
  }
  std::vector<int> cls(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    cls[i] = static_cast<int>(std::lower_bound(m.labels.begin(), m.labels.end(), y[i]) - m.labels.begin());
  const Eigen::Index n = f.rows(), d = f.cols();
  const Eigen::Index K = idx(m.labels.size());

  switch (kind) {
    case ClassifierKind::max_margin:
    case ClassifierKind::pca_max_margin: {
      Matrix aug(n, d + 1);
      aug.leftCols(d) = f;
      aug.col(d).setOnes();
      const Matrix q = aug * aug.transpose();
      const Matrix alpha = dual_cd(q, y, m.labels, opts.C, opts.max_iter, opts.tolerance, opts.seed);
      m.weights = alpha.transpose() * aug;
      break;
    }
    case ClassifierKind::nearest_centroid: {
      m.centroids = Matrix::Zero(K, d);
      Vector count = Vector::Zero(K);
      for (Eigen::Index i = 0; i < n; ++i) {
        m.centroids.row(cls[static_cast<std::size_t>(i)]) += f.row(i);
        count(cls[static_cast<std::size_t>(i)]) += 1.0;
      }
      m.centroids = count.cwiseInverse().asDiagonal() * m.centroids;
      break;
    }
    case ClassifierKind::random_forest:
    case ClassifierKind::pca_random_forest: {
      if (opts.trees == 0) throw ValidationError("forest needs at least one tree");
      for (std::size_t t = 0; t < opts.trees; ++t) {
        Rng rng(mix_seed(opts.seed, t));
        std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
        if (opts.bootstrap)
          for (auto& r : rows) r = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
        else
          std::iota(rows.begin(), rows.end(), 0);
        TreeBuilder b{f, cls, m.labels.size(), opts, rng, {}};
        b.build(rows, 0);
        m.forest.push_back(std::move(b.nodes));
      }
      break;
    }
    case ClassifierKind::rbf_max_margin: {
      m.feature_mean = Vector::Zero(d);
      m.feature_scale = Vector::Ones(d);
      if (opts.standardize) {
        m.feature_mean = f.colwise().mean().transpose();
        const Matrix c = f.rowwise() - m.feature_mean.transpose();
        m.feature_scale = (c.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
        for (Eigen::Index j = 0; j < d; ++j)
          if (m.feature_scale(j) < 1e-12) m.feature_scale(j) = 1.0;
      }
      m.support = (f.rowwise() - m.feature_mean.transpose()).array().rowwise() / m.feature_scale.transpose().array();
      m.gamma = opts.gamma > 0.0 ? opts.gamma : 1.0 / static_cast<double>(d);
      Matrix q(n, n);
      for (Eigen::Index i = 0; i < n; ++i) q.col(i) = rbf_row(m.support, m.support.row(i).transpose(), m.gamma).array() + 1.0;
      m.dual = dual_cd(q, y, m.labels, opts.C, opts.max_iter, opts.tolerance, opts.seed);
      break;
    }
  }
  return m;
}

void FewShotSet::validate() const {
  if (embeddings.size() != labels.size()) throw ValidationError("few-shot set: embedding and label counts differ");
  std::map<int, std::size_t> per;
  for (int l : labels) ++per[l];
  if (per.size() < 2) throw ValidationError("few-shot set needs at least 2 classes");
  const std::size_t k = per.begin()->second;
  for (const auto& [l, c] : per)
    if (c != k) throw ValidationError("few-shot set must hold the same number of examples per class");
  for (const auto& e : embeddings)
    if (e.size() != embeddings.front().size()) throw ValidationError("few-shot embeddings differ in dimension");
}

ClassifierModel fit(const FewShotSet& train, ClassifierKind kind, const FitOptions& opts) {
  train.validate();
  Matrix x(idx(train.embeddings.size()), train.embeddings.front().size());
  for (std::size_t i = 0; i < train.embeddings.size(); ++i) x.row(idx(i)) = train.embeddings[i].transpose();
  return fit(x, train.labels, kind, opts);
}

Prediction predict_window(const ClassifierModel& model, const Vector& features) {
  const Vector s = model.scores(features);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < s.size(); ++k)
    if (s(k) > s(best)) best = k;
  return Prediction{model.labels[static_cast<std::size_t>(best)], s(best)};
}

Vector flatten_window(const Window& w) {
  Vector v(w.data.size());
  for (Eigen::Index t = 0; t < w.data.rows(); ++t) v.segment(t * w.data.cols(), w.data.cols()) = w.data.row(t).transpose();
  return v;
}

ClassifierModel fit_baseline(const std::vector<Window>& windows, const std::vector<int>& labels, ClassifierKind kind,
                             const FitOptions& opts) {
  if (windows.empty()) throw ValidationError("no training windows");
  Matrix x(idx(windows.size()), windows.front().data.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].data.size() != x.cols()) throw ValidationError("training windows differ in shape");
    x.row(idx(i)) = flatten_window(windows[i]).transpose();
  }
  return fit(x, labels, kind, opts);
}

GestureEvent vote(const std::vector<Prediction>& preds) {
  if (preds.empty()) throw ValidationError("cannot vote over an empty window list");
  std::map<int, std::pair<std::size_t, double>> tally;
  for (const auto& p : preds) {
    auto& t = tally[p.label];
    ++t.first;
    t.second += p.score;
  }
  int best = tally.begin()->first;
  for (const auto& [label, t] : tally) {
    const auto& b = tally[best];
    if (t.first > b.first || (t.first == b.first && t.second > b.second)) best = label;
  }
  GestureEvent ev;
  for (const auto& p : preds) ev.window_labels.push_back(p.label);
  ev.voted_label = best;
  ev.confidence = static_cast<double>(tally[best].first) / static_cast<double>(preds.size());
  return ev;
}

GestureEvent predict_event(const ClassifierModel& model, const encoder::EncoderModel* enc,
                           const std::vector<Window>& event_windows, const Vector* env_estimate,
                           const preprocess::CalibrationProfile& profile) {
  if (event_windows.empty()) throw ValidationError("event has no windows");
  std::vector<Prediction> preds;
  const auto scale_only = profile.scale_only();
  for (const auto& w : event_windows) {
    const Window n = env_estimate ? preprocess::normalize_window(magdelta::subtract_env(w, *env_estimate), scale_only)
                                  : preprocess::normalize_window(w, profile);
    preds.push_back(predict_window(model, enc ? encoder::encode(*enc, n) : flatten_window(n)));
  }
  return vote(preds);
}

std::string format_classifier(const ClassifierModel& m) {
  json j;
  j["format"] = "magsense-classifier v1";
  j["kind"] = kind_name(m.kind);
  j["labels"] = m.labels;
  j["input_dim"] = m.input_dim;
  if (m.pca) j["pca"] = {{"mean", vec_json(m.pca->mean)}, {"components", mat_json(m.pca->components)},
                         {"variances", vec_json(m.pca->variances)}};
  switch (m.kind) {
    case ClassifierKind::max_margin:
    case ClassifierKind::pca_max_margin: j["weights"] = mat_json(m.weights); break;
    case ClassifierKind::nearest_centroid: j["centroids"] = mat_json(m.centroids); break;
    case ClassifierKind::random_forest:
    case ClassifierKind::pca_random_forest: {
      json trees = json::array();
      for (const auto& t : m.forest) {
        json nodes = json::array();
        for (const auto& nd : t) {
          json o{{"feature", nd.feature}, {"threshold", nd.threshold}, {"left", nd.left}, {"right", nd.right}};
          if (nd.feature < 0) o["proba"] = vec_json(nd.proba);
          nodes.push_back(std::move(o));
        }
        trees.push_back(std::move(nodes));
      }
      j["forest"] = std::move(trees);
      break;
    }
    case ClassifierKind::rbf_max_margin:
      j["support"] = mat_json(m.support);
      j["dual"] = mat_json(m.dual);
      j["gamma"] = m.gamma;
      j["feature_mean"] = vec_json(m.feature_mean);
      j["feature_scale"] = vec_json(m.feature_scale);
      break;
  }
  return j.dump(1) + "\n";
}

ClassifierModel parse_classifier(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("classifier file is not valid JSON: ") + e.what());
  }
  if (j.value("format", "") != "magsense-classifier v1") throw ValidationError("not a magsense classifier file");
  try {
    ClassifierModel m;
    m.kind = parse_kind(j.at("kind").get<std::string>());
    m.labels = j.at("labels").get<std::vector<int>>();
    m.input_dim = j.at("input_dim").get<std::size_t>();
    if (j.contains("pca")) {
      Pca p;
      p.mean = json_vec(j["pca"].at("mean"));
      p.components = json_mat(j["pca"].at("components"));
      p.variances = json_vec(j["pca"].at("variances"));
      m.pca = p;
    }
    if (j.contains("weights")) m.weights = json_mat(j["weights"]);
    if (j.contains("centroids")) m.centroids = json_mat(j["centroids"]);
    if (j.contains("forest"))
      for (const auto& t : j["forest"]) {
        std::vector<TreeNode> nodes;
        for (const auto& o : t) {
          TreeNode nd;
          nd.feature = o.at("feature").get<int>();
          nd.threshold = o.at("threshold").get<double>();
          nd.left = o.at("left").get<int>();
          nd.right = o.at("right").get<int>();
          if (o.contains("proba")) nd.proba = json_vec(o["proba"]);
          nodes.push_back(std::move(nd));
        }
        m.forest.push_back(std::move(nodes));
      }
    if (j.contains("support")) {
      m.support = json_mat(j["support"]);
      m.dual = json_mat(j["dual"]);
      m.gamma = j.at("gamma").get<double>();
      m.feature_mean = json_vec(j.at("feature_mean"));
      m.feature_scale = json_vec(j.at("feature_scale"));
    }
    if (m.labels.size() < 2) throw ValidationError("classifier file lists fewer than 2 classes");
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed classifier file: ") + e.what());
  }
}

void save_classifier(const ClassifierModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_classifier(model);
}

ClassifierModel load_classifier(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_classifier(ss.str());
}

}  // namespace magsense::classify
