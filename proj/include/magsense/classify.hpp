#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "magsense/core.hpp"
#include "magsense/encoder.hpp"
#include "magsense/preprocess.hpp"

namespace magsense::classify {

enum class ClassifierKind { max_margin, nearest_centroid, random_forest, pca_max_margin, pca_random_forest, rbf_max_margin };

std::string kind_name(ClassifierKind kind);
ClassifierKind parse_kind(const std::string& name);

struct FitOptions {
  double C = 1.0;
  std::size_t max_iter = 2000;
  double tolerance = 1e-6;
  std::size_t trees = 100;
  std::size_t max_depth = 0;  // 0 = grow until pure
  std::size_t min_samples_split = 2;
  bool bootstrap = true;
  std::size_t pca_components = 20;
  double gamma = 0.0;  // rbf; 0 = 1 / features
  bool standardize = false;  // rbf inputs
  std::uint64_t seed = 0;
};

struct Pca {
  Vector mean;
  Matrix components;  // features x q, columns sorted by variance
  Vector variances;

  Matrix transform(const Matrix& x) const;  // rows are samples
  Matrix inverse(const Matrix& z) const;
  std::size_t effective_components(double rel_tol = 1e-10) const;
};

Pca fit_pca(const Matrix& x, std::size_t components);

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  Vector proba;  // class distribution at the leaf
};

struct ClassifierModel {
  ClassifierKind kind = ClassifierKind::max_margin;
  std::vector<int> labels;  // sorted class ids; column order of every score vector
  std::size_t input_dim = 0;
  std::optional<Pca> pca;
  Matrix weights;  // linear: K x (d + 1), last column is the bias
  Matrix centroids;  // K x d
  std::vector<std::vector<TreeNode>> forest;
  Matrix support;  // rbf: training points (standardized)
  Matrix dual;     // rbf: n x K, alpha_i * y_i
  double gamma = 0.0;
  Vector feature_mean, feature_scale;  // rbf standardization

  Vector scores(const Vector& x) const;  // one per class in `labels` order
};

struct Prediction {
  int label = -1;
  double score = 0.0;
};

// Rows of x are samples.
ClassifierModel fit(const Matrix& x, const std::vector<int>& y, ClassifierKind kind, const FitOptions& opts = {});

struct FewShotSet {
  std::vector<Vector> embeddings;
  std::vector<int> labels;

  void validate() const;  // >= 2 classes, equal count per class
};

ClassifierModel fit(const FewShotSet& train, ClassifierKind kind, const FitOptions& opts = {});

Prediction predict_window(const ClassifierModel& model, const Vector& features);

// Flattens each 16 x C window time-major to a 16*C vector.
Vector flatten_window(const Window& w);
ClassifierModel fit_baseline(const std::vector<Window>& windows, const std::vector<int>& labels, ClassifierKind kind,
                             const FitOptions& opts = {});

// Majority vote: modal label, ties by summed score, then lowest class id.
GestureEvent vote(const std::vector<Prediction>& window_predictions);

// subtract_env -> normalize -> encode -> predict per window, then vote. With no
// encoder the flattened window is classified directly; with no env estimate
// the full profile (bias included) normalizes the raw window.
GestureEvent predict_event(const ClassifierModel& model, const encoder::EncoderModel* enc,
                           const std::vector<Window>& event_windows, const Vector* env_estimate,
                           const preprocess::CalibrationProfile& profile);

std::string format_classifier(const ClassifierModel& model);
ClassifierModel parse_classifier(const std::string& text);
void save_classifier(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_classifier(const std::filesystem::path& path);

}  // namespace magsense::classify
