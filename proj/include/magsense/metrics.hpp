#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "magsense/core.hpp"

namespace magsense::metrics {

struct ConfusionMatrix {
  std::vector<int> labels;  // sorted class ids
  Eigen::MatrixXi counts;   // rows: true class, cols: predicted class

  explicit ConfusionMatrix(std::vector<int> class_labels = {});
  void add(int truth, int predicted);
  long total() const;
  double accuracy() const;
  // Macro averages; a class never predicted contributes precision 0.
  double precision() const;
  double recall() const;
  double f1() const;

  std::string format() const;
  static ConfusionMatrix parse(const std::string& text);
};

// Rank AUC with ties counted half; NaN when a side is empty.
double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive);

// Macro one-vs-rest AUC; scores[i] holds one column per entry of `labels`.
// Classes without both positives and negatives are skipped.
double macro_auc(const std::vector<Vector>& scores, const std::vector<int>& truth, const std::vector<int>& labels);

struct MetricRow {
  std::string task, model;
  double accuracy = 0, f1 = 0, precision = 0, recall = 0, auc = 0;
};

MetricRow summarize(const std::string& task, const std::string& model, const ConfusionMatrix& cm, double auc);

inline constexpr const char* kReportHeader = "task,model,accuracy,f1,precision,recall,auc";
std::string format_report(const std::vector<MetricRow>& rows);
void write_report(const std::vector<MetricRow>& rows, const std::filesystem::path& path);

}  // namespace magsense::metrics
