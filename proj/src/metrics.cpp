#include "magsense/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace magsense::metrics {

ConfusionMatrix::ConfusionMatrix(std::vector<int> class_labels) : labels(std::move(class_labels)) {
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  const auto k = static_cast<Eigen::Index>(labels.size());
  counts = Eigen::MatrixXi::Zero(k, k);
}

void ConfusionMatrix::add(int truth, int predicted) {
  auto pos = [&](int l) {
    const auto it = std::lower_bound(labels.begin(), labels.end(), l);
    if (it == labels.end() || *it != l) throw ValidationError("label " + std::to_string(l) + " not in confusion matrix");
    return static_cast<Eigen::Index>(it - labels.begin());
  };
  ++counts(pos(truth), pos(predicted));
}

long ConfusionMatrix::total() const { return counts.cast<long>().sum(); }

double ConfusionMatrix::accuracy() const {
  const long n = total();
  return n ? static_cast<double>(counts.trace()) / static_cast<double>(n) : 0.0;
}

double ConfusionMatrix::precision() const {
  if (labels.empty()) return 0.0;
  double s = 0.0;
  for (Eigen::Index k = 0; k < counts.rows(); ++k) {
    const long col = counts.col(k).cast<long>().sum();
    s += col ? static_cast<double>(counts(k, k)) / static_cast<double>(col) : 0.0;
  }
  return s / static_cast<double>(labels.size());
}

double ConfusionMatrix::recall() const {
  if (labels.empty()) return 0.0;
  double s = 0.0;
  for (Eigen::Index k = 0; k < counts.rows(); ++k) {
    const long row = counts.row(k).cast<long>().sum();
    s += row ? static_cast<double>(counts(k, k)) / static_cast<double>(row) : 0.0;
  }
  return s / static_cast<double>(labels.size());
}

double ConfusionMatrix::f1() const {
  if (labels.empty()) return 0.0;
  double s = 0.0;
  for (Eigen::Index k = 0; k < counts.rows(); ++k) {
    const double tp = counts(k, k);
    const double fp = counts.col(k).sum() - tp;
    const double fn = counts.row(k).sum() - tp;
    s += tp > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
  }
  return s / static_cast<double>(labels.size());
}

std::string ConfusionMatrix::format() const {
  std::ostringstream out;
  out << "labels";
  for (int l : labels) out << ',' << l;
  out << '\n';
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    for (Eigen::Index j = 0; j < counts.cols(); ++j) out << (j ? "," : "") << counts(i, j);
    out << '\n';
  }
  return out.str();
}

ConfusionMatrix ConfusionMatrix::parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("labels", 0) != 0) throw ValidationError("confusion matrix needs a labels line");
  std::vector<int> labels;
  std::istringstream ls(line.substr(6));
  std::string tok;
  while (std::getline(ls, tok, ','))
    if (!tok.empty()) labels.push_back(std::stoi(tok));
  ConfusionMatrix cm(labels);
  if (cm.labels != labels) throw ValidationError("confusion matrix labels must be sorted and unique");
  for (Eigen::Index i = 0; i < cm.counts.rows(); ++i) {
    if (!std::getline(in, line)) throw ValidationError("confusion matrix truncated");
    std::istringstream rs(line);
    for (Eigen::Index j = 0; j < cm.counts.cols(); ++j) {
      if (!std::getline(rs, tok, ',')) throw ValidationError("confusion matrix row too short");
      cm.counts(i, j) = std::stoi(tok);
    }
  }
  return cm;
}

double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ValidationError("score and label counts differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // average ranks over ties
  double rank_sum = 0.0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (positive[order[k]]) {
        rank_sum += r;
        ++npos;
      }
    i = j;
  }
  const std::size_t nneg = scores.size() - npos;
  if (npos == 0 || nneg == 0) return std::numeric_limits<double>::quiet_NaN();
  const double np = static_cast<double>(npos), nn = static_cast<double>(nneg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double macro_auc(const std::vector<Vector>& scores, const std::vector<int>& truth, const std::vector<int>& labels) {
  if (scores.size() != truth.size()) throw ValidationError("score and label counts differ");
  double s = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    std::vector<double> col;
    std::vector<bool> pos;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      col.push_back(scores[i](static_cast<Eigen::Index>(k)));
      pos.push_back(truth[i] == labels[k]);
    }
    const double a = binary_auc(col, pos);
    if (!std::isnan(a)) {
      s += a;
      ++used;
    }
  }
  return used ? s / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
}

MetricRow summarize(const std::string& task, const std::string& model, const ConfusionMatrix& cm, double auc) {
  return MetricRow{task, model, cm.accuracy(), cm.f1(), cm.precision(), cm.recall(), auc};
}

std::string format_report(const std::vector<MetricRow>& rows) {
  std::string out = std::string(kReportHeader) + "\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.task.c_str(), r.model.c_str(), r.accuracy,
                  r.f1, r.precision, r.recall, r.auc);
    out += buf;
  }
  return out;
}

void write_report(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_report(rows);
}

}  // namespace magsense::metrics
