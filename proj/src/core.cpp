#include "magsense/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace magsense {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

bool parse_int64(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

void format_fixed3(std::string& dst, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  // "-0.000" and "0.000" are the same value; emit one spelling.
  if (std::string_view(buf) == "-0.000") {
    dst += "0.000";
  } else {
    dst += buf;
  }
}

}  // namespace

Vector SampleFrame::flat() const {
  Vector v(readings.size());
  for (Eigen::Index k = 0; k < readings.rows(); ++k)
    for (Eigen::Index a = 0; a < 3; ++a) v(3 * k + a) = readings(k, a);
  return v;
}

SampleFrame SampleFrame::from_flat(std::int64_t timestamp_ms, const Vector& values) {
  if (values.size() % 3 != 0) throw ValidationError("frame width must be a multiple of 3");
  SampleFrame f;
  f.timestamp_ms = timestamp_ms;
  f.readings.resize(values.size() / 3, 3);
  for (Eigen::Index i = 0; i < values.size(); ++i) f.readings(i / 3, i % 3) = values(i);
  return f;
}

Matrix Recording::as_matrix() const {
  Matrix m(static_cast<Eigen::Index>(frames.size()), static_cast<Eigen::Index>(channel_count()));
  for (std::size_t i = 0; i < frames.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = frames[i].flat().transpose();
  return m;
}

void Recording::validate() const {
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz))
    throw ValidationError("sample_rate_hz must be positive");
  const std::size_t sensors = sensor_count();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (f.sensor_count() != sensors) throw ValidationError("frame " + std::to_string(i) + " has inconsistent sensor count");
    if (!f.readings.allFinite()) throw ValidationError("frame " + std::to_string(i) + " has non-finite readings");
    if (i > 0 && f.timestamp_ms <= frames[i - 1].timestamp_ms)
      throw ValidationError("timestamps not strictly increasing at frame " + std::to_string(i));
  }
  if (frames.size() >= 2) {
    std::vector<std::int64_t> dt;
    dt.reserve(frames.size() - 1);
    for (std::size_t i = 1; i < frames.size(); ++i) dt.push_back(frames[i].timestamp_ms - frames[i - 1].timestamp_ms);
    std::nth_element(dt.begin(), dt.begin() + static_cast<std::ptrdiff_t>(dt.size() / 2), dt.end());
    const double median = static_cast<double>(dt[dt.size() / 2]);
    const double nominal = 1000.0 / sample_rate_hz;
    if (std::abs(median - nominal) > 0.2 * nominal)
      throw ValidationError("median frame interval " + std::to_string(median) + " ms deviates more than 20% from " +
                            std::to_string(nominal) + " ms");
  }
}

std::int64_t tick_timestamp_ms(std::size_t tick, double sample_rate_hz) {
  return static_cast<std::int64_t>(std::llround(static_cast<double>(tick) * 1000.0 / sample_rate_hz));
}

Recording recording_from_matrix(const Matrix& values, double sample_rate_hz, Meta meta) {
  Recording rec;
  rec.sample_rate_hz = sample_rate_hz;
  rec.meta = std::move(meta);
  rec.frames.reserve(static_cast<std::size_t>(values.rows()));
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    rec.frames.push_back(SampleFrame::from_flat(tick_timestamp_ms(static_cast<std::size_t>(i), sample_rate_hz),
                                                values.row(i).transpose()));
  return rec;
}

void GestureEvent::validate() const {
  if (end_idx <= start_idx) throw ValidationError("event end_idx must exceed start_idx");
  if (window_labels.empty()) throw ValidationError("event has no window labels");
  const auto n = std::count(window_labels.begin(), window_labels.end(), voted_label);
  if (n == 0) throw ValidationError("voted label absent from window labels");
  const double expect = static_cast<double>(n) / static_cast<double>(window_labels.size());
  if (std::abs(expect - confidence) > 1e-12) throw ValidationError("confidence inconsistent with window labels");
}

std::string format_recording(const Recording& rec) {
  std::string out;
  // sample rate first so readers can pick it up before other keys
  {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "# sample_rate_hz=%.6g\n", rec.sample_rate_hz);
    out += buf;
  }
  for (const auto& [k, v] : rec.meta) {
    if (k == "sample_rate_hz") continue;
    out += "# " + k + "=" + v + "\n";
  }
  out += "t_ms";
  const char* axes = "xyz";
  for (std::size_t s = 0; s < rec.sensor_count(); ++s)
    for (int a = 0; a < 3; ++a) out += ",s" + std::to_string(s) + axes[a];
  out += "\n";
  for (const auto& f : rec.frames) {
    out += std::to_string(f.timestamp_ms);
    for (Eigen::Index k = 0; k < f.readings.rows(); ++k)
      for (Eigen::Index a = 0; a < 3; ++a) {
        out += ',';
        format_fixed3(out, f.readings(k, a));
      }
    out += '\n';
  }
  return out;
}

Recording parse_recording(const std::string& text) {
  Recording rec;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = trim(body.substr(0, eq));
      const std::string value = trim(body.substr(eq + 1));
      if (key == "sample_rate_hz") {
        double hz = 0.0;
        if (!parse_double(value, hz)) throw ParseError("bad sample_rate_hz '" + value + "'", lineno);
        rec.sample_rate_hz = hz;
      } else {
        rec.meta[key] = value;
      }
      continue;
    }
    if (line.rfind("t_ms", 0) == 0) {
      const auto cols = split(line, ',');
      if (cols.size() < 4 || (cols.size() - 1) % 3 != 0) throw ParseError("bad header column count", lineno);
      width = cols.size();
      continue;
    }
    const auto cols = split(line, ',');
    if (width == 0) {
      if (cols.size() < 4 || (cols.size() - 1) % 3 != 0)
        throw ParseError("expected timestamp plus a multiple of 3 values, got " + std::to_string(cols.size()) + " columns",
                         lineno);
      width = cols.size();
    }
    if (cols.size() != width)
      throw ParseError("expected " + std::to_string(width) + " columns, got " + std::to_string(cols.size()), lineno);
    std::int64_t t = 0;
    if (!parse_int64(cols[0], t)) throw ParseError("non-integer timestamp '" + cols[0] + "'", lineno);
    Vector v(static_cast<Eigen::Index>(width - 1));
    for (std::size_t i = 1; i < width; ++i) {
      double x = 0.0;
      if (!parse_double(cols[i], x)) throw ParseError("non-numeric value '" + cols[i] + "'", lineno);
      v(static_cast<Eigen::Index>(i - 1)) = x;
    }
    rec.frames.push_back(SampleFrame::from_flat(t, v));
  }
  rec.validate();
  return rec;
}

Recording read_recording(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_recording(ss.str());
}

void write_recording(const Recording& rec, const std::filesystem::path& path) {
  rec.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_recording(rec);
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Window> sliding_windows(const Matrix& frames, std::size_t length, std::size_t stride) {
  if (stride == 0) throw ValidationError("stride must be >= 1");
  std::vector<Window> out;
  const auto n = static_cast<std::size_t>(frames.rows());
  if (length == 0 || n < length) return out;
  out.reserve((n - length) / stride + 1);
  for (std::size_t start = 0; start + length <= n; start += stride)
    out.push_back(Window{frames.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(length)), start});
  return out;
}

std::vector<Window> sliding_windows(const Recording& rec, std::size_t length, std::size_t stride) {
  return sliding_windows(rec.as_matrix(), length, stride);
}

std::string event_to_json(const GestureEvent& ev) {
  nlohmann::ordered_json j;
  j["start_idx"] = ev.start_idx;
  j["end_idx"] = ev.end_idx;
  j["voted_label"] = ev.voted_label;
  j["confidence"] = ev.confidence;
  j["window_labels"] = ev.window_labels;
  return j.dump();
}

GestureEvent event_from_json(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  GestureEvent ev;
  ev.start_idx = j.at("start_idx").get<std::size_t>();
  ev.end_idx = j.at("end_idx").get<std::size_t>();
  ev.voted_label = j.at("voted_label").get<int>();
  ev.confidence = j.at("confidence").get<double>();
  ev.window_labels = j.at("window_labels").get<std::vector<int>>();
  return ev;
}

void write_events_jsonl(const std::vector<GestureEvent>& events, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& ev : events) out << event_to_json(ev) << '\n';
}

std::vector<GestureEvent> read_events_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<GestureEvent> out;
  std::string line;
  while (std::getline(in, line))
    if (!trim(line).empty()) out.push_back(event_from_json(line));
  return out;
}

}  // namespace magsense
