#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "magsense/core.hpp"
#include "magsense/random.hpp"

using namespace magsense;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("magsense_core_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Recording random_recording(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(static_cast<Eigen::Index>(n), 9);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < 9; ++j) m(i, j) = uniform(rng, -200.0, 200.0);
  return recording_from_matrix(m, 17.0, {{"user", "3"}});
}

}  // namespace

TEST_CASE("single row transcribes row-major") {
  const Recording rec = parse_recording("0,1,2,3,4,5,6,7,8,9\n");
  REQUIRE(rec.size() == 1);
  CHECK(rec.frames[0].timestamp_ms == 0);
  for (int k = 0; k < 3; ++k)
    for (int a = 0; a < 3; ++a) CHECK(rec.frames[0].readings(k, a) == doctest::Approx(1 + 3 * k + a));
  CHECK(rec.frames[0].flat()(4) == doctest::Approx(5.0));
}

TEST_CASE("decreasing timestamps are rejected") {
  const std::string text = "t_ms,s0x,s0y,s0z,s1x,s1y,s1z,s2x,s2y,s2z\n100,0,0,0,0,0,0,0,0,0\n50,0,0,0,0,0,0,0,0,0\n";
  CHECK_THROWS_AS(parse_recording(text), ValidationError);
}

TEST_CASE("malformed rows name their line") {
  const std::string short_row = "t_ms,s0x,s0y,s0z,s1x,s1y,s1z,s2x,s2y,s2z\n0,1,2,3,4,5,6,7,8,9\n59,1,2,3\n";
  try {
    parse_recording(short_row);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse_recording("0,1,2,x,4,5,6,7,8,9\n"), ParseError);
}

TEST_CASE("header comments become meta") {
  const Recording rec = parse_recording("# user=4\n# label=2\nt_ms,s0x,s0y,s0z,s1x,s1y,s1z,s2x,s2y,s2z\n0,1,2,3,4,5,6,7,8,9\n");
  CHECK(rec.meta.at("user") == "4");
  CHECK(rec.meta.at("label") == "2");
}

TEST_CASE("write then read round-trips to 3 decimals") {
  const auto dir = scratch_dir("roundtrip");
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Recording rec = random_recording(1 + seed * 7, seed);
    write_recording(rec, dir / "r.csv");
    const Recording back = read_recording(dir / "r.csv");
    REQUIRE(back.size() == rec.size());
    CHECK(back.meta == rec.meta);
    const Matrix d = back.as_matrix() - rec.as_matrix();
    CHECK(d.cwiseAbs().maxCoeff() <= 0.0005 + 1e-9);
    for (std::size_t i = 0; i < rec.size(); ++i) CHECK(back.frames[i].timestamp_ms == rec.frames[i].timestamp_ms);
  }
}

TEST_CASE("empty recording writes a header-only file") {
  const auto dir = scratch_dir("empty");
  write_recording(Recording{}, dir / "e.csv");
  std::string body;
  for (std::istringstream in(slurp(dir / "e.csv")); std::getline(in, body);)
    if (!body.empty() && body[0] != '#') break;
  CHECK(body == "t_ms,s0x,s0y,s0z,s1x,s1y,s1z,s2x,s2y,s2z");
  CHECK(read_recording(dir / "e.csv").empty());
}

TEST_CASE("writes are byte-identical") {
  const auto dir = scratch_dir("bytes");
  const Recording rec = random_recording(50, 9);
  write_recording(rec, dir / "a.csv");
  write_recording(rec, dir / "b.csv");
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
}

TEST_CASE("unwritable path is an io error") {
  CHECK_THROWS_AS(write_recording(random_recording(3, 1), "/nonexistent-dir/x/y.csv"), IoError);
}

TEST_CASE("sliding window counts") {
  auto count = [](std::size_t n, std::size_t stride) { return sliding_windows(random_recording(n, n), 16, stride).size(); };
  CHECK(count(16, 1) == 1);
  CHECK(count(20, 1) == 5);
  CHECK(count(48, 4) == 9);
  CHECK(count(15, 1) == 0);
  for (std::size_t n = 16; n < 60; n += 3)
    for (std::size_t s = 1; s < 7; ++s) CHECK(count(n, s) == (n - 16) / s + 1);
  CHECK_THROWS(sliding_windows(random_recording(20, 1), 16, 0));
}

TEST_CASE("windows carry their origin and rows") {
  const Recording rec = random_recording(40, 2);
  const Matrix m = rec.as_matrix();
  for (const auto& w : sliding_windows(rec, 16, 3)) {
    CHECK(w.data.rows() == 16);
    CHECK(w.data.cols() == 9);
    CHECK((w.data - m.middleRows(static_cast<Eigen::Index>(w.origin), 16)).norm() == 0.0);
  }
}

TEST_CASE("windowing a concatenation differs from windowing the parts") {
  const Matrix a = random_recording(20, 3).as_matrix(), b = random_recording(20, 4).as_matrix();
  Matrix ab(40, 9);
  ab << a, b;
  const auto joined = sliding_windows(ab, 16, 1);
  const auto wa = sliding_windows(a, 16, 1), wb = sliding_windows(b, 16, 1);
  CHECK(joined.size() == 25);
  CHECK(wa.size() + wb.size() == 10);
  // the first windows agree, the ones straddling the seam exist only in the joined stream
  CHECK((joined[0].data - wa[0].data).norm() == 0.0);
  CHECK((joined[10].data - wa.back().data).norm() > 0.0);
}

TEST_CASE("recording invariants") {
  Recording rec = random_recording(10, 5);
  CHECK_NOTHROW(rec.validate());
  rec.frames[3].readings(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(rec.validate(), ValidationError);

  Recording irregular = random_recording(10, 5);
  for (std::size_t i = 0; i < irregular.size(); ++i) irregular.frames[i].timestamp_ms = static_cast<std::int64_t>(i) * 100;
  CHECK_THROWS_AS(irregular.validate(), ValidationError);  // 100 ms against a 58.8 ms period

  Recording bad_rate = random_recording(4, 5);
  bad_rate.sample_rate_hz = 0.0;
  CHECK_THROWS_AS(bad_rate.validate(), ValidationError);
}

TEST_CASE("gesture event json lines") {
  GestureEvent ev{10, 40, {1, 1, 2}, 1, 2.0 / 3.0};
  CHECK_NOTHROW(ev.validate());
  const GestureEvent back = event_from_json(event_to_json(ev));
  CHECK(back.start_idx == 10);
  CHECK(back.end_idx == 40);
  CHECK(back.window_labels == ev.window_labels);
  CHECK(back.voted_label == 1);
  CHECK(back.confidence == doctest::Approx(2.0 / 3.0));

  const auto dir = scratch_dir("jsonl");
  write_events_jsonl({ev, ev}, dir / "e.jsonl");
  CHECK(read_events_jsonl(dir / "e.jsonl").size() == 2);

  GestureEvent empty_span{5, 5, {1}, 1, 1.0};
  CHECK_THROWS_AS(empty_span.validate(), ValidationError);
  GestureEvent absent{0, 5, {1, 2}, 3, 0.0};
  CHECK_THROWS_AS(absent.validate(), ValidationError);
  GestureEvent wrong_conf{0, 5, {1, 2}, 1, 1.0};
  CHECK_THROWS_AS(wrong_conf.validate(), ValidationError);
}
