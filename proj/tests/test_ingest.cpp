#include <filesystem>
#include <random>

#include "doctest.h"
#include "mlffn/error.hpp"
#include "mlffn/ingest.hpp"
#include "oracles.hpp"

using namespace mlffn;

namespace {

std::string make_csv(std::size_t rows, bool with_jerk) {
  std::string text = with_jerk ? "time_s,speed_mps,accel_mps2,jerk_mps3\n" : "time_s,speed_mps,accel_mps2\n";
  for (std::size_t i = 0; i < rows; ++i) {
    text += std::to_string(0.1 * static_cast<double>(i)) + ",10,0.5";
    text += with_jerk ? ",0\n" : "\n";
  }
  return text;
}

TrajectorySegment constant_segment(std::string id, double speed, std::size_t n = 5) {
  TrajectorySegment s;
  s.id = std::move(id);
  for (std::size_t i = 0; i < n; ++i) {
    s.t.push_back(0.1 * static_cast<double>(i));
    s.v.push_back(speed);
    s.a.push_back(0.0);
    s.j.push_back(0.0);
  }
  return s;
}

}  // namespace

TEST_CASE("style labels have stable codes and parse case-insensitively") {
  CHECK(style_code(StyleLabel::Aggressive) == 0);
  CHECK(style_code(StyleLabel::Assertive) == 1);
  CHECK(style_code(StyleLabel::Conservative) == 2);
  CHECK(style_code(StyleLabel::Moderate) == 3);
  CHECK(parse_style("aGGressive") == StyleLabel::Aggressive);
  CHECK(parse_style(" moderate ") == StyleLabel::Moderate);
  CHECK_FALSE(parse_style("reckless"));
}

TEST_CASE("well-formed 200-row file parses to T=200") {
  auto seg = ingest::parse_segment_text(make_csv(200, true), "s1");
  CHECK(seg.size() == 200);
  CHECK(seg.v.size() == 200);
  CHECK(seg.j.size() == 200);
  CHECK(seg.id == "s1");
  CHECK_FALSE(seg.label);
}

TEST_CASE("jerk is derived by forward difference when the column is absent") {
  auto seg = ingest::parse_segment_text("time_s,speed_mps,accel_mps2\n0,1,0\n0.1,1,1\n0.2,1,1\n", "d");
  REQUIRE(seg.j.size() == 3);
  CHECK(seg.j[0] == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(seg.j[1] == 0.0);
  CHECK(seg.j[2] == 0.0);
}

TEST_CASE("NaN speed reports its row") {
  std::string text = "time_s,speed_mps,accel_mps2,jerk_mps3\n";
  for (int i = 0; i < 10; ++i) {
    text += std::to_string(i) + "," + (i == 7 ? "NaN" : "3") + ",0,0\n";
  }
  try {
    ingest::parse_segment_text(text, "nan");
    FAIL("expected NonFiniteValue");
  } catch (const NonFiniteValueError& e) {
    CHECK(e.row() == 7);
    CHECK(e.code() == ErrorCode::NonFiniteValue);
    CHECK(e.column() == "speed_mps");
  }
}

TEST_CASE("parse errors") {
  auto code_of = [](const std::string& text) {
    try {
      ingest::parse_segment_text(text, "x");
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  CHECK(code_of("time_s,speed_mps\n0,1\n0.1,2\n") == ErrorCode::MissingColumn);
  CHECK(code_of("time_s,speed_mps,accel_mps2\n0,1,0\n") == ErrorCode::TooShort);
  CHECK(code_of("time_s,speed_mps,accel_mps2\n0,1,0\n0,1,0\n") == ErrorCode::NonMonotonicTime);
  CHECK(code_of("time_s,speed_mps,accel_mps2\n0,1,0\n0.1,abc,0\n") == ErrorCode::ParseError);
  CHECK(code_of("time_s,speed_mps,accel_mps2,label\n0,1,0,fast\n0.1,1,0,fast\n") == ErrorCode::BadLabel);
  CHECK(code_of("time_s,speed_mps,accel_mps2\n0,inf,0\n0.1,1,0\n") == ErrorCode::NonFiniteValue);
}

TEST_CASE("label column is read case-insensitively") {
  auto seg = ingest::parse_segment_text(
      "time_s,speed_mps,accel_mps2,label\n0,1,0,CONSERVATIVE\n0.1,1,0,CONSERVATIVE\n", "l");
  CHECK(seg.label == StyleLabel::Conservative);
}

TEST_CASE("serialize then parse is the identity") {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 25; ++trial) {
    auto seg = oracle::random_segment(gen, 2, 60);
    seg.id = "rt" + std::to_string(trial);
    if (trial % 2 == 0) {
      seg.label = kAllStyles[trial % 4];
    }
    auto back = ingest::parse_segment_text(ingest::serialize_segment(seg), seg.id);
    CHECK(back.t == seg.t);
    CHECK(back.v == seg.v);
    CHECK(back.a == seg.a);
    CHECK(back.j == seg.j);
    CHECK(back.label == seg.label);
  }
}

TEST_CASE("file round trip through parse_segment") {
  auto dir = std::filesystem::temp_directory_path() / "mlffn_ingest_test";
  std::filesystem::create_directories(dir);
  auto seg = constant_segment("file_seg", 4.5, 8);
  seg.label = StyleLabel::Moderate;
  ingest::write_segment(seg, dir / "file_seg.csv");
  auto back = ingest::parse_segment(dir / "file_seg.csv");
  CHECK(back.id == "file_seg");
  CHECK(back.v == seg.v);
  CHECK(back.label == StyleLabel::Moderate);
  std::filesystem::remove_all(dir);
}

TEST_CASE("clean drops never-positive speed segments") {
  std::vector<TrajectorySegment> in;
  for (int i = 0; i < 20; ++i) {
    in.push_back(constant_segment("ok" + std::to_string(i), 5.0));
  }
  in.push_back(constant_segment("zero", 0.0));
  in.push_back(constant_segment("neg", -1.0));
  auto out = ingest::clean_segments(in);
  CHECK(out.input_count == 22);
  CHECK(out.segments.size() == 20);
  REQUIRE(out.dropped.size() == 2);
  CHECK(out.dropped[0].id == "zero");
  CHECK(out.dropped[0].reason == "non_positive_speed");
  auto report = ingest::drop_report_json(out);
  CHECK(report.find("\"dropped_count\": 2") != std::string::npos);
}

TEST_CASE("a 2,704-segment corpus with 9 never-positive trips keeps 2,695") {
  std::vector<TrajectorySegment> in;
  for (int i = 0; i < 2704; ++i) {
    in.push_back(constant_segment("s" + std::to_string(i), (i % 300 == 0 && i < 2700) ? 0.0 : 8.0, 3));
  }
  auto out = ingest::clean_segments(in);
  CHECK(out.dropped.size() == 9);
  CHECK(out.segments.size() == 2695);
}

TEST_CASE("speed spike is clipped to the physical bound") {
  auto seg = constant_segment("spike", 10.0);
  seg.v[2] = 120.0;
  seg.a[1] = -40.0;
  seg.j[3] = 500.0;
  auto out = ingest::clean_segments({seg});
  REQUIRE(out.segments.size() == 1);
  CHECK(out.segments[0].v[2] == 60.0);
  CHECK(out.segments[0].a[1] == -15.0);
  CHECK(out.segments[0].j[3] == 60.0);
}

TEST_CASE("segments with time gaps are dropped") {
  auto seg = constant_segment("gap", 10.0, 6);
  seg.t[4] = 0.9;
  seg.t[5] = 1.0;
  auto out = ingest::clean_segments({seg});
  CHECK(out.segments.empty());
  REQUIRE(out.dropped.size() == 1);
  CHECK(out.dropped[0].reason == "time_gap");
}

TEST_CASE("optional moving average smoothing") {
  auto seg = constant_segment("smooth", 10.0, 5);
  seg.v = {0, 3, 0, 3, 0};
  ingest::CleanConfig cfg;
  cfg.smoothing = true;
  auto out = ingest::clean_segments({seg}, cfg);
  REQUIRE(out.segments.size() == 1);
  CHECK(out.segments[0].v[0] == doctest::Approx(1.5));
  CHECK(out.segments[0].v[1] == doctest::Approx(1.0));
  CHECK(out.segments[0].v[2] == doctest::Approx(2.0));
}

TEST_CASE("clean is idempotent and shrinks or preserves the count") {
  std::mt19937_64 gen(5);
  std::vector<TrajectorySegment> in;
  for (int i = 0; i < 200; ++i) {
    auto s = oracle::random_segment(gen, 2, 80);
    s.id = "r" + std::to_string(i);
    if (i % 7 == 0) {
      for (auto& v : s.v) v = -std::abs(v);
    }
    if (i % 5 == 0) {
      s.a[0] = 99.0;
    }
    in.push_back(s);
  }
  auto once = ingest::clean_segments(in);
  auto twice = ingest::clean_segments(once.segments);
  CHECK(once.segments.size() <= in.size());
  REQUIRE(twice.segments.size() == once.segments.size());
  CHECK(twice.dropped.empty());
  for (std::size_t i = 0; i < once.segments.size(); ++i) {
    CHECK(once.segments[i].v == twice.segments[i].v);
    CHECK(once.segments[i].a == twice.segments[i].a);
    CHECK(once.segments[i].j == twice.segments[i].j);
    CHECK_NOTHROW(ingest::validate_segment(once.segments[i]));
  }
}
