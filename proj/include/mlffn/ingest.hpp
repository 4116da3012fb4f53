#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mlffn {

enum class StyleLabel : std::uint8_t {
  Aggressive = 0,
  Assertive = 1,
  Conservative = 2,
  Moderate = 3,
};

inline constexpr int kNumStyles = 4;
inline constexpr std::array<StyleLabel, kNumStyles> kAllStyles = {
    StyleLabel::Aggressive, StyleLabel::Assertive, StyleLabel::Conservative,
    StyleLabel::Moderate};

std::string_view style_name(StyleLabel label);
// Case-insensitive; nullopt for anything outside the four names.
std::optional<StyleLabel> parse_style(std::string_view name);

inline int style_code(StyleLabel label) { return static_cast<int>(label); }
StyleLabel style_from_code(int code);

struct TrajectorySegment {
  std::string id;
  std::vector<double> t;  // seconds
  std::vector<double> v;  // m/s
  std::vector<double> a;  // m/s^2
  std::vector<double> j;  // m/s^3
  std::optional<StyleLabel> label;

  std::size_t size() const { return t.size(); }
};

}  // namespace mlffn

namespace mlffn::ingest {

inline constexpr double kNominalStep = 0.1;

inline constexpr std::string_view kColTime = "time_s";
inline constexpr std::string_view kColSpeed = "speed_mps";
inline constexpr std::string_view kColAccel = "accel_mps2";
inline constexpr std::string_view kColJerk = "jerk_mps3";
inline constexpr std::string_view kColLabel = "label";

// Forward difference of acceleration over time deltas, last sample repeated.
std::vector<double> derive_jerk(const std::vector<double>& t, const std::vector<double>& a);

// Throws Error{MissingColumn, TooShort, NonMonotonicTime, ParseError, BadLabel}
// or NonFiniteValueError (row = zero-based data row).
TrajectorySegment parse_segment_text(std::string_view csv_text, std::string id);
TrajectorySegment parse_segment(const std::filesystem::path& path);

// Shortest round-trip decimal text; parse_segment_text(serialize_segment(s)) == s.
std::string serialize_segment(const TrajectorySegment& segment);
void write_segment(const TrajectorySegment& segment, const std::filesystem::path& path);

// Throws when a segment breaks the length/ordering/finiteness invariants.
void validate_segment(const TrajectorySegment& segment);

struct CleanConfig {
  double max_speed = 60.0;
  double max_accel = 15.0;
  double max_jerk = 60.0;
  bool smoothing = false;
  int smoothing_window = 3;
  // Segments with any time gap above gap_factor * median step are dropped.
  double gap_factor = 2.0;
};

struct DropRecord {
  std::string id;
  std::string reason;
};

struct CleanResult {
  std::vector<TrajectorySegment> segments;
  std::vector<DropRecord> dropped;
  std::size_t input_count = 0;
};

CleanResult clean_segments(std::vector<TrajectorySegment> segments, const CleanConfig& config = {});

// JSON document listing input/output counts and every dropped segment.
std::string drop_report_json(const CleanResult& result);

std::vector<double> moving_average(const std::vector<double>& x, int window);

}  // namespace mlffn::ingest
