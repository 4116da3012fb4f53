#include "mlffn/ingest.hpp"

#include <algorithm>
#include <cmath>
#include "json.hpp"

#include "mlffn/error.hpp"
#include "mlffn/util.hpp"

namespace mlffn {

std::string_view style_name(StyleLabel label) {
  switch (label) {
    case StyleLabel::Aggressive: return "Aggressive";
    case StyleLabel::Assertive: return "Assertive";
    case StyleLabel::Conservative: return "Conservative";
    case StyleLabel::Moderate: return "Moderate";
  }
  return "Unknown";
}

std::optional<StyleLabel> parse_style(std::string_view name) {
  auto lowered = util::to_lower(util::trim(name));
  for (auto style : kAllStyles) {
    if (lowered == util::to_lower(style_name(style))) {
      return style;
    }
  }
  return std::nullopt;
}

StyleLabel style_from_code(int code) {
  if (code < 0 || code >= kNumStyles) {
    throw Error(ErrorCode::BadLabel, "style code " + std::to_string(code));
  }
  return static_cast<StyleLabel>(code);
}

}  // namespace mlffn

namespace mlffn::ingest {

std::vector<double> derive_jerk(const std::vector<double>& t, const std::vector<double>& a) {
  std::vector<double> j(a.size(), 0.0);
  if (a.size() < 2) {
    return j;
  }
  for (std::size_t i = 0; i + 1 < a.size(); ++i) {
    j[i] = (a[i + 1] - a[i]) / (t[i + 1] - t[i]);
  }
  j.back() = j[j.size() - 2];
  return j;
}

void validate_segment(const TrajectorySegment& s) {
  const auto n = s.t.size();
  if (s.v.size() != n || s.a.size() != n || s.j.size() != n) {
    throw Error(ErrorCode::LengthMismatch, "segment '" + s.id + "' has unequal series lengths");
  }
  if (n < 2) {
    throw Error(ErrorCode::TooShort, "segment '" + s.id + "' has " + std::to_string(n) + " samples");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::pair<const char*, double> cells[] = {
        {kColTime.data(), s.t[i]}, {kColSpeed.data(), s.v[i]},
        {kColAccel.data(), s.a[i]}, {kColJerk.data(), s.j[i]}};
    for (const auto& [name, value] : cells) {
      if (!std::isfinite(value)) {
        throw NonFiniteValueError(i, name);
      }
    }
    if (i > 0 && !(s.t[i] > s.t[i - 1])) {
      throw Error(ErrorCode::NonMonotonicTime,
                  "segment '" + s.id + "' row " + std::to_string(i));
    }
  }
}

TrajectorySegment parse_segment_text(std::string_view csv_text, std::string id) {
  auto table = util::parse_csv(csv_text);
  auto require = [&](std::string_view name) {
    auto col = table.column(name);
    if (!col) {
      throw Error(ErrorCode::MissingColumn, "'" + std::string(name) + "' in segment '" + id + "'");
    }
    return *col;
  };
  const auto c_time = require(kColTime);
  const auto c_speed = require(kColSpeed);
  const auto c_accel = require(kColAccel);
  const auto c_jerk = table.column(kColJerk);
  const auto c_label = table.column(kColLabel);

  TrajectorySegment seg;
  seg.id = std::move(id);
  const auto n = table.rows.size();
  seg.t.reserve(n);
  seg.v.reserve(n);
  seg.a.reserve(n);
  if (c_jerk) {
    seg.j.reserve(n);
  }

  auto cell_value = [&](std::size_t row, std::size_t col) {
    const auto& cells = table.rows[row];
    if (col >= cells.size()) {
      throw Error(ErrorCode::ParseError, "row " + std::to_string(row) + " is missing column '" +
                                             table.header[col] + "'");
    }
    auto parsed = util::parse_double(cells[col]);
    if (!parsed) {
      throw Error(ErrorCode::ParseError, "row " + std::to_string(row) + " column '" +
                                             table.header[col] + "': '" + cells[col] + "'");
    }
    if (!std::isfinite(*parsed)) {
      throw NonFiniteValueError(row, table.header[col]);
    }
    return *parsed;
  };

  for (std::size_t r = 0; r < n; ++r) {
    seg.t.push_back(cell_value(r, c_time));
    seg.v.push_back(cell_value(r, c_speed));
    seg.a.push_back(cell_value(r, c_accel));
    if (c_jerk) {
      seg.j.push_back(cell_value(r, *c_jerk));
    }
    if (c_label && !seg.label && *c_label < table.rows[r].size()) {
      const auto& text = table.rows[r][*c_label];
      if (!util::trim(text).empty()) {
        auto style = parse_style(text);
        if (!style) {
          throw Error(ErrorCode::BadLabel, "'" + text + "' in segment '" + seg.id + "'");
        }
        seg.label = style;
      }
    }
  }
  if (n < 2) {
    throw Error(ErrorCode::TooShort, "segment '" + seg.id + "' has " + std::to_string(n) + " rows");
  }
  for (std::size_t r = 1; r < n; ++r) {
    if (!(seg.t[r] > seg.t[r - 1])) {
      throw Error(ErrorCode::NonMonotonicTime, "segment '" + seg.id + "' row " + std::to_string(r));
    }
  }
  if (!c_jerk) {
    seg.j = derive_jerk(seg.t, seg.a);
  }
  validate_segment(seg);
  return seg;
}

TrajectorySegment parse_segment(const std::filesystem::path& path) {
  return parse_segment_text(util::read_file(path), path.stem().string());
}

std::string serialize_segment(const TrajectorySegment& s) {
  std::string out;
  util::CsvWriter w(out);
  std::vector<std::string> header = {std::string(kColTime), std::string(kColSpeed),
                                     std::string(kColAccel), std::string(kColJerk)};
  if (s.label) {
    header.emplace_back(kColLabel);
  }
  w.row(header);
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::vector<std::string> cells = {util::format_double(s.t[i]), util::format_double(s.v[i]),
                                      util::format_double(s.a[i]), util::format_double(s.j[i])};
    if (s.label) {
      cells.emplace_back(style_name(*s.label));
    }
    w.row(cells);
  }
  return out;
}

void write_segment(const TrajectorySegment& segment, const std::filesystem::path& path) {
  util::write_file_atomic(path, serialize_segment(segment));
}

std::vector<double> moving_average(const std::vector<double>& x, int window) {
  if (window <= 1 || x.empty()) {
    return x;
  }
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const std::ptrdiff_t half = window / 2;
  std::vector<double> out(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto lo = std::max<std::ptrdiff_t>(0, i - half);
    const auto hi = std::min<std::ptrdiff_t>(n - 1, i + half);
    double sum = 0.0;
    for (auto k = lo; k <= hi; ++k) {
      sum += x[k];
    }
    out[i] = sum / static_cast<double>(hi - lo + 1);
  }
  return out;
}

namespace {

double median_step(const std::vector<double>& t) {
  std::vector<double> steps;
  steps.reserve(t.size());
  for (std::size_t i = 1; i < t.size(); ++i) {
    steps.push_back(t[i] - t[i - 1]);
  }
  auto mid = steps.begin() + static_cast<std::ptrdiff_t>(steps.size() / 2);
  std::nth_element(steps.begin(), mid, steps.end());
  return *mid;
}

void clip(std::vector<double>& x, double bound) {
  for (auto& value : x) {
    value = std::clamp(value, -bound, bound);
  }
}

}  // namespace

CleanResult clean_segments(std::vector<TrajectorySegment> segments, const CleanConfig& config) {
  CleanResult result;
  result.input_count = segments.size();
  result.segments.reserve(segments.size());
  for (auto& seg : segments) {
    try {
      validate_segment(seg);
    } catch (const Error& e) {
      result.dropped.push_back({seg.id, std::string(to_string(e.code()))});
      continue;
    }
    if (*std::max_element(seg.v.begin(), seg.v.end()) <= 0.0) {
      result.dropped.push_back({seg.id, "non_positive_speed"});
      continue;
    }
    const double step = median_step(seg.t);
    bool gap = false;
    for (std::size_t i = 1; i < seg.t.size(); ++i) {
      if (seg.t[i] - seg.t[i - 1] > config.gap_factor * step) {
        gap = true;
        break;
      }
    }
    if (gap) {
      result.dropped.push_back({seg.id, "time_gap"});
      continue;
    }
    if (config.smoothing) {
      seg.v = moving_average(seg.v, config.smoothing_window);
      seg.a = moving_average(seg.a, config.smoothing_window);
      seg.j = moving_average(seg.j, config.smoothing_window);
    }
    clip(seg.v, config.max_speed);
    clip(seg.a, config.max_accel);
    clip(seg.j, config.max_jerk);
    result.segments.push_back(std::move(seg));
  }
  return result;
}

std::string drop_report_json(const CleanResult& result) {
  nlohmann::json doc;
  doc["input_count"] = result.input_count;
  doc["output_count"] = result.segments.size();
  doc["dropped_count"] = result.dropped.size();
  auto& list = doc["dropped"] = nlohmann::json::array();
  for (const auto& d : result.dropped) {
    list.push_back({{"id", d.id}, {"reason", d.reason}});
  }
  return doc.dump(2) + "\n";
}

}  // namespace mlffn::ingest
