#include "mlffn/features.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "mlffn/error.hpp"
#include "mlffn/util.hpp"

namespace mlffn::features {

namespace {

bool is_constant(std::span<const double> x) {
  return std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>()) == x.end();
}

double mean_of(std::span<const double> x) {
  double sum = 0.0;
  for (double v : x) {
    sum += v;
  }
  return sum / static_cast<double>(x.size());
}

void require_length(std::span<const double> x, std::size_t min_len, const char* what) {
  if (x.size() < min_len) {
    throw Error(ErrorCode::TooShort, std::string(what) + " needs at least " +
                                         std::to_string(min_len) + " samples, got " +
                                         std::to_string(x.size()));
  }
}

void require_equal(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::LengthMismatch,
                std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

double mean_abs_step(std::span<const double> x) {
  double sum = 0.0;
  for (std::size_t t = 1; t < x.size(); ++t) {
    sum += std::abs(x[t] - x[t - 1]);
  }
  return sum / static_cast<double>(x.size() - 1);
}

std::vector<double> rolling_mean(const std::vector<double>& x, std::size_t w) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t lo = i + 1 >= w ? i + 1 - w : 0;
    double sum = 0.0;
    for (std::size_t k = lo; k <= i; ++k) {
      sum += x[k];
    }
    out[i] = sum / static_cast<double>(i - lo + 1);
  }
  return out;
}

std::vector<double> rolling_std(const std::vector<double>& x, std::size_t w) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t lo = i + 1 >= w ? i + 1 - w : 0;
    const std::span<const double> window(x.data() + lo, i - lo + 1);
    if (is_constant(window)) {
      out[i] = 0.0;
      continue;
    }
    const double mu = mean_of(window);
    double ss = 0.0;
    for (double v : window) {
      ss += (v - mu) * (v - mu);
    }
    out[i] = std::sqrt(ss / static_cast<double>(window.size()));
  }
  return out;
}

template <typename F>
std::vector<double> map_series(const std::vector<double>& x, F f) {
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), f);
  return out;
}

using Accessor = const std::vector<double>& (*)(const TrajectorySegment&);

std::vector<SignalDef> make_derived() {
  const std::pair<const char*, Accessor> bases[] = {
      {"speed", [](const TrajectorySegment& s) -> const std::vector<double>& { return s.v; }},
      {"acceleration", [](const TrajectorySegment& s) -> const std::vector<double>& { return s.a; }},
      {"jerk", [](const TrajectorySegment& s) -> const std::vector<double>& { return s.j; }},
  };
  std::vector<SignalDef> defs;
  for (const auto& [base, get] : bases) {
    const std::string b = base;
    defs.push_back({b + "_abs", [get](const TrajectorySegment& s) {
                      return map_series(get(s), [](double v) { return std::abs(v); });
                    }});
    defs.push_back({b + "_pos", [get](const TrajectorySegment& s) {
                      return map_series(get(s), [](double v) { return std::max(v, 0.0); });
                    }});
    defs.push_back({b + "_neg", [get](const TrajectorySegment& s) {
                      return map_series(get(s), [](double v) { return std::min(v, 0.0); });
                    }});
    for (std::size_t w : {5, 11, 21}) {
      defs.push_back({b + "_rollmean" + std::to_string(w),
                      [get, w](const TrajectorySegment& s) { return rolling_mean(get(s), w); }});
    }
    for (std::size_t w : {5, 11, 21}) {
      defs.push_back({b + "_rollstd" + std::to_string(w),
                      [get, w](const TrajectorySegment& s) { return rolling_std(get(s), w); }});
    }
    defs.push_back({b + "_diff", [get](const TrajectorySegment& s) {
                      const auto& x = get(s);
                      std::vector<double> d(x.size(), 0.0);
                      for (std::size_t i = 0; i + 1 < x.size(); ++i) {
                        d[i] = x[i + 1] - x[i];
                      }
                      if (d.size() >= 2) {
                        d.back() = d[d.size() - 2];
                      }
                      return d;
                    }});
    defs.push_back({b + "_sq", [get](const TrajectorySegment& s) {
                      return map_series(get(s), [](double v) { return v * v; });
                    }});
  }
  return defs;
}

}  // namespace

std::optional<double> FeatureVector::get(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) {
      return values[i];
    }
  }
  return std::nullopt;
}

double percentile_sorted(std::span<const double> sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

StatFeatures stat_features(std::span<const double> signal) {
  require_length(signal, 2, "stat_features");
  std::vector<double> sorted(signal.begin(), signal.end());
  std::sort(sorted.begin(), sorted.end());

  StatFeatures f;
  f.min = sorted.front();
  f.max = sorted.back();
  f.median = percentile_sorted(sorted, 0.5);
  f.q25 = percentile_sorted(sorted, 0.25);
  f.q75 = percentile_sorted(sorted, 0.75);
  if (f.min == f.max) {
    f.mean = f.min;
    return f;
  }
  f.mean = mean_of(signal);
  double m2 = 0.0;
  double m3 = 0.0;
  double m4 = 0.0;
  for (double x : signal) {
    const double d = x - f.mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  const auto n = static_cast<double>(signal.size());
  m2 /= n;
  m3 /= n;
  m4 /= n;
  f.std = std::sqrt(m2);
  if (m2 > 0.0) {
    f.skewness = m3 / std::pow(m2, 1.5);
    f.kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return f;
}

BehaviorFeatures behavior_features(std::span<const double> v, std::span<const double> a,
                                   std::span<const double> j, double tau) {
  return behavior_features(v, a, j, Thresholds::uniform(tau));
}

BehaviorFeatures behavior_features(std::span<const double> v, std::span<const double> a,
                                   std::span<const double> j, const Thresholds& tau) {
  require_equal(v.size(), a.size(), "behavior_features speed/accel");
  require_equal(a.size(), j.size(), "behavior_features accel/jerk");
  require_length(a, 2, "behavior_features");
  if (!(tau.accel > 0.0 && tau.brake > 0.0 && tau.turn > 0.0)) {
    throw Error(ErrorCode::ConfigError, "behavior thresholds must be positive");
  }
  BehaviorFeatures f;
  f.accel_change_rate = mean_abs_step(a);
  f.speed_change_rate = mean_abs_step(v);
  for (std::size_t t = 0; t < a.size(); ++t) {
    f.num_hard_accel += a[t] > tau.accel ? 1 : 0;
    f.num_hard_brake += a[t] < -tau.brake ? 1 : 0;
    f.num_hard_turn += std::abs(j[t]) > tau.turn ? 1 : 0;
  }
  return f;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require_equal(x.size(), y.size(), "pearson");
  if (x.empty() || is_constant(x) || is_constant(y)) {
    return 0.0;
  }
  const double mx = mean_of(x);
  const double my = mean_of(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  const double denom = std::sqrt(sxx * syy);
  if (!(denom > 0.0)) {
    return 0.0;
  }
  return std::clamp(sxy / denom, -1.0, 1.0);
}

double lag1_autocorrelation(std::span<const double> x) {
  require_length(x, 3, "lag1_autocorrelation");
  return pearson(x.first(x.size() - 1), x.subspan(1));
}

DynamicFeatures dynamic_features(std::span<const double> v, std::span<const double> a,
                                 std::span<const double> j) {
  require_equal(v.size(), a.size(), "dynamic_features speed/accel");
  require_equal(a.size(), j.size(), "dynamic_features accel/jerk");
  require_length(v, 3, "dynamic_features");
  return {pearson(v, a), pearson(a, j), lag1_autocorrelation(v), lag1_autocorrelation(a)};
}

const std::vector<SignalDef>& base_signals() {
  static const std::vector<SignalDef> defs = {
      {"speed", [](const TrajectorySegment& s) { return s.v; }},
      {"acceleration", [](const TrajectorySegment& s) { return s.a; }},
      {"jerk", [](const TrajectorySegment& s) { return s.j; }},
  };
  return defs;
}

const std::vector<SignalDef>& derived_signals() {
  static const std::vector<SignalDef> defs = make_derived();
  return defs;
}

const SignalDef& find_signal(std::string_view name) {
  for (const auto* list : {&base_signals(), &derived_signals()}) {
    for (const auto& def : *list) {
      if (def.name == name) {
        return def;
      }
    }
  }
  throw Error(ErrorCode::UnknownSignal, std::string(name));
}

std::vector<std::string> FeatureConfig::signal_names() const {
  std::vector<std::string> names;
  for (const auto& def : base_signals()) {
    names.push_back(def.name);
  }
  if (extra_signals.size() == 1 && extra_signals.front() == "all") {
    for (const auto& def : derived_signals()) {
      names.push_back(def.name);
    }
    return names;
  }
  std::set<std::string> seen(names.begin(), names.end());
  for (const auto& extra : extra_signals) {
    find_signal(extra);
    if (!seen.insert(extra).second) {
      throw Error(ErrorCode::ConfigError, "duplicate signal '" + extra + "'");
    }
    names.push_back(extra);
  }
  return names;
}

std::vector<std::string> feature_names(const FeatureConfig& config) {
  std::vector<std::string> names;
  for (const auto& signal : config.signal_names()) {
    for (auto suffix : kStatSuffixes) {
      names.push_back(signal + "_" + std::string(suffix));
    }
  }
  for (auto n : kBehaviorNames) {
    names.emplace_back(n);
  }
  for (auto n : kDynamicNames) {
    names.emplace_back(n);
  }
  return names;
}

FeatureVector assemble(const TrajectorySegment& segment, const FeatureConfig& config) {
  FeatureVector fv;
  fv.id = segment.id;
  fv.label = segment.label;
  fv.names = feature_names(config);
  const auto signals = config.signal_names();
  fv.n_signals = signals.size();
  fv.values.reserve(feature_dim(fv.n_signals));
  for (const auto& name : signals) {
    const auto series = find_signal(name).compute(segment);
    for (double value : stat_features(series).as_array()) {
      fv.values.push_back(value);
    }
  }
  const auto b = behavior_features(segment.v, segment.a, segment.j, config.tau);
  fv.values.insert(fv.values.end(),
                   {b.accel_change_rate, static_cast<double>(b.num_hard_accel),
                    static_cast<double>(b.num_hard_brake), static_cast<double>(b.num_hard_turn),
                    b.speed_change_rate});
  const auto d = dynamic_features(segment.v, segment.a, segment.j);
  fv.values.insert(fv.values.end(),
                   {d.speed_accel_corr, d.accel_jerk_corr, d.speed_autocorr, d.accel_autocorr});
  return fv;
}

NormStats fit_norm(std::span<const FeatureVector> train) {
  if (train.empty()) {
    throw Error(ErrorCode::EmptyTrainingSet, "fit_norm needs at least one vector");
  }
  const auto dim = train.front().dim();
  for (const auto& fv : train) {
    if (fv.dim() != dim) {
      throw Error(ErrorCode::DimensionMismatch,
                  "expected " + std::to_string(dim) + " features, got " + std::to_string(fv.dim()));
    }
  }
  NormStats stats;
  stats.names = train.front().names;
  stats.names.resize(dim);
  stats.mean.assign(dim, 0.0);
  stats.std.assign(dim, 0.0);
  std::vector<double> column(train.size());
  for (std::size_t k = 0; k < dim; ++k) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      column[i] = train[i].values[k];
    }
    if (is_constant(column)) {
      stats.mean[k] = column.front();
      continue;
    }
    const double mu = mean_of(column);
    double ss = 0.0;
    for (double v : column) {
      ss += (v - mu) * (v - mu);
    }
    stats.mean[k] = mu;
    stats.std[k] = std::sqrt(ss / static_cast<double>(column.size()));
  }
  return stats;
}

std::vector<double> z_scores(std::span<const double> values, const NormStats& stats) {
  if (values.size() != stats.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "vector has " + std::to_string(values.size()) +
                                                  " features, stats have " +
                                                  std::to_string(stats.dim()));
  }
  std::vector<double> z(values.size());
  for (std::size_t k = 0; k < values.size(); ++k) {
    z[k] = stats.std[k] > 0.0 ? (values[k] - stats.mean[k]) / stats.std[k] : 0.0;
  }
  return z;
}

FeatureVector apply_norm(const FeatureVector& fv, const NormStats& stats) {
  FeatureVector out = fv;
  out.values = z_scores(fv.values, stats);
  return out;
}

std::string serialize_norm_stats(const NormStats& stats) {
  std::string out = "# mlffn norm stats v1\n";
  out += "dim " + std::to_string(stats.dim()) + "\n";
  for (std::size_t k = 0; k < stats.dim(); ++k) {
    const std::string name = k < stats.names.size() ? stats.names[k] : "f" + std::to_string(k);
    out += name + " " + util::format_double(stats.mean[k]) + " " +
           util::format_double(stats.std[k]) + "\n";
  }
  return out;
}

NormStats parse_norm_stats(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t dim = 0;
  bool have_dim = false;
  NormStats stats;
  while (std::getline(in, line)) {
    line = util::trim(line);
    if (line.empty() || line.front() == '#') {
      continue;
    }
    std::istringstream fields(line);
    std::string name;
    std::string mean_text;
    std::string std_text;
    fields >> name;
    if (!have_dim) {
      if (name != "dim" || !(fields >> dim)) {
        throw Error(ErrorCode::ParseError, "norm stats: missing dim line");
      }
      have_dim = true;
      continue;
    }
    fields >> mean_text >> std_text;
    auto mu = util::parse_double(mean_text);
    auto sd = util::parse_double(std_text);
    if (!mu || !sd || *sd < 0.0) {
      throw Error(ErrorCode::ParseError, "norm stats: bad line '" + line + "'");
    }
    stats.names.push_back(name);
    stats.mean.push_back(*mu);
    stats.std.push_back(*sd);
  }
  if (!have_dim || stats.dim() != dim) {
    throw Error(ErrorCode::ParseError, "norm stats: expected " + std::to_string(dim) + " entries");
  }
  return stats;
}

void save_norm_stats(const NormStats& stats, const std::filesystem::path& path) {
  util::write_file_atomic(path, serialize_norm_stats(stats));
}

NormStats load_norm_stats(const std::filesystem::path& path) {
  return parse_norm_stats(util::read_file(path));
}

std::string feature_matrix_csv(std::span<const FeatureVector> rows) {
  std::string out;
  util::CsvWriter w(out);
  if (rows.empty()) {
    w.row({"id", "label"});
    return out;
  }
  std::vector<std::string> header = {"id", "label"};
  header.insert(header.end(), rows.front().names.begin(), rows.front().names.end());
  w.row(header);
  for (const auto& fv : rows) {
    if (fv.names != rows.front().names) {
      throw Error(ErrorCode::DimensionMismatch, "row '" + fv.id + "' has different feature names");
    }
    std::vector<std::string> cells = {fv.id,
                                      fv.label ? std::string(style_name(*fv.label)) : std::string()};
    for (double v : fv.values) {
      cells.push_back(util::format_double(v));
    }
    w.row(cells);
  }
  return out;
}

std::vector<FeatureVector> parse_feature_matrix(std::string_view csv_text) {
  auto table = util::parse_csv(csv_text);
  auto c_id = table.column("id");
  auto c_label = table.column("label");
  if (!c_id) {
    throw Error(ErrorCode::MissingColumn, "'id' in feature matrix");
  }
  std::vector<std::size_t> feature_cols;
  std::vector<std::string> names;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c != *c_id && (!c_label || c != *c_label)) {
      feature_cols.push_back(c);
      names.push_back(table.header[c]);
    }
  }
  // N is recovered from D = 9N + 9 when it divides evenly.
  const std::size_t n_signals =
      names.size() >= 9 && (names.size() - 9) % 9 == 0 ? (names.size() - 9) / 9 : 0;
  std::vector<FeatureVector> rows;
  rows.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& cells = table.rows[r];
    if (cells.size() != table.header.size()) {
      throw Error(ErrorCode::ParseError, "feature matrix row " + std::to_string(r) + " has " +
                                             std::to_string(cells.size()) + " cells");
    }
    FeatureVector fv;
    fv.id = cells[*c_id];
    if (c_label && !util::trim(cells[*c_label]).empty()) {
      fv.label = parse_style(cells[*c_label]);
      if (!fv.label) {
        throw Error(ErrorCode::BadLabel, "'" + cells[*c_label] + "'");
      }
    }
    fv.names = names;
    fv.n_signals = n_signals;
    fv.values.reserve(feature_cols.size());
    for (auto c : feature_cols) {
      auto v = util::parse_double(cells[c]);
      if (!v) {
        throw Error(ErrorCode::ParseError, "feature matrix row " + std::to_string(r) + " column '" +
                                               table.header[c] + "'");
      }
      if (!std::isfinite(*v)) {
        throw NonFiniteValueError(r, table.header[c]);
      }
      fv.values.push_back(*v);
    }
    rows.push_back(std::move(fv));
  }
  return rows;
}

std::vector<FeatureVector> load_feature_matrix(const std::filesystem::path& path) {
  return parse_feature_matrix(util::read_file(path));
}

}  // namespace mlffn::features
