#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlffn/ingest.hpp"

namespace mlffn::features {

inline constexpr double kDefaultTau = 2.0;
inline constexpr std::size_t kStatsPerSignal = 9;
inline constexpr std::size_t kBehaviorCount = 5;
inline constexpr std::size_t kDynamicCount = 4;

// D = 9N + 5 + 4
constexpr std::size_t feature_dim(std::size_t n_signals) {
  return kStatsPerSignal * n_signals + kBehaviorCount + kDynamicCount;
}

inline constexpr std::array<std::string_view, kStatsPerSignal> kStatSuffixes = {
    "mean", "std", "max", "min", "median", "q25", "q75", "kurtosis", "skewness"};
inline constexpr std::array<std::string_view, kBehaviorCount> kBehaviorNames = {
    "acceleration_change_rate", "num_hard_accelerations", "num_hard_brakes",
    "num_hard_turns", "speed_change_rate"};
inline constexpr std::array<std::string_view, kDynamicCount> kDynamicNames = {
    "speed_acceleration_correlation", "acceleration_jerk_correlation",
    "speed_autocorrelation", "acceleration_autocorrelation"};

struct StatFeatures {
  double mean = 0.0;
  double std = 0.0;  // population
  double max = 0.0;
  double min = 0.0;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  double kurtosis = 0.0;  // excess, m4/m2^2 - 3
  double skewness = 0.0;  // g1 = m3/m2^1.5

  std::array<double, kStatsPerSignal> as_array() const {
    return {mean, std, max, min, median, q25, q75, kurtosis, skewness};
  }
};

struct BehaviorFeatures {
  double accel_change_rate = 0.0;
  std::size_t num_hard_accel = 0;
  std::size_t num_hard_brake = 0;
  std::size_t num_hard_turn = 0;  // counts |jerk| > tau
  double speed_change_rate = 0.0;
};

struct DynamicFeatures {
  double speed_accel_corr = 0.0;
  double accel_jerk_corr = 0.0;
  double speed_autocorr = 0.0;
  double accel_autocorr = 0.0;
};

// One shared tau by default; each indicator may be overridden.
struct Thresholds {
  double accel = kDefaultTau;
  double brake = kDefaultTau;
  double turn = kDefaultTau;

  static Thresholds uniform(double tau) { return {tau, tau, tau}; }
};

struct FeatureVector {
  std::string id;
  std::optional<StyleLabel> label;
  std::vector<std::string> names;
  std::vector<double> values;
  std::size_t n_signals = 0;

  std::size_t dim() const { return values.size(); }
  std::optional<double> get(std::string_view name) const;
};

struct NormStats {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t dim() const { return mean.size(); }
};

// Linear interpolation between order statistics of an ascending series.
double percentile_sorted(std::span<const double> sorted, double p);

StatFeatures stat_features(std::span<const double> signal);
BehaviorFeatures behavior_features(std::span<const double> v, std::span<const double> a,
                                   std::span<const double> j, double tau);
BehaviorFeatures behavior_features(std::span<const double> v, std::span<const double> a,
                                   std::span<const double> j, const Thresholds& tau);

// Pearson correlation; 0 when either operand has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);
double lag1_autocorrelation(std::span<const double> x);
DynamicFeatures dynamic_features(std::span<const double> v, std::span<const double> a,
                                 std::span<const double> j);

using SignalFn = std::function<std::vector<double>(const TrajectorySegment&)>;

struct SignalDef {
  std::string name;
  SignalFn compute;
};

// speed, acceleration, jerk
const std::vector<SignalDef>& base_signals();
// 33 derived signals: absolute value, positive and negative parts, trailing
// rolling means and standard deviations (windows 5, 11, 21), first difference,
// and square of each base signal.
const std::vector<SignalDef>& derived_signals();
const SignalDef& find_signal(std::string_view name);

struct FeatureConfig {
  Thresholds tau;
  // Derived signal names; the single entry "all" selects the full registry.
  std::vector<std::string> extra_signals;

  std::vector<std::string> signal_names() const;
  std::size_t n_signals() const { return signal_names().size(); }
};

std::vector<std::string> feature_names(const FeatureConfig& config);
FeatureVector assemble(const TrajectorySegment& segment, const FeatureConfig& config = {});

NormStats fit_norm(std::span<const FeatureVector> train);
FeatureVector apply_norm(const FeatureVector& fv, const NormStats& stats);
std::vector<double> z_scores(std::span<const double> values, const NormStats& stats);

std::string serialize_norm_stats(const NormStats& stats);
NormStats parse_norm_stats(std::string_view text);
void save_norm_stats(const NormStats& stats, const std::filesystem::path& path);
NormStats load_norm_stats(const std::filesystem::path& path);

// Header: id, label, then the feature names.
std::string feature_matrix_csv(std::span<const FeatureVector> rows);
std::vector<FeatureVector> parse_feature_matrix(std::string_view csv_text);
std::vector<FeatureVector> load_feature_matrix(const std::filesystem::path& path);

}  // namespace mlffn::features
