#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mlffn/features.hpp"
#include "mlffn/ingest.hpp"
#include "mlffn/model.hpp"

namespace mlffn::eval {

// K x K counts, rows = truth, columns = prediction.
struct ConfusionCounts {
  std::size_t k = 0;
  std::vector<std::size_t> counts;

  std::size_t at(std::size_t truth, std::size_t pred) const { return counts[truth * k + pred]; }
  std::size_t total() const;
  std::size_t tp(std::size_t c) const { return at(c, c); }
  std::size_t fp(std::size_t c) const;
  std::size_t fn(std::size_t c) const;
  std::size_t tn(std::size_t c) const { return total() - tp(c) - fp(c) - fn(c); }
  std::size_t support(std::size_t c) const { return tp(c) + fn(c); }
};

ConfusionCounts confusion(std::span<const int> truth, std::span<const int> pred, std::size_t k);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct MetricsReport {
  // Micro-averaged; for single-label data precision = recall = f1 = accuracy.
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  ConfusionCounts confusion;
  std::string variant;
  std::uint64_t seed = 0;
  std::string fingerprint;
};

// Ratios with a zero denominator are reported as 0.
MetricsReport compute_metrics(std::span<const int> pred, std::span<const int> truth,
                              std::size_t k = kNumStyles);
std::string metrics_json(const MetricsReport& report);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

inline constexpr std::array<double, 3> kDefaultRatios = {0.8, 0.1, 0.1};

// Per-class largest-remainder allocation over a seeded shuffle; ties in the
// fractional parts rotate with the class index so no split is favoured.
Split stratified_split(std::span<const int> labels, std::array<double, 3> ratios, std::uint64_t seed);
std::string split_json(const Split& split);

struct SynthStyleSpec {
  StyleLabel label = StyleLabel::Moderate;
  double speed_mean = 15.0;    // m/s
  double speed_std = 2.0;      // m/s
  double accel_rate = 1.0;     // hard-acceleration pulses per 100 steps
  double brake_rate = 1.0;     // hard-brake pulses per 100 steps
  double jerk_noise = 0.5;     // acceleration noise scale
  double smoothing = 0.5;      // AR(1) coefficient on acceleration, in [0, 1)
};

std::vector<SynthStyleSpec> default_style_specs();

struct SynthConfig {
  std::vector<SynthStyleSpec> specs = default_style_specs();
  std::size_t n_per_class = 250;
  std::size_t length = 200;
  double dt = 0.1;
  double tau = features::kDefaultTau;
  std::uint64_t seed = 0;
};

// Labeled segments, class-interleaved, ids "synth_<label>_<index>".
std::vector<TrajectorySegment> gen_synthetic(const SynthConfig& config);

struct CorrelationMatrix {
  std::vector<std::string> names;
  std::vector<double> values;  // row-major D x D

  std::size_t dim() const { return names.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * names.size() + j]; }
};

CorrelationMatrix correlation_matrix(std::span<const features::FeatureVector> features);
std::string correlation_csv(const CorrelationMatrix& m);

struct KdeCurve {
  StyleLabel label;
  std::string feature;
  std::vector<double> samples;
  double bandwidth = 0.0;
  bool fallback_bandwidth = false;
  std::vector<double> grid;     // ascending, 200 points
  std::vector<double> density;
};

struct DistributionReport {
  std::vector<KdeCurve> curves;
  std::vector<std::string> warnings;
};

inline constexpr std::size_t kKdeGridPoints = 200;

// Silverman bandwidth 0.9 * min(std, IQR / 1.34) * n^(-1/5).
double silverman_bandwidth(std::span<const double> values);

DistributionReport distribution_report(std::span<const features::FeatureVector> features,
                                       std::span<const std::string> feature_names);
std::string distribution_samples_csv(const DistributionReport& report);
std::string distribution_kde_csv(const DistributionReport& report);

struct DatasetSplits {
  std::vector<model::Sample> train;
  std::vector<model::Sample> val;
  std::vector<model::Sample> test;
};

struct AblationRow {
  model::Variant variant;
  MetricsReport metrics;
  std::vector<model::EpochRecord> log;
};

using AblationProgress = std::function<void(model::Variant, const model::EpochRecord&)>;

// Trains every variant on the same splits with the same seed.
std::vector<AblationRow> run_ablation(const model::ModelConfig& base, const DatasetSplits& data,
                                      const AblationProgress& progress = {});
MetricsReport evaluate_model(model::FusionNet& net, std::span<const model::Sample> samples);

// Columns Model, Acc., Pre., Rec., F1 (micro), four decimals.
std::string ablation_csv(std::span<const AblationRow> rows);
// Macro and support-weighted precision/recall/F1 per variant.
std::string ablation_macro_csv(std::span<const AblationRow> rows);

}  // namespace mlffn::eval
