#include "mlffn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "mlffn/error.hpp"
#include "mlffn/util.hpp"

namespace mlffn::eval {

using json = nlohmann::ordered_json;

// ------------------------------------------------------------------ metrics

std::size_t ConfusionCounts::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::size_t ConfusionCounts::fp(std::size_t c) const {
  std::size_t s = 0;
  for (std::size_t t = 0; t < k; ++t) {
    if (t != c) s += at(t, c);
  }
  return s;
}

std::size_t ConfusionCounts::fn(std::size_t c) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < k; ++p) {
    if (p != c) s += at(c, p);
  }
  return s;
}

ConfusionCounts confusion(std::span<const int> truth, std::span<const int> pred, std::size_t k) {
  if (truth.size() != pred.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(truth.size()) + " labels vs " +
                                               std::to_string(pred.size()) + " predictions");
  }
  ConfusionCounts cm{k, std::vector<std::size_t>(k * k, 0)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || pred[i] < 0 || static_cast<std::size_t>(truth[i]) >= k ||
        static_cast<std::size_t>(pred[i]) >= k) {
      throw Error(ErrorCode::BadLabel, "label outside [0, " + std::to_string(k) + ") at " +
                                           std::to_string(i));
    }
    cm.counts[static_cast<std::size_t>(truth[i]) * k + static_cast<std::size_t>(pred[i])]++;
  }
  return cm;
}

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport compute_metrics(std::span<const int> pred, std::span<const int> truth, std::size_t k) {
  if (pred.size() != truth.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(pred.size()) + " predictions vs " +
                                               std::to_string(truth.size()) + " labels");
  }
  if (pred.empty()) throw Error(ErrorCode::Empty, "no predictions");
  MetricsReport r;
  r.confusion = confusion(truth, pred, k);
  const auto& cm = r.confusion;
  const auto n = cm.total();
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t c = 0; c < k; ++c) {
    tp += cm.tp(c);
    fp += cm.fp(c);
    fn += cm.fn(c);
    ClassMetrics m;
    m.precision = ratio(cm.tp(c), cm.tp(c) + cm.fp(c));
    m.recall = ratio(cm.tp(c), cm.tp(c) + cm.fn(c));
    // 2PR / (P + R) written over counts
    m.f1 = ratio(2 * cm.tp(c), 2 * cm.tp(c) + cm.fp(c) + cm.fn(c));
    m.support = cm.support(c);
    r.per_class.push_back(m);
  }
  r.accuracy = ratio(tp, n);
  r.precision = ratio(tp, tp + fp);
  r.recall = ratio(tp, tp + fn);
  r.f1 = ratio(2 * tp, 2 * tp + fp + fn);
  for (const auto& m : r.per_class) {
    r.macro_precision += m.precision / static_cast<double>(k);
    r.macro_recall += m.recall / static_cast<double>(k);
    r.macro_f1 += m.f1 / static_cast<double>(k);
    const double w = ratio(m.support, n);
    r.weighted_precision += w * m.precision;
    r.weighted_recall += w * m.recall;
    r.weighted_f1 += w * m.f1;
  }
  return r;
}

std::string metrics_json(const MetricsReport& r) {
  json j;
  j["variant"] = r.variant;
  j["seed"] = r.seed;
  j["fingerprint"] = r.fingerprint;
  j["accuracy"] = r.accuracy;
  j["micro"] = {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
  j["macro"] = {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}};
  j["weighted"] = {{"precision", r.weighted_precision},
                   {"recall", r.weighted_recall},
                   {"f1", r.weighted_f1}};
  json classes = json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    json e;
    e["class"] = c < kAllStyles.size() && r.per_class.size() == kAllStyles.size()
                     ? std::string(style_name(kAllStyles[c]))
                     : std::to_string(c);
    e["precision"] = m.precision;
    e["recall"] = m.recall;
    e["f1"] = m.f1;
    e["support"] = m.support;
    classes.push_back(e);
  }
  j["per_class"] = classes;
  json rows = json::array();
  for (std::size_t t = 0; t < r.confusion.k; ++t) {
    json row = json::array();
    for (std::size_t p = 0; p < r.confusion.k; ++p) row.push_back(r.confusion.at(t, p));
    rows.push_back(row);
  }
  j["confusion"] = rows;
  return j.dump(2) + "\n";
}

// ------------------------------------------------------------------ split

Split stratified_split(std::span<const int> labels, std::array<double, 3> ratios, std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw Error(ErrorCode::ConfigError, "split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::ConfigError, "split ratios must sum to 1");
  }
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw Error(ErrorCode::BadLabel, "unlabeled sample in split");
    max_label = std::max(max_label, l);
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  const auto root = nn::Rng(seed).fork("split");
  Split out;
  std::array<std::vector<std::size_t>*, 3> dest = {&out.train, &out.val, &out.test};
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < 3) {
      throw Error(ErrorCode::ClassTooSmall, "class " + std::to_string(c) + " has " +
                                                std::to_string(idx.size()) + " samples");
    }
    auto rng = root.fork("class" + std::to_string(c));
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::swap(idx[i - 1], idx[rng.below(i)]);
    }
    const double n = static_cast<double>(idx.size());
    std::array<std::size_t, 3> count{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double quota = n * ratios[s];
      count[s] = static_cast<std::size_t>(std::floor(quota));
      frac[s] = quota - static_cast<double>(count[s]);
      assigned += count[s];
    }
    // Hand out the remaining samples by largest fractional part; among equal
    // fractions class c takes the (c mod #tied)-th candidate.
    for (std::size_t round = 0; assigned < idx.size(); ++round) {
      double top = -1.0;
      for (std::size_t s = 0; s < 3; ++s) {
        if (ratios[s] > 0.0) top = std::max(top, frac[s]);
      }
      std::vector<std::size_t> tied;
      for (std::size_t s = 0; s < 3; ++s) {
        if (ratios[s] > 0.0 && frac[s] >= top - 1e-12) tied.push_back(s);
      }
      const auto pick = tied[(c + round) % tied.size()];
      count[pick]++;
      frac[pick] = -1.0;
      assigned++;
    }
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      dest[s]->insert(dest[s]->end(), idx.begin() + static_cast<std::ptrdiff_t>(pos),
                      idx.begin() + static_cast<std::ptrdiff_t>(pos + count[s]));
      pos += count[s];
    }
  }
  for (auto* d : dest) std::sort(d->begin(), d->end());
  return out;
}

std::string split_json(const Split& split) {
  json j;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  return j.dump() + "\n";
}

// ------------------------------------------------------------------ synthetic data

std::vector<SynthStyleSpec> default_style_specs() {
  return {
      {StyleLabel::Aggressive, 22.0, 3.0, 4.0, 4.0, 2.0, 0.3},
      {StyleLabel::Assertive, 18.0, 2.5, 2.0, 1.5, 1.2, 0.5},
      {StyleLabel::Conservative, 10.0, 1.5, 0.2, 0.1, 0.3, 0.85},
      {StyleLabel::Moderate, 14.0, 2.0, 0.8, 0.6, 0.6, 0.7},
  };
}

namespace {

void check_specs(const SynthConfig& cfg) {
  if (cfg.specs.size() != kNumStyles) {
    throw Error(ErrorCode::BadSpec, "expected " + std::to_string(kNumStyles) + " style specs");
  }
  for (std::size_t i = 0; i < cfg.specs.size(); ++i) {
    const auto& s = cfg.specs[i];
    if (!(s.speed_mean > 0.0) || !(s.speed_std >= 0.0) || !(s.accel_rate >= 0.0) ||
        !(s.brake_rate >= 0.0) || !(s.jerk_noise >= 0.0) || !(s.smoothing >= 0.0 && s.smoothing < 1.0)) {
      throw Error(ErrorCode::BadSpec, "invalid spec for " + std::string(style_name(s.label)));
    }
    if (s.accel_rate + s.brake_rate > 100.0) {
      throw Error(ErrorCode::BadSpec, "event rates exceed one per step");
    }
    for (std::size_t j = 0; j < i; ++j) {
      const auto& o = cfg.specs[j];
      if (o.label == s.label) throw Error(ErrorCode::BadSpec, "duplicate style label");
      if (o.speed_mean == s.speed_mean && o.speed_std == s.speed_std && o.accel_rate == s.accel_rate &&
          o.brake_rate == s.brake_rate && o.jerk_noise == s.jerk_noise && o.smoothing == s.smoothing) {
        throw Error(ErrorCode::BadSpec, "style specs must be pairwise distinct");
      }
    }
  }
  if (cfg.length < 50) throw Error(ErrorCode::BadSpec, "segment length must be at least 50");
  if (!(cfg.dt > 0.0)) throw Error(ErrorCode::BadSpec, "dt must be positive");
  if (!(cfg.tau > 0.0)) throw Error(ErrorCode::BadSpec, "tau must be positive");
}

TrajectorySegment synth_segment(const SynthStyleSpec& spec, const SynthConfig& cfg, nn::Rng& rng) {
  constexpr double kReversion = 0.5;  // 1/s
  const auto T = cfg.length;
  const double dt = cfg.dt;
  TrajectorySegment seg;
  seg.label = spec.label;
  seg.t.resize(T);
  seg.v.resize(T);
  seg.a.resize(T);
  seg.j.resize(T);
  const double target = std::max(1.0, spec.speed_mean + spec.speed_std * rng.normal());
  double v = std::max(0.5, target + 0.5 * spec.speed_std * rng.normal());
  double a_prev = 0.0;
  std::size_t pulse_left = 0;
  double pulse = 0.0;
  const double p_accel = spec.accel_rate / 100.0;
  const double p_brake = spec.brake_rate / 100.0;
  for (std::size_t t = 0; t < T; ++t) {
    seg.t[t] = dt * static_cast<double>(t);
    if (pulse_left == 0) {
      const double u = rng.uniform();
      if (u < p_accel + p_brake) {
        const double magnitude = cfg.tau + 0.5 + rng.uniform();
        pulse = u < p_accel ? magnitude : -magnitude;
        pulse_left = 3 + rng.below(4);
      }
    }
    double a;
    if (pulse_left > 0) {
      a = pulse;
      --pulse_left;
    } else {
      const double drive = kReversion * (target - v);
      a = spec.smoothing * a_prev + (1.0 - spec.smoothing) * drive + spec.jerk_noise * dt * rng.normal();
    }
    seg.v[t] = v;
    seg.a[t] = a;
    v = std::max(0.0, v + a * dt);
    a_prev = a;
  }
  for (std::size_t t = 0; t + 1 < T; ++t) {
    seg.j[t] = (seg.a[t + 1] - seg.a[t]) / dt;
  }
  seg.j[T - 1] = seg.j[T - 2];
  return seg;
}

std::string padded(std::size_t i, std::size_t width) {
  auto s = std::to_string(i);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

}  // namespace

std::vector<TrajectorySegment> gen_synthetic(const SynthConfig& cfg) {
  check_specs(cfg);
  const auto root = nn::Rng(cfg.seed).fork("synthetic");
  const auto width = std::max<std::size_t>(4, std::to_string(cfg.n_per_class).size());
  std::vector<TrajectorySegment> out;
  out.reserve(cfg.n_per_class * cfg.specs.size());
  for (std::size_t i = 0; i < cfg.n_per_class; ++i) {
    for (const auto& spec : cfg.specs) {
      const auto name = std::string(style_name(spec.label));
      auto rng = root.fork(name + "/" + std::to_string(i));
      auto seg = synth_segment(spec, cfg, rng);
      seg.id = "synth_" + util::to_lower(name) + "_" + padded(i, width);
      out.push_back(std::move(seg));
    }
  }
  return out;
}

// ------------------------------------------------------------------ correlation

CorrelationMatrix correlation_matrix(std::span<const features::FeatureVector> fvs) {
  if (fvs.size() < 2) throw Error(ErrorCode::TooFew, "correlation needs at least 2 vectors");
  const auto d = fvs[0].dim();
  for (const auto& fv : fvs) {
    if (fv.dim() != d) throw Error(ErrorCode::DimensionMismatch, "feature vectors differ in dimension");
  }
  std::vector<std::vector<double>> cols(d, std::vector<double>(fvs.size()));
  for (std::size_t i = 0; i < fvs.size(); ++i) {
    for (std::size_t f = 0; f < d; ++f) cols[f][i] = fvs[i].values[f];
  }
  CorrelationMatrix m;
  m.names = fvs[0].names;
  m.values.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const bool constant = std::all_of(cols[i].begin(), cols[i].end(),
                                      [&](double v) { return v == cols[i][0]; });
    m.values[i * d + i] = constant ? 0.0 : 1.0;
    for (std::size_t j = i + 1; j < d; ++j) {
      const double r = features::pearson(cols[i], cols[j]);
      m.values[i * d + j] = r;
      m.values[j * d + i] = r;
    }
  }
  return m;
}

std::string correlation_csv(const CorrelationMatrix& m) {
  std::string out;
  util::CsvWriter w(out);
  std::vector<std::string> header = {"feature"};
  header.insert(header.end(), m.names.begin(), m.names.end());
  w.row(header);
  for (std::size_t i = 0; i < m.dim(); ++i) {
    std::vector<std::string> row = {m.names[i]};
    for (std::size_t j = 0; j < m.dim(); ++j) row.push_back(util::format_double(m.at(i, j)));
    w.row(row);
  }
  return out;
}

// ------------------------------------------------------------------ distributions

double silverman_bandwidth(std::span<const double> values) {
  const auto n = values.size();
  if (n < 2) return 0.0;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : sorted) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  const double iqr = features::percentile_sorted(sorted, 0.75) - features::percentile_sorted(sorted, 0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

DistributionReport distribution_report(std::span<const features::FeatureVector> fvs,
                                       std::span<const std::string> feature_names) {
  if (fvs.empty()) throw Error(ErrorCode::Empty, "no feature vectors");
  std::vector<std::size_t> cols;
  for (const auto& name : feature_names) {
    auto it = std::find(fvs[0].names.begin(), fvs[0].names.end(), name);
    if (it == fvs[0].names.end()) throw Error(ErrorCode::UnknownFeature, name);
    cols.push_back(static_cast<std::size_t>(it - fvs[0].names.begin()));
  }
  DistributionReport report;
  for (std::size_t f = 0; f < cols.size(); ++f) {
    double lo_all = 0.0, hi_all = 0.0;
    bool first = true;
    for (const auto& fv : fvs) {
      const double v = fv.values[cols[f]];
      lo_all = first ? v : std::min(lo_all, v);
      hi_all = first ? v : std::max(hi_all, v);
      first = false;
    }
    for (auto label : kAllStyles) {
      KdeCurve curve;
      curve.label = label;
      curve.feature = feature_names[f];
      for (const auto& fv : fvs) {
        if (fv.label == label) curve.samples.push_back(fv.values[cols[f]]);
      }
      if (curve.samples.empty()) continue;
      curve.bandwidth = silverman_bandwidth(curve.samples);
      if (!(curve.bandwidth > 0.0)) {
        const double range = hi_all - lo_all;
        curve.bandwidth = range > 0.0 ? 0.1 * range : 0.1 * std::max(1.0, std::abs(lo_all));
        curve.fallback_bandwidth = true;
        report.warnings.push_back("bandwidth fallback for " + curve.feature + " / " +
                                  std::string(style_name(label)) + ": " +
                                  std::to_string(curve.samples.size()) + " sample(s) without spread");
      }
      const auto [mn, mx] = std::minmax_element(curve.samples.begin(), curve.samples.end());
      const double lo = *mn - 4.0 * curve.bandwidth;
      const double hi = *mx + 4.0 * curve.bandwidth;
      const double h = curve.bandwidth;
      const double norm = 1.0 / (static_cast<double>(curve.samples.size()) * h * std::sqrt(2.0 * M_PI));
      for (std::size_t g = 0; g < kKdeGridPoints; ++g) {
        const double x = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(kKdeGridPoints - 1);
        double acc = 0.0;
        for (double s : curve.samples) {
          const double z = (x - s) / h;
          acc += std::exp(-0.5 * z * z);
        }
        curve.grid.push_back(x);
        curve.density.push_back(acc * norm);
      }
      report.curves.push_back(std::move(curve));
    }
  }
  return report;
}

std::string distribution_samples_csv(const DistributionReport& report) {
  std::string out;
  util::CsvWriter w(out);
  w.row({"label", "feature", "value"});
  for (const auto& c : report.curves) {
    for (double v : c.samples) {
      w.row({std::string(style_name(c.label)), c.feature, util::format_double(v)});
    }
  }
  return out;
}

std::string distribution_kde_csv(const DistributionReport& report) {
  std::string out;
  util::CsvWriter w(out);
  w.row({"label", "feature", "bandwidth", "x", "density"});
  for (const auto& c : report.curves) {
    for (std::size_t g = 0; g < c.grid.size(); ++g) {
      w.row({std::string(style_name(c.label)), c.feature, util::format_double(c.bandwidth),
             util::format_double(c.grid[g]), util::format_double(c.density[g])});
    }
  }
  return out;
}

// ------------------------------------------------------------------ ablation

MetricsReport evaluate_model(model::FusionNet& net, std::span<const model::Sample> samples) {
  auto pred = model::predict(net, samples);
  std::vector<int> truth;
  truth.reserve(samples.size());
  for (const auto& s : samples) truth.push_back(s.label);
  auto report = compute_metrics(pred.labels, truth, net.config().num_classes);
  report.variant = std::string(model::variant_key(net.config().variant));
  report.seed = net.config().seed;
  report.fingerprint = util::hex64(model::fingerprint(net.config()));
  return report;
}

std::vector<AblationRow> run_ablation(const model::ModelConfig& base, const DatasetSplits& data,
                                      const AblationProgress& progress) {
  std::vector<AblationRow> rows;
  for (auto v : model::kAllVariants) {
    auto config = model::make_variant(base, v);
    model::EpochCallback cb;
    if (progress) {
      cb = [&](const model::EpochRecord& r) { progress(v, r); };
    }
    auto result = model::train(config, data.train, data.val, cb);
    AblationRow row{v, evaluate_model(result.model, data.test), std::move(result.log)};
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string fixed4(double v) { return util::format_fixed(v, 4); }

}  // namespace

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out;
  util::CsvWriter w(out);
  w.row({"Model", "Acc.", "Pre.", "Rec.", "F1"});
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    w.row({std::string(model::variant_title(r.variant)), fixed4(m.accuracy), fixed4(m.precision),
           fixed4(m.recall), fixed4(m.f1)});
  }
  return out;
}

std::string ablation_macro_csv(std::span<const AblationRow> rows) {
  std::string out;
  util::CsvWriter w(out);
  w.row({"Model", "Acc.", "Macro Pre.", "Macro Rec.", "Macro F1", "Weighted Pre.", "Weighted Rec.",
         "Weighted F1"});
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    w.row({std::string(model::variant_title(r.variant)), fixed4(m.accuracy), fixed4(m.macro_precision),
           fixed4(m.macro_recall), fixed4(m.macro_f1), fixed4(m.weighted_precision),
           fixed4(m.weighted_recall), fixed4(m.weighted_f1)});
  }
  return out;
}

}  // namespace mlffn::eval
