#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "mlffn/error.hpp"
#include "mlffn/eval.hpp"
#include "mlffn/util.hpp"
#include "oracles.hpp"

using namespace mlffn;
using namespace mlffn::eval;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

features::FeatureVector make_fv(std::vector<std::string> names, std::vector<double> values,
                                std::optional<StyleLabel> label = {}) {
  features::FeatureVector fv;
  fv.names = std::move(names);
  fv.values = std::move(values);
  fv.label = label;
  return fv;
}

}  // namespace

TEST_CASE("hand-counted confusion example") {
  std::vector<int> truth = {0, 0, 1, 1};
  std::vector<int> pred = {0, 1, 1, 1};
  auto m = compute_metrics(pred, truth);
  CHECK(m.accuracy == 0.75);
  CHECK(m.precision == 0.75);
  CHECK(m.recall == 0.75);
  CHECK(m.f1 == 0.75);
  CHECK(m.confusion.at(0, 1) == 1);
  CHECK(m.per_class[0].precision == 1.0);
  CHECK(m.per_class[0].recall == 0.5);
  CHECK(m.per_class[1].precision == doctest::Approx(2.0 / 3.0));
  CHECK(m.per_class[2].support == 0);
  CHECK(m.confusion.tn(0) == 2);

  auto perfect = compute_metrics(truth, truth);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.precision == 1.0);

  CHECK(code_of([] { compute_metrics(std::vector<int>{0}, std::vector<int>{0, 1}); }) ==
        ErrorCode::LengthMismatch);
  CHECK(code_of([] { compute_metrics(std::vector<int>{}, std::vector<int>{}); }) == ErrorCode::Empty);
}

TEST_CASE("micro averages equal accuracy and match a counting oracle on 1,000 random sets") {
  std::mt19937_64 gen(77);
  std::uniform_int_distribution<int> cls(0, 3);
  std::uniform_int_distribution<int> len(1, 200);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = len(gen);
    std::vector<int> truth(n), pred(n);
    for (int i = 0; i < n; ++i) {
      truth[i] = cls(gen);
      pred[i] = gen() % 3 == 0 ? cls(gen) : truth[i];
    }
    auto m = compute_metrics(pred, truth);
    REQUIRE(m.precision == m.accuracy);
    REQUIRE(m.recall == m.accuracy);
    REQUIRE(m.f1 == m.accuracy);
    long correct = 0;
    for (int i = 0; i < n; ++i) correct += pred[i] == truth[i];
    REQUIRE(m.accuracy == static_cast<double>(correct) / n);
    for (int c = 0; c < 4; ++c) {
      long tp = 0, fp = 0, fn = 0;
      for (int i = 0; i < n; ++i) {
        if (pred[i] == c && truth[i] == c) tp++;
        if (pred[i] == c && truth[i] != c) fp++;
        if (pred[i] != c && truth[i] == c) fn++;
      }
      const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
      const double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
      REQUIRE(m.per_class[c].precision == p);
      REQUIRE(m.per_class[c].recall == r);
      const double f1 = p + r == 0.0 ? 0.0 : 2 * p * r / (p + r);
      REQUIRE(std::abs(m.per_class[c].f1 - f1) <= 1e-15);
    }
    REQUIRE(m.macro_recall >= 0.0);
    REQUIRE(m.weighted_recall == doctest::Approx(m.accuracy).epsilon(1e-12));
  }
}

TEST_CASE("stratified split of 100 samples, 25 per class") {
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(i % 4);
  auto s = stratified_split(labels, kDefaultRatios, 3);
  CHECK(s.train.size() == 80);
  CHECK(s.val.size() == 10);
  CHECK(s.test.size() == 10);
  std::set<std::size_t> all;
  for (auto* part : {&s.train, &s.val, &s.test}) {
    for (auto i : *part) CHECK(all.insert(i).second);
  }
  CHECK(all.size() == 100);
  for (int c = 0; c < 4; ++c) {
    auto count = [&](const std::vector<std::size_t>& v) {
      return std::count_if(v.begin(), v.end(), [&](std::size_t i) { return labels[i] == c; });
    };
    CHECK(count(s.train) == 20);
    CHECK(std::abs(static_cast<double>(count(s.val)) - 2.5) < 1.0);
    CHECK(std::abs(static_cast<double>(count(s.test)) - 2.5) < 1.0);
  }
  auto again = stratified_split(labels, kDefaultRatios, 3);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  auto other = stratified_split(labels, kDefaultRatios, 4);
  CHECK(other.test != s.test);
}

TEST_CASE("stratified split proportions on uneven classes") {
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> labels;
    std::array<int, 4> sizes{};
    for (int c = 0; c < 4; ++c) {
      sizes[c] = 3 + static_cast<int>(gen() % 60);
      for (int i = 0; i < sizes[c]; ++i) labels.push_back(c);
    }
    std::shuffle(labels.begin(), labels.end(), gen);
    auto s = stratified_split(labels, {0.7, 0.2, 0.1}, trial);
    CHECK(s.train.size() + s.val.size() + s.test.size() == labels.size());
    for (int c = 0; c < 4; ++c) {
      auto count = [&](const std::vector<std::size_t>& v) {
        return static_cast<double>(std::count_if(v.begin(), v.end(), [&](std::size_t i) { return labels[i] == c; }));
      };
      CHECK(std::abs(count(s.train) - 0.7 * sizes[c]) < 1.0);
      CHECK(std::abs(count(s.val) - 0.2 * sizes[c]) < 1.0);
      CHECK(std::abs(count(s.test) - 0.1 * sizes[c]) < 1.0);
    }
  }
}

TEST_CASE("stratified split errors") {
  std::vector<int> labels = {0, 0, 0, 1, 1};
  CHECK(code_of([&] { stratified_split(labels, kDefaultRatios, 0); }) == ErrorCode::ClassTooSmall);
  std::vector<int> ok = {0, 0, 0};
  CHECK(code_of([&] { stratified_split(ok, {0.5, 0.2, 0.2}, 0); }) == ErrorCode::ConfigError);
}

TEST_CASE("synthetic generator: determinism, validity, separation") {
  SynthConfig cfg;
  cfg.n_per_class = 200;
  cfg.seed = 17;
  auto a = gen_synthetic(cfg);
  auto b = gen_synthetic(cfg);
  REQUIRE(a.size() == 800);
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].v == b[i].v);
    REQUIRE(a[i].a == b[i].a);
    REQUIRE(a[i].j == b[i].j);
    REQUIRE(a[i].id == b[i].id);
    REQUIRE(a[i].size() == 200);
    REQUIRE(a[i].label);
    CHECK_NOTHROW(ingest::validate_segment(a[i]));
  }
  std::array<double, 4> brakes{}, accels{};
  std::array<int, 4> n{};
  for (const auto& s : a) {
    auto beh = oracle::behavior(s.v, s.a, s.j, 2.0);
    auto c = style_code(*s.label);
    brakes[c] += static_cast<double>(beh.n_brake);
    accels[c] += static_cast<double>(beh.n_accel);
    n[c]++;
  }
  for (int c = 0; c < 4; ++c) CHECK(n[c] == 200);
  const auto ag = style_code(StyleLabel::Aggressive);
  const auto co = style_code(StyleLabel::Conservative);
  CHECK(brakes[ag] / n[ag] > brakes[co] / n[co]);
  CHECK(accels[ag] / n[ag] > accels[co] / n[co]);

  cfg.seed = 18;
  auto c = gen_synthetic(cfg);
  CHECK(c[0].v != a[0].v);
}

TEST_CASE("synthetic generator rejects bad specs") {
  SynthConfig cfg;
  cfg.n_per_class = 1;
  cfg.length = 40;
  CHECK(code_of([&] { gen_synthetic(cfg); }) == ErrorCode::BadSpec);
  cfg.length = 100;
  cfg.specs[0].brake_rate = -1.0;
  CHECK(code_of([&] { gen_synthetic(cfg); }) == ErrorCode::BadSpec);
  cfg.specs = default_style_specs();
  cfg.specs[1] = cfg.specs[0];
  CHECK(code_of([&] { gen_synthetic(cfg); }) == ErrorCode::BadSpec);
  cfg.specs = default_style_specs();
  cfg.specs.pop_back();
  CHECK(code_of([&] { gen_synthetic(cfg); }) == ErrorCode::BadSpec);
}

TEST_CASE("correlation matrix") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  std::vector<features::FeatureVector> fvs;
  std::vector<std::vector<double>> cols(4);
  for (int i = 0; i < 60; ++i) {
    double x = nd(gen), y = 0.5 * x + nd(gen), z = nd(gen);
    fvs.push_back(make_fv({"x", "y", "z", "k"}, {x, y, z, 3.0}));
    cols[0].push_back(x);
    cols[1].push_back(y);
    cols[2].push_back(z);
    cols[3].push_back(3.0);
  }
  auto m = correlation_matrix(fvs);
  REQUIRE(m.dim() == 4);
  for (std::size_t i = 0; i < 3; ++i) CHECK(m.at(i, i) == 1.0);
  CHECK(m.at(3, 3) == 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(m.at(i, j) == m.at(j, i));
      CHECK(m.at(i, j) >= -1.0);
      CHECK(m.at(i, j) <= 1.0);
      if (i != j) CHECK(std::abs(m.at(i, j) - oracle::pearson(cols[i], cols[j])) <= 1e-12);
    }
  }
  auto csv = correlation_csv(m);
  CHECK(csv.rfind("feature,x,y,z,k\n", 0) == 0);
  std::vector<features::FeatureVector> one(fvs.begin(), fvs.begin() + 1);
  CHECK(code_of([&] { correlation_matrix(one); }) == ErrorCode::TooFew);
}

TEST_CASE("distribution report: KDE normalization, grid order, fallback") {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> nd(5.0, 2.0);
  std::vector<features::FeatureVector> fvs;
  for (int i = 0; i < 120; ++i) {
    auto label = i < 119 ? kAllStyles[i % 3] : StyleLabel::Moderate;
    fvs.push_back(make_fv({"f", "g"}, {nd(gen), nd(gen) * 0.01}, label));
  }
  std::vector<std::string> names = {"f", "g"};
  auto rep = distribution_report(fvs, names);
  CHECK(rep.curves.size() == 8);
  for (const auto& c : rep.curves) {
    REQUIRE(c.grid.size() == kKdeGridPoints);
    double area = 0.0;
    for (std::size_t g = 1; g < c.grid.size(); ++g) {
      CHECK(c.grid[g] > c.grid[g - 1]);
      area += 0.5 * (c.density[g] + c.density[g - 1]) * (c.grid[g] - c.grid[g - 1]);
    }
    CHECK(std::abs(area - 1.0) <= 0.02);
    if (c.label == StyleLabel::Moderate) {
      CHECK(c.samples.size() == 1);
      CHECK(c.fallback_bandwidth);
    } else {
      CHECK_FALSE(c.fallback_bandwidth);
    }
  }
  CHECK(rep.warnings.size() == 2);
  CHECK(distribution_kde_csv(rep).rfind("label,feature,bandwidth,x,density\n", 0) == 0);
  std::vector<std::string> bad = {"nope"};
  CHECK(code_of([&] { distribution_report(fvs, bad); }) == ErrorCode::UnknownFeature);
}

TEST_CASE("silverman bandwidth") {
  std::vector<double> x = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  // sd = 3.02765, IQR = 4.5 -> min(3.02765, 3.35821) = 3.02765
  const double expected = 0.9 * std::sqrt(82.5 / 9.0) * std::pow(10.0, -0.2);
  CHECK(silverman_bandwidth(x) == doctest::Approx(expected).epsilon(1e-12));
  std::vector<double> single = {4.0};
  CHECK(silverman_bandwidth(single) == 0.0);
}

TEST_CASE("ablation runner emits the five-row table") {
  model::ModelConfig base;
  base.feature_dim = 12;
  base.text_dim = 16;
  base.d_k = 8;
  base.branch_channels = 4;
  base.refine_channels = {8, 8};
  base.semantic_width = 8;
  base.numeric_width = 8;
  base.hidden = 16;
  base.epochs = 3;
  base.lr = 1e-3;
  base.batch = 8;
  nn::Rng rng(1);
  auto make = [&](std::size_t n) {
    std::vector<model::Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
      model::Sample s;
      s.label = static_cast<int>(i % 4);
      for (int k = 0; k < 12; ++k) s.numeric.push_back(rng.normal() + (k % 4 == s.label ? 1.5 : 0.0));
      for (int k = 0; k < 16; ++k) s.text.push_back(rng.normal() + (k % 4 == s.label ? 1.0 : 0.0));
      out.push_back(s);
    }
    return out;
  };
  DatasetSplits data{make(48), make(8), make(12)};
  int epochs_seen = 0;
  auto rows = run_ablation(base, data, [&](model::Variant, const model::EpochRecord&) { ++epochs_seen; });
  REQUIRE(rows.size() == 5);
  CHECK(epochs_seen == 15);
  for (const auto& r : rows) {
    CHECK(r.metrics.recall == r.metrics.accuracy);
    for (double v : {r.metrics.accuracy, r.metrics.precision, r.metrics.recall, r.metrics.f1}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  auto csv = ablation_csv(rows);
  auto table = util::parse_csv(csv);
  CHECK(table.header == std::vector<std::string>{"Model", "Acc.", "Pre.", "Rec.", "F1"});
  REQUIRE(table.rows.size() == 5);
  CHECK(table.rows[0][0] == "Full Model");
  CHECK(table.rows[1][0] == "w/o Spatio-Temp Attn.");
  CHECK(table.rows[2][0] == "w/o Multi-Scale Conv.");
  CHECK(table.rows[3][0] == "Text Features Only");
  CHECK(table.rows[4][0] == "Num. Features Only");
  for (const auto& row : table.rows) CHECK(row[1] == row[3]);
  CHECK(util::parse_csv(ablation_macro_csv(rows)).rows.size() == 5);
}
