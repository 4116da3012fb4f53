#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "mlffn/error.hpp"
#include "mlffn/features.hpp"
#include "oracles.hpp"

using namespace mlffn;
using namespace mlffn::features;

namespace {

TrajectorySegment from_series(std::vector<double> v, std::vector<double> a, std::vector<double> j) {
  TrajectorySegment s;
  s.id = "s";
  for (std::size_t i = 0; i < v.size(); ++i) {
    s.t.push_back(0.1 * static_cast<double>(i));
  }
  s.v = std::move(v);
  s.a = std::move(a);
  s.j = std::move(j);
  return s;
}

}  // namespace

TEST_CASE("constant signal uses the degenerate moment convention") {
  auto f = stat_features(std::vector<double>{5, 5, 5, 5});
  CHECK(f.mean == 5.0);
  CHECK(f.std == 0.0);
  CHECK(f.skewness == 0.0);
  CHECK(f.kurtosis == 0.0);
  CHECK(f.median == 5.0);
  auto g = stat_features(std::vector<double>{0.1, 0.1, 0.1});
  CHECK(g.mean == 0.1);
  CHECK(g.std == 0.0);
}

TEST_CASE("stat features of [1,2,3,4] match the brute-force oracle") {
  std::vector<double> x = {1, 2, 3, 4};
  auto f = stat_features(x);
  auto o = oracle::stats(x);
  CHECK(f.mean == 2.5);
  CHECK(f.std == doctest::Approx(1.118033988749895).epsilon(1e-15));
  CHECK(f.median == 2.5);
  CHECK(f.q25 == 1.75);
  CHECK(f.q75 == 3.25);
  CHECK(f.skewness == 0.0);
  CHECK(f.kurtosis == doctest::Approx(o.kurtosis).epsilon(1e-14));
  CHECK(o.kurtosis == doctest::Approx(-1.36).epsilon(1e-14));
  CHECK(f.min == 1.0);
  CHECK(f.max == 4.0);
}

TEST_CASE("kurtosis of a large seeded Gaussian sample is near zero") {
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> nd(3.0, 2.0);
  std::vector<double> x(200000);
  for (auto& v : x) v = nd(gen);
  auto f = stat_features(x);
  // Standard error of excess kurtosis is about sqrt(24/n) = 0.011.
  CHECK(std::abs(f.kurtosis) < 0.05);
  CHECK(std::abs(f.skewness) < 0.03);
  std::vector<double> head(x.begin(), x.begin() + 2000);
  auto o = oracle::stats(head);
  auto fh = stat_features(head);
  CHECK(oracle::rel_err(fh.kurtosis, o.kurtosis) < 1e-10);
  CHECK(oracle::rel_err(fh.skewness, o.skewness) < 1e-10);
}

TEST_CASE("stat features reject short input") {
  CHECK_THROWS_AS(stat_features(std::vector<double>{1.0}), Error);
}

TEST_CASE("behavior features on the hand-counted example") {
  std::vector<double> a = {0, 3, 0, -3, 0};
  std::vector<double> z(5, 0.0);
  auto b = behavior_features(z, a, z, 2.0);
  CHECK(b.accel_change_rate == 3.0);
  CHECK(b.num_hard_accel == 1);
  CHECK(b.num_hard_brake == 1);
  CHECK(b.num_hard_turn == 0);
  CHECK(b.speed_change_rate == 0.0);
}

TEST_CASE("behavior features of all-zero series are zero") {
  std::vector<double> z(10, 0.0);
  auto b = behavior_features(z, z, z, 2.0);
  CHECK(b.accel_change_rate == 0.0);
  CHECK(b.num_hard_accel + b.num_hard_brake + b.num_hard_turn == 0);
  CHECK(b.speed_change_rate == 0.0);
}

TEST_CASE("indicators are strict inequalities") {
  std::vector<double> at_tau(6, 2.0);
  std::vector<double> neg_tau(6, -2.0);
  std::vector<double> z(6, 0.0);
  CHECK(behavior_features(z, at_tau, at_tau, 2.0).num_hard_accel == 0);
  CHECK(behavior_features(z, at_tau, at_tau, 2.0).num_hard_turn == 0);
  CHECK(behavior_features(z, neg_tau, z, 2.0).num_hard_brake == 0);
}

TEST_CASE("hard turns count jerk, not acceleration") {
  std::vector<double> a = {0, 5, 0, 0};
  std::vector<double> j = {0, 0, 3, -3};
  std::vector<double> v(4, 1.0);
  auto b = behavior_features(v, a, j, 2.0);
  CHECK(b.num_hard_accel == 1);
  CHECK(b.num_hard_turn == 2);
}

TEST_CASE("per-indicator threshold overrides") {
  std::vector<double> a = {0, 2.5, -2.5, 0};
  std::vector<double> j = {0, 2.5, 0, 0};
  std::vector<double> v(4, 1.0);
  Thresholds t{3.0, 2.0, 2.0};
  auto b = behavior_features(v, a, j, t);
  CHECK(b.num_hard_accel == 0);
  CHECK(b.num_hard_brake == 1);
  CHECK(b.num_hard_turn == 1);
}

TEST_CASE("behavior errors") {
  std::vector<double> a3(3, 0.0);
  std::vector<double> a4(4, 0.0);
  std::vector<double> a1(1, 0.0);
  try {
    behavior_features(a3, a4, a4, 2.0);
    FAIL("expected LengthMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LengthMismatch);
  }
  try {
    behavior_features(a1, a1, a1, 2.0);
    FAIL("expected TooShort");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooShort);
  }
}

TEST_CASE("dynamic features examples") {
  std::vector<double> v = {1, 2, 3, 4};
  std::vector<double> a = {4, 3, 2, 1};
  auto d = dynamic_features(v, a, a);
  CHECK(d.speed_accel_corr == -1.0);
  CHECK(d.speed_autocorr == 1.0);
  CHECK(oracle::pearson(v, a) == -1.0);

  std::vector<double> x = {1, 4, 2, 8, 5};
  auto self = dynamic_features(x, x, x);
  CHECK(self.speed_accel_corr == 1.0);

  std::vector<double> flat(5, 7.0);
  auto zero = dynamic_features(flat, x, x);
  CHECK(zero.speed_accel_corr == 0.0);
  CHECK(zero.speed_autocorr == 0.0);

  CHECK_THROWS_AS(dynamic_features(std::vector<double>{1, 2}, std::vector<double>{1, 2},
                                   std::vector<double>{1, 2}),
                  Error);
}

TEST_CASE("pearson is symmetric and bounded") {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(30), y(30);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = nd(gen);
      y[i] = 0.3 * x[i] + nd(gen);
    }
    const double r = pearson(x, y);
    CHECK(r == pearson(y, x));
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
  }
}

TEST_CASE("feature dimension follows 9N + 5 + 4") {
  CHECK(feature_dim(3) == 36);
  CHECK(feature_dim(10) == 99);
  CHECK(feature_dim(36) == 333);
  CHECK(derived_signals().size() == 33);

  FeatureConfig all;
  all.extra_signals = {"all"};
  CHECK(all.n_signals() == 36);
  CHECK(feature_names(all).size() == 333);

  FeatureConfig ten;
  ten.extra_signals = {"speed_abs", "acceleration_abs", "jerk_abs", "acceleration_pos",
                       "acceleration_neg", "speed_rollmean5", "speed_rollstd11"};
  CHECK(ten.n_signals() == 10);
  CHECK(feature_names(ten).size() == 99);
}

TEST_CASE("feature names are unique and ordered stat | behavior | dynamic") {
  auto names = feature_names(FeatureConfig{});
  REQUIRE(names.size() == 36);
  CHECK(names.front() == "speed_mean");
  CHECK(names[9] == "acceleration_mean");
  CHECK(names[27] == "acceleration_change_rate");
  CHECK(names[30] == "num_hard_turns");
  CHECK(names.back() == "acceleration_autocorrelation");
  FeatureConfig all;
  all.extra_signals = {"all"};
  auto all_names = feature_names(all);
  std::set<std::string> unique(all_names.begin(), all_names.end());
  CHECK(unique.size() == all_names.size());
}

TEST_CASE("unknown or duplicate signals are rejected") {
  FeatureConfig bad;
  bad.extra_signals = {"speed_cubed"};
  CHECK_THROWS_AS(bad.signal_names(), Error);
  FeatureConfig dup;
  dup.extra_signals = {"speed_abs", "speed_abs"};
  CHECK_THROWS_AS(dup.signal_names(), Error);
}

TEST_CASE("assemble yields D finite values for every registry size") {
  std::mt19937_64 gen(77);
  FeatureConfig all;
  all.extra_signals = {"all"};
  for (int trial = 0; trial < 20; ++trial) {
    auto seg = oracle::random_segment(gen, 50, 120);
    auto base = assemble(seg);
    CHECK(base.dim() == 36);
    auto full = assemble(seg, all);
    CHECK(full.dim() == 333);
    CHECK(full.n_signals == 36);
    for (double v : full.values) {
      CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("assembled blocks agree with the naive oracle on 1,000 segments") {
  std::mt19937_64 gen(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    auto seg = oracle::random_segment(gen);
    auto fv = assemble(seg);
    std::size_t k = 0;
    for (const auto* series : {&seg.v, &seg.a, &seg.j}) {
      auto o = oracle::stats(*series);
      for (double expected : {o.mean, o.std, o.max, o.min, o.median, o.q25, o.q75}) {
        REQUIRE(oracle::rel_err(fv.values[k], expected) <= 1e-12);
        ++k;
      }
      for (double expected : {o.kurtosis, o.skewness}) {
        REQUIRE(oracle::unit_floor_err(fv.values[k], expected) <= 1e-12);
        ++k;
      }
    }
    auto b = oracle::behavior(seg.v, seg.a, seg.j, 2.0);
    REQUIRE(oracle::rel_err(fv.values[k++], b.rho_a) <= 1e-12);
    REQUIRE(fv.values[k++] == static_cast<double>(b.n_accel));
    REQUIRE(fv.values[k++] == static_cast<double>(b.n_brake));
    REQUIRE(fv.values[k++] == static_cast<double>(b.n_turn));
    REQUIRE(oracle::rel_err(fv.values[k++], b.rho_v) <= 1e-12);
    for (double expected : {oracle::pearson(seg.v, seg.a), oracle::pearson(seg.a, seg.j),
                            oracle::lag1(seg.v), oracle::lag1(seg.a)}) {
      REQUIRE(oracle::unit_floor_err(fv.values[k], expected) <= 1e-12);
      REQUIRE(std::abs(fv.values[k]) <= 1.0);
      ++k;
    }
  }
}

TEST_CASE("fit_norm conventions") {
  FeatureVector a;
  a.names = {"x", "y"};
  a.values = {0.1, 5.0};
  SUBCASE("identical vectors give that mean and zero std") {
    std::vector<FeatureVector> same = {a, a, a};
    auto s = fit_norm(same);
    CHECK(s.mean == a.values);
    CHECK(s.std == std::vector<double>{0.0, 0.0});
    auto z = apply_norm(a, s);
    CHECK(z.values == std::vector<double>{0.0, 0.0});
  }
  SUBCASE("two vectors 0 and 2 give mean 1 std 1") {
    FeatureVector lo = a, hi = a;
    lo.values = {0.0, 0.0};
    hi.values = {2.0, 2.0};
    std::vector<FeatureVector> pair = {lo, hi};
    auto s = fit_norm(pair);
    CHECK(s.mean == std::vector<double>{1.0, 1.0});
    CHECK(s.std == std::vector<double>{1.0, 1.0});
    CHECK(apply_norm(hi, s).values == std::vector<double>{1.0, 1.0});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(fit_norm(std::vector<FeatureVector>{}), Error);
    FeatureVector short_fv;
    short_fv.values = {1.0};
    std::vector<FeatureVector> mixed = {a, short_fv};
    try {
      fit_norm(mixed);
      FAIL("expected DimensionMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DimensionMismatch);
    }
    auto s = fit_norm(std::vector<FeatureVector>{a});
    CHECK_THROWS_AS(apply_norm(short_fv, s), Error);
  }
}

TEST_CASE("fit_norm matches a two-pass oracle and normalizes to mean 0 std 1") {
  std::mt19937_64 gen(100);
  std::normal_distribution<double> nd(4.0, 3.0);
  std::vector<FeatureVector> rows(100);
  for (auto& fv : rows) {
    fv.names = {"a", "b", "c", "const"};
    fv.values = {nd(gen), 100.0 + nd(gen), nd(gen) * 1e-3, 42.0};
  }
  auto s = fit_norm(rows);
  for (std::size_t k = 0; k < 4; ++k) {
    double mu = 0;
    for (const auto& fv : rows) mu += fv.values[k];
    mu /= 100.0;
    double ss = 0;
    for (const auto& fv : rows) ss += (fv.values[k] - mu) * (fv.values[k] - mu);
    double sd = std::sqrt(ss / 100.0);
    if (k == 3) {
      CHECK(s.mean[k] == 42.0);
      CHECK(s.std[k] == 0.0);
      continue;
    }
    CHECK(std::abs(s.mean[k] - mu) <= 1e-12 * std::max(1.0, std::abs(mu)));
    CHECK(std::abs(s.std[k] - sd) <= 1e-12 * sd);
  }
  std::vector<FeatureVector> normed;
  for (const auto& fv : rows) normed.push_back(apply_norm(fv, s));
  auto s2 = fit_norm(normed);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(std::abs(s2.mean[k]) <= 1e-9);
    CHECK((s2.std[k] == 0.0 || std::abs(s2.std[k] - 1.0) <= 1e-9));
  }
  CHECK(s2.std[3] == 0.0);
}

TEST_CASE("norm stats and feature matrix text round trip") {
  std::mt19937_64 gen(3);
  std::vector<FeatureVector> rows;
  for (int i = 0; i < 5; ++i) {
    auto seg = oracle::random_segment(gen, 50, 60);
    seg.id = "seg" + std::to_string(i);
    seg.label = kAllStyles[i % 4];
    rows.push_back(assemble(seg));
  }
  rows[4].label.reset();
  auto parsed = parse_feature_matrix(feature_matrix_csv(rows));
  REQUIRE(parsed.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(parsed[i].id == rows[i].id);
    CHECK(parsed[i].label == rows[i].label);
    CHECK(parsed[i].values == rows[i].values);
    CHECK(parsed[i].names == rows[i].names);
    CHECK(parsed[i].n_signals == 3);
  }
  auto stats = fit_norm(rows);
  auto back = parse_norm_stats(serialize_norm_stats(stats));
  CHECK(back.mean == stats.mean);
  CHECK(back.std == stats.std);
  CHECK(back.names == stats.names);
  CHECK_THROWS_AS(parse_norm_stats("dim 3\nx 1 1\n"), Error);
}

TEST_CASE("derived signals keep length and behave as named") {
  auto seg = from_series({1, -2, 3, -4, 5, 6}, {0, 1, 0, -1, 0, 1}, {1, 1, 1, 1, 1, 1});
  CHECK(find_signal("speed_abs").compute(seg) == std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(find_signal("speed_pos").compute(seg) == std::vector<double>{1, 0, 3, 0, 5, 6});
  CHECK(find_signal("speed_neg").compute(seg) == std::vector<double>{0, -2, 0, -4, 0, 0});
  CHECK(find_signal("speed_diff").compute(seg) == std::vector<double>{-3, 5, -7, 9, 1, 1});
  CHECK(find_signal("jerk_rollstd5").compute(seg) == std::vector<double>(6, 0.0));
  auto rm = find_signal("acceleration_rollmean5").compute(seg);
  CHECK(rm.size() == 6);
  CHECK(rm[0] == 0.0);
  CHECK(rm[1] == 0.5);
  CHECK(rm[5] == doctest::Approx(0.2));
}
