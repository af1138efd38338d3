#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "cdq/detect.hpp"
#include "cdq/geo.hpp"
#include "cdq/ingest.hpp"
#include "cdq/repair.hpp"
#include "oracles/repair_oracle.hpp"
#include "test_util.hpp"

using namespace cdq;
using testutil::stdvec;
using testutil::vec;

namespace {

VectorXd simulate_ingarch(std::mt19937_64& rng, Index T, double b0, double b1, double a1) {
  VectorXd z(T);
  double nu = b0 / (1 - a1);
  double prev = std::exp(nu);
  for (Index t = 0; t < T; ++t) {
    nu = b0 + b1 * std::log1p(prev) + a1 * nu;
    z(t) = std::poisson_distribution<long>(std::exp(nu))(rng);
    prev = z(t);
  }
  return z;
}

IncrementSeries increments(const VectorXd& v) {
  IncrementSeries z;
  z.key = SeriesKey::for_state("Texas");
  z.start = parse_iso_date("2020-03-01");
  z.values = v;
  return z;
}

AnomalyRecord confirmed_spike(const IncrementSeries& z, Index t, AnomalyKind kind = AnomalyKind::PointAnomaly) {
  AnomalyRecord r;
  r.key = z.key;
  r.kind = kind;
  r.t_index = t;
  r.date = z.date_at(t);
  r.id = anomaly_id(z.key, z.metric, z.source, kind, r.date);
  r.status = AnomalyStatus::Confirmed;
  return r;
}

std::vector<int> ints(const VectorXd& v) {
  std::vector<int> out;
  for (double x : v) out.push_back(static_cast<int>(x));
  return out;
}

}  // namespace

TEST_CASE("ingarch with no lags is the mean") {
  const VectorXd z = vec({3, 5, 4, 6, 2, 4, 5, 3, 4, 4, 6, 2});
  IngarchOptions opts;
  opts.p = 0;
  const auto fit = fit_ingarch(z, opts);
  CHECK(std::exp(fit.beta0) == doctest::Approx(z.mean()).epsilon(1e-8));
  CHECK(fit.predict_next(z) == doctest::Approx(z.mean()).epsilon(1e-8));
  CHECK_THROWS_AS(fit_ingarch(z.head(5)), std::invalid_argument);
  CHECK_THROWS_AS(fit_ingarch(vec({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, -1, 2})), std::invalid_argument);
}

TEST_CASE("ingarch(1,0) recovers its coefficients") {
  std::mt19937_64 rng(101);
  const VectorXd z = simulate_ingarch(rng, 3000, 1.0, 0.6, 0.0);
  const auto fit = fit_ingarch(z);
  CHECK(std::abs(fit.beta0 - 1.0) < 0.15);
  CHECK(std::abs(fit.beta(0) - 0.6) < 0.05);
  CHECK(fit.predict_next(z) == doctest::Approx(std::exp(fit.beta0 + fit.beta(0) * std::log1p(z(z.size() - 1)))));
}

TEST_CASE("ingarch(1,1) recovers its coefficients") {
  std::mt19937_64 rng(103);
  const VectorXd z = simulate_ingarch(rng, 3000, 0.5, 0.3, 0.4);
  IngarchOptions opts;
  opts.q = 1;
  const auto fit = fit_ingarch(z, opts);
  CHECK(fit.fit.converged);
  CHECK(std::abs(fit.beta(0) - 0.3) < 0.08);
  CHECK(std::abs(fit.alpha(0) - 0.4) < 0.12);
  CHECK(std::abs(fit.alpha(0)) < 1);
  const double lr = fit.beta0 / (1 - fit.alpha(0) - fit.beta(0));
  CHECK(std::abs(lr - 0.5 / 0.3) < 0.3);
}

TEST_CASE("ingarch one-step forecasts beat carrying the last value forward") {
  std::mt19937_64 rng(107);
  const VectorXd z = simulate_ingarch(rng, 400, 1.2, 0.55, 0.0);
  double model = 0, naive = 0;
  for (Index t = 200; t < 400; ++t) {
    const VectorXd hist = z.head(t);
    const auto fit = fit_ingarch(hist);
    model += std::abs(fit.predict_next(hist) - z(t));
    naive += std::abs(z(t - 1) - z(t));
  }
  CHECK(model < naive);
}

TEST_CASE("trend models recover exact curves") {
  VectorXd t(10), e(10), l(10);
  for (Index i = 0; i < 10; ++i) {
    t(i) = static_cast<double>(i + 1);
    e(i) = std::exp(1.0 + 0.1 * t(i));
    l(i) = 3.0 + 2.0 * t(i);
  }
  const auto et = fit_exp_trend(t, e);
  CHECK(et.fit.coefficients(0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(et.fit.coefficients(1) == doctest::Approx(0.1).epsilon(1e-8));
  CHECK(et.predict(11, 0) == doctest::Approx(std::exp(2.1)).epsilon(1e-8));
  const auto lt = fit_lin_trend(t, l);
  CHECK(lt.predict(11, 0) == doctest::Approx(25.0).epsilon(1e-12));
  VectorXd prev(8), cur(8);
  for (Index i = 0; i < 8; ++i) {
    prev(i) = static_cast<double>(3 * i + 1);
    cur(i) = std::exp(0.5 + 0.8 * std::log1p(prev(i)));
  }
  const auto ar = fit_exp_ar(prev, cur);
  CHECK(ar.fit.coefficients(0) == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(ar.fit.coefficients(1) == doctest::Approx(0.8).epsilon(1e-8));
  CHECK(ar.predict(0, 9) == doctest::Approx(std::exp(0.5 + 0.8 * std::log(10.0))).epsilon(1e-8));
  CHECK_THROWS(fit_lin_trend(t.head(4), l.head(4)));
}

TEST_CASE("clep weights and combination") {
  const std::vector<PredictorInput> two{{10, {1, 1, 1}}, {20, {4, 4}}};
  const auto w = clep_weights(two);
  CHECK(w[0] == doctest::Approx(0.8).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(0.2).epsilon(1e-6));
  CHECK(clep_combine(two) == doctest::Approx(12.0).epsilon(1e-6));
  // only the last five errors count
  const std::vector<PredictorInput> old{{10, {100, 1, 1, 1, 1, 1}}, {20, {1, 1, 1, 1, 1}}};
  CHECK(clep_combine(old) == doctest::Approx(15.0).epsilon(1e-9));
  // no history for one predictor: equal weights
  CHECK(clep_combine({{10, {1}}, {20, {}}}) == 15.0);
  CHECK_THROWS(clep_combine({}));
  const auto p = clep_weights({{1, {0}}, {2, {0}}, {3, {2}}});
  CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));
}

TEST_CASE("replacement estimates on a constant history") {
  VectorXd z = VectorXd::Constant(30, 50.0);
  z(25) = 900;
  CHECK(estimate_replacement(z, 25, RepairMethod::Clep) == doctest::Approx(50.0).epsilon(1e-6));
  CHECK(estimate_replacement(z, 25, RepairMethod::Ingarch) == doctest::Approx(50.0).epsilon(1e-6));
  CHECK_THROWS(estimate_replacement(z, 25, RepairMethod::Manual));
  CHECK_THROWS(estimate_replacement(z, 30, RepairMethod::Clep));
  // excluded days are not used
  VectorXd w = VectorXd::Constant(30, 50.0);
  w(20) = 5000;
  CHECK(estimate_replacement(w, 25, RepairMethod::Clep, {}, 0, {20}) == doctest::Approx(50.0).epsilon(1e-6));
  // never negative
  VectorXd falling(20);
  for (Index i = 0; i < 20; ++i) falling(i) = std::max(0.0, 100.0 - 8.0 * static_cast<double>(i));
  CHECK(estimate_replacement(falling, 19, RepairMethod::Clep) >= 0);
}

TEST_CASE("redistribution examples") {
  auto r = redistribute_residual(vec({10, 10, 10, 40}), 3, 10, {0, 1, 2});
  CHECK(r.repaired_increments == vec({20, 20, 20, 10}));
  CHECK(r.total_before == 70);
  CHECK(r.total_after == 70);
  CHECK_FALSE(r.capped);
  // negative residual that exactly empties the period
  r = redistribute_residual(vec({1, 2, 3, 0}), 3, 6, {0, 1, 2});
  CHECK(r.repaired_increments == vec({0, 0, 0, 6}));
  CHECK_FALSE(r.capped);
  // more than the period holds: z_hat is lowered to keep the total
  r = redistribute_residual(vec({1, 2, 3, 0}), 3, 10, {0, 1, 2});
  CHECK(r.capped);
  CHECK(r.repaired_increments == vec({0, 0, 0, 6}));
  // all-zero period spreads evenly
  r = redistribute_residual(vec({0, 0, 0, 30}), 3, 0, {0, 1, 2});
  CHECK(r.uniform_fallback);
  CHECK(r.repaired_increments == vec({10, 10, 10, 0}));
  CHECK_THROWS(redistribute_residual(vec({1, 2, 3}), 2, 1, {}));
  CHECK_THROWS(redistribute_residual(vec({1, 2, 3}), 2, 1, {1, 2}));
  CHECK_THROWS(redistribute_residual(vec({1, 2, 3}), 2, -1, {0}));
}

TEST_CASE("redistribution conserves the total and stays nonnegative") {
  std::mt19937_64 rng(109);
  std::uniform_int_distribution<int> val(0, 40), len(2, 25);
  std::uniform_real_distribution<double> est(0, 200);
  for (int rep = 0; rep < 2000; ++rep) {
    const Index n = len(rng);
    VectorXd z(n);
    for (Index i = 0; i < n; ++i) z(i) = val(rng);
    const Index t_m = n - 1;
    std::vector<Index> period(static_cast<std::size_t>(t_m));
    std::iota(period.begin(), period.end(), Index{0});
    const double z_hat = est(rng);
    const auto r = redistribute_residual(z, t_m, z_hat, period);
    CHECK(r.total_after == doctest::Approx(r.total_before).epsilon(1e-12));
    CHECK(r.repaired_increments.minCoeff() >= 0);
    VectorXd applied = z;
    apply_repair(applied, r);
    CHECK(applied.sum() == doctest::Approx(z.sum()).epsilon(1e-12));
    const double mass = z.head(t_m).sum();
    if (mass > 0 && z(t_m) >= z_hat) {
      // positive residual: plain proportional spread, checked against the closed form
      const auto ref = oracle::proportional(stdvec(z.head(t_m)), z(t_m), z_hat);
      for (Index i = 0; i < t_m; ++i) CHECK(r.repaired_increments(i) == doctest::Approx(ref[static_cast<std::size_t>(i)]));
      CHECK(r.repaired_increments(t_m) == z_hat);
    }
  }
}

TEST_CASE("delta rule") {
  DeltaRule d;
  CHECK(d(0) == 10);
  CHECK(d(99) == doctest::Approx(30.0));
}

TEST_CASE("repair_outliers only touches confirmed point anomalies") {
  VectorXd v = VectorXd::Constant(40, 20.0);
  v(30) = 400;
  const auto z = increments(v);
  auto spike = confirmed_spike(z, 30);
  auto out = repair_outliers(z, {spike});
  REQUIRE(out.results.size() == 1);
  CHECK(out.results[0].applied);
  CHECK(out.series.values(30) == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(out.series.values.sum() == doctest::Approx(v.sum()).epsilon(1e-12));
  CHECK(out.series.values.tail(9) == v.tail(9));

  spike.status = AnomalyStatus::Detected;
  out = repair_outliers(z, {spike});
  CHECK(out.results.empty());
  CHECK(out.series.values == v);

  // within delta of the estimate: skipped
  VectorXd mild = VectorXd::Constant(40, 20.0);
  mild(30) = 25;
  out = repair_outliers(increments(mild), {confirmed_spike(increments(mild), 30)});
  REQUIRE(out.results.size() == 1);
  CHECK_FALSE(out.results[0].applied);
  CHECK(out.results[0].skip_reason == "residual within delta");
}

TEST_CASE("repair_outliers honours overrides and change points") {
  VectorXd v = VectorXd::Constant(40, 20.0);
  v(30) = 400;
  const auto z = increments(v);
  const auto spike = confirmed_spike(z, 30);

  RepairOverride manual;
  manual.method = RepairMethod::Manual;
  manual.manual_value = 100;
  manual.period = std::pair<Index, Index>{26, 29};
  auto out = repair_outliers(z, {spike}, {}, {{spike.id, manual}});
  REQUIRE(out.results[0].applied);
  CHECK(out.series.values(30) == 100);
  CHECK(out.series.values.segment(26, 4) == VectorXd::Constant(4, 95.0));
  CHECK(out.series.values.head(26) == v.head(26));

  RepairOverride bad;
  bad.period = std::pair<Index, Index>{28, 31};
  out = repair_outliers(z, {spike}, {}, {{spike.id, bad}});
  CHECK_FALSE(out.results[0].applied);

  // a confirmed change point at day 20 bounds the default period
  out = repair_outliers(z, {spike, confirmed_spike(z, 20, AnomalyKind::ChangePoint)});
  REQUIRE(out.results[0].applied);
  CHECK(out.results[0].period.front() == 20);
  CHECK(out.series.values.head(20) == v.head(20));
}

TEST_CASE("two spikes are repaired in order without leaking into each other") {
  VectorXd v = VectorXd::Constant(50, 30.0);
  v(30) = 600;
  v(40) = 900;
  const auto z = increments(v);
  const auto out = repair_outliers(z, {confirmed_spike(z, 40), confirmed_spike(z, 30)});
  REQUIRE(out.results.size() == 2);
  CHECK(out.results[0].t_m == 30);
  CHECK(out.results[1].t_m == 40);
  CHECK(out.results[1].z_hat < 100);
  CHECK(out.series.values(30) < 100);
  CHECK(out.series.values(40) < 100);
  CHECK(out.series.values.sum() == doctest::Approx(v.sum()).epsilon(1e-12));
}

TEST_CASE("Grimes County batch releases are spread back") {
  const auto parsed = parse_source(testutil::snapshot(SourceId::NYT, "nyt_counties.csv"), Metric::Infection);
  const auto panel = normalize_geography(parsed.panel, GeoRuleSet::defaults()).panel;
  const auto row = panel.find(SeriesKey::for_county("48185", "Grimes", "Texas"));
  REQUIRE(row);
  const auto y = panel.series(*row);
  std::vector<AnomalyRecord> flagged;
  for (auto r : detect_point_anomalies(y)) {
    r.status = AnomalyStatus::Confirmed;
    flagged.push_back(r);
  }
  REQUIRE(flagged.size() >= 2);
  const auto z = to_increments(y);
  const auto out = repair_outliers(z, flagged);
  const Index june5 = (parse_iso_date("2020-06-05") - z.start).count();
  const Index july9 = (parse_iso_date("2020-07-09") - z.start).count();
  CHECK(z.values(june5) > 150);
  CHECK(out.series.values(june5) < 40);
  CHECK(out.series.values(july9) < 40);
  CHECK(out.series.values.sum() == doctest::Approx(z.values.sum()).epsilon(1e-12));
  CHECK(out.series.values.minCoeff() >= 0);
}

TEST_CASE("repair_od examples") {
  CHECK(repair_od(vec({1, 3, 2, 4})) == vec({1, 2, 2, 4}));
  CHECK(repair_od(vec({5, 4, 3})) == vec({3, 3, 3}));
  CHECK(repair_od(vec({0, 1, 1, 7})) == vec({0, 1, 1, 7}));
}

TEST_CASE("repair_od is the largest monotone minorant") {
  std::mt19937_64 rng(113);
  std::uniform_int_distribution<int> val(0, 9), len(1, 6);
  for (int rep = 0; rep < 300; ++rep) {
    VectorXd y(len(rng));
    for (Index i = 0; i < y.size(); ++i) y(i) = val(rng);
    const VectorXd r = repair_od(y);
    const auto ref = oracle::monotone_minorant(ints(y), static_cast<int>(y.minCoeff()));
    REQUIRE(ref);
    CHECK(ints(r) == *ref);
    CHECK(oracle::nondecreasing(ints(r)));
    CHECK(oracle::od_pairs(stdvec(r)) == 0);
    CHECK(r(r.size() - 1) == y(y.size() - 1));
    CHECK((r.array() <= y.array()).all());
    CHECK(repair_od(r) == r);
  }
}

TEST_CASE("model-based OD repair keeps the final total") {
  std::mt19937_64 rng(127);
  std::uniform_int_distribution<int> inc(0, 30), drop(0, 12);
  for (int rep = 0; rep < 30; ++rep) {
    VectorXd z(60);
    for (Index i = 0; i < 60; ++i) z(i) = inc(rng) - (drop(rng) == 0 ? 60 : 0);
    CumulativeSeries y;
    y.values = to_cumulative(z);
    if (y.values(59) < 0) continue;
    const auto fixed = repair_od_model(y);
    CHECK(oracle::nondecreasing(ints(fixed.values.array().round().matrix())));
    CHECK(detect_od_violations(fixed).empty());
    CHECK(fixed.values(59) == doctest::Approx(y.values(59)).epsilon(1e-9));
  }
}

TEST_CASE("integerize keeps the rounded total") {
  CHECK(integerize(vec({0.5, 0.5, 1.0})).sum() == 2);
  CHECK(integerize(vec({2.0, 3.0})) == vec({2.0, 3.0}));
  CHECK(integerize(vec({0.2, 0.7, 0.1})) == vec({0, 1, 0}));
  std::mt19937_64 rng(131);
  std::uniform_real_distribution<double> val(0, 50);
  std::uniform_int_distribution<int> len(1, 40);
  for (int rep = 0; rep < 500; ++rep) {
    VectorXd v(len(rng));
    for (Index i = 0; i < v.size(); ++i) v(i) = val(rng);
    const VectorXd r = integerize(v);
    CHECK(r.sum() == std::llround(v.sum()));
    CHECK(((r - v).array().abs() < 1.0).all());
    CHECK((r.array() == r.array().round()).all());
  }
}

TEST_CASE("repair method names parse") {
  CHECK(parse_repair_method("Manual") == RepairMethod::Manual);
  CHECK_THROWS(parse_repair_method("spline"));
}
