#include "cdq/repair.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace cdq {

namespace {

double lag_value(IngarchRegressor kind, double z) { return kind == IngarchRegressor::Log1p ? std::log1p(z) : z; }

double poisson_deviance(const VectorXd& y, const VectorXd& mu) {
  return numerics::detail::poisson_deviance<double>(y, mu);
}

// Log-means and their parameter derivatives for theta = (b0, b_1..b_p, a_1..a_q).
bool ingarch_recursion(const VectorXd& z, const VectorXd& theta, int p, int q, IngarchRegressor kind, double nu0,
                       VectorXd& nu, MatrixXd* dnu) {
  const Index T = z.size();
  const Index m = std::max(p, q);
  const Index d = theta.size();
  nu.setConstant(T, nu0);
  if (dnu) dnu->setZero(T, d);
  for (Index t = m; t < T; ++t) {
    double v = theta(0);
    for (int k = 1; k <= p; ++k) v += theta(k) * lag_value(kind, z(t - k));
    for (int l = 1; l <= q; ++l) v += theta(p + l) * nu(t - l);
    if (!std::isfinite(v) || v > 700) return false;
    nu(t) = v;
    if (dnu) {
      auto row = dnu->row(t);
      row(0) = 1.0;
      for (int k = 1; k <= p; ++k) row(k) = lag_value(kind, z(t - k));
      for (int l = 1; l <= q; ++l) {
        row(p + l) = nu(t - l);
        row += theta(p + l) * dnu->row(t - l);
      }
    }
  }
  return true;
}

void unpack(IngarchFit& f, const VectorXd& theta) {
  f.beta0 = theta(0);
  f.beta = theta.segment(1, f.p);
  f.alpha = theta.segment(1 + f.p, f.q);
}

}  // namespace

IngarchFit fit_ingarch(const VectorXd& z, const IngarchOptions& opts) {
  if (opts.p < 0 || opts.q < 0) throw std::invalid_argument("ingarch: orders must be nonnegative");
  const Index T = z.size();
  if (T < 10 + opts.p + opts.q) throw std::invalid_argument("ingarch: need at least 10 + p + q observations");
  for (Index t = 0; t < T; ++t) {
    if (!std::isfinite(z(t)) || z(t) < 0) throw std::invalid_argument("ingarch: counts must be finite and >= 0");
  }
  const Index m = std::max(opts.p, opts.q);
  const Index n = T - m;
  const double nu0 = std::log(z.mean() + 1.0);

  IngarchFit out;
  out.p = opts.p;
  out.q = opts.q;
  out.regressor = opts.regressor;

  MatrixXd x(n, 1 + opts.p);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (int k = 1; k <= opts.p; ++k) x(i, k) = lag_value(opts.regressor, z(m + i - k));
  }
  const VectorXd y = z.tail(n);
  numerics::IrlsOptions irls;
  irls.tol = opts.tol;
  irls.max_iter = std::max(opts.max_iter, 1);
  irls.drop_collinear = true;
  auto glm = numerics::irls_glm(x, y, numerics::Family::QuasiPoisson, irls);

  if (opts.q == 0) {
    out.fit = glm;
    unpack(out, glm.coefficients);
    out.nu.setConstant(T, nu0);
    out.nu.tail(n) = glm.fitted.array().log();
    if (!glm.converged) throw IngarchError("ingarch: IRLS did not converge", out);
    return out;
  }

  const Index d = 1 + opts.p + opts.q;
  VectorXd theta = VectorXd::Zero(d);
  theta.head(1 + opts.p) = glm.coefficients;
  VectorXd nu;
  MatrixXd dnu;
  if (!ingarch_recursion(z, theta, opts.p, opts.q, opts.regressor, nu0, nu, &dnu)) {
    theta.setZero();
    theta(0) = nu0;
    ingarch_recursion(z, theta, opts.p, opts.q, opts.regressor, nu0, nu, &dnu);
  }
  auto deviance_of = [&](const VectorXd& nu_all) {
    return poisson_deviance(y, nu_all.tail(n).array().exp().matrix());
  };
  double dev = deviance_of(nu);
  bool converged = false;
  int iter = 0;
  for (iter = 1; iter <= opts.max_iter; ++iter) {
    const VectorXd mu = nu.tail(n).array().exp();
    const MatrixXd g = dnu.bottomRows(n);
    const VectorXd score = g.transpose() * (y - mu);
    const MatrixXd info = g.transpose() * (g.array().colwise() * mu.array()).matrix();
    VectorXd step = info.completeOrthogonalDecomposition().solve(score);
    VectorXd next;
    VectorXd nu_next;
    MatrixXd dnu_next;
    double dev_next = std::numeric_limits<double>::infinity();
    for (int h = 0; h <= 30; ++h) {
      next = theta + step;
      const bool stable = next.tail(opts.q).cwiseAbs().sum() < 1.0;
      if (stable && ingarch_recursion(z, next, opts.p, opts.q, opts.regressor, nu0, nu_next, &dnu_next)) {
        dev_next = deviance_of(nu_next);
        if (std::isfinite(dev_next) && dev_next <= dev * (1 + 1e-12) + 1e-300) break;
      }
      step /= 2.0;
      dev_next = std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(dev_next)) break;
    const double change = std::abs(dev_next - dev) / (std::abs(dev_next) + 0.1);
    theta = next;
    nu = nu_next;
    dnu = dnu_next;
    dev = dev_next;
    if (change < opts.tol) {
      converged = true;
      break;
    }
  }

  const VectorXd mu = nu.tail(n).array().exp();
  const MatrixXd g = dnu.bottomRows(n);
  const MatrixXd info = g.transpose() * (g.array().colwise() * mu.array()).matrix();
  out.fit.coefficients = theta;
  out.fit.fitted = mu;
  out.fit.deviance = dev;
  out.fit.residual_df = n - d;
  out.fit.dispersion = out.fit.residual_df > 0 ? ((y - mu).array().square() / mu.array()).sum() / double(n - d)
                                               : std::numeric_limits<double>::quiet_NaN();
  out.fit.covariance = info.completeOrthogonalDecomposition().pseudoInverse() * out.fit.dispersion;
  out.fit.iterations = std::min(iter, opts.max_iter);
  out.fit.converged = converged;
  out.fit.boundary = y.isZero() || (mu.array() < 1e-8).any();
  unpack(out, theta);
  out.nu = nu;
  if (!converged) throw IngarchError("ingarch: Fisher scoring did not converge", out);
  return out;
}

double IngarchFit::predict_next(const VectorXd& z) const {
  const Index T = z.size();
  if (T != nu.size()) throw std::invalid_argument("ingarch: history length differs from the fitted series");
  double v = beta0;
  for (int k = 1; k <= p; ++k) v += beta(k - 1) * lag_value(regressor, z(T - k));
  for (int l = 1; l <= q; ++l) v += alpha(l - 1) * nu(T - l);
  return std::exp(v);
}

std::string_view to_string(TrendKind kind) {
  switch (kind) {
    case TrendKind::ExpTrend: return "exp_trend";
    case TrendKind::LinTrend: return "lin_trend";
    case TrendKind::ExpAr: return "exp_ar";
  }
  return "?";
}

double TrendModel::predict(double t, double z_prev) const {
  const auto& b = fit.coefficients;
  switch (kind) {
    case TrendKind::ExpTrend: return std::exp(b(0) + b(1) * t);
    case TrendKind::LinTrend: return b(0) + b(1) * t;
    case TrendKind::ExpAr: return std::exp(b(0) + b(1) * std::log1p(z_prev));
  }
  return 0;
}

namespace {

MatrixXd line_design(const VectorXd& x) {
  MatrixXd d(x.size(), 2);
  d.col(0).setOnes();
  d.col(1) = x;
  return d;
}

void check_window(Index n) {
  if (n < 5) throw std::invalid_argument("trend fit needs a window of at least 5 days");
}

numerics::IrlsOptions dropping() {
  numerics::IrlsOptions o;
  o.drop_collinear = true;
  return o;
}

}  // namespace

TrendModel fit_exp_trend(const VectorXd& t, const VectorXd& z) {
  check_window(z.size());
  return {TrendKind::ExpTrend, numerics::irls_glm(line_design(t), z, numerics::Family::QuasiPoisson, dropping())};
}

TrendModel fit_lin_trend(const VectorXd& t, const VectorXd& z) {
  check_window(z.size());
  return {TrendKind::LinTrend, numerics::ols_fit(line_design(t), z, true)};
}

TrendModel fit_exp_ar(const VectorXd& z_prev, const VectorXd& z) {
  check_window(z.size());
  if (z_prev.size() != z.size()) throw std::invalid_argument("exp_ar: lagged and current lengths differ");
  const VectorXd lagged = z_prev.array().log1p();
  return {TrendKind::ExpAr, numerics::irls_glm(line_design(lagged), z, numerics::Family::QuasiPoisson, dropping())};
}

TrendModel fit_exp_ar(const VectorXd& z) {
  if (z.size() < 2) throw std::invalid_argument("exp_ar: need at least two days");
  return fit_exp_ar(z.head(z.size() - 1).eval(), z.tail(z.size() - 1).eval());
}

std::vector<double> clep_weights(const std::vector<PredictorInput>& predictors, double eps) {
  if (predictors.empty()) throw std::invalid_argument("clep: no predictors");
  const std::size_t k = predictors.size();
  std::vector<double> w(k, 1.0 / static_cast<double>(k));
  const bool all_have = std::all_of(predictors.begin(), predictors.end(),
                                    [](const PredictorInput& p) { return !p.errors.empty(); });
  if (!all_have) return w;
  double total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& e = predictors[i].errors;
    const std::size_t used = std::min<std::size_t>(5, e.size());
    double mae = 0;
    for (std::size_t j = e.size() - used; j < e.size(); ++j) mae += std::abs(e[j]);
    mae /= static_cast<double>(used);
    w[i] = 1.0 / (mae + eps);
    total += w[i];
  }
  for (auto& x : w) x /= total;
  return w;
}

double clep_combine(const std::vector<PredictorInput>& predictors, double eps) {
  const auto w = clep_weights(predictors, eps);
  double out = 0;
  for (std::size_t i = 0; i < w.size(); ++i) out += w[i] * predictors[i].prediction;
  return out;
}

std::string_view to_string(RepairMethod method) {
  switch (method) {
    case RepairMethod::Ingarch: return "Ingarch";
    case RepairMethod::Clep: return "Clep";
    case RepairMethod::Manual: return "Manual";
  }
  return "?";
}

RepairMethod parse_repair_method(std::string_view text) {
  for (auto m : {RepairMethod::Ingarch, RepairMethod::Clep, RepairMethod::Manual}) {
    if (text == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown repair method '" + std::string(text) + "'");
}

namespace {

double clep_estimate(const VectorXd& z, Index t_m, const ReplacementConfig& cfg, Index history_start,
                     const std::set<Index>& excluded) {
  std::vector<Index> days;
  for (Index d = std::max(history_start, t_m - cfg.lookback); d < t_m; ++d) {
    if (!excluded.count(d)) days.push_back(d);
  }
  const Index n = static_cast<Index>(days.size());
  VectorXd tt(n), zz(n);
  for (Index i = 0; i < n; ++i) {
    tt(i) = static_cast<double>(days[static_cast<std::size_t>(i)] + 1);
    zz(i) = z(days[static_cast<std::size_t>(i)]);
  }
  const Index tail = std::min(cfg.clep_error_days, n);
  std::vector<PredictorInput> inputs;
  for (auto fitter : {&fit_exp_trend, &fit_lin_trend}) {
    try {
      const auto model = fitter(tt, zz);
      PredictorInput in;
      in.prediction = model.predict(static_cast<double>(t_m + 1), 0.0);
      for (Index i = n - tail; i < n; ++i) in.errors.push_back(std::abs(model.predict(tt(i), 0.0) - zz(i)));
      if (std::isfinite(in.prediction)) inputs.push_back(std::move(in));
    } catch (const std::exception&) {
    }
  }

  std::vector<Index> pair_days;
  for (Index d : days) {
    if (d - 1 >= history_start && !excluded.count(d - 1)) pair_days.push_back(d);
  }
  const bool have_prev = t_m - 1 >= history_start && !excluded.count(t_m - 1);
  if (have_prev && pair_days.size() >= 5) {
    try {
      const Index np = static_cast<Index>(pair_days.size());
      VectorXd prev(np), cur(np);
      for (Index i = 0; i < np; ++i) {
        prev(i) = z(pair_days[static_cast<std::size_t>(i)] - 1);
        cur(i) = z(pair_days[static_cast<std::size_t>(i)]);
      }
      const auto model = fit_exp_ar(prev, cur);
      PredictorInput in;
      in.prediction = model.predict(0.0, z(t_m - 1));
      for (Index i = np - std::min(cfg.clep_error_days, np); i < np; ++i) {
        in.errors.push_back(std::abs(model.predict(0.0, prev(i)) - cur(i)));
      }
      if (std::isfinite(in.prediction)) inputs.push_back(std::move(in));
    } catch (const std::exception&) {
    }
  }
  if (inputs.empty()) throw std::runtime_error("clep: no predictor could be fitted before day " + std::to_string(t_m));
  return clep_combine(inputs, cfg.clep_eps);
}

}  // namespace

double estimate_replacement(const VectorXd& z, Index t_m, RepairMethod method, const ReplacementConfig& cfg,
                            Index history_start, const std::vector<Index>& excluded) {
  if (t_m < 0 || t_m >= z.size()) throw std::out_of_range("replacement day outside the series");
  if (history_start < 0 || history_start > t_m) throw std::invalid_argument("history start after the replacement day");
  double estimate = 0;
  switch (method) {
    case RepairMethod::Ingarch: {
      const VectorXd history = z.segment(history_start, t_m - history_start);
      estimate = fit_ingarch(history, cfg.ingarch).predict_next(history);
      break;
    }
    case RepairMethod::Clep:
      estimate = clep_estimate(z, t_m, cfg, history_start, std::set<Index>(excluded.begin(), excluded.end()));
      break;
    case RepairMethod::Manual:
      throw std::invalid_argument("manual replacement needs an explicit value");
  }
  if (!std::isfinite(estimate)) throw std::runtime_error("replacement estimate is not finite");
  return std::max(0.0, estimate);
}

Json to_json(const RepairResult& r) {
  Json j;
  j["anomaly_id"] = r.anomaly_id;
  j["method"] = to_string(r.method);
  j["t_m"] = r.t_m;
  j["z_original"] = r.z_original;
  j["z_hat"] = r.z_hat;
  j["delta"] = r.delta;
  j["period"] = r.period;
  j["original_increments"] = std::vector<double>(r.original_increments.begin(), r.original_increments.end());
  j["repaired_increments"] = std::vector<double>(r.repaired_increments.begin(), r.repaired_increments.end());
  j["conservation_receipt"] = {{"total_before", r.total_before}, {"total_after", r.total_after}};
  j["uniform_fallback"] = r.uniform_fallback;
  j["capped"] = r.capped;
  j["applied"] = r.applied;
  j["skip_reason"] = r.skip_reason;
  return j;
}

RepairResult redistribute_residual(const VectorXd& z, Index t_m, double z_hat, const std::vector<Index>& period) {
  if (period.empty()) throw std::invalid_argument("redistribution period is empty");
  if (!(z_hat >= 0) || !std::isfinite(z_hat)) throw std::invalid_argument("replacement estimate must be finite and >= 0");
  if (t_m < 0 || t_m >= z.size()) throw std::out_of_range("anomalous day outside the series");
  std::set<Index> seen;
  for (Index t : period) {
    if (t == t_m) throw std::invalid_argument("redistribution period contains the anomalous day");
    if (t < 0 || t >= z.size()) throw std::out_of_range("redistribution period outside the series");
    if (!seen.insert(t).second) throw std::invalid_argument("redistribution period repeats a day");
  }

  const Index k = static_cast<Index>(period.size());
  RepairResult r;
  r.t_m = t_m;
  r.z_original = z(t_m);
  r.z_hat = z_hat;
  r.period = period;
  r.original_increments.resize(k + 1);
  for (Index i = 0; i < k; ++i) r.original_increments(i) = z(period[static_cast<std::size_t>(i)]);
  r.original_increments(k) = z(t_m);
  const VectorXd base = r.original_increments.head(k);
  const double mass = base.sum();
  const double residual = z(t_m) - z_hat;
  r.total_before = r.original_increments.sum();

  VectorXd out(k);
  if (mass + residual < 0) {
    // Not enough mass before t_m to absorb the residual: empty the period.
    r.capped = true;
    out.setZero();
    r.z_hat = mass + z(t_m);
  } else {
    if (mass > 0 && (base.array() >= 0).all()) {
      out = base + residual * base / mass;
    } else {
      r.uniform_fallback = true;
      out = base.array() + residual / static_cast<double>(k);
    }
    for (Index iter = 0; iter <= k && (out.array() < 0).any(); ++iter) {
      double deficit = 0;
      for (Index i = 0; i < k; ++i) {
        if (out(i) < 0) {
          deficit -= out(i);
          out(i) = 0;
        }
      }
      const double positive = out.sum();
      if (positive > 0) out -= deficit * out / positive;
    }
    out = out.cwiseMax(0.0);
  }
  r.repaired_increments.resize(k + 1);
  r.repaired_increments << out, r.z_hat;
  r.total_after = r.repaired_increments.sum();
  r.applied = true;
  return r;
}

void apply_repair(VectorXd& z, const RepairResult& r) {
  if (!r.applied) return;
  const Index k = static_cast<Index>(r.period.size());
  for (Index i = 0; i < k; ++i) z(r.period[static_cast<std::size_t>(i)]) = r.repaired_increments(i);
  z(r.t_m) = r.repaired_increments(k);
}

double DeltaRule::operator()(double z_hat) const { return std::max(multiplier * std::sqrt(z_hat + 1.0), floor); }

RepairOutcome repair_outliers(const IncrementSeries& z, const std::vector<AnomalyRecord>& anomalies,
                              const RepairConfig& cfg, const std::map<std::string, RepairOverride>& overrides) {
  RepairOutcome out;
  out.series = z;
  VectorXd& v = out.series.values;
  const Index T = v.size();

  std::vector<Index> breaks;
  std::vector<const AnomalyRecord*> points;
  for (const auto& a : anomalies) {
    if (a.status != AnomalyStatus::Confirmed) continue;
    if (a.kind == AnomalyKind::ChangePoint) breaks.push_back(a.t_index);
    if (a.kind == AnomalyKind::PointAnomaly) points.push_back(&a);
  }
  std::sort(breaks.begin(), breaks.end());
  std::sort(points.begin(), points.end(), [](const AnomalyRecord* a, const AnomalyRecord* b) {
    return a->t_index != b->t_index ? a->t_index < b->t_index : a->id < b->id;
  });

  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& a = *points[i];
    RepairResult res;
    res.anomaly_id = a.id;
    res.t_m = a.t_index;
    const auto ov = overrides.find(a.id);
    const RepairOverride* o = ov == overrides.end() ? nullptr : &ov->second;
    res.method = o && o->method ? *o->method : cfg.method;

    const Index t_m = a.t_index;
    if (t_m < 0 || t_m >= T) {
      res.skip_reason = "anomaly day outside the series";
      out.results.push_back(std::move(res));
      continue;
    }
    res.z_original = v(t_m);
    Index seg = 0;
    for (Index b : breaks) {
      if (b < t_m) seg = b;
    }
    std::vector<Index> period;
    if (o && o->period) {
      const auto [lo, hi] = *o->period;
      if (lo < 0 || hi >= T || lo > hi || (lo <= t_m && t_m <= hi)) {
        res.skip_reason = "period override is invalid or contains the anomalous day";
        out.results.push_back(std::move(res));
        continue;
      }
      for (Index t = lo; t <= hi; ++t) period.push_back(t);
    } else {
      for (Index t = seg; t < t_m; ++t) period.push_back(t);
    }
    if (period.empty()) {
      res.skip_reason = "empty redistribution period";
      out.results.push_back(std::move(res));
      continue;
    }

    std::vector<Index> excluded;
    for (std::size_t j = i + 1; j < points.size(); ++j) excluded.push_back(points[j]->t_index);
    double z_hat = 0;
    try {
      if (res.method == RepairMethod::Manual) {
        if (!o || !o->manual_value) throw std::invalid_argument("manual repair without a value");
        z_hat = std::max(0.0, *o->manual_value);
      } else {
        z_hat = estimate_replacement(v, t_m, res.method, cfg.replacement, seg, excluded);
      }
    } catch (const std::exception& e) {
      res.skip_reason = std::string("estimation failed: ") + e.what();
      out.results.push_back(std::move(res));
      continue;
    }
    res.z_hat = z_hat;
    res.delta = cfg.delta(z_hat);
    if (std::abs(v(t_m) - z_hat) <= res.delta) {
      res.skip_reason = "residual within delta";
      out.results.push_back(std::move(res));
      continue;
    }
    auto done = redistribute_residual(v, t_m, z_hat, period);
    done.anomaly_id = a.id;
    done.method = res.method;
    done.delta = res.delta;
    apply_repair(v, done);
    out.results.push_back(std::move(done));
  }
  return out;
}

VectorXd repair_od(const VectorXd& y) {
  VectorXd out = y;
  for (Index t = out.size() - 2; t >= 0; --t) out(t) = std::min(out(t), out(t + 1));
  return out;
}

CumulativeSeries repair_od(const CumulativeSeries& y) {
  CumulativeSeries out = y;
  out.values = repair_od(y.values);
  return out;
}

CumulativeSeries repair_od_model(const CumulativeSeries& y, const RepairConfig& cfg) {
  VectorXd z = to_increments(y.values);
  for (Index t = 1; t < z.size(); ++t) {
    if (z(t) >= 0) continue;
    double z_hat = 0;
    try {
      z_hat = estimate_replacement(z, t, cfg.method == RepairMethod::Manual ? RepairMethod::Clep : cfg.method,
                                   cfg.replacement);
    } catch (const std::exception&) {
      z_hat = 0;
    }
    std::vector<Index> period(static_cast<std::size_t>(t));
    std::iota(period.begin(), period.end(), Index{0});
    apply_repair(z, redistribute_residual(z, t, z_hat, period));
  }
  CumulativeSeries out = y;
  out.values = to_cumulative(z);
  return out;
}

VectorXd integerize(const VectorXd& values) {
  const Index n = values.size();
  VectorXd out = values.array().floor();
  const long long target = std::llround(values.sum());
  long long missing = target - std::llround(out.sum());
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return values(a) - out(a) > values(b) - out(b); });
  for (std::size_t i = 0; missing > 0 && n > 0; ++i, --missing) out(order[i % order.size()]) += 1;
  return out;
}

}  // namespace cdq
