#include "cdq/detect.hpp"

#include <algorithm>
#include <cmath>

#include "cdq/hash.hpp"
#include "cdq/numerics/special.hpp"

namespace cdq {

std::string_view to_string(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::OdViolation: return "OdViolation";
    case AnomalyKind::PointAnomaly: return "PointAnomaly";
    case AnomalyKind::ChangePoint: return "ChangePoint";
  }
  return "?";
}

std::string_view to_string(AnomalyStatus status) {
  switch (status) {
    case AnomalyStatus::Detected: return "Detected";
    case AnomalyStatus::Confirmed: return "Confirmed";
    case AnomalyStatus::Dismissed: return "Dismissed";
    case AnomalyStatus::Repaired: return "Repaired";
  }
  return "?";
}

AnomalyKind parse_anomaly_kind(std::string_view text) {
  for (auto k : {AnomalyKind::OdViolation, AnomalyKind::PointAnomaly, AnomalyKind::ChangePoint}) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown anomaly kind '" + std::string(text) + "'");
}

AnomalyStatus parse_anomaly_status(std::string_view text) {
  for (auto s : {AnomalyStatus::Detected, AnomalyStatus::Confirmed, AnomalyStatus::Dismissed, AnomalyStatus::Repaired}) {
    if (text == to_string(s)) return s;
  }
  throw std::invalid_argument("unknown anomaly status '" + std::string(text) + "'");
}

bool can_transition(AnomalyStatus from, AnomalyStatus to) {
  using S = AnomalyStatus;
  return (from == S::Detected && (to == S::Confirmed || to == S::Dismissed)) ||
         (from == S::Confirmed && to == S::Repaired);
}

void AnomalyRecord::transition(AnomalyStatus to) {
  if (!can_transition(status, to)) {
    throw InvalidTransition("anomaly " + id + ": cannot move from " + std::string(to_string(status)) + " to " +
                            std::string(to_string(to)));
  }
  status = to;
}

std::string anomaly_id(const SeriesKey& key, Metric metric, SourceId source, AnomalyKind kind, Date date) {
  const std::string text = std::string(to_string(key.level)) + ":" + key.id() + "|" + std::string(to_string(metric)) +
                           "|" + std::string(to_string(source)) + "|" + std::string(to_string(kind)) + "|" +
                           format_iso_date(date);
  return sha256_hex(text).substr(0, 16);
}

Json to_json(const SeriesKey& key) {
  Json j;
  j["level"] = to_string(key.level);
  j["id"] = key.id();
  j["fips"] = key.fips;
  j["county"] = key.county;
  j["state"] = key.state;
  return j;
}

SeriesKey series_key_from_json(const Json& j) {
  switch (parse_level(j.at("level").get<std::string>())) {
    case Level::National: return SeriesKey::national();
    case Level::State: return SeriesKey::for_state(j.at("state").get<std::string>());
    case Level::County:
      return SeriesKey::for_county(j.at("fips").get<std::string>(), j.value("county", std::string()),
                                   j.value("state", std::string()));
  }
  throw std::invalid_argument("bad key");
}

namespace {

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

AnomalyRecord make_record(const SeriesKey& key, Metric metric, SourceId source, AnomalyKind kind, Date start,
                          Index t, double magnitude) {
  AnomalyRecord r;
  r.key = key;
  r.metric = metric;
  r.source = source;
  r.kind = kind;
  r.t_index = t;
  r.date = start + std::chrono::days{t};
  r.magnitude = magnitude;
  r.id = anomaly_id(key, metric, source, kind, r.date);
  return r;
}

}  // namespace

Json to_json(const AnomalyRecord& r) {
  Json j;
  j["id"] = r.id;
  j["key"] = to_json(r.key);
  j["metric"] = to_string(r.metric);
  j["source"] = to_string(r.source);
  j["kind"] = to_string(r.kind);
  j["t_index"] = r.t_index;
  j["date"] = format_iso_date(r.date);
  j["magnitude"] = number_or_null(r.magnitude);
  j["detail"] = r.detail;
  j["status"] = to_string(r.status);
  return j;
}

AnomalyRecord anomaly_from_json(const Json& j) {
  AnomalyRecord r;
  r.id = j.at("id").get<std::string>();
  r.key = series_key_from_json(j.at("key"));
  r.metric = parse_metric(j.at("metric").get<std::string>());
  r.source = parse_source_id(j.at("source").get<std::string>());
  r.kind = parse_anomaly_kind(j.at("kind").get<std::string>());
  r.t_index = j.at("t_index").get<Index>();
  r.date = parse_iso_date(j.at("date").get<std::string>());
  r.magnitude = j.at("magnitude").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("magnitude").get<double>();
  r.detail = j.value("detail", Json::object());
  r.status = parse_anomaly_status(j.at("status").get<std::string>());
  return r;
}

void write_anomalies_jsonl(const std::vector<AnomalyRecord>& records, std::ostream& out) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::vector<AnomalyRecord> read_anomalies_jsonl(std::istream& in) {
  std::vector<AnomalyRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(anomaly_from_json(Json::parse(line)));
  }
  return out;
}

std::string warning_text(const AnomalyRecord& r) {
  return "warning: " + std::string(to_string(r.kind)) + " in " + r.key.label() + " " + std::string(to_string(r.metric)) +
         " (" + std::string(to_string(r.source)) + ") on " + format_iso_date(r.date) + " [" + r.id + "]";
}

std::vector<AnomalyRecord> detect_od_violations(const CumulativeSeries& y) {
  std::vector<AnomalyRecord> out;
  for (Index t = 1; t < y.size(); ++t) {
    const double step = y.values(t) - y.values(t - 1);
    if (step < 0) {
      auto r = make_record(y.key, y.metric, y.source, AnomalyKind::OdViolation, y.start, t, step);
      r.detail["previous"] = y.values(t - 1);
      r.detail["value"] = y.values(t);
      out.push_back(std::move(r));
    }
  }
  return out;
}

void SpeedConstraintConfig::validate() const {
  if (window_w < 2) throw std::invalid_argument("window_w must be at least 2");
  if (!(sc2 > 1)) throw std::invalid_argument("sc2 must exceed 1");
  if (!(min_count >= 0)) throw std::invalid_argument("min_count must be nonnegative");
  if (!(sc1 > 0)) throw std::invalid_argument("sc1 must be positive");
}

std::vector<AnomalyRecord> detect_point_anomalies(const CumulativeSeries& y, const SpeedConstraintConfig& cfg) {
  cfg.validate();
  std::vector<AnomalyRecord> out;
  const Index T = y.size();
  const Index w = cfg.window_w;
  if (T < w + 1) return out;
  const auto& v = y.values;
  for (Index s = 1; s < T; ++s) {
    const Index t1 = std::min(s - 1, T - 1 - w);
    const Index t2 = t1 + w;
    const double speed = (v(t2) - v(t1)) / static_cast<double>(w);
    const double jump = v(s) - v(s - 1);
    double ratio;
    if (speed > 0) {
      ratio = jump / speed;
    } else {
      ratio = jump > 0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
    const bool by_speed = speed >= cfg.sc1;
    const bool by_ratio = jump >= cfg.min_count && ratio >= cfg.sc2;
    if (!by_speed && !by_ratio) continue;
    auto r = make_record(y.key, y.metric, y.source, AnomalyKind::PointAnomaly, y.start, s, jump);
    r.detail["window_start"] = t1;
    r.detail["window_end"] = t2;
    r.detail["window_speed"] = speed;
    r.detail["ratio"] = number_or_null(ratio);
    r.detail["rule"] = by_speed && by_ratio ? "SC1+SC2" : (by_speed ? "SC1" : "SC2");
    out.push_back(std::move(r));
  }
  return out;
}

std::string_view to_string(ChangePointLink link) {
  return link == ChangePointLink::LogQuasiPoisson ? "log_quasipoisson" : "identity_gaussian";
}

ChangePointLink parse_change_point_link(std::string_view text) {
  if (text == "log_quasipoisson") return ChangePointLink::LogQuasiPoisson;
  if (text == "identity_gaussian") return ChangePointLink::IdentityGaussian;
  throw std::invalid_argument("unknown change-point link '" + std::string(text) + "'");
}

std::string_view to_string(ChangePointTest test) { return test == ChangePointTest::Wald ? "wald" : "davies"; }

ChangePointTest parse_change_point_test(std::string_view text) {
  if (text == "wald") return ChangePointTest::Wald;
  if (text == "davies") return ChangePointTest::Davies;
  throw std::invalid_argument("unknown change-point test '" + std::string(text) + "'");
}

namespace {

MatrixXd segmented_design(Index T, double phi) {
  MatrixXd x(T, 3);
  for (Index i = 0; i < T; ++i) {
    const double t = static_cast<double>(i + 1);
    x(i, 0) = 1.0;
    x(i, 1) = t;
    x(i, 2) = std::max(0.0, t - phi);
  }
  return x;
}

numerics::GlmFit fit_one(const MatrixXd& x, const VectorXd& z, const ChangePointOptions& opts) {
  const auto family = opts.link == ChangePointLink::LogQuasiPoisson ? numerics::Family::QuasiPoisson
                                                                    : numerics::Family::Gaussian;
  return numerics::irls_glm(x, z, family, opts.irls);
}

}  // namespace

ChangePointFit fit_segmented(const VectorXd& z, const ChangePointOptions& opts) {
  const Index T = z.size();
  if (opts.margin < 1) throw std::invalid_argument("change-point margin must be positive");
  if (T < 20 || T < 2 * opts.margin + 3) throw std::invalid_argument("change-point search needs at least 20 days");
  ChangePointFit best;
  best.link = opts.link;
  std::optional<numerics::GlmFit> best_fit;
  double best_dev = std::numeric_limits<double>::infinity();
  std::vector<double> wald_z;
  for (Index phi = opts.margin + 1; phi <= T - opts.margin; ++phi) {
    numerics::GlmFit fit;
    try {
      fit = fit_one(segmented_design(T, static_cast<double>(phi)), z, opts);
    } catch (const std::exception&) {
      continue;
    }
    if (!fit.converged || !std::isfinite(fit.deviance)) continue;
    best.profile.emplace_back(static_cast<double>(phi), fit.deviance);
    const double se = std::sqrt(fit.covariance(2, 2));
    wald_z.push_back(se > 0 && std::isfinite(se) && !fit.boundary ? fit.coefficients(2) / se : 0.0);
    if (fit.deviance < best_dev) {
      best_dev = fit.deviance;
      best.phi = static_cast<double>(phi);
      best_fit = std::move(fit);
    }
  }
  if (!best_fit) throw DetectionError("change-point fit failed at every candidate");
  const auto& f = *best_fit;
  best.beta0 = f.coefficients(0);
  best.beta1 = f.coefficients(1);
  best.beta2 = f.coefficients(2);
  best.se_beta2 = std::sqrt(f.covariance(2, 2));
  if (std::isfinite(best.se_beta2) && best.se_beta2 > 0 && f.residual_df > 0) {
    best.wald_p = numerics::student_t_two_sided(best.beta2 / best.se_beta2, static_cast<double>(f.residual_df));
  } else {
    best.wald_p = 1.0;
  }
  if (f.boundary) best.wald_p = 1.0;

  // Davies (1987) bound for the supremum of a standardised process observed
  // on the candidate grid: P(sup |S| > M) <= 2 Phi(-M) + V exp(-M^2/2) / sqrt(2 pi).
  double peak = 0;
  double variation = 0;
  for (std::size_t i = 0; i < wald_z.size(); ++i) {
    peak = std::max(peak, std::abs(wald_z[i]));
    if (i > 0) variation += std::abs(wald_z[i] - wald_z[i - 1]);
  }
  best.davies_p = std::min(1.0, 2.0 * numerics::normal_cdf(-peak) +
                                    variation * std::exp(-peak * peak / 2.0) / std::sqrt(2.0 * M_PI));
  if (f.boundary) best.davies_p = 1.0;
  return best;
}

std::optional<ChangePointFit> detect_change_points(const VectorXd& z, const ChangePointOptions& opts) {
  auto fit = fit_segmented(z, opts);
  const double p = opts.test == ChangePointTest::Wald ? fit.wald_p : fit.davies_p;
  if (p < opts.alpha) return fit;
  return std::nullopt;
}

AnomalyRecord change_point_record(const IncrementSeries& z, const ChangePointFit& fit) {
  const Index t = static_cast<Index>(fit.phi) - 1;
  auto r = make_record(z.key, z.metric, z.source, AnomalyKind::ChangePoint, z.start, t, fit.beta2);
  r.detail["phi"] = fit.phi;
  r.detail["beta0"] = fit.beta0;
  r.detail["beta1"] = fit.beta1;
  r.detail["beta2"] = fit.beta2;
  r.detail["se_beta2"] = fit.se_beta2;
  r.detail["wald_p"] = fit.wald_p;
  r.detail["davies_p"] = fit.davies_p;
  r.detail["link"] = to_string(fit.link);
  return r;
}

}  // namespace cdq
