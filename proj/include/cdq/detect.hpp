#pragma once

#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdq/core.hpp"
#include "cdq/numerics/glm.hpp"

namespace cdq {

using Json = nlohmann::ordered_json;

enum class AnomalyKind { OdViolation, PointAnomaly, ChangePoint };
enum class AnomalyStatus { Detected, Confirmed, Dismissed, Repaired };

std::string_view to_string(AnomalyKind kind);
std::string_view to_string(AnomalyStatus status);
AnomalyKind parse_anomaly_kind(std::string_view text);
AnomalyStatus parse_anomaly_status(std::string_view text);

/// Detected -> Confirmed | Dismissed, Confirmed -> Repaired.
bool can_transition(AnomalyStatus from, AnomalyStatus to);

class InvalidTransition : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct AnomalyRecord {
  std::string id;
  SeriesKey key;
  Metric metric = Metric::Infection;
  SourceId source = SourceId::NYT;
  AnomalyKind kind = AnomalyKind::OdViolation;
  Index t_index = 0;  // 0-based day offset from the series start
  Date date;
  double magnitude = 0;
  Json detail = Json::object();
  AnomalyStatus status = AnomalyStatus::Detected;

  /// Throws InvalidTransition for moves outside the lifecycle.
  void transition(AnomalyStatus to);
};

/// First 16 hex digits of sha256("<key id>|<metric>|<source>|<kind>|<date>").
std::string anomaly_id(const SeriesKey& key, Metric metric, SourceId source, AnomalyKind kind, Date date);

Json to_json(const SeriesKey& key);
SeriesKey series_key_from_json(const Json& j);
Json to_json(const AnomalyRecord& record);
AnomalyRecord anomaly_from_json(const Json& j);

void write_anomalies_jsonl(const std::vector<AnomalyRecord>& records, std::ostream& out);
std::vector<AnomalyRecord> read_anomalies_jsonl(std::istream& in);

/// One line for standard error naming key, date and kind.
std::string warning_text(const AnomalyRecord& record);

/// One record per day whose cumulative value falls below the previous day's.
std::vector<AnomalyRecord> detect_od_violations(const CumulativeSeries& y);

struct SpeedConstraintConfig {
  Index window_w = 14;
  double sc1 = std::numeric_limits<double>::infinity();
  double sc2 = 5.0;
  double min_count = 30;

  void validate() const;
};

/// Day s is tested against the window [t1, t1 + w] with t1 = min(s - 1, T - 1 - w).
/// It is flagged when the window speed reaches sc1, or when Z_s >= min_count
/// and Z_s / speed reaches sc2. A positive jump over a flat or falling window
/// counts as an infinite ratio. Series shorter than w + 1 days yield nothing.
std::vector<AnomalyRecord> detect_point_anomalies(const CumulativeSeries& y, const SpeedConstraintConfig& cfg = {});

enum class ChangePointLink { LogQuasiPoisson, IdentityGaussian };
/// Which p-value gates detection.
enum class ChangePointTest { Wald, Davies };

std::string_view to_string(ChangePointLink link);
ChangePointLink parse_change_point_link(std::string_view text);
std::string_view to_string(ChangePointTest test);
ChangePointTest parse_change_point_test(std::string_view text);

struct ChangePointFit {
  double phi = 0;  // 1-based day of the joint
  double beta0 = 0, beta1 = 0, beta2 = 0;
  double se_beta2 = 0;
  double wald_p = 1;
  /// Davies upper bound over the whole candidate grid, accounting for the
  /// search over phi.
  double davies_p = 1;
  ChangePointLink link = ChangePointLink::LogQuasiPoisson;
  std::vector<std::pair<double, double>> profile;  // (phi, deviance)
};

struct ChangePointOptions {
  ChangePointLink link = ChangePointLink::LogQuasiPoisson;
  double alpha = 0.01;
  ChangePointTest test = ChangePointTest::Davies;
  Index margin = 5;
  numerics::IrlsOptions irls{};
};

class DetectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Profile search over integer joints phi in [margin + 1, T - margin] for
/// g(mu_t) = b0 + b1 t + b2 (t - phi)_+, t = 1..T. Returns the deviance
/// minimiser (smallest phi on ties) with a Wald p-value for b2 on T - 3
/// degrees of freedom. Throws DetectionError when no candidate can be fitted.
ChangePointFit fit_segmented(const VectorXd& z, const ChangePointOptions& opts = {});

/// The fit when the p-value chosen by opts.test is below opts.alpha.
std::optional<ChangePointFit> detect_change_points(const VectorXd& z, const ChangePointOptions& opts = {});

AnomalyRecord change_point_record(const IncrementSeries& z, const ChangePointFit& fit);

}  // namespace cdq
