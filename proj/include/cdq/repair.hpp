#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdq/core.hpp"
#include "cdq/detect.hpp"
#include "cdq/numerics/glm.hpp"

namespace cdq {

// ---- INGARCH ---------------------------------------------------------------

/// Transform applied to lagged counts in the log-mean recursion.
enum class IngarchRegressor { Log1p, Raw };

struct IngarchOptions {
  int p = 1;
  int q = 0;
  int max_iter = 100;
  double tol = 1e-8;
  IngarchRegressor regressor = IngarchRegressor::Log1p;
};

/// nu_t = beta0 + sum_k beta_k g(Z_{t-k}) + sum_l alpha_l nu_{t-l}, mu_t = exp(nu_t).
struct IngarchFit {
  int p = 0, q = 0;
  IngarchRegressor regressor = IngarchRegressor::Log1p;
  double beta0 = 0;
  VectorXd beta;
  VectorXd alpha;
  /// Log-means for every observed day; the first max(p, q) hold the warm start.
  VectorXd nu;
  numerics::GlmFit fit;

  /// exp(nu) for the day after the observed history `z`.
  double predict_next(const VectorXd& z) const;
};

class IngarchError : public std::runtime_error {
 public:
  IngarchError(const std::string& what, IngarchFit last) : std::runtime_error(what), last_(std::move(last)) {}
  const IngarchFit& last_iterate() const { return last_; }

 private:
  IngarchFit last_;
};

/// Quasi-conditional maximum likelihood. q = 0 reduces to a log-link
/// quasi-Poisson GLM on lagged regressors; q >= 1 runs Fisher scoring with
/// recursively differentiated log-means, warm-started at log(mean(Z) + 1).
IngarchFit fit_ingarch(const VectorXd& z, const IngarchOptions& opts = {});

// ---- Trend predictors ------------------------------------------------------

enum class TrendKind { ExpTrend, LinTrend, ExpAr };

std::string_view to_string(TrendKind kind);

struct TrendModel {
  TrendKind kind = TrendKind::ExpTrend;
  numerics::GlmFit fit;

  /// One-day prediction at day t (trend models) or after count z_prev (ExpAr).
  double predict(double t, double z_prev) const;
};

/// log E(Z | t) = b0 + b1 t by quasi-Poisson IRLS.
TrendModel fit_exp_trend(const VectorXd& t, const VectorXd& z);
/// E(Z | t) = b0 + b1 t by least squares.
TrendModel fit_lin_trend(const VectorXd& t, const VectorXd& z);
/// log E(Z_t | Z_{t-1}) = b0 + b1 log(Z_{t-1} + 1) by quasi-Poisson IRLS.
TrendModel fit_exp_ar(const VectorXd& z_prev, const VectorXd& z);
/// Consecutive pairs of a contiguous window.
TrendModel fit_exp_ar(const VectorXd& z);

struct PredictorInput {
  double prediction = 0;
  std::vector<double> errors;  // absolute errors, oldest first
};

/// Weights proportional to 1 / (mean absolute error over the last 5 errors
/// + eps). Equal weights unless every predictor has an error history.
double clep_combine(const std::vector<PredictorInput>& predictors, double eps = 1e-6);
std::vector<double> clep_weights(const std::vector<PredictorInput>& predictors, double eps = 1e-6);

// ---- Replacement and redistribution ---------------------------------------

enum class RepairMethod { Ingarch, Clep, Manual };

std::string_view to_string(RepairMethod method);
RepairMethod parse_repair_method(std::string_view text);

struct ReplacementConfig {
  Index lookback = 14;
  IngarchOptions ingarch{7, 0};
  double clep_eps = 1e-6;
  Index clep_error_days = 5;
};

/// Estimate for day t_m from days strictly before it, starting no earlier
/// than `history_start` and skipping any index in `excluded`. Clamped at 0.
double estimate_replacement(const VectorXd& z, Index t_m, RepairMethod method, const ReplacementConfig& cfg = {},
                            Index history_start = 0, const std::vector<Index>& excluded = {});

struct RepairResult {
  std::string anomaly_id;
  RepairMethod method = RepairMethod::Clep;
  Index t_m = 0;
  double z_original = 0;
  double z_hat = 0;
  double delta = 0;
  std::vector<Index> period;
  /// Values over period followed by t_m.
  VectorXd original_increments;
  VectorXd repaired_increments;
  double total_before = 0;
  double total_after = 0;
  bool uniform_fallback = false;
  /// The period could not absorb a negative residual; z_hat was lowered.
  bool capped = false;
  bool applied = false;
  std::string skip_reason;
};

Json to_json(const RepairResult& result);

/// Moves Z_{t_m} - z_hat onto the period in proportion to its values and
/// sets day t_m to z_hat. Negative results are clamped and the clamped mass
/// re-spread over the remaining positive days.
RepairResult redistribute_residual(const VectorXd& z, Index t_m, double z_hat, const std::vector<Index>& period);
/// Writes a result's repaired values into z.
void apply_repair(VectorXd& z, const RepairResult& result);

struct DeltaRule {
  double multiplier = 3.0;
  double floor = 10.0;
  double operator()(double z_hat) const;
};

struct RepairOverride {
  std::optional<std::pair<Index, Index>> period;  // inclusive index range
  std::optional<RepairMethod> method;
  std::optional<double> manual_value;
};

struct RepairConfig {
  RepairMethod method = RepairMethod::Clep;
  DeltaRule delta{};
  ReplacementConfig replacement{};
};

struct RepairOutcome {
  IncrementSeries series;
  std::vector<RepairResult> results;
};

/// Runs the outlier loop over Confirmed point anomalies in time order,
/// re-estimating on the partially repaired series. Confirmed change points
/// bound both the estimation history and the default period.
RepairOutcome repair_outliers(const IncrementSeries& z, const std::vector<AnomalyRecord>& anomalies,
                              const RepairConfig& cfg = {},
                              const std::map<std::string, RepairOverride>& overrides = {});

/// Backward clamp: Y'_T = Y_T, Y'_t = min(Y_t, Y'_{t+1}).
CumulativeSeries repair_od(const CumulativeSeries& y);
VectorXd repair_od(const VectorXd& y);

/// Replaces each negative increment with a model estimate and spreads the
/// residual over the preceding days. The result is nondecreasing.
CumulativeSeries repair_od_model(const CumulativeSeries& y, const RepairConfig& cfg = {});

/// Largest-remainder rounding that keeps the rounded total.
VectorXd integerize(const VectorXd& values);

}  // namespace cdq
