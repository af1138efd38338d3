#pragma once

#include <array>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdq/core.hpp"

namespace cdq {

enum class SeasonalTest { QS, Friedman, KruskalWallis, Welch };

std::string_view to_string(SeasonalTest test);

class InsufficientDataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TestResult {
  SeasonalTest test = SeasonalTest::QS;
  double statistic = 0;
  double df1 = 0;
  double df2 = 0;  // Welch only; 0 elsewhere
  double p_value = 1;
  bool significant = false;
  /// Boundary p-value from a zero-variance or all-tied input.
  bool degenerate = false;
};

// Every test takes raw daily increments plus the weekday (Sunday = 0) of
// the first element. Observations are grouped by position modulo `period`
// relative to that anchor. `significant` is filled in against alpha only
// by ensemble_seasonal; standalone calls leave it false.

/// Blocks are complete Sunday-Saturday weeks; needs at least 3.
TestResult friedman_test(const VectorXd& z, int first_weekday, int period = 7);
/// Needs at least 2 observations per weekday.
TestResult kruskal_wallis_test(const VectorXd& z, int first_weekday, int period = 7);
TestResult welch_anova_test(const VectorXd& z, int first_weekday, int period = 7);
/// Positive seasonal autocorrelation of the first differences at lags
/// period and 2*period. Needs length >= 3*period + 1.
TestResult qs_test(const VectorXd& z, int period = 7);

struct SeasonalityReport {
  SeriesKey key;
  Metric metric = Metric::Infection;
  std::vector<TestResult> results;  // tests that ran, in enum order
  std::vector<SeasonalTest> skipped;
  bool ensemble_verdict = false;
  double alpha = 0.05;
  Index n_weeks_used = 0;

  const TestResult* result(SeasonalTest test) const;
};

/// Strict majority over the tests that ran. Throws InsufficientDataError
/// when fewer than 3 could run.
SeasonalityReport ensemble_seasonal(const VectorXd& z, int first_weekday, double alpha = 0.05, int period = 7);
SeasonalityReport ensemble_seasonal(const IncrementSeries& z, double alpha = 0.05);

/// Majority vote over already-computed results.
bool majority_verdict(const std::vector<TestResult>& results, double alpha);

void write_seasonality_csv(const std::vector<SeasonalityReport>& reports, std::ostream& out);

struct WeeklyMaxProfile {
  std::vector<Date> week_starts;  // Sundays
  std::vector<int> argmax;        // weekday of the largest count, earliest on ties
  Index partial_weeks_skipped = 0;
  std::array<int, 7> counts{};
};

WeeklyMaxProfile weekly_max_profile(const VectorXd& z, Date start);

/// Weekday-of-maximum counts per location (rows of an increment panel).
std::map<SeriesKey, std::array<int, 7>> weekly_max_by_key(const Panel& increments);
/// Weekday-of-maximum counts per calendar week, pooled over locations.
std::map<Date, std::array<int, 7>> weekly_max_by_week(const Panel& increments);

enum class CycleMethod { Diff7, Ma7, WeekdayDummies, Harmonic };

CycleMethod parse_cycle_method(std::string_view text);

struct CycleRemoval {
  CycleMethod method = CycleMethod::Diff7;
  VectorXd transformed;
  /// Index in the original series of transformed(0).
  Index offset = 0;
  /// What was removed, aligned with `transformed` (fitted cycle, moving-average
  /// residual, or lagged values for diff7).
  VectorXd removed;
  VectorXd head;  // original values before `offset`
  VectorXd tail;  // original values after the transformed span
};

CycleRemoval remove_weekly_cycle(const VectorXd& z, CycleMethod method, int first_weekday = 0);
VectorXd restore_weekly_cycle(const CycleRemoval& removal);

}  // namespace cdq
