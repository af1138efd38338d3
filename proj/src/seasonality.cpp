#include "cdq/seasonality.hpp"

#include <algorithm>
#include <cmath>

#include "cdq/csv.hpp"
#include "cdq/numerics/glm.hpp"
#include "cdq/numerics/ranks.hpp"
#include "cdq/numerics/special.hpp"

namespace cdq {

namespace {

void check_period(int period, int first_weekday) {
  if (period < 2) throw std::invalid_argument("period must be at least 2");
  if (first_weekday < 0 || first_weekday >= period) throw std::invalid_argument("first weekday out of range");
}

int phase(int first_weekday, Index t, int period) { return static_cast<int>((first_weekday + t) % period); }

// First index starting a whole block, and the number of whole blocks.
std::pair<Index, Index> whole_blocks(Index n, int first_weekday, int period) {
  const Index offset = (period - first_weekday) % period;
  const Index blocks = n > offset ? (n - offset) / period : 0;
  return {offset, blocks};
}

std::vector<std::vector<double>> groups(const VectorXd& z, int first_weekday, int period) {
  std::vector<std::vector<double>> g(static_cast<std::size_t>(period));
  for (Index t = 0; t < z.size(); ++t) g[static_cast<std::size_t>(phase(first_weekday, t, period))].push_back(z(t));
  return g;
}

TestResult degenerate(SeasonalTest test, double df1, double p, double df2 = 0) {
  TestResult r;
  r.test = test;
  r.df1 = df1;
  r.df2 = df2;
  r.p_value = p;
  r.degenerate = true;
  return r;
}

}  // namespace

std::string_view to_string(SeasonalTest test) {
  switch (test) {
    case SeasonalTest::QS: return "QS";
    case SeasonalTest::Friedman: return "Friedman";
    case SeasonalTest::KruskalWallis: return "KruskalWallis";
    case SeasonalTest::Welch: return "Welch";
  }
  return "?";
}

TestResult friedman_test(const VectorXd& z, int first_weekday, int period) {
  check_period(period, first_weekday);
  const auto [offset, b] = whole_blocks(z.size(), first_weekday, period);
  if (b < 3) throw InsufficientDataError("friedman: fewer than 3 complete weeks");
  const int k = period;
  VectorXd rank_sums = VectorXd::Zero(k);
  double ties = 0;
  for (Index i = 0; i < b; ++i) {
    const VectorXd block = z.segment(offset + i * k, k);
    rank_sums += numerics::midranks(block);
    ties += numerics::tie_correction_sum(block);
  }
  const double bd = static_cast<double>(b);
  const double denom = bd * k * (k + 1) - ties / (k - 1);
  if (!(denom > 1e-9 * bd * k * (k + 1))) return degenerate(SeasonalTest::Friedman, k - 1, 1.0);
  const double stat = 12.0 * (rank_sums.array() - bd * (k + 1) / 2.0).square().sum() / denom;
  TestResult r;
  r.test = SeasonalTest::Friedman;
  r.statistic = stat;
  r.df1 = k - 1;
  r.p_value = numerics::chisq_sf(stat, k - 1);
  return r;
}

TestResult kruskal_wallis_test(const VectorXd& z, int first_weekday, int period) {
  check_period(period, first_weekday);
  const auto g = groups(z, first_weekday, period);
  for (const auto& grp : g) {
    if (grp.size() < 2) throw InsufficientDataError("kruskal-wallis: a weekday group has fewer than 2 observations");
  }
  const double n = static_cast<double>(z.size());
  const VectorXd ranks = numerics::midranks(z);
  VectorXd sums = VectorXd::Zero(period);
  VectorXd sizes = VectorXd::Zero(period);
  for (Index t = 0; t < z.size(); ++t) {
    const int p = phase(first_weekday, t, period);
    sums(p) += ranks(t);
    sizes(p) += 1;
  }
  const double correction = 1.0 - numerics::tie_correction_sum(z) / (n * n * n - n);
  if (!(correction > 1e-12)) return degenerate(SeasonalTest::KruskalWallis, period - 1, 1.0);
  const double raw = 12.0 * (sums.array().square() / sizes.array()).sum() / (n * (n + 1)) - 3.0 * (n + 1);
  TestResult r;
  r.test = SeasonalTest::KruskalWallis;
  r.statistic = std::max(0.0, raw / correction);
  r.df1 = period - 1;
  r.p_value = numerics::chisq_sf(r.statistic, period - 1);
  return r;
}

TestResult welch_anova_test(const VectorXd& z, int first_weekday, int period) {
  check_period(period, first_weekday);
  const auto g = groups(z, first_weekday, period);
  const int k = period;
  VectorXd mean(k), var(k), n(k);
  for (int j = 0; j < k; ++j) {
    const auto& grp = g[static_cast<std::size_t>(j)];
    if (grp.size() < 2) throw InsufficientDataError("welch: a weekday group has fewer than 2 observations");
    const Eigen::Map<const VectorXd> v(grp.data(), static_cast<Index>(grp.size()));
    n(j) = static_cast<double>(grp.size());
    mean(j) = v.mean();
    var(j) = (v.array() - mean(j)).square().sum() / (n(j) - 1);
  }
  const double scale = std::max(1.0, mean.cwiseAbs().maxCoeff());
  const bool zero_variance = (var.array() <= 1e-24 * scale * scale).any();
  if (zero_variance) {
    const bool same_means = (mean.array() - mean(0)).abs().maxCoeff() <= 1e-12 * scale;
    return degenerate(SeasonalTest::Welch, k - 1, same_means ? 1.0 : 0.0);
  }
  const VectorXd w = n.array() / var.array();
  const double sw = w.sum();
  const double grand = w.dot(mean) / sw;
  const double tmp = ((1.0 - w.array() / sw).square() / (n.array() - 1)).sum() / (k * k - 1.0);
  const double stat = (w.array() * (mean.array() - grand).square()).sum() / ((k - 1) * (1 + 2 * (k - 2) * tmp));
  TestResult r;
  r.test = SeasonalTest::Welch;
  r.statistic = stat;
  r.df1 = k - 1;
  r.df2 = 1.0 / (3.0 * tmp);
  r.p_value = numerics::f_sf(stat, r.df1, r.df2);
  return r;
}

TestResult qs_test(const VectorXd& z, int period) {
  if (period < 2) throw std::invalid_argument("period must be at least 2");
  if (z.size() < 3 * period + 1) throw InsufficientDataError("qs: series shorter than 3 periods + 1");
  const VectorXd d = z.tail(z.size() - 1) - z.head(z.size() - 1);
  const Index n = d.size();
  const VectorXd c = d.array() - d.mean();
  const double c0 = c.squaredNorm();
  if (!(c0 > 0)) return degenerate(SeasonalTest::QS, 2, 1.0);
  double stat = 0;
  for (int j = 1; j <= 2; ++j) {
    const Index lag = static_cast<Index>(j) * period;
    const double rho = c.head(n - lag).dot(c.tail(n - lag)) / c0;
    stat += std::pow(std::max(0.0, rho), 2) / static_cast<double>(n - lag);
  }
  stat *= static_cast<double>(n) * static_cast<double>(n + 2);
  TestResult r;
  r.test = SeasonalTest::QS;
  r.statistic = stat;
  r.df1 = 2;
  r.p_value = numerics::chisq_sf(stat, 2);
  return r;
}

const TestResult* SeasonalityReport::result(SeasonalTest test) const {
  for (const auto& r : results) {
    if (r.test == test) return &r;
  }
  return nullptr;
}

bool majority_verdict(const std::vector<TestResult>& results, double alpha) {
  const auto hits = std::count_if(results.begin(), results.end(), [&](const TestResult& r) { return r.p_value < alpha; });
  return 2 * static_cast<std::size_t>(hits) > results.size();
}

SeasonalityReport ensemble_seasonal(const VectorXd& z, int first_weekday, double alpha, int period) {
  check_period(period, first_weekday);
  if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("alpha must lie in (0, 1)");
  SeasonalityReport report;
  report.alpha = alpha;
  report.n_weeks_used = whole_blocks(z.size(), first_weekday, period).second;
  auto attempt = [&](SeasonalTest test, auto&& fn) {
    try {
      auto r = fn();
      r.significant = r.p_value < alpha;
      report.results.push_back(r);
    } catch (const InsufficientDataError&) {
      report.skipped.push_back(test);
    }
  };
  attempt(SeasonalTest::QS, [&] { return qs_test(z, period); });
  attempt(SeasonalTest::Friedman, [&] { return friedman_test(z, first_weekday, period); });
  attempt(SeasonalTest::KruskalWallis, [&] { return kruskal_wallis_test(z, first_weekday, period); });
  attempt(SeasonalTest::Welch, [&] { return welch_anova_test(z, first_weekday, period); });
  if (report.results.size() < 3) throw InsufficientDataError("fewer than 3 seasonality tests could run");
  report.ensemble_verdict = majority_verdict(report.results, alpha);
  return report;
}

SeasonalityReport ensemble_seasonal(const IncrementSeries& z, double alpha) {
  auto report = ensemble_seasonal(z.values, weekday_index(z.start), alpha, 7);
  report.key = z.key;
  report.metric = z.metric;
  return report;
}

void write_seasonality_csv(const std::vector<SeasonalityReport>& reports, std::ostream& out) {
  csv::Row header{"level", "fips", "county", "state", "metric", "n_weeks", "alpha"};
  for (auto test : {SeasonalTest::QS, SeasonalTest::Friedman, SeasonalTest::KruskalWallis, SeasonalTest::Welch}) {
    const std::string name(to_string(test));
    for (const char* suffix : {"_stat", "_p", "_sig"}) header.push_back(name + suffix);
  }
  header.push_back("ensemble");
  out << csv::join(header) << '\n';
  for (const auto& r : reports) {
    csv::Row row{std::string(to_string(r.key.level)), r.key.fips, r.key.county, r.key.state,
                 std::string(to_string(r.metric)), std::to_string(r.n_weeks_used), csv::format_number(r.alpha)};
    for (auto test : {SeasonalTest::QS, SeasonalTest::Friedman, SeasonalTest::KruskalWallis, SeasonalTest::Welch}) {
      if (const auto* t = r.result(test)) {
        row.push_back(csv::format_number(t->statistic));
        row.push_back(csv::format_number(t->p_value));
        row.push_back(t->significant ? "1" : "0");
      } else {
        row.insert(row.end(), {"", "", ""});
      }
    }
    row.push_back(r.ensemble_verdict ? "1" : "0");
    out << csv::join(row) << '\n';
  }
}

WeeklyMaxProfile weekly_max_profile(const VectorXd& z, Date start) {
  WeeklyMaxProfile p;
  const int first = weekday_index(start);
  const auto [offset, blocks] = whole_blocks(z.size(), first, 7);
  p.partial_weeks_skipped = (offset > 0 ? 1 : 0) + ((z.size() - offset - blocks * 7) > 0 ? 1 : 0);
  if (z.size() <= offset) p.partial_weeks_skipped = z.size() > 0 ? 1 : 0;
  for (Index w = 0; w < blocks; ++w) {
    Index best = 0;
    const auto week = z.segment(offset + 7 * w, 7);
    for (Index d = 1; d < 7; ++d) {
      if (week(d) > week(best)) best = d;
    }
    p.week_starts.push_back(start + std::chrono::days{offset + 7 * w});
    p.argmax.push_back(static_cast<int>(best));
    ++p.counts[static_cast<std::size_t>(best)];
  }
  return p;
}

std::map<SeriesKey, std::array<int, 7>> weekly_max_by_key(const Panel& increments) {
  std::map<SeriesKey, std::array<int, 7>> out;
  for (Index i = 0; i < increments.locations(); ++i) {
    out[increments.keys[static_cast<std::size_t>(i)]] =
        weekly_max_profile(increments.counts.row(i).transpose(), increments.start).counts;
  }
  return out;
}

std::map<Date, std::array<int, 7>> weekly_max_by_week(const Panel& increments) {
  std::map<Date, std::array<int, 7>> out;
  for (Index i = 0; i < increments.locations(); ++i) {
    const auto p = weekly_max_profile(increments.counts.row(i).transpose(), increments.start);
    for (std::size_t w = 0; w < p.week_starts.size(); ++w) ++out[p.week_starts[w]][static_cast<std::size_t>(p.argmax[w])];
  }
  return out;
}

CycleMethod parse_cycle_method(std::string_view text) {
  if (text == "diff7") return CycleMethod::Diff7;
  if (text == "ma7") return CycleMethod::Ma7;
  if (text == "weekday_dummies") return CycleMethod::WeekdayDummies;
  if (text == "harmonic") return CycleMethod::Harmonic;
  throw std::invalid_argument("unknown cycle method '" + std::string(text) + "'");
}

CycleRemoval remove_weekly_cycle(const VectorXd& z, CycleMethod method, int first_weekday) {
  check_period(7, first_weekday);
  const Index T = z.size();
  CycleRemoval r;
  r.method = method;
  switch (method) {
    case CycleMethod::Diff7: {
      if (T < 15) throw InsufficientDataError("diff7 needs at least 15 days");
      r.offset = 7;
      r.head = z.head(7);
      r.removed = z.head(T - 7);
      r.transformed = z.tail(T - 7) - r.removed;
      return r;
    }
    case CycleMethod::Ma7: {
      if (T < 15) throw InsufficientDataError("ma7 needs at least 15 days");
      r.offset = 3;
      r.head = z.head(3);
      r.tail = z.tail(3);
      r.transformed.resize(T - 6);
      for (Index t = 3; t < T - 3; ++t) r.transformed(t - 3) = z.segment(t - 3, 7).mean();
      r.removed = z.segment(3, T - 6) - r.transformed;
      return r;
    }
    case CycleMethod::WeekdayDummies:
    case CycleMethod::Harmonic: {
      if (T < 21) throw InsufficientDataError("regression cycle removal needs at least 21 days");
      MatrixXd x(T, 7);
      for (Index t = 0; t < T; ++t) {
        const int day = phase(first_weekday, t, 7);
        x(t, 0) = 1.0;
        if (method == CycleMethod::WeekdayDummies) {
          for (int j = 1; j < 7; ++j) x(t, j) = day == j ? 1.0 : 0.0;
        } else {
          for (int j = 1; j <= 3; ++j) {
            const double angle = 2.0 * M_PI * j * day / 7.0;
            x(t, 2 * j - 1) = std::sin(angle);
            x(t, 2 * j) = std::cos(angle);
          }
        }
      }
      const auto fit = numerics::ols_fit(x, z);
      r.removed = fit.fitted;
      r.transformed = z - fit.fitted;
      return r;
    }
  }
  throw std::invalid_argument("unknown cycle method");
}

VectorXd restore_weekly_cycle(const CycleRemoval& r) {
  switch (r.method) {
    case CycleMethod::Diff7: {
      const Index T = r.transformed.size() + 7;
      VectorXd z(T);
      z.head(7) = r.head;
      for (Index t = 7; t < T; ++t) z(t) = r.transformed(t - 7) + z(t - 7);
      return z;
    }
    case CycleMethod::Ma7: {
      VectorXd z(r.transformed.size() + 6);
      z << r.head, r.transformed + r.removed, r.tail;
      return z;
    }
    case CycleMethod::WeekdayDummies:
    case CycleMethod::Harmonic:
      return r.transformed + r.removed;
  }
  throw std::invalid_argument("unknown cycle method");
}

}  // namespace cdq
