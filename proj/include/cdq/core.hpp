#pragma once

#include <chrono>
#include <compare>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cdq {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using Date = std::chrono::sys_days;

enum class Level { National, State, County };
enum class SourceId { NYT, Atlantic, JHU, USAFacts };
enum class Metric { Infection, Death, Recovered };

std::string_view to_string(Level level);
std::string_view to_string(SourceId source);
std::string_view to_string(Metric metric);

// Parsers accept the canonical spelling case-insensitively.
Level parse_level(std::string_view text);
SourceId parse_source_id(std::string_view text);
Metric parse_metric(std::string_view text);

/// First calendar day of every canonical panel.
inline constexpr std::chrono::year_month_day kCanonicalStart{std::chrono::year{2020}, std::chrono::month{1},
                                                            std::chrono::day{22}};

Date canonical_start();
Date parse_iso_date(std::string_view text);     // YYYY-MM-DD
std::string format_iso_date(Date date);
/// Weekday with Sunday = 0.
int weekday_index(Date date);

/// Two-digit state FIPS prefix for a state or territory name, if known.
std::optional<std::string> state_fips(std::string_view state_name);
std::optional<std::string> state_name_from_fips(std::string_view two_digit);
std::optional<std::string> state_name_from_abbrev(std::string_view abbrev);

/// Identity of a location. Equality and ordering use only the identifying
/// fields: (level, fips) for counties, (level, state) for states.
struct SeriesKey {
  Level level = Level::National;
  std::string fips;    // county level only, 5 digits
  std::string county;  // county level only
  std::string state;   // empty at national level

  static SeriesKey national();
  static SeriesKey for_state(std::string state_name);
  /// Throws std::invalid_argument unless fips is 5 digits whose prefix
  /// matches the state's code (when the state is known).
  static SeriesKey for_county(std::string fips, std::string county_name, std::string state_name);

  /// "US", a state name, or a fips code. Used in URLs and reports.
  std::string id() const;
  std::string label() const;

  bool operator==(const SeriesKey& other) const;
  std::strong_ordering operator<=>(const SeriesKey& other) const;
};

struct CumulativeSeries {
  SeriesKey key;
  Metric metric = Metric::Infection;
  SourceId source = SourceId::NYT;
  Date start = canonical_start();
  VectorXd values;

  Index size() const { return values.size(); }
  Date date_at(Index t) const { return start + std::chrono::days{t}; }
};

/// Daily increments; the first element equals the first cumulative value.
struct IncrementSeries {
  SeriesKey key;
  Metric metric = Metric::Infection;
  SourceId source = SourceId::NYT;
  Date start = canonical_start();
  VectorXd values;

  Index size() const { return values.size(); }
  Date date_at(Index t) const { return start + std::chrono::days{t}; }
};

VectorXd to_increments(const Eigen::Ref<const VectorXd>& cumulative);
VectorXd to_cumulative(const Eigen::Ref<const VectorXd>& increments);
IncrementSeries to_increments(const CumulativeSeries& series);
CumulativeSeries to_cumulative(const IncrementSeries& series);

/// One source, one metric, many locations over a contiguous run of days.
/// Rows of `counts` follow `keys`, which are kept sorted and unique.
struct Panel {
  SourceId source = SourceId::NYT;
  Metric metric = Metric::Infection;
  Level level = Level::County;
  Date start = canonical_start();
  std::vector<SeriesKey> keys;
  MatrixXd counts;

  Index locations() const { return static_cast<Index>(keys.size()); }
  Index days() const { return counts.cols(); }
  Date date_at(Index t) const { return start + std::chrono::days{t}; }
  Date end() const { return start + std::chrono::days{days() - 1}; }

  std::optional<Index> find(const SeriesKey& key) const;
  CumulativeSeries series(Index row) const;
  double total() const { return counts.sum(); }
};

/// Assembles a panel from unordered rows; keys are sorted, duplicates rejected.
Panel make_panel(SourceId source, Metric metric, Level level, Date start,
                 std::vector<std::pair<SeriesKey, VectorXd>> rows);

/// Sums county rows into state rows (and state rows into one national row).
Panel aggregate(const Panel& panel, Level target);

/// Restricts a panel to the inclusive date range [first, last].
Panel slice_dates(const Panel& panel, Date first, Date last);

class AlignmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace cdq
