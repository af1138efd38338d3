#include "cdq/core.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <map>
#include <tuple>

namespace cdq {

namespace {

struct StateInfo {
  std::string_view name;
  std::string_view abbrev;
  std::string_view fips;
};

constexpr std::array<StateInfo, 56> kStates{{
    {"Alabama", "AL", "01"},          {"Alaska", "AK", "02"},
    {"Arizona", "AZ", "04"},          {"Arkansas", "AR", "05"},
    {"California", "CA", "06"},       {"Colorado", "CO", "08"},
    {"Connecticut", "CT", "09"},      {"Delaware", "DE", "10"},
    {"District of Columbia", "DC", "11"}, {"Florida", "FL", "12"},
    {"Georgia", "GA", "13"},          {"Hawaii", "HI", "15"},
    {"Idaho", "ID", "16"},            {"Illinois", "IL", "17"},
    {"Indiana", "IN", "18"},          {"Iowa", "IA", "19"},
    {"Kansas", "KS", "20"},           {"Kentucky", "KY", "21"},
    {"Louisiana", "LA", "22"},        {"Maine", "ME", "23"},
    {"Maryland", "MD", "24"},         {"Massachusetts", "MA", "25"},
    {"Michigan", "MI", "26"},         {"Minnesota", "MN", "27"},
    {"Mississippi", "MS", "28"},      {"Missouri", "MO", "29"},
    {"Montana", "MT", "30"},          {"Nebraska", "NE", "31"},
    {"Nevada", "NV", "32"},           {"New Hampshire", "NH", "33"},
    {"New Jersey", "NJ", "34"},       {"New Mexico", "NM", "35"},
    {"New York", "NY", "36"},         {"North Carolina", "NC", "37"},
    {"North Dakota", "ND", "38"},     {"Ohio", "OH", "39"},
    {"Oklahoma", "OK", "40"},         {"Oregon", "OR", "41"},
    {"Pennsylvania", "PA", "42"},     {"Rhode Island", "RI", "44"},
    {"South Carolina", "SC", "45"},   {"South Dakota", "SD", "46"},
    {"Tennessee", "TN", "47"},        {"Texas", "TX", "48"},
    {"Utah", "UT", "49"},             {"Vermont", "VT", "50"},
    {"Virginia", "VA", "51"},         {"Washington", "WA", "53"},
    {"West Virginia", "WV", "54"},    {"Wisconsin", "WI", "55"},
    {"Wyoming", "WY", "56"},          {"American Samoa", "AS", "60"},
    {"Guam", "GU", "66"},             {"Northern Mariana Islands", "MP", "69"},
    {"Puerto Rico", "PR", "72"},      {"Virgin Islands", "VI", "78"},
}};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

}  // namespace

std::string_view to_string(Level level) {
  switch (level) {
    case Level::National: return "national";
    case Level::State: return "state";
    case Level::County: return "county";
  }
  return "?";
}

std::string_view to_string(SourceId source) {
  switch (source) {
    case SourceId::NYT: return "NYT";
    case SourceId::Atlantic: return "Atlantic";
    case SourceId::JHU: return "JHU";
    case SourceId::USAFacts: return "USAFacts";
  }
  return "?";
}

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::Infection: return "infection";
    case Metric::Death: return "death";
    case Metric::Recovered: return "recovered";
  }
  return "?";
}

Level parse_level(std::string_view text) {
  const auto t = lower(text);
  if (t == "national") return Level::National;
  if (t == "state") return Level::State;
  if (t == "county") return Level::County;
  throw std::invalid_argument("unknown level '" + std::string(text) + "'");
}

SourceId parse_source_id(std::string_view text) {
  const auto t = lower(text);
  if (t == "nyt") return SourceId::NYT;
  if (t == "atlantic") return SourceId::Atlantic;
  if (t == "jhu") return SourceId::JHU;
  if (t == "usafacts") return SourceId::USAFacts;
  throw std::invalid_argument("unknown source '" + std::string(text) + "'");
}

Metric parse_metric(std::string_view text) {
  const auto t = lower(text);
  if (t == "infection" || t == "cases" || t == "confirmed") return Metric::Infection;
  if (t == "death" || t == "deaths") return Metric::Death;
  if (t == "recovered") return Metric::Recovered;
  throw std::invalid_argument("unknown metric '" + std::string(text) + "'");
}

Date canonical_start() { return Date{kCanonicalStart}; }

Date parse_iso_date(std::string_view text) {
  int y = 0;
  unsigned m = 0, d = 0;
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw std::invalid_argument("malformed date '" + std::string(text) + "'");
  }
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    auto [p, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
    if (ec != std::errc{} || p != text.data() + pos + len) {
      throw std::invalid_argument("malformed date '" + std::string(text) + "'");
    }
  };
  num(0, 4, y);
  num(5, 2, m);
  num(8, 2, d);
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw std::invalid_argument("invalid date '" + std::string(text) + "'");
  return Date{ymd};
}

std::string format_iso_date(Date date) {
  const std::chrono::year_month_day ymd{date};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

int weekday_index(Date date) { return static_cast<int>(std::chrono::weekday{date}.c_encoding()); }

std::optional<std::string> state_fips(std::string_view state_name) {
  const auto t = lower(state_name);
  for (const auto& s : kStates) {
    if (lower(s.name) == t) return std::string(s.fips);
  }
  return std::nullopt;
}

std::optional<std::string> state_name_from_fips(std::string_view two_digit) {
  for (const auto& s : kStates) {
    if (s.fips == two_digit) return std::string(s.name);
  }
  return std::nullopt;
}

std::optional<std::string> state_name_from_abbrev(std::string_view abbrev) {
  std::string up(abbrev);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  for (const auto& s : kStates) {
    if (s.abbrev == up) return std::string(s.name);
  }
  return std::nullopt;
}

SeriesKey SeriesKey::national() { return SeriesKey{}; }

SeriesKey SeriesKey::for_state(std::string state_name) {
  SeriesKey k;
  k.level = Level::State;
  k.state = std::move(state_name);
  return k;
}

SeriesKey SeriesKey::for_county(std::string fips, std::string county_name, std::string state_name) {
  if (fips.size() != 5 || !all_digits(fips)) {
    throw std::invalid_argument("fips must be 5 digits, got '" + fips + "'");
  }
  if (const auto code = state_fips(state_name); code && fips.compare(0, 2, *code) != 0) {
    throw std::invalid_argument("fips " + fips + " does not belong to " + state_name);
  }
  SeriesKey k;
  k.level = Level::County;
  k.fips = std::move(fips);
  k.county = std::move(county_name);
  k.state = std::move(state_name);
  return k;
}

std::string SeriesKey::id() const {
  switch (level) {
    case Level::National: return "US";
    case Level::State: return state;
    case Level::County: return fips;
  }
  return {};
}

std::string SeriesKey::label() const {
  switch (level) {
    case Level::National: return "US";
    case Level::State: return state;
    case Level::County: return county + ", " + state + " (" + fips + ")";
  }
  return {};
}

bool SeriesKey::operator==(const SeriesKey& other) const {
  return level == other.level && id() == other.id();
}

std::strong_ordering SeriesKey::operator<=>(const SeriesKey& other) const {
  if (auto c = level <=> other.level; c != 0) return c;
  const auto a = id();
  const auto b = other.id();
  return a.compare(b) <=> 0;
}

VectorXd to_increments(const Eigen::Ref<const VectorXd>& cumulative) {
  VectorXd z(cumulative.size());
  if (cumulative.size() == 0) return z;
  z(0) = cumulative(0);
  z.tail(z.size() - 1) = cumulative.tail(z.size() - 1) - cumulative.head(z.size() - 1);
  return z;
}

VectorXd to_cumulative(const Eigen::Ref<const VectorXd>& increments) {
  VectorXd y(increments.size());
  double acc = 0.0;
  for (Index t = 0; t < increments.size(); ++t) {
    acc += increments(t);
    y(t) = acc;
  }
  return y;
}

IncrementSeries to_increments(const CumulativeSeries& series) {
  return IncrementSeries{series.key, series.metric, series.source, series.start, to_increments(series.values)};
}

CumulativeSeries to_cumulative(const IncrementSeries& series) {
  return CumulativeSeries{series.key, series.metric, series.source, series.start, to_cumulative(series.values)};
}

std::optional<Index> Panel::find(const SeriesKey& key) const {
  auto it = std::lower_bound(keys.begin(), keys.end(), key);
  if (it == keys.end() || !(*it == key)) return std::nullopt;
  return static_cast<Index>(it - keys.begin());
}

CumulativeSeries Panel::series(Index row) const {
  return CumulativeSeries{keys.at(static_cast<std::size_t>(row)), metric, source, start, counts.row(row).transpose()};
}

Panel make_panel(SourceId source, Metric metric, Level level, Date start,
                 std::vector<std::pair<SeriesKey, VectorXd>> rows) {
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  Panel p{source, metric, level, start, {}, {}};
  const Index days = rows.empty() ? 0 : rows.front().second.size();
  p.counts.resize(static_cast<Index>(rows.size()), days);
  p.keys.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && rows[i].first == p.keys.back()) {
      throw std::invalid_argument("duplicate location " + rows[i].first.label());
    }
    if (rows[i].second.size() != days) throw AlignmentError("panel rows differ in length");
    p.keys.push_back(std::move(rows[i].first));
    p.counts.row(static_cast<Index>(i)) = rows[i].second.transpose();
  }
  return p;
}

Panel aggregate(const Panel& panel, Level target) {
  if (target == panel.level) return panel;
  if (target > panel.level) throw std::invalid_argument("cannot disaggregate a panel");
  std::map<SeriesKey, VectorXd> sums;
  for (Index i = 0; i < panel.locations(); ++i) {
    const auto& k = panel.keys[static_cast<std::size_t>(i)];
    SeriesKey dest = target == Level::State ? SeriesKey::for_state(k.state) : SeriesKey::national();
    auto [it, inserted] = sums.try_emplace(dest, VectorXd::Zero(panel.days()));
    it->second += panel.counts.row(i).transpose();
  }
  std::vector<std::pair<SeriesKey, VectorXd>> rows(sums.begin(), sums.end());
  return make_panel(panel.source, panel.metric, target, panel.start, std::move(rows));
}

Panel slice_dates(const Panel& panel, Date first, Date last) {
  if (first < panel.start || last > panel.end() || last < first) {
    throw AlignmentError("date range outside panel");
  }
  Panel out = panel;
  const Index offset = (first - panel.start).count();
  const Index n = (last - first).count() + 1;
  out.start = first;
  out.counts = panel.counts.middleCols(offset, n);
  return out;
}

}  // namespace cdq
