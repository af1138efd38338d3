#include "cdq/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace cdq {

namespace {

using namespace std::chrono;

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool parse_count(std::string_view text, double& out) {
  const auto t = trim(text);
  if (t.empty()) return false;
  double v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || p != t.data() + t.size()) return false;
  out = v;
  return true;
}

// "1001", "1001.0" or "01001" -> "01001".
std::optional<std::string> normalize_fips(std::string_view text) {
  double v = 0;
  if (!parse_count(text, v) || v < 0 || v != std::floor(v) || v > 99999) return std::nullopt;
  char buf[8];
  std::snprintf(buf, sizeof buf, "%05d", static_cast<int>(v));
  return std::string(buf);
}

// M/D/YY, M/D/YYYY or YYYY-MM-DD.
std::optional<Date> parse_wide_date(std::string_view text) {
  const auto t = trim(text);
  if (t.size() == 10 && t[4] == '-') {
    try {
      return parse_iso_date(t);
    } catch (const std::invalid_argument&) {
      return std::nullopt;
    }
  }
  int m = 0, d = 0, y = 0;
  char tail = 0;
  if (std::sscanf(t.c_str(), "%d/%d/%d%c", &m, &d, &y, &tail) != 3) return std::nullopt;
  if (y < 100) y += 2000;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

std::optional<Date> parse_compact_date(std::string_view text) {
  const auto t = trim(text);
  if (t.size() == 8 && std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); })) {
    const std::string iso = t.substr(0, 4) + "-" + t.substr(4, 2) + "-" + t.substr(6, 2);
    try {
      return parse_iso_date(iso);
    } catch (const std::invalid_argument&) {
      return std::nullopt;
    }
  }
  try {
    return parse_iso_date(t);
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

// Observations keyed by location, then day. Independent of row order.
class Accumulator {
 public:
  void add(SeriesKey key, Date date, double value, std::size_t line, ParseReport& report) {
    auto [it, inserted] = series_.try_emplace(key);
    auto names = std::make_pair(key.county, key.state);
    auto [n, fresh_name] = names_.try_emplace(key, names);
    if (!fresh_name && names < n->second) n->second = std::move(names);
    auto [slot, fresh] = it->second.try_emplace(date, value);
    if (!fresh) {
      report.errors.push_back({line, "duplicate observation for " + key.label() + " on " + format_iso_date(date)});
      slot->second = std::max(slot->second, value);
    }
  }

  ParsedPanel build(SourceId source, Metric metric, Level level, ParseReport report) const {
    Date first = canonical_start();
    Date last = canonical_start();
    bool any = false;
    for (const auto& [key, obs] : series_) {
      if (obs.empty()) continue;
      first = std::min(first, obs.begin()->first);
      last = any ? std::max(last, obs.rbegin()->first) : obs.rbegin()->first;
      any = true;
    }
    const Index days = any ? (last - first).count() + 1 : 0;
    std::vector<std::pair<SeriesKey, VectorXd>> rows;
    for (const auto& [key, obs] : series_) {
      VectorXd v = VectorXd::Zero(days);
      const Index lead = (obs.begin()->first - first).count();
      const Index span = (obs.rbegin()->first - obs.begin()->first).count() + 1;
      if (static_cast<Index>(obs.size()) != span || lead + span != days) {
        report.errors.push_back({0, "gap in series for " + key.label() + "; location dropped"});
        continue;
      }
      for (const auto& [date, value] : obs) v((date - first).count()) = value;
      SeriesKey named = key;
      const auto& n = names_.at(key);
      named.county = n.first;
      named.state = n.second;
      rows.emplace_back(std::move(named), std::move(v));
    }
    ParsedPanel out;
    out.panel = make_panel(source, metric, level, first, std::move(rows));
    if (out.panel.counts.cols() != days) out.panel.counts.resize(out.panel.locations(), days);
    out.report = std::move(report);
    return out;
  }

 private:
  std::map<SeriesKey, std::map<Date, double>> series_;
  std::map<SeriesKey, std::pair<std::string, std::string>> names_;
};

bool valid_count(double v) { return v >= 0 && v == std::floor(v) && std::isfinite(v); }

std::map<std::string, std::size_t> index_header(const csv::Row& header, const std::set<std::string>& known,
                                                const std::string& dialect) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto name = trim(header[i]);
    if (!known.count(name)) throw SchemaError(dialect + ": unknown column '" + name + "'");
    idx[name] = i;
  }
  return idx;
}

void require(const std::map<std::string, std::size_t>& idx, std::initializer_list<const char*> cols,
             const std::string& dialect) {
  for (const char* c : cols) {
    if (!idx.count(c)) throw SchemaError(dialect + ": missing column '" + std::string(c) + "'");
  }
}

std::string field(const csv::Row& row, std::size_t i) { return i < row.size() ? trim(row[i]) : std::string(); }

// Routes a county-level row to its key; unallocated rows become SS999.
std::optional<SeriesKey> county_key(const std::string& raw_fips, const std::string& county, const std::string& state,
                                    const GeoRuleSet& rules, std::string& error) {
  if (auto alias = rules.resolve_alias(county, state)) return SeriesKey::for_county(*alias, county, state);
  const auto lc = lower(county);
  const bool unallocated = lc == "unknown" || lc == "unassigned" || lc.find("unallocated") != std::string::npos;
  if (raw_fips.empty() || unallocated) {
    if (unallocated) {
      if (auto code = state_fips(state)) return SeriesKey::for_county(*code + "999", "Unallocated", state);
    }
    error = "missing fips for '" + county + ", " + state + "'";
    return std::nullopt;
  }
  auto f = normalize_fips(raw_fips);
  if (!f) {
    error = "malformed fips '" + raw_fips + "'";
    return std::nullopt;
  }
  const int code = std::stoi(*f);
  if (code >= 80000 && code < 81000) {
    if (auto s = state_fips(state)) return SeriesKey::for_county(*s + "998", "Out of " + state, state);
  }
  if (code >= 90000 && code < 91000) {
    if (auto s = state_fips(state)) return SeriesKey::for_county(*s + "999", "Unallocated", state);
  }
  try {
    return SeriesKey::for_county(*f, county, state);
  } catch (const std::invalid_argument& e) {
    error = e.what();
    return std::nullopt;
  }
}

ParsedPanel parse_nyt(std::istream& in, Metric metric, const GeoRuleSet& rules) {
  const std::string dialect = "NYT";
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header) throw SchemaError(dialect + ": empty payload");
  const auto idx = index_header(*header,
                                {"date", "county", "state", "fips", "cases", "deaths", "confirmed_cases",
                                 "confirmed_deaths", "probable_cases", "probable_deaths"},
                                dialect);
  require(idx, {"date", "cases", "deaths"}, dialect);
  if (metric == Metric::Recovered) throw SchemaError(dialect + ": recovered counts are not published");
  const Level level = idx.count("county") ? Level::County : idx.count("state") ? Level::State : Level::National;
  if (level == Level::County && !idx.count("fips")) throw SchemaError(dialect + ": missing column 'fips'");
  const std::size_t value_col = idx.at(metric == Metric::Infection ? "cases" : "deaths");

  ParseReport report;
  Accumulator acc;
  while (auto row = reader.next()) {
    const auto line = reader.line();
    Date date;
    try {
      date = parse_iso_date(field(*row, idx.at("date")));
    } catch (const std::invalid_argument& e) {
      report.errors.push_back({line, e.what()});
      continue;
    }
    double value = 0;
    if (!parse_count(field(*row, value_col), value) || !valid_count(value)) {
      report.errors.push_back({line, "invalid count '" + field(*row, value_col) + "'"});
      continue;
    }
    std::optional<SeriesKey> key;
    std::string error;
    if (level == Level::County) {
      key = county_key(field(*row, idx.at("fips")), field(*row, idx.at("county")), field(*row, idx.at("state")),
                       rules, error);
    } else if (level == Level::State) {
      key = SeriesKey::for_state(field(*row, idx.at("state")));
    } else {
      key = SeriesKey::national();
    }
    if (!key) {
      report.errors.push_back({line, error});
      continue;
    }
    acc.add(std::move(*key), date, value, line, report);
  }
  return acc.build(SourceId::NYT, metric, level, std::move(report));
}

ParsedPanel parse_wide(std::istream& in, SourceId source, Metric metric, const GeoRuleSet& rules) {
  const std::string dialect(to_string(source));
  if (metric == Metric::Recovered) throw SchemaError(dialect + ": recovered counts are not published");
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header) throw SchemaError(dialect + ": empty payload");

  const std::set<std::string> jhu_meta{"UID", "iso2", "iso3", "code3", "FIPS", "Admin2", "Province_State",
                                       "Country_Region", "Lat", "Long_", "Combined_Key", "Population"};
  const std::set<std::string> usaf_meta{"countyFIPS", "County Name", "State", "stateFIPS", "StateFIPS"};
  const auto& meta = source == SourceId::JHU ? jhu_meta : usaf_meta;

  std::map<std::string, std::size_t> idx;
  std::vector<std::pair<std::size_t, Date>> date_cols;
  for (std::size_t i = 0; i < header->size(); ++i) {
    const auto name = trim((*header)[i]);
    if (meta.count(name)) {
      idx[name] = i;
    } else if (auto d = parse_wide_date(name)) {
      date_cols.emplace_back(i, *d);
    } else {
      throw SchemaError(dialect + ": unknown column '" + name + "'");
    }
  }
  if (source == SourceId::JHU) {
    require(idx, {"FIPS", "Admin2", "Province_State"}, dialect);
  } else {
    require(idx, {"countyFIPS", "County Name", "State"}, dialect);
  }
  if (date_cols.empty()) throw SchemaError(dialect + ": no date columns");
  for (std::size_t i = 1; i < date_cols.size(); ++i) {
    if (date_cols[i].second - date_cols[i - 1].second != days{1}) {
      throw SchemaError(dialect + ": date columns are not contiguous at '" + trim((*header)[date_cols[i].first]) + "'");
    }
  }

  ParseReport report;
  Accumulator acc;
  while (auto row = reader.next()) {
    const auto line = reader.line();
    std::optional<SeriesKey> key;
    std::string error;
    if (source == SourceId::JHU) {
      key = county_key(field(*row, idx.at("FIPS")), field(*row, idx.at("Admin2")),
                       field(*row, idx.at("Province_State")), rules, error);
    } else {
      const auto abbrev = field(*row, idx.at("State"));
      const auto state = state_name_from_abbrev(abbrev).value_or(abbrev);
      const auto raw = field(*row, idx.at("countyFIPS"));
      auto f = normalize_fips(raw);
      if (f && *f == "00000") {
        if (auto code = state_fips(state)) key = SeriesKey::for_county(*code + "999", "Unallocated", state);
        else error = "unknown state '" + abbrev + "'";
      } else if (f && std::stoi(*f) < 1000) {
        error = "malformed fips '" + raw + "'";
      } else {
        key = county_key(raw, field(*row, idx.at("County Name")), state, rules, error);
      }
    }
    if (!key) {
      report.errors.push_back({line, error});
      continue;
    }
    bool ok = true;
    std::vector<std::pair<Date, double>> values;
    values.reserve(date_cols.size());
    for (const auto& [col, date] : date_cols) {
      double v = 0;
      if (!parse_count(field(*row, col), v) || !valid_count(v)) {
        report.errors.push_back({line, "invalid count '" + field(*row, col) + "' for " + key->label()});
        ok = false;
        break;
      }
      values.emplace_back(date, v);
    }
    if (!ok) continue;
    for (const auto& [date, v] : values) acc.add(*key, date, v, line, report);
  }
  auto parsed = acc.build(source, metric, Level::County, std::move(report));
  // Wide files share one date axis; extend back to the canonical start.
  if (parsed.panel.start > canonical_start()) {
    const Index pad = (parsed.panel.start - canonical_start()).count();
    MatrixXd c = MatrixXd::Zero(parsed.panel.locations(), parsed.panel.days() + pad);
    c.rightCols(parsed.panel.days()) = parsed.panel.counts;
    parsed.panel.counts = std::move(c);
    parsed.panel.start = canonical_start();
  }
  return parsed;
}

ParsedPanel parse_atlantic(std::istream& in, Metric metric) {
  const std::string dialect = "Atlantic";
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header) throw SchemaError(dialect + ": empty payload");
  const std::set<std::string> known{
      "date", "state", "positive", "probableCases", "negative", "pending", "totalTestResultsSource",
      "totalTestResults", "hospitalizedCurrently", "hospitalizedCumulative", "inIcuCurrently", "inIcuCumulative",
      "onVentilatorCurrently", "onVentilatorCumulative", "recovered", "lastUpdateEt", "dateModified", "checkTimeEt",
      "death", "hospitalized", "hospitalizedDischarged", "dateChecked", "totalTestsViral", "positiveTestsViral",
      "negativeTestsViral", "positiveCasesViral", "deathConfirmed", "deathProbable", "totalTestEncountersViral",
      "totalTestsPeopleViral", "totalTestsAntibody", "positiveTestsAntibody", "negativeTestsAntibody",
      "totalTestsPeopleAntibody", "positiveTestsPeopleAntibody", "negativeTestsPeopleAntibody",
      "totalTestsPeopleAntigen", "positiveTestsPeopleAntigen", "totalTestsAntigen", "positiveTestsAntigen", "fips",
      "positiveIncrease", "negativeIncrease", "total", "totalTestResultsIncrease", "posNeg", "dataQualityGrade",
      "deathIncrease", "hospitalizedIncrease", "hash", "commercialScore", "negativeRegularScore", "negativeScore",
      "positiveScore", "score", "grade"};
  const auto idx = index_header(*header, known, dialect);
  require(idx, {"date", "state"}, dialect);
  const char* value_name = metric == Metric::Infection ? "positive" : metric == Metric::Death ? "death" : "recovered";
  if (!idx.count(value_name)) throw SchemaError(dialect + ": missing column '" + std::string(value_name) + "'");
  const std::size_t value_col = idx.at(value_name);

  ParseReport report;
  Accumulator acc;
  while (auto row = reader.next()) {
    const auto line = reader.line();
    const auto date = parse_compact_date(field(*row, idx.at("date")));
    if (!date) {
      report.errors.push_back({line, "malformed date '" + field(*row, idx.at("date")) + "'"});
      continue;
    }
    const auto abbrev = field(*row, idx.at("state"));
    const auto state = state_name_from_abbrev(abbrev);
    if (!state) {
      report.errors.push_back({line, "unknown state '" + abbrev + "'"});
      continue;
    }
    const auto text = field(*row, value_col);
    if (text.empty()) continue;  // not yet reported
    double value = 0;
    if (!parse_count(text, value) || !valid_count(value)) {
      report.errors.push_back({line, "invalid count '" + text + "'"});
      continue;
    }
    acc.add(SeriesKey::for_state(*state), *date, value, line, report);
  }
  return acc.build(SourceId::Atlantic, metric, Level::State, std::move(report));
}

}  // namespace

ParsedPanel parse_source(const RawSnapshot& snapshot, Metric metric, const GeoRuleSet& rules) {
  if (snapshot.payload.empty()) throw SchemaError("empty payload from " + snapshot.origin);
  std::istringstream in(snapshot.payload);
  switch (snapshot.source) {
    case SourceId::NYT: return parse_nyt(in, metric, rules);
    case SourceId::JHU:
    case SourceId::USAFacts: return parse_wide(in, snapshot.source, metric, rules);
    case SourceId::Atlantic: return parse_atlantic(in, metric);
  }
  throw SchemaError("unknown source");
}

std::string canonical_date_column(Date date) {
  const year_month_day ymd{date};
  char buf[16];
  std::snprintf(buf, sizeof buf, "X%04d.%02u.%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

Date parse_canonical_date_column(std::string_view column) {
  if (column.size() != 11 || column[0] != 'X' || column[5] != '.' || column[8] != '.') {
    throw SchemaError("malformed date column '" + std::string(column) + "'");
  }
  std::string iso(column.substr(1));
  iso[4] = '-';
  iso[7] = '-';
  try {
    return parse_iso_date(iso);
  } catch (const std::invalid_argument&) {
    throw SchemaError("malformed date column '" + std::string(column) + "'");
  }
}

void write_canonical(const Panel& panel, std::ostream& out) {
  if (panel.locations() == 0 || panel.days() == 0) throw std::invalid_argument("write_canonical: empty panel");
  csv::Row header;
  switch (panel.level) {
    case Level::County: header = {"ID", "County", "State"}; break;
    case Level::State: header = {"State"}; break;
    case Level::National: header = {"Nation"}; break;
  }
  for (Index t = 0; t < panel.days(); ++t) header.push_back(canonical_date_column(panel.date_at(t)));
  out << csv::join(header) << '\n';
  for (Index i = 0; i < panel.locations(); ++i) {
    const auto& k = panel.keys[static_cast<std::size_t>(i)];
    csv::Row row;
    switch (panel.level) {
      case Level::County: row = {k.fips, k.county, k.state}; break;
      case Level::State: row = {k.state}; break;
      case Level::National: row = {"US"}; break;
    }
    for (Index t = 0; t < panel.days(); ++t) row.push_back(csv::format_number(panel.counts(i, t)));
    out << csv::join(row) << '\n';
  }
}

std::string canonical_text(const Panel& panel) {
  std::ostringstream ss;
  write_canonical(panel, ss);
  return ss.str();
}

void write_canonical(const Panel& panel, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_canonical(panel, out);
}

Panel read_canonical(std::istream& in, SourceId source, Metric metric) {
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header || header->empty()) throw SchemaError("canonical: empty file");
  Level level;
  std::size_t first_date = 0;
  if ((*header)[0] == "ID") {
    if (header->size() < 3 || (*header)[1] != "County" || (*header)[2] != "State") {
      throw SchemaError("canonical: expected ID,County,State");
    }
    level = Level::County;
    first_date = 3;
  } else if ((*header)[0] == "State") {
    level = Level::State;
    first_date = 1;
  } else if ((*header)[0] == "Nation") {
    level = Level::National;
    first_date = 1;
  } else {
    throw SchemaError("canonical: unknown column '" + (*header)[0] + "'");
  }
  if (header->size() <= first_date) throw SchemaError("canonical: no date columns");
  const Date start = parse_canonical_date_column((*header)[first_date]);
  for (std::size_t i = first_date; i < header->size(); ++i) {
    if (parse_canonical_date_column((*header)[i]) != start + days{static_cast<int>(i - first_date)}) {
      throw SchemaError("canonical: dates not contiguous at '" + (*header)[i] + "'");
    }
  }
  const Index n_days = static_cast<Index>(header->size() - first_date);
  std::vector<std::pair<SeriesKey, VectorXd>> rows;
  while (auto row = reader.next()) {
    if (row->size() != header->size()) {
      throw SchemaError("canonical: line " + std::to_string(reader.line()) + " has " + std::to_string(row->size()) +
                        " fields, expected " + std::to_string(header->size()));
    }
    SeriesKey key;
    if (level == Level::County) key = SeriesKey::for_county((*row)[0], (*row)[1], (*row)[2]);
    else if (level == Level::State) key = SeriesKey::for_state((*row)[0]);
    VectorXd v(n_days);
    for (Index t = 0; t < n_days; ++t) {
      const auto& text = (*row)[first_date + static_cast<std::size_t>(t)];
      double x = 0;
      if (!parse_count(text, x) || !(x >= 0)) {
        throw SchemaError("canonical: bad value '" + text + "' on line " + std::to_string(reader.line()));
      }
      v(t) = x;
    }
    rows.emplace_back(std::move(key), std::move(v));
  }
  Panel p = make_panel(source, metric, level, start, std::move(rows));
  if (p.counts.cols() != n_days) p.counts.resize(p.locations(), n_days);
  return p;
}

Panel read_canonical(const std::filesystem::path& path, SourceId source, Metric metric) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_canonical(in, source, metric);
}

EnrichedTable join_factors(const Panel& panel, std::istream& factor_csv) {
  if (panel.level != Level::County) throw std::invalid_argument("join_factors: county panel required");
  csv::Reader reader(factor_csv);
  auto header = reader.next();
  if (!header) throw SchemaError("factor table: empty");
  std::size_t id_col = header->size();
  for (std::size_t i = 0; i < header->size(); ++i) {
    const auto name = lower(trim((*header)[i]));
    if (name == "id" || name == "fips") {
      id_col = i;
      break;
    }
  }
  if (id_col == header->size()) throw SchemaError("factor table: no ID column");

  std::map<std::string, csv::Row> factors;
  while (auto row = reader.next()) {
    const auto raw = field(*row, id_col);
    const auto fips = normalize_fips(raw).value_or(raw);
    csv::Row rest;
    for (std::size_t i = 0; i < header->size(); ++i) {
      if (i != id_col) rest.push_back(field(*row, i));
    }
    if (!factors.emplace(fips, std::move(rest)).second) {
      throw std::invalid_argument("factor table: duplicate fips " + fips);
    }
  }

  EnrichedTable out;
  out.header = {"ID", "County", "State"};
  for (Index t = 0; t < panel.days(); ++t) out.header.push_back(canonical_date_column(panel.date_at(t)));
  for (std::size_t i = 0; i < header->size(); ++i) {
    if (i != id_col) out.header.push_back(trim((*header)[i]));
  }
  const std::size_t n_factor = header->size() - 1;
  for (Index i = 0; i < panel.locations(); ++i) {
    const auto& k = panel.keys[static_cast<std::size_t>(i)];
    csv::Row row{k.fips, k.county, k.state};
    for (Index t = 0; t < panel.days(); ++t) row.push_back(csv::format_number(panel.counts(i, t)));
    if (auto it = factors.find(k.fips); it != factors.end()) {
      row.insert(row.end(), it->second.begin(), it->second.end());
    } else {
      out.unmatched.push_back(k.fips);
      row.resize(row.size() + n_factor);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace cdq
