#pragma once

#include <filesystem>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdq/core.hpp"
#include "cdq/csv.hpp"
#include "cdq/geo.hpp"

namespace cdq {

/// Bytes of one source download together with where they came from.
struct RawSnapshot {
  SourceId source = SourceId::NYT;
  std::string retrieved_at;  // ISO-8601 UTC
  std::string payload;
  std::string origin;        // URL or file path
  std::string content_hash;  // sha256 of payload
};

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct ParseReport {
  std::vector<RowError> errors;
};

struct ParsedPanel {
  Panel panel;
  ParseReport report;
};

/// Parses one of the four source dialects into a panel aligned to start on
/// 2020-01-22 (or earlier if the data does). Leading days before a
/// location's first observation are zero; interior or trailing gaps drop
/// the location with a report entry. Aliases from `rules` resolve names
/// before fips columns are read.
///
///   NYT       long:  date,[county,][state,][fips,]cases,deaths
///   JHU       wide:  UID,...,FIPS,Admin2,Province_State,...,M/D/YY...
///   USAFacts  wide:  countyFIPS,County Name,State,stateFIPS,M/D/YY...
///   Atlantic  long:  date(YYYYMMDD),state(abbrev),positive,death,recovered,...
ParsedPanel parse_source(const RawSnapshot& snapshot, Metric metric, const GeoRuleSet& rules = GeoRuleSet::defaults());

/// Canonical wide layout: ID,County,State,X2020.01.22,... for counties;
/// State,X... for states; Nation,X... for the national series.
void write_canonical(const Panel& panel, std::ostream& out);
void write_canonical(const Panel& panel, const std::filesystem::path& path);
std::string canonical_text(const Panel& panel);
Panel read_canonical(std::istream& in, SourceId source, Metric metric);
Panel read_canonical(const std::filesystem::path& path, SourceId source, Metric metric);

/// "X2020.01.22" <-> date.
std::string canonical_date_column(Date date);
Date parse_canonical_date_column(std::string_view column);

struct EnrichedTable {
  csv::Row header;
  std::vector<csv::Row> rows;
  std::vector<std::string> unmatched;  // panel fips absent from the factor table
};

/// Left join of a county panel with a factor table keyed by an ID (fips)
/// column. Throws std::invalid_argument on a duplicated fips.
EnrichedTable join_factors(const Panel& panel, std::istream& factor_csv);

}  // namespace cdq
