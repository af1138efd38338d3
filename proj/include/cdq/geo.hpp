#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdq/core.hpp"

namespace cdq {

/// Sums member counties into one pseudo-location. The target fips is
/// always treated as a member.
struct MergeRule {
  std::string target_fips;
  std::string target_county;
  std::string target_state;
  std::vector<std::string> members;
};

struct ExclusionRule {
  enum class Kind { State, CountyPrefix, FipsPrefix };
  Kind kind = Kind::State;
  std::string pattern;

  bool matches(const SeriesKey& key) const;
};

struct GeoRuleSet {
  std::vector<MergeRule> merges;
  std::vector<ExclusionRule> exclusions;
  /// "County|State" -> fips. Consulted while parsing, before any fips column.
  std::map<std::string, std::string> aliases;

  /// NYC borough merge, Utah health-district merges, island territories
  /// and cruise ships excluded.
  static GeoRuleSet defaults();

  /// Throws std::invalid_argument when a fips sits in two merge rules or an
  /// alias does not resolve to a valid county code.
  void validate() const;
  std::optional<std::string> resolve_alias(const std::string& county, const std::string& state) const;
};

struct NormalizationReport {
  std::vector<std::string> warnings;
  /// Removed locations with the sum of their counts over all days.
  std::vector<std::pair<SeriesKey, double>> excluded;
  std::vector<SeriesKey> merged;

  double excluded_total() const;
};

struct NormalizedPanel {
  Panel panel;
  NormalizationReport report;
};

/// Applies exclusions, then merges. Missing merge members only warn.
NormalizedPanel normalize_geography(const Panel& panel, const GeoRuleSet& rules);

}  // namespace cdq
