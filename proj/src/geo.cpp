#include "cdq/geo.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace cdq {

bool ExclusionRule::matches(const SeriesKey& key) const {
  switch (kind) {
    case Kind::State: return key.state == pattern;
    case Kind::CountyPrefix: return key.level == Level::County && key.county.rfind(pattern, 0) == 0;
    case Kind::FipsPrefix: return key.level == Level::County && key.fips.rfind(pattern, 0) == 0;
  }
  return false;
}

GeoRuleSet GeoRuleSet::defaults() {
  GeoRuleSet r;
  r.merges.push_back({"36061", "New York City", "New York", {"36005", "36047", "36061", "36081", "36085"}});

  // Utah reports several rural counties only as health districts.
  r.merges.push_back({"49901", "Bear River", "Utah", {"49003", "49005", "49033"}});
  r.merges.push_back({"49902", "Central Utah", "Utah", {"49023", "49027", "49031", "49039", "49041", "49055"}});
  r.merges.push_back({"49903", "Southeast Utah", "Utah", {"49007", "49015", "49019"}});
  r.merges.push_back({"49904", "Southwest Utah", "Utah", {"49001", "49017", "49021", "49025", "49053"}});
  r.merges.push_back({"49905", "TriCounty", "Utah", {"49009", "49013", "49047"}});
  r.merges.push_back({"49906", "Weber-Morgan", "Utah", {"49029", "49057"}});

  r.aliases["New York City|New York"] = "36061";
  for (const auto& m : r.merges) {
    if (m.target_state == "Utah") r.aliases[m.target_county + "|Utah"] = m.target_fips;
  }

  using K = ExclusionRule::Kind;
  for (const char* s : {"Puerto Rico", "Guam", "American Samoa", "Northern Mariana Islands", "Virgin Islands",
                        "Diamond Princess", "Grand Princess"}) {
    r.exclusions.push_back({K::State, s});
  }
  for (const char* p : {"60", "66", "69", "72", "78"}) r.exclusions.push_back({K::FipsPrefix, p});
  r.exclusions.push_back({K::CountyPrefix, "Out of"});
  return r;
}

void GeoRuleSet::validate() const {
  std::set<std::string> seen;
  for (const auto& m : merges) {
    std::set<std::string> rule(m.members.begin(), m.members.end());
    rule.insert(m.target_fips);
    for (const auto& f : rule) {
      if (!seen.insert(f).second) throw std::invalid_argument("fips " + f + " appears in two merge rules");
    }
    SeriesKey::for_county(m.target_fips, m.target_county, m.target_state);
  }
  for (const auto& [name, fips] : aliases) {
    const auto bar = name.find('|');
    if (bar == std::string::npos) throw std::invalid_argument("alias '" + name + "' must be County|State");
    try {
      SeriesKey::for_county(fips, name.substr(0, bar), name.substr(bar + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("alias '" + name + "': " + e.what());
    }
  }
}

std::optional<std::string> GeoRuleSet::resolve_alias(const std::string& county, const std::string& state) const {
  if (auto it = aliases.find(county + "|" + state); it != aliases.end()) return it->second;
  return std::nullopt;
}

double NormalizationReport::excluded_total() const {
  double total = 0;
  for (const auto& e : excluded) total += e.second;
  return total;
}

NormalizedPanel normalize_geography(const Panel& panel, const GeoRuleSet& rules) {
  NormalizedPanel out;
  std::vector<std::pair<SeriesKey, VectorXd>> kept;
  for (Index i = 0; i < panel.locations(); ++i) {
    const auto& key = panel.keys[static_cast<std::size_t>(i)];
    const bool drop = std::any_of(rules.exclusions.begin(), rules.exclusions.end(),
                                  [&](const ExclusionRule& r) { return r.matches(key); });
    if (drop) {
      out.report.excluded.emplace_back(key, panel.counts.row(i).sum());
    } else {
      kept.emplace_back(key, panel.counts.row(i).transpose());
    }
  }

  if (panel.level == Level::County) {
    for (const auto& rule : rules.merges) {
      std::set<std::string> members(rule.members.begin(), rule.members.end());
      members.insert(rule.target_fips);
      VectorXd sum = VectorXd::Zero(panel.days());
      int found = 0;
      for (auto it = kept.begin(); it != kept.end();) {
        if (members.count(it->first.fips)) {
          sum += it->second;
          ++found;
          members.erase(it->first.fips);
          it = kept.erase(it);
        } else {
          ++it;
        }
      }
      if (found == 0) continue;
      for (const auto& missing : members) {
        if (missing == rule.target_fips) continue;
        out.report.warnings.push_back("merge '" + rule.target_county + "': member " + missing + " not in panel");
      }
      auto key = SeriesKey::for_county(rule.target_fips, rule.target_county, rule.target_state);
      out.report.merged.push_back(key);
      kept.emplace_back(std::move(key), std::move(sum));
    }
  }

  out.panel = make_panel(panel.source, panel.metric, panel.level, panel.start, std::move(kept));
  if (out.panel.counts.cols() != panel.days()) out.panel.counts.resize(0, panel.days());
  return out;
}

}  // namespace cdq
