#include "cdq/config.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "cdq/fetch.hpp"
#include "cdq/io.hpp"

namespace cdq {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  if (v == "inf" || v == "+inf" || v == "infinity") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& v) {
  std::filesystem::path p(v);
  return p.is_absolute() ? p : (base / p).lexically_normal();
}

std::string resolve_endpoint(const std::filesystem::path& base, const std::string& v) {
  return is_url(v) ? v : resolve(base, v).string();
}

template <typename Fn>
auto wrap(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

// merge value: target_fips|County|State|member member ...
MergeRule parse_merge(const std::string& v) {
  const auto parts = split_list(v, '|');
  if (parts.size() != 4) throw ConfigError("geo.merge: expected fips|County|State|members");
  MergeRule m{parts[0], parts[1], parts[2], {}};
  std::stringstream ss(parts[3]);
  std::string f;
  while (ss >> f) m.members.push_back(f);
  return m;
}

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return s;
}

}  // namespace

std::optional<std::string> PipelineConfig::endpoint(SourceId source, Metric metric) const {
  const std::string src(to_string(source));
  if (auto it = endpoints.find(src + "." + std::string(to_string(metric))); it != endpoints.end()) return it->second;
  if (auto it = endpoints.find(src); it != endpoints.end()) return it->second;
  return std::nullopt;
}

void PipelineConfig::validate() const {
  if (sources.empty()) throw ConfigError("no sources enabled");
  if (metrics.empty()) throw ConfigError("no metrics selected");
  if (out_dir.empty()) throw ConfigError("out_dir is empty");
  for (auto s : sources) {
    if (s == SourceId::Atlantic && level == Level::County) {
      throw ConfigError("Atlantic has no county-level data; drop it or use level = State");
    }
    for (auto m : metrics) {
      if (!endpoint(s, m)) {
        throw ConfigError("no endpoint for " + std::string(to_string(s)) + " " + std::string(to_string(m)));
      }
    }
  }
  try {
    geo.validate();
    speed.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(change_point.alpha > 0 && change_point.alpha < 1)) throw ConfigError("detect.alpha_cp must lie in (0, 1)");
  if (!(seasonality_alpha > 0 && seasonality_alpha < 1)) throw ConfigError("seasonality.alpha must lie in (0, 1)");
  if (repair.replacement.lookback < 5) throw ConfigError("repair.lookback must be at least 5");
}

Json PipelineConfig::to_json() const {
  Json j;
  j["sources"] = Json::array();
  for (auto s : sources) j["sources"].push_back(to_string(s));
  j["endpoints"] = Json::object();
  for (const auto& [k, v] : endpoints) j["endpoints"][k] = v;
  j["offline"] = offline;
  j["metrics"] = Json::array();
  for (auto m : metrics) j["metrics"].push_back(to_string(m));
  j["level"] = to_string(level);
  Json geo_j;
  geo_j["merges"] = Json::array();
  for (const auto& m : geo.merges) {
    geo_j["merges"].push_back({{"target", m.target_fips}, {"county", m.target_county}, {"state", m.target_state},
                               {"members", m.members}});
  }
  geo_j["exclusions"] = Json::array();
  for (const auto& e : geo.exclusions) geo_j["exclusions"].push_back({static_cast<int>(e.kind), e.pattern});
  geo_j["aliases"] = Json::object();
  for (const auto& [k, v] : geo.aliases) geo_j["aliases"][k] = v;
  j["geo"] = geo_j;
  j["snapshot_date"] = snapshot_date;
  j["speed"] = {{"window_w", speed.window_w},
                {"sc1", std::isfinite(speed.sc1) ? Json(speed.sc1) : Json("inf")},
                {"sc2", speed.sc2},
                {"min_count", speed.min_count}};
  j["change_point"] = {{"link", to_string(change_point.link)},
                       {"test", to_string(change_point.test)},
                       {"alpha", change_point.alpha},
                       {"margin", change_point.margin},
                       {"from", cp_from ? format_iso_date(*cp_from) : ""},
                       {"to", cp_to ? format_iso_date(*cp_to) : ""}};
  j["seasonality_alpha"] = seasonality_alpha;
  j["repair"] = {{"method", to_string(repair.method)},
                 {"delta_multiplier", repair.delta.multiplier},
                 {"delta_floor", repair.delta.floor},
                 {"lookback", repair.replacement.lookback},
                 {"ingarch_p", repair.replacement.ingarch.p},
                 {"ingarch_q", repair.replacement.ingarch.q},
                 {"od_mode", od_mode == OdRepairMode::BackwardClamp ? "clamp" : "model"}};
  j["compare"] = {{"norm", norm == Norm::L2 ? "L2" : "L1"},
                  {"threshold", compare_threshold},
                  {"top", compare_top}};
  return j;
}

PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  PipelineConfig cfg;
  bool geo_defaults = true;
  GeoRuleSet extra;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "sources") {
      cfg.sources.clear();
      for (const auto& s : split_list(value)) cfg.sources.push_back(wrap(key, [&] { return parse_source_id(s); }));
    } else if (key.rfind("endpoint.", 0) == 0) {
      const auto rest = key.substr(9);
      const auto dot = rest.find('.');
      const auto src = wrap(key, [&] { return parse_source_id(rest.substr(0, dot)); });
      std::string name(to_string(src));
      if (dot != std::string::npos) {
        name += "." + std::string(to_string(wrap(key, [&] { return parse_metric(rest.substr(dot + 1)); })));
      }
      cfg.endpoints[name] = resolve_endpoint(base_dir, value);
    } else if (key == "offline") {
      cfg.offline = parse_bool(key, value);
    } else if (key == "metrics") {
      cfg.metrics.clear();
      for (const auto& m : split_list(value)) cfg.metrics.push_back(wrap(key, [&] { return parse_metric(m); }));
    } else if (key == "level") {
      cfg.level = wrap(key, [&] { return parse_level(value); });
    } else if (key == "geo.defaults") {
      geo_defaults = parse_bool(key, value);
    } else if (key == "geo.merge") {
      extra.merges.push_back(parse_merge(value));
    } else if (key == "geo.alias") {
      const auto e = value.rfind('=');
      if (e == std::string::npos) throw ConfigError("geo.alias: expected County|State=fips");
      extra.aliases[trim(value.substr(0, e))] = trim(value.substr(e + 1));
    } else if (key == "geo.exclude_state") {
      extra.exclusions.push_back({ExclusionRule::Kind::State, value});
    } else if (key == "geo.exclude_fips_prefix") {
      extra.exclusions.push_back({ExclusionRule::Kind::FipsPrefix, value});
    } else if (key == "geo.exclude_county_prefix") {
      extra.exclusions.push_back({ExclusionRule::Kind::CountyPrefix, value});
    } else if (key == "cache_dir") {
      cfg.cache_dir = resolve(base_dir, value);
    } else if (key == "out_dir") {
      cfg.out_dir = resolve(base_dir, value);
    } else if (key == "decision_log") {
      cfg.decision_log = resolve(base_dir, value);
    } else if (key == "snapshot_date") {
      cfg.snapshot_date = value;
    } else if (key == "detect.window_w") {
      cfg.speed.window_w = parse_int(key, value);
    } else if (key == "detect.sc1") {
      cfg.speed.sc1 = parse_double(key, value);
    } else if (key == "detect.sc2") {
      cfg.speed.sc2 = parse_double(key, value);
    } else if (key == "detect.min_count") {
      cfg.speed.min_count = parse_double(key, value);
    } else if (key == "detect.alpha_cp") {
      cfg.change_point.alpha = parse_double(key, value);
    } else if (key == "detect.cp_link") {
      cfg.change_point.link = wrap(key, [&] { return parse_change_point_link(value); });
    } else if (key == "detect.cp_test") {
      cfg.change_point.test = wrap(key, [&] { return parse_change_point_test(value); });
    } else if (key == "detect.cp_margin") {
      cfg.change_point.margin = parse_int(key, value);
    } else if (key == "detect.cp_from") {
      cfg.cp_from = wrap(key, [&] { return parse_iso_date(value); });
    } else if (key == "detect.cp_to") {
      cfg.cp_to = wrap(key, [&] { return parse_iso_date(value); });
    } else if (key == "seasonality.alpha") {
      cfg.seasonality_alpha = parse_double(key, value);
    } else if (key == "repair.method") {
      cfg.repair.method = wrap(key, [&] { return parse_repair_method(value); });
    } else if (key == "repair.delta_multiplier") {
      cfg.repair.delta.multiplier = parse_double(key, value);
    } else if (key == "repair.delta_floor") {
      cfg.repair.delta.floor = parse_double(key, value);
    } else if (key == "repair.lookback") {
      cfg.repair.replacement.lookback = parse_int(key, value);
    } else if (key == "repair.ingarch_p") {
      cfg.repair.replacement.ingarch.p = static_cast<int>(parse_int(key, value));
    } else if (key == "repair.ingarch_q") {
      cfg.repair.replacement.ingarch.q = static_cast<int>(parse_int(key, value));
    } else if (key == "repair.od_mode") {
      if (value == "clamp") {
        cfg.od_mode = OdRepairMode::BackwardClamp;
      } else if (value == "model") {
        cfg.od_mode = OdRepairMode::Model;
      } else {
        throw ConfigError("repair.od_mode: expected clamp or model");
      }
    } else if (key == "compare.norm") {
      cfg.norm = wrap(key, [&] { return parse_norm(value); });
    } else if (key == "compare.threshold") {
      cfg.compare_threshold = parse_double(key, value);
    } else if (key == "compare.top") {
      cfg.compare_top = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "review.token") {
      cfg.review_token = value;
    } else if (key == "review.static_dir") {
      cfg.review_static_dir = resolve(base_dir, value);
    } else {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  if (!geo_defaults) cfg.geo = GeoRuleSet{};
  cfg.geo.merges.insert(cfg.geo.merges.end(), extra.merges.begin(), extra.merges.end());
  cfg.geo.exclusions.insert(cfg.geo.exclusions.end(), extra.exclusions.begin(), extra.exclusions.end());
  for (const auto& [k, v] : extra.aliases) cfg.geo.aliases[k] = v;
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

void apply_env_overrides(PipelineConfig& cfg, const EnvLookup& lookup) {
  for (auto s : {SourceId::NYT, SourceId::Atlantic, SourceId::JHU, SourceId::USAFacts}) {
    const std::string src(to_string(s));
    const std::string var = "CDQ_ENDPOINT_" + upper(src);
    if (const char* v = lookup(var.c_str())) cfg.endpoints[src] = v;
    for (auto m : {Metric::Infection, Metric::Death, Metric::Recovered}) {
      const std::string mvar = var + "_" + upper(std::string(to_string(m)));
      if (const char* v = lookup(mvar.c_str())) cfg.endpoints[src + "." + std::string(to_string(m))] = v;
    }
  }
  if (const char* v = lookup("CDQ_CACHE_DIR")) cfg.cache_dir = v;
  if (const char* v = lookup("CDQ_OUT_DIR")) cfg.out_dir = v;
  if (const char* v = lookup("CDQ_DECISION_LOG")) cfg.decision_log = v;
  if (const char* v = lookup("CDQ_OFFLINE")) cfg.offline = parse_bool("CDQ_OFFLINE", v);
}

}  // namespace cdq
