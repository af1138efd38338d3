#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdq/compare.hpp"
#include "cdq/detect.hpp"
#include "cdq/geo.hpp"
#include "cdq/repair.hpp"

namespace cdq {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OdRepairMode { BackwardClamp, Model };

struct PipelineConfig {
  std::vector<SourceId> sources;
  /// "<SRC>" or "<SRC>.<metric>" -> URL or file path; the metric form wins.
  std::map<std::string, std::string> endpoints;
  bool offline = false;
  std::vector<Metric> metrics{Metric::Infection, Metric::Death};
  Level level = Level::County;
  GeoRuleSet geo = GeoRuleSet::defaults();

  std::filesystem::path cache_dir = "cache";
  std::filesystem::path out_dir = "out";
  std::filesystem::path decision_log = "decisions.jsonl";
  std::string snapshot_date = "current";

  SpeedConstraintConfig speed{};
  ChangePointOptions change_point{};
  std::optional<Date> cp_from;
  std::optional<Date> cp_to;
  double seasonality_alpha = 0.05;

  RepairConfig repair{};
  OdRepairMode od_mode = OdRepairMode::BackwardClamp;

  Norm norm = Norm::L2;
  double compare_threshold = 0.05;
  std::size_t compare_top = 10;

  std::string review_token;
  std::filesystem::path review_static_dir;

  std::optional<std::string> endpoint(SourceId source, Metric metric) const;
  /// Throws ConfigError on an unusable combination.
  void validate() const;
  /// Canonical JSON used for the run id.
  Json to_json() const;
};

/// Parses `key = value` lines; '#' starts a comment. Relative paths are
/// resolved against `base_dir`. Unknown keys raise ConfigError.
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");
PipelineConfig load_config(const std::filesystem::path& path);

using EnvLookup = std::function<const char*(const char*)>;

/// CDQ_ENDPOINT_<SRC>, CDQ_ENDPOINT_<SRC>_<METRIC>, CDQ_CACHE_DIR, CDQ_OUT_DIR,
/// CDQ_DECISION_LOG and CDQ_OFFLINE (1/true/yes).
void apply_env_overrides(PipelineConfig& cfg, const EnvLookup& lookup);

}  // namespace cdq
