#pragma once

#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "cdq/config.hpp"
#include "cdq/decisions.hpp"
#include "cdq/detect.hpp"
#include "cdq/ingest.hpp"
#include "cdq/repair.hpp"

namespace cdq {

enum class Stage { Fetch, Ingest, Compare, Seasonality, Detect, Repair, Report };

std::string_view to_string(Stage stage);
/// The stage plus everything it depends on.
std::set<Stage> stages_through(Stage stage);
std::set<Stage> all_stages();

struct StageReport {
  explicit StageReport(std::string stage_name = {}) : name(std::move(stage_name)) {}

  std::string name;
  bool ok = true;
  std::vector<std::string> errors;
  Json counts = Json::object();
};

struct RunReport {
  std::string run_id;
  std::vector<StageReport> stages;

  bool ok() const;
  const StageReport* stage(std::string_view name) const;
  Json to_json() const;
};

// Artifact layout under the output directory.
std::string panel_stem(SourceId source, Metric metric, Level level);
std::filesystem::path canonical_path(const std::filesystem::path& out, SourceId s, Metric m, Level l);
std::filesystem::path repaired_path(const std::filesystem::path& out, SourceId s, Metric m, Level l);
std::filesystem::path provenance_path(const std::filesystem::path& out, SourceId s, Metric m, Level l);
std::filesystem::path anomalies_path(const std::filesystem::path& out);
std::filesystem::path repair_results_path(const std::filesystem::path& out);
std::filesystem::path run_report_path(const std::filesystem::path& out);

struct CellChange {
  SeriesKey key;
  Index t_index = 0;
  Date date;
  double before = 0;
  double after = 0;
};

/// Every cell where the two panels differ. Throws AlignmentError unless the
/// panels share keys and days.
std::vector<CellChange> diff_panels(const Panel& before, const Panel& after);
Json provenance_json(const Panel& before, const Panel& after, const std::string& run_id);

/// Detection and repair of one series, shared by the pipeline and the
/// review service's proposed-repair overlay.
struct SeriesOutcome {
  std::vector<AnomalyRecord> records;
  VectorXd od_repaired;  // cumulative
  VectorXd repaired;     // cumulative, after confirmed outlier repair
  std::vector<RepairResult> repairs;
  std::vector<std::string> errors;
};

SeriesOutcome process_series(const CumulativeSeries& y, const PipelineConfig& cfg, const DecisionLog& decisions,
                             bool repair);

/// Runs the requested stages in order and writes every artifact
/// atomically. Warnings for detected anomalies go to `warnings`.
RunReport run_pipeline(const PipelineConfig& cfg, const std::set<Stage>& stages, std::ostream& warnings);
RunReport run_pipeline(const PipelineConfig& cfg);

}  // namespace cdq
