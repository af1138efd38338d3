#include "cdq/pipeline.hpp"

#include <algorithm>
#include <iostream>
#include <map>
#include <sstream>

#include "cdq/compare.hpp"
#include "cdq/csv.hpp"
#include "cdq/fetch.hpp"
#include "cdq/hash.hpp"
#include "cdq/io.hpp"
#include "cdq/seasonality.hpp"

namespace cdq {

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::Fetch: return "fetch";
    case Stage::Ingest: return "ingest";
    case Stage::Compare: return "compare";
    case Stage::Seasonality: return "seasonality";
    case Stage::Detect: return "detect";
    case Stage::Repair: return "repair";
    case Stage::Report: return "report";
  }
  return "?";
}

std::set<Stage> stages_through(Stage stage) {
  std::set<Stage> s{Stage::Fetch};
  if (stage == Stage::Fetch) return s;
  s.insert(Stage::Ingest);
  if (stage == Stage::Compare || stage == Stage::Seasonality || stage == Stage::Detect) s.insert(stage);
  if (stage == Stage::Repair) s.insert({Stage::Detect, Stage::Repair});
  if (stage == Stage::Report) return all_stages();
  s.insert(Stage::Report);
  return s;
}

std::set<Stage> all_stages() {
  return {Stage::Fetch, Stage::Ingest, Stage::Compare, Stage::Seasonality, Stage::Detect, Stage::Repair, Stage::Report};
}

bool RunReport::ok() const {
  return std::all_of(stages.begin(), stages.end(), [](const StageReport& s) { return s.ok; });
}

const StageReport* RunReport::stage(std::string_view name) const {
  for (const auto& s : stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

Json RunReport::to_json() const {
  Json j;
  j["run_id"] = run_id;
  j["ok"] = ok();
  j["stages"] = Json::array();
  for (const auto& s : stages) {
    j["stages"].push_back({{"name", s.name}, {"ok", s.ok}, {"errors", s.errors}, {"counts", s.counts}});
  }
  return j;
}

std::string panel_stem(SourceId source, Metric metric, Level level) {
  return std::string(to_string(source)) + "_" + std::string(to_string(metric)) + "_" + std::string(to_string(level));
}

std::filesystem::path canonical_path(const std::filesystem::path& out, SourceId s, Metric m, Level l) {
  return out / "canonical" / (panel_stem(s, m, l) + ".csv");
}
std::filesystem::path repaired_path(const std::filesystem::path& out, SourceId s, Metric m, Level l) {
  return out / "repaired" / (panel_stem(s, m, l) + ".csv");
}
std::filesystem::path provenance_path(const std::filesystem::path& out, SourceId s, Metric m, Level l) {
  return out / "repaired" / (panel_stem(s, m, l) + ".provenance.json");
}
std::filesystem::path anomalies_path(const std::filesystem::path& out) { return out / "anomalies.jsonl"; }
std::filesystem::path repair_results_path(const std::filesystem::path& out) { return out / "repair_results.jsonl"; }
std::filesystem::path run_report_path(const std::filesystem::path& out) { return out / "run_report.json"; }

std::vector<CellChange> diff_panels(const Panel& before, const Panel& after) {
  if (before.keys != after.keys || before.start != after.start || before.days() != after.days()) {
    throw AlignmentError("diff_panels: panels do not share keys and days");
  }
  std::vector<CellChange> out;
  for (Index i = 0; i < before.locations(); ++i) {
    for (Index t = 0; t < before.days(); ++t) {
      if (before.counts(i, t) != after.counts(i, t)) {
        out.push_back({before.keys[static_cast<std::size_t>(i)], t, before.date_at(t), before.counts(i, t),
                       after.counts(i, t)});
      }
    }
  }
  return out;
}

Json provenance_json(const Panel& before, const Panel& after, const std::string& run_id) {
  Json j;
  j["run_id"] = run_id;
  j["source"] = to_string(before.source);
  j["metric"] = to_string(before.metric);
  j["level"] = to_string(before.level);
  j["cells"] = Json::array();
  for (const auto& c : diff_panels(before, after)) {
    j["cells"].push_back({{"key", c.key.id()},
                          {"t_index", c.t_index},
                          {"date", format_iso_date(c.date)},
                          {"before", c.before},
                          {"after", c.after}});
  }
  return j;
}

SeriesOutcome process_series(const CumulativeSeries& y, const PipelineConfig& cfg, const DecisionLog& decisions,
                             bool repair) {
  SeriesOutcome o;
  auto od = detect_od_violations(y);
  CumulativeSeries y_od = y;
  if (!od.empty()) {
    y_od = cfg.od_mode == OdRepairMode::BackwardClamp ? repair_od(y) : repair_od_model(y, cfg.repair);
  }
  o.od_repaired = y_od.values;
  for (auto& r : od) {
    if (repair) {
      r.transition(AnomalyStatus::Confirmed);
      r.transition(AnomalyStatus::Repaired);
      r.detail["repaired_value"] = y_od.values(r.t_index);
    }
    o.records.push_back(std::move(r));
  }

  std::vector<AnomalyRecord> flagged = detect_point_anomalies(y_od, cfg.speed);
  const VectorXd z = to_increments(y_od.values);
  const Index T = z.size();
  Index a = 0, b = T - 1;
  if (cfg.cp_from) a = std::max<Index>(0, (*cfg.cp_from - y.start).count());
  if (cfg.cp_to) b = std::min<Index>(T - 1, (*cfg.cp_to - y.start).count());
  if (b - a + 1 >= 20 && z.segment(a, b - a + 1).sum() > 0) {
    try {
      IncrementSeries window{y.key, y.metric, y.source, y.date_at(a), z.segment(a, b - a + 1)};
      if (auto fit = detect_change_points(window.values, cfg.change_point)) {
        auto r = change_point_record(window, *fit);
        r.t_index += a;
        flagged.push_back(std::move(r));
      }
    } catch (const std::exception& e) {
      o.errors.push_back(y.key.label() + ": change-point search failed: " + e.what());
    }
  }
  for (auto& r : flagged) {
    if (auto it = decisions.effective.find(r.id); it != decisions.effective.end()) r.status = status_after(it->second);
  }

  if (repair) {
    std::map<std::string, RepairOverride> overrides;
    for (const auto& r : flagged) {
      if (auto it = decisions.effective.find(r.id); it != decisions.effective.end()) {
        overrides[r.id] = it->second.as_override();
      }
    }
    IncrementSeries zs{y.key, y.metric, y.source, y.start, z};
    auto outcome = repair_outliers(zs, flagged, cfg.repair, overrides);
    for (const auto& res : outcome.results) {
      if (!res.applied) continue;
      for (auto& r : flagged) {
        if (r.id == res.anomaly_id) r.transition(AnomalyStatus::Repaired);
      }
    }
    o.repairs = std::move(outcome.results);
    o.repaired = to_cumulative(outcome.series.values);
  } else {
    o.repaired = y_od.values;
  }
  for (auto& r : flagged) o.records.push_back(std::move(r));
  std::stable_sort(o.records.begin(), o.records.end(), [](const AnomalyRecord& l, const AnomalyRecord& r) {
    return l.t_index != r.t_index ? l.t_index < r.t_index : l.kind < r.kind;
  });
  return o;
}

namespace {

template <typename Fn>
void guarded(StageReport& stage, const std::string& what, Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    stage.ok = false;
    stage.errors.push_back(what + ": " + e.what());
  }
}

std::string snapshot_key(const PipelineConfig& cfg, Metric m) {
  return cfg.snapshot_date + ":" + std::string(to_string(m));
}

}  // namespace

RunReport run_pipeline(const PipelineConfig& cfg) { return run_pipeline(cfg, all_stages(), std::cerr); }

RunReport run_pipeline(const PipelineConfig& cfg, const std::set<Stage>& stages, std::ostream& warnings) {
  cfg.validate();
  RunReport report;
  const auto& out = cfg.out_dir;
  std::filesystem::create_directories(out);
  auto enabled = [&](Stage s) { return stages.count(s) > 0; };

  // ---- fetch
  struct Input {
    SourceId source;
    Metric metric;
    RawSnapshot snapshot;
  };
  std::vector<Input> inputs;
  {
    StageReport st{"fetch"};
    SnapshotCache cache(cfg.cache_dir);
    std::map<std::string, RawSnapshot> by_endpoint;
    int fetched = 0, cached = 0;
    for (auto s : cfg.sources) {
      for (auto m : cfg.metrics) {
        const auto ep = *cfg.endpoint(s, m);
        const auto label = std::string(to_string(s)) + " " + std::string(to_string(m));
        guarded(st, label, [&] {
          RawSnapshot snap;
          const auto key = std::string(to_string(s)) + "|" + ep;
          if (auto it = by_endpoint.find(key); it != by_endpoint.end()) {
            snap = it->second;
          } else {
            try {
              snap = fetch_source(s, ep, cfg.offline);
              ++fetched;
            } catch (const FetchError& e) {
              auto hit = cache.load(s, snapshot_key(cfg, m));
              if (!hit) throw;
              snap = std::move(*hit);
              ++cached;
              st.errors.push_back(label + ": using cached snapshot after: " + e.what());
            }
            by_endpoint[key] = snap;
          }
          cache.store(snap, snapshot_key(cfg, m));
          inputs.push_back({s, m, std::move(snap)});
        });
      }
    }
    st.counts["snapshots"] = inputs.size();
    st.counts["fetched"] = fetched;
    st.counts["from_cache"] = cached;
    report.stages.push_back(std::move(st));
  }

  const DecisionLog decisions = read_decisions(cfg.decision_log);
  {
    std::string material = cfg.to_json().dump();
    for (const auto& in : inputs) {
      material += "\n" + std::string(to_string(in.source)) + ":" + std::string(to_string(in.metric)) + ":" +
                  in.snapshot.content_hash;
    }
    for (const auto& [id, d] : decisions.effective) material += "\n" + to_json(d).dump();
    report.run_id = sha256_hex(material).substr(0, 16);
  }

  // ---- ingest
  std::vector<Panel> panels;
  if (enabled(Stage::Ingest)) {
    StageReport st{"ingest"};
    Json per = Json::array();
    for (const auto& in : inputs) {
      const auto label = panel_stem(in.source, in.metric, cfg.level);
      guarded(st, label, [&] {
        auto parsed = parse_source(in.snapshot, in.metric, cfg.geo);
        auto normalized = normalize_geography(parsed.panel, cfg.geo);
        Panel panel = std::move(normalized.panel);
        if (panel.level < cfg.level) {
          throw std::invalid_argument("source data is coarser than the configured level");
        }
        if (panel.level > cfg.level) panel = aggregate(panel, cfg.level);
        io::write_file_atomic(canonical_path(out, in.source, in.metric, cfg.level), canonical_text(panel));
        Json entry;
        entry["panel"] = label;
        entry["locations"] = panel.locations();
        entry["days"] = panel.days();
        entry["row_errors"] = parsed.report.errors.size();
        entry["excluded"] = normalized.report.excluded.size();
        entry["excluded_total"] = normalized.report.excluded_total();
        entry["merged"] = normalized.report.merged.size();
        entry["warnings"] = normalized.report.warnings;
        per.push_back(entry);
        panels.push_back(std::move(panel));
      });
    }
    st.counts["panels"] = per;
    report.stages.push_back(std::move(st));
  }

  // ---- compare
  if (enabled(Stage::Compare)) {
    StageReport st{"compare"};
    Json per = Json::array();
    for (auto m : cfg.metrics) {
      std::vector<Panel> group;
      for (const auto& p : panels) {
        if (p.metric == m) group.push_back(p);
      }
      if (group.size() < 2) continue;
      const std::string stem = std::string(to_string(m)) + "_" + std::string(to_string(cfg.level));
      guarded(st, stem, [&] {
        std::ostringstream csv_out;
        const auto summary = compare_report(group, csv_out, cfg.compare_threshold, cfg.norm);
        io::write_file_atomic(out / "compare" / (stem + ".csv"), csv_out.str());

        std::ostringstream top;
        top << "pair,rank,level,fips,county,state,d,mean_final\n";
        for (const auto& ranking : rank_dissimilar(group, cfg.compare_top, cfg.norm)) {
          std::size_t rank = 0;
          for (const auto& r : ranking.records) {
            top << csv::join({ranking.pair.column(), std::to_string(++rank), std::string(to_string(r.key.level)),
                              r.key.fips, r.key.county, r.key.state, csv::format_number(r.d),
                              csv::format_number(r.mean_final)})
                << '\n';
          }
        }
        io::write_file_atomic(out / "compare" / (stem + "_top.csv"), top.str());

        std::ostringstream coverage;
        coverage << "level,fips,county,state,missing_from\n";
        for (const auto& key : summary.incomplete) {
          std::string missing;
          for (const auto& p : group) {
            if (!p.find(key)) missing += (missing.empty() ? "" : " ") + std::string(to_string(p.source));
          }
          coverage << csv::join({std::string(to_string(key.level)), key.fips, key.county, key.state, missing}) << '\n';
        }
        io::write_file_atomic(out / "compare" / (stem + "_coverage.csv"), coverage.str());

        Json entry{{"metric", to_string(m)}, {"rows", summary.rows}, {"incomplete", summary.incomplete.size()}};
        for (const auto& [pair, n] : summary.exceeding) entry["exceeding"][pair.column()] = n;
        per.push_back(entry);
      });
    }
    st.counts["reports"] = per;
    report.stages.push_back(std::move(st));
  }

  // ---- seasonality
  if (enabled(Stage::Seasonality)) {
    StageReport st{"seasonality"};
    Json per = Json::array();
    for (const auto& p : panels) {
      const auto stem = panel_stem(p.source, p.metric, p.level);
      guarded(st, stem, [&] {
        std::vector<SeasonalityReport> rows;
        std::size_t skipped = 0, seasonal = 0;
        for (Index i = 0; i < p.locations(); ++i) {
          try {
            auto r = ensemble_seasonal(to_increments(p.series(i)), cfg.seasonality_alpha);
            seasonal += r.ensemble_verdict ? 1 : 0;
            rows.push_back(std::move(r));
          } catch (const InsufficientDataError&) {
            ++skipped;
          }
        }
        std::ostringstream text;
        write_seasonality_csv(rows, text);
        io::write_file_atomic(out / "seasonality" / (stem + ".csv"), text.str());
        per.push_back({{"panel", stem}, {"tested", rows.size()}, {"seasonal", seasonal}, {"skipped", skipped}});
      });
    }
    st.counts["panels"] = per;
    report.stages.push_back(std::move(st));
  }

  // ---- detect and repair
  const bool do_repair = enabled(Stage::Repair);
  if (enabled(Stage::Detect)) {
    StageReport det{"detect"};
    StageReport rep{"repair"};
    std::vector<AnomalyRecord> records;
    std::vector<Json> repair_lines;
    std::size_t applied = 0, skipped = 0, od_repaired = 0;
    for (const auto& p : panels) {
      const auto stem = panel_stem(p.source, p.metric, p.level);
      Panel repaired = p;
      for (Index i = 0; i < p.locations(); ++i) {
        const auto series = p.series(i);
        SeriesOutcome o;
        guarded(det, stem + " " + series.key.label(), [&] { o = process_series(series, cfg, decisions, do_repair); });
        for (auto& e : o.errors) det.errors.push_back(stem + " " + e);
        if (o.repaired.size() == p.days()) repaired.counts.row(i) = o.repaired.transpose();
        for (const auto& r : o.records) {
          if (r.kind == AnomalyKind::OdViolation && r.status == AnomalyStatus::Repaired) ++od_repaired;
        }
        for (const auto& res : o.repairs) {
          Json line;
          line["key"] = to_json(series.key);
          line["metric"] = to_string(series.metric);
          line["source"] = to_string(series.source);
          const Json fields = to_json(res);
          for (const auto& [k, v] : fields.items()) line[k] = v;
          repair_lines.push_back(std::move(line));
          (res.applied ? applied : skipped) += 1;
        }
        for (auto& r : o.records) records.push_back(std::move(r));
      }
      if (do_repair) {
        guarded(rep, stem, [&] {
          io::write_file_atomic(repaired_path(out, p.source, p.metric, p.level), canonical_text(repaired));
          io::write_file_atomic(provenance_path(out, p.source, p.metric, p.level),
                                provenance_json(p, repaired, report.run_id).dump(2) + "\n");
        });
      }
    }
    std::stable_sort(records.begin(), records.end(), [](const AnomalyRecord& a, const AnomalyRecord& b) {
      if (a.date != b.date) return a.date < b.date;
      if (!(a.key == b.key)) return a.key < b.key;
      if (a.source != b.source) return a.source < b.source;
      if (a.metric != b.metric) return a.metric < b.metric;
      if (a.kind != b.kind) return a.kind < b.kind;
      return a.id < b.id;
    });
    for (const auto& r : records) {
      if (r.status != AnomalyStatus::Dismissed) warnings << warning_text(r) << '\n';
    }
    std::ostringstream jsonl;
    write_anomalies_jsonl(records, jsonl);
    guarded(det, "anomalies", [&] { io::write_file_atomic(anomalies_path(out), jsonl.str()); });
    std::map<std::string, std::size_t> by_kind, by_status;
    for (const auto& r : records) {
      ++by_kind[std::string(to_string(r.kind))];
      ++by_status[std::string(to_string(r.status))];
    }
    det.counts["records"] = records.size();
    det.counts["by_kind"] = by_kind;
    det.counts["by_status"] = by_status;
    det.counts["decisions_effective"] = decisions.effective.size();
    det.counts["decision_log_corrupt_lines"] = decisions.corrupt_lines;
    report.stages.push_back(std::move(det));
    if (do_repair) {
      std::string text;
      for (const auto& l : repair_lines) text += l.dump() + "\n";
      guarded(rep, "repair results", [&] { io::write_file_atomic(repair_results_path(out), text); });
      rep.counts["od_repaired"] = od_repaired;
      rep.counts["outliers_repaired"] = applied;
      rep.counts["outliers_skipped"] = skipped;
      report.stages.push_back(std::move(rep));
    }
  }

  if (enabled(Stage::Report)) {
    StageReport st{"report"};
    report.stages.push_back(st);
    guarded(report.stages.back(), "run report",
            [&] { io::write_file_atomic(run_report_path(out), report.to_json().dump(2) + "\n"); });
  }
  return report;
}

}  // namespace cdq
