#include "cdq/compare.hpp"

#include <algorithm>
#include <set>

#include "cdq/csv.hpp"

namespace cdq {

Norm parse_norm(std::string_view text) {
  if (text == "L2" || text == "l2") return Norm::L2;
  if (text == "L1" || text == "l1") return Norm::L1;
  throw std::invalid_argument("unknown norm '" + std::string(text) + "'");
}

SourcePair SourcePair::of(SourceId a, SourceId b) {
  if (a == b) throw std::invalid_argument("source pair needs two distinct sources");
  return a < b ? SourcePair{a, b} : SourcePair{b, a};
}

std::string SourcePair::column() const {
  return "d_" + std::string(to_string(first)) + "_" + std::string(to_string(second));
}

double source_mean_final(const std::vector<VectorXd>& series) {
  if (series.empty()) throw AlignmentError("source_mean_final: no sources");
  const Index T = series.front().size();
  double sum = 0;
  for (const auto& s : series) {
    if (s.size() != T || T == 0) throw AlignmentError("source_mean_final: series lengths differ");
    sum += s(T - 1);
  }
  return sum / static_cast<double>(series.size());
}

ComparisonSet compare_panels(const std::vector<Panel>& panels, Norm norm) {
  if (panels.size() < 2) throw std::invalid_argument("comparison needs at least two sources");
  ComparisonSet out;
  out.metric = panels.front().metric;
  out.level = panels.front().level;
  Date first = panels.front().start;
  Date last = panels.front().end();
  std::set<SourceId> seen;
  for (const auto& p : panels) {
    if (p.metric != out.metric || p.level != out.level) {
      throw AlignmentError("panels disagree on metric or level");
    }
    if (!seen.insert(p.source).second) throw std::invalid_argument("duplicate source in comparison");
    first = std::max(first, p.start);
    last = std::min(last, p.end());
    out.sources.push_back(p.source);
  }
  if (last < first) throw AlignmentError("panels share no days");
  out.start = first;
  out.T = (last - first).count() + 1;

  std::set<SeriesKey> all;
  for (const auto& p : panels) all.insert(p.keys.begin(), p.keys.end());
  for (const auto& key : all) {
    const bool everywhere = std::all_of(panels.begin(), panels.end(), [&](const Panel& p) { return p.find(key); });
    (everywhere ? out.common : out.incomplete).push_back(key);
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < panels.size(); ++a) {
    for (std::size_t b = a + 1; b < panels.size(); ++b) pairs.emplace_back(a, b);
  }
  std::vector<VectorXd> aligned(panels.size());
  for (const auto& key : out.common) {
    for (std::size_t k = 0; k < panels.size(); ++k) {
      const auto& p = panels[k];
      aligned[k] = p.counts.row(*p.find(key)).segment((first - p.start).count(), out.T).transpose();
    }
    const double mean_final = source_mean_final(aligned);
    for (const auto& [a, b] : pairs) {
      const auto pair = SourcePair::of(panels[a].source, panels[b].source);
      const double d = dissimilarity(aligned[a], aligned[b], mean_final, norm);
      out.records[pair].push_back({key, out.metric, pair, d, out.T, mean_final});
    }
  }
  return out;
}

std::vector<PairRanking> rank_dissimilar(const std::vector<Panel>& panels, std::size_t top_n, Norm norm) {
  auto set = compare_panels(panels, norm);
  std::vector<PairRanking> out;
  for (auto& [pair, records] : set.records) {
    std::stable_sort(records.begin(), records.end(), [](const DissimilarityRecord& x, const DissimilarityRecord& y) {
      if (x.d != y.d) return x.d > y.d;
      return x.key < y.key;
    });
    if (top_n > 0 && records.size() > top_n) records.resize(top_n);
    out.push_back({pair, std::move(records)});
  }
  return out;
}

CompareSummary compare_report(const std::vector<Panel>& panels, std::ostream& out, double threshold, Norm norm) {
  const auto set = compare_panels(panels, norm);
  CompareSummary summary;
  summary.threshold = threshold;
  summary.incomplete = set.incomplete;

  csv::Row header{"level", "fips", "county", "state", "metric", "T", "mean_final"};
  for (const auto& [pair, _] : set.records) {
    header.push_back(pair.column());
    summary.exceeding[pair] = 0;
  }
  out << csv::join(header) << '\n';
  for (std::size_t i = 0; i < set.common.size(); ++i) {
    const auto& key = set.common[i];
    const auto& first = set.records.begin()->second[i];
    csv::Row row{std::string(to_string(key.level)), key.fips, key.county, key.state,
                 std::string(to_string(set.metric)), std::to_string(set.T), csv::format_number(first.mean_final)};
    for (const auto& [pair, records] : set.records) {
      row.push_back(csv::format_number(records[i].d));
      if (records[i].d > threshold) ++summary.exceeding[pair];
    }
    out << csv::join(row) << '\n';
    ++summary.rows;
  }
  return summary;
}

}  // namespace cdq
