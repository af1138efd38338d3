#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <utility>
#include <vector>

#include "cdq/core.hpp"

namespace cdq {

enum class Norm { L2, L1 };

Norm parse_norm(std::string_view text);

/// Unordered source pair stored in enum order.
struct SourcePair {
  SourceId first;
  SourceId second;

  static SourcePair of(SourceId a, SourceId b);
  std::string column() const;  // d_NYT_JHU
  auto operator<=>(const SourcePair&) const = default;
};

struct DissimilarityRecord {
  SeriesKey key;
  Metric metric = Metric::Infection;
  SourcePair pair{SourceId::NYT, SourceId::JHU};
  double d = 0;
  Index T = 0;
  double mean_final = 0;
};

/// Mean over all K sources of the final cumulative value.
double source_mean_final(const std::vector<VectorXd>& series);

/// Normalized distance between two sources' cumulative series:
/// ||a - b|| / (T * mean_final), or 0 when mean_final is 0.
template <typename DerivedA, typename DerivedB>
double dissimilarity(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b, double mean_final,
                     Norm norm = Norm::L2) {
  if (a.size() != b.size()) throw AlignmentError("dissimilarity: series lengths differ");
  if (a.size() == 0) throw AlignmentError("dissimilarity: empty series");
  if (!(mean_final > 0)) return 0.0;
  const double dist = norm == Norm::L2 ? (a - b).norm() : (a - b).template lpNorm<1>();
  return dist / static_cast<double>(a.size()) / mean_final;
}

struct PairRanking {
  SourcePair pair;
  std::vector<DissimilarityRecord> records;  // descending d, ties by key
};

struct ComparisonSet {
  Metric metric = Metric::Infection;
  Level level = Level::County;
  Date start;
  Index T = 0;
  std::vector<SourceId> sources;
  std::vector<SeriesKey> common;      // present in every source
  std::vector<SeriesKey> incomplete;  // missing from at least one source
  /// records[pair][i] aligned with `common`.
  std::map<SourcePair, std::vector<DissimilarityRecord>> records;
};

/// Aligns panels on their overlapping days and scores every source pair
/// for every key present in all of them.
ComparisonSet compare_panels(const std::vector<Panel>& panels, Norm norm = Norm::L2);

/// Top `top_n` records per pair (all records when top_n is 0).
std::vector<PairRanking> rank_dissimilar(const std::vector<Panel>& panels, std::size_t top_n, Norm norm = Norm::L2);

struct CompareSummary {
  std::size_t rows = 0;
  double threshold = 0;
  std::map<SourcePair, std::size_t> exceeding;
  std::vector<SeriesKey> incomplete;
};

/// Per-location CSV: level,fips,county,state,metric,T,mean_final,d_<a>_<b>,...
CompareSummary compare_report(const std::vector<Panel>& panels, std::ostream& out, double threshold,
                              Norm norm = Norm::L2);

}  // namespace cdq
