#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdq/detect.hpp"
#include "cdq/repair.hpp"

namespace cdq {

enum class Verdict { Confirm, Dismiss };

std::string_view to_string(Verdict verdict);
Verdict parse_verdict(std::string_view text);

struct CurationDecision {
  std::string anomaly_id;
  Verdict verdict = Verdict::Confirm;
  std::optional<std::pair<Index, Index>> period_override;  // inclusive day indices
  std::optional<RepairMethod> method_override;
  std::optional<double> manual_value;
  std::string note;
  std::string decided_at;  // ISO-8601 UTC, e.g. 2020-06-26T14:03:00.000Z
  std::string actor;

  RepairOverride as_override() const;
};

Json to_json(const CurationDecision& decision);
/// Throws std::invalid_argument on a missing or malformed field.
CurationDecision decision_from_json(const Json& j);

/// Anomaly ids are 16 lowercase hex digits.
bool is_anomaly_id(std::string_view id);

/// Nanoseconds since the epoch for an ISO-8601 timestamp with optional
/// fraction and Z or +hh:mm offset.
std::chrono::sys_time<std::chrono::nanoseconds> parse_timestamp(std::string_view text);
std::string now_timestamp();

/// Appends one line. Writers in this process are serialised.
void append_decision(const std::filesystem::path& log, const CurationDecision& decision);

struct DecisionLog {
  std::map<std::string, CurationDecision> effective;
  std::vector<std::size_t> corrupt_lines;
  std::size_t lines_read = 0;
};

/// Latest decided_at wins per id; equal timestamps go to the later line.
/// A missing file is an empty log.
DecisionLog read_decisions(const std::filesystem::path& log);

/// Status implied by a decision for a record that has not been repaired.
AnomalyStatus status_after(const CurationDecision& decision);

}  // namespace cdq
