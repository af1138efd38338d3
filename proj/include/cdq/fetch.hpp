#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>

#include "cdq/ingest.hpp"

namespace cdq {

class FetchError : public std::runtime_error {
 public:
  FetchError(const std::string& what, bool retryable, int status = 0)
      : std::runtime_error(what), retryable_(retryable), status_(status) {}
  bool retryable() const { return retryable_; }
  int status() const { return status_; }

 private:
  bool retryable_;
  int status_;
};

/// Content-addressed snapshot store: objects/<sha256> plus a manifest
/// mapping (source, as-of date) to a hash.
class SnapshotCache {
 public:
  explicit SnapshotCache(std::filesystem::path dir);

  /// Persists the payload (idempotent per hash) and records it under
  /// (source, as_of). Returns the content hash.
  std::string store(const RawSnapshot& snapshot, const std::string& as_of);
  std::optional<RawSnapshot> load(SourceId source, const std::string& as_of) const;
  /// Manifest text, stable across runs with the same contents.
  std::string manifest_text() const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
};

bool is_url(const std::string& endpoint);

/// Reads a fixture path, or downloads a URL unless `offline` is set.
/// Network failures are retryable; HTTP errors and offline refusals are not.
RawSnapshot fetch_source(SourceId source, const std::string& endpoint, bool offline);

}  // namespace cdq
