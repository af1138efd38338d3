#pragma once

#include <memory>
#include <string>

#include "cdq/config.hpp"

namespace cdq {

/// HTTP front end over one run's artifacts and the decision log.
///
///   GET  /api/anomalies?status=&kind=&state=&source=&metric=&limit=&offset=
///   GET  /api/series/{key}/{metric}?source=
///   POST /api/anomalies/{id}/decision   {"verdict": "Confirm"|"Dismiss", ...}
///   POST /api/pipeline/rerun
///   GET  /api/pipeline/status
///
/// Every JSON body carries "run_id"; the same value is sent as X-Run-Id.
class ReviewService {
 public:
  explicit ReviewService(PipelineConfig cfg);
  ~ReviewService();
  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  /// Reads artifacts from the output directory, running the pipeline first
  /// when no run report exists yet.
  void load();
  std::string run_id() const;

  /// Returns the bound port, or -1.
  int bind(const std::string& host, int port = 0);
  /// Blocks serving requests until stop().
  bool listen_after_bind();
  void wait_until_ready() const;
  void stop();

  /// Blocks until no rerun is in flight.
  void wait_for_rerun();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cdq
