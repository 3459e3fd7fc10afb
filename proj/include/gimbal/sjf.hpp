#pragma once

#include <vector>

#include "gimbal/types.hpp"

namespace gimbal {

struct QueuedRequest {
  Request request;
  double enqueued_at = 0.0;
};

struct SjfConfig {
  double theta_age = 5.0;  // seconds waited before a request is promoted
  // Aging clock: time waiting at this engine (default) or since system arrival.
  bool age_from_arrival = false;
  void validate() const;
};

// Shortest-job-first order by prefill length, with aging: requests that have
// waited at least theta_age jump ahead of everything else. Aged requests are
// ordered oldest-first; the rest by (prefill_tokens, enqueued_at, id).
std::vector<QueuedRequest> reorder_queue(std::vector<QueuedRequest> queue, double now,
                                         const SjfConfig& cfg);

}  // namespace gimbal
