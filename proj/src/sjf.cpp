#include "gimbal/sjf.hpp"

#include <algorithm>
#include <stdexcept>
#include <tuple>

namespace gimbal {

void SjfConfig::validate() const {
  if (!(theta_age > 0.0)) {
    throw std::invalid_argument("SjfConfig: theta_age must be > 0");
  }
}

std::vector<QueuedRequest> reorder_queue(std::vector<QueuedRequest> queue, double now,
                                         const SjfConfig& cfg) {
  cfg.validate();
  auto wait_of = [&](const QueuedRequest& q) {
    return now - (cfg.age_from_arrival ? q.request.arrival_time : q.enqueued_at);
  };
  auto key = [&](const QueuedRequest& q) {
    const bool aged = wait_of(q) >= cfg.theta_age;
    // aged group first; within it FIFO, otherwise SJF with FIFO tie-break
    return std::make_tuple(aged ? 0 : 1,
                           aged ? 0 : q.request.prefill_tokens,
                           q.enqueued_at, q.request.id);
  };
  std::sort(queue.begin(), queue.end(),
            [&](const QueuedRequest& a, const QueuedRequest& b) { return key(a) < key(b); });
  return queue;
}

}  // namespace gimbal
