#pragma once

#include <cstdint>
#include <optional>
#include <unordered_set>
#include <vector>

#include "gimbal/balancer.hpp"
#include "gimbal/prefix_cache.hpp"
#include "gimbal/sjf.hpp"
#include "gimbal/types.hpp"

namespace gimbal {

// Two-phase service-time model: prefill is compute-bound and linear in
// uncached prompt tokens, decode is memory-bound and constant per token.
struct CostModel {
  double prefill_rate = 8000.0;          // tokens / second
  double decode_time_per_token = 0.025;  // seconds / token
  double kv_tokens_per_token = 1.0;      // KV slots per processed token
  // Optional couplings, all zero by default so the base model is exact:
  double decode_batch_slowdown = 0.0;    // decode time *= 1 + s * (batch - 1)
  double moe_imbalance_slowdown = 0.0;   // iteration *= 1 + s * (bottleneck excess)
  double comm_time_per_transition = 0.0; // seconds per cross-GPU expert hop
  void validate() const;
};

// Which tokens count toward the running-load signal reported to the balancer.
enum class LoadMetric { kPrefillOnly, kPrefillPlusDecode };

struct EngineParams {
  int engine_id = 0;
  std::int64_t kv_capacity = 400000;  // token slots
  int block_size = 16;
  std::int64_t max_batch_tokens = 4096;  // prefill admission budget per iteration
  LoadMetric load_metric = LoadMetric::kPrefillPlusDecode;
  bool sjf_enabled = true;
  SjfConfig sjf;
  CostModel cost;
  void validate() const;
};

struct EngineEvent {
  enum class Kind { kFirstToken, kCompletion };
  Kind kind = Kind::kFirstToken;
  std::int64_t request_id = 0;
  double time = 0.0;
  // kFirstToken extras
  double dispatch_time = 0.0;       // when the request left the waiting queue
  std::int64_t uncached_prefill = 0;
  std::int64_t hit_blocks = 0;
};

// Expert-layer hook the engine consults once per forward iteration. Null is
// valid and means "no expert model": zero extra cost, no stats.
class MoeHook {
 public:
  virtual ~MoeHook() = default;
  // Routes n_tokens through the expert layers, accumulates activation stats,
  // and returns extra iteration seconds; every pass gates on the most loaded
  // GPU per layer.
  virtual double iteration_cost(std::int64_t n_tokens, double base_duration,
                                const CostModel& cost) = 0;
  // Called after each completed forward iteration; drives relocation cadence.
  virtual void on_forward_step(double now) = 0;
  // One-shot migration stall owed to this engine's next iteration.
  virtual double take_pending_stall(int engine_id) = 0;
};

// One simulated data-parallel engine with continuous batching.
//
// Work advances in forward iterations. Each iteration is either a prefill
// pass (newly admitted requests, non-chunked, batched up to max_batch_tokens)
// or a decode pass (one token for every running decode-phase request; decode
// stalls while a prefill pass runs). Admission reserves a request's full
// lifetime KV need (uncached prefill + all output tokens) so kv_used can
// never exceed capacity; actual consumption is booked as tokens are
// processed. The waiting queue is reordered (SJF with aging, or FIFO) at the
// start of every iteration.
class Engine {
 public:
  explicit Engine(EngineParams params);

  void admit(const Request& request, double now);

  // Starts the next iteration at `now` if idle and work is available;
  // returns its end time. Admission, queue reordering, prefix-cache lookups
  // and expert routing all happen here.
  std::optional<double> try_start_iteration(double now, MoeHook* moe);

  // Completes the in-flight iteration; emits first-token / completion events.
  std::vector<EngineEvent> finish_iteration(MoeHook* moe);

  // Advances the engine clock by dt, running any iterations that fit.
  std::vector<EngineEvent> step(double dt, MoeHook* moe);

  EngineMetrics metrics_snapshot(double now) const;

  bool busy() const { return inflight_.has_value(); }
  bool has_pending_work() const;
  double inflight_end() const;
  double clock() const { return clock_; }
  const PrefixCacheTable& prefix_cache() const { return prefix_cache_; }
  std::int64_t waiting_size() const { return static_cast<std::int64_t>(waiting_.size()); }
  std::int64_t running_size() const { return static_cast<std::int64_t>(running_.size()); }
  double kv_used() const { return kv_used_; }
  std::int64_t forward_steps() const { return forward_steps_; }

 private:
  struct RunningRequest {
    Request request;
    double enqueued_at = 0.0;
    double dispatch_time = 0.0;
    std::int64_t hit_blocks = 0;
    std::int64_t uncached_prefill = 0;
    std::int64_t decoded = 0;
    bool prefilled = false;
    double kv_reserved = 0.0;
    double kv_allocated = 0.0;
  };
  struct Inflight {
    bool prefill = false;
    double end = 0.0;
    std::vector<std::size_t> batch;  // indices into running_ (prefill batch)
  };

  double reservation_for(std::int64_t uncached, std::int64_t output) const;
  void complete_request(std::size_t idx, double at, std::vector<EngineEvent>& events);

  EngineParams params_;
  std::vector<QueuedRequest> waiting_;
  std::vector<RunningRequest> running_;
  std::optional<Inflight> inflight_;
  PrefixCacheTable prefix_cache_;
  std::unordered_set<std::int64_t> seen_ids_;
  double kv_used_ = 0.0;
  double kv_reserved_ = 0.0;
  double clock_ = 0.0;
  std::int64_t forward_steps_ = 0;
};

}  // namespace gimbal
