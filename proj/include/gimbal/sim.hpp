#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gimbal/balancer.hpp"
#include "gimbal/engine.hpp"
#include "gimbal/moe.hpp"
#include "gimbal/placement.hpp"
#include "gimbal/sjf.hpp"
#include "gimbal/types.hpp"

namespace gimbal {

// Scheduling policy under test. gimbal enables all three layers; each
// ablation enables exactly one; the baseline is round-robin + FIFO + static
// expert placement.
enum class Policy { kGimbal, kBaselineRrFcfs, kDplbOnly, kSjfsOnly, kEdrOnly };

const char* to_string(Policy policy);
Policy policy_from_string(const std::string& name);

// The three independent policy axes a Policy value expands to.
struct PolicyFlags {
  bool load_aware_dispatch = false;
  bool sjf_queue = false;
  bool edr_placement = false;
};
PolicyFlags policy_flags(Policy policy);

struct PlacementConfig {
  double alpha = 1.0;
  double beta = 1.0;
  std::int64_t tau = 3000;            // forward steps between relocations
  int anchor_gpu = 0;
  double affinity_threshold = 0.0;    // minimum pair count for the affinity set
  int top_e = 4;                      // heaviest pairs kept
  double migration_stall = 0.0;       // seconds per moved expert, next iteration
  std::int64_t offline_tokens = 20000; // calibration tokens routed before serving
};

struct EngineConfig {
  std::int64_t kv_capacity = 400000;
  int block_size = 16;
  std::int64_t max_batch_tokens = 4096;
  LoadMetric load_metric = LoadMetric::kPrefillPlusDecode;
};

struct SimConfig {
  int n_engines = 2;
  Policy policy = Policy::kGimbal;
  BalancerConfig balancer;
  SjfConfig sjf;
  CostModel cost;
  EngineConfig engine;
  moe::MoeTopology topo;
  moe::RoutingParams routing;
  PlacementConfig placement;
  double metric_interval = 0.1;  // engine snapshot period, seconds
  double metric_delay = 0.1;     // snapshot -> balancer delivery latency
  std::uint64_t seed = 0;
  bool record_placements = false;  // keep a snapshot per relocation in the report
  // When set, the run writes activation_matrix.txt, affinity_tensor.txt and
  // affinity_weights.txt (the recorded A, E and W) into this directory.
  std::string stats_dir;
  void validate() const;
};

struct RequestMetrics {
  std::int64_t id = 0;
  double arrival = 0.0;
  int engine_id = 0;
  double dispatch = 0.0;     // left the waiting queue
  double first_token = 0.0;
  double completion = 0.0;
  double ttft = 0.0;
  double tpot = 0.0;
  double service_time = 0.0;  // uncached prefill / prefill_rate
};

struct RelocationEvent {
  std::int64_t step = 0;
  double time = 0.0;
  std::int64_t moved = 0;
};

struct MetricsReport {
  std::string policy;
  std::uint64_t seed = 0;
  std::int64_t n_requests = 0;
  double mean_ttft = 0.0;
  double median_ttft = 0.0;
  double p99_ttft = 0.0;
  double mean_tpot = 0.0;
  double throughput_rps = 0.0;
  double throughput_tps = 0.0;
  double makespan = 0.0;
  std::int64_t prefix_hits = 0;
  std::int64_t prefix_probes = 0;
  double hit_rate = 0.0;
  std::vector<std::int64_t> expert_load;  // per-GPU activation totals
  std::int64_t migrations = 0;
  std::int64_t forward_steps = 0;
  std::int64_t total_decoded_tokens = 0;
  double mean_queue_delay = 0.0;
  double mean_service_time = 0.0;
  std::vector<RelocationEvent> relocations;
  std::vector<int> affinity_experts;
  int anchor_gpu = 0;
  std::vector<std::vector<int>> placement_snapshots;  // filled when recorded
  std::vector<RequestMetrics> per_request;
};

// Runs the full pipeline on an arrival-sorted request list. Deterministic for
// fixed (cfg, requests).
MetricsReport run(const SimConfig& cfg, const std::vector<Request>& requests);

struct ComparisonRow {
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  double abs_delta = 0.0;  // b - a
  double rel_delta = 0.0;  // (b - a) / a, 0 when a == 0
};

struct ComparisonTable {
  std::string policy_a;
  std::string policy_b;
  std::vector<ComparisonRow> rows;
};

// Runs both configs (which may differ only in policy) on the same workload.
ComparisonTable compare(const SimConfig& cfg_a, const SimConfig& cfg_b,
                        const std::vector<Request>& requests);

}  // namespace gimbal
