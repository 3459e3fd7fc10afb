#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gimbal/types.hpp"

namespace gimbal {

// Engine-side load snapshot delivered asynchronously to the balancer.
struct EngineMetrics {
  int engine_id = 0;
  double kv_usage = 0.0;           // fraction of KV capacity in use, [0, 1]
  std::int64_t running_load = 0;   // running + waiting tokens
  double reported_at = 0.0;        // snapshot time, simulated seconds
};

struct BalancerConfig {
  double theta_kv = 0.9;           // KV saturation threshold
  double theta_diff = 0.10;        // cross-engine KV spread tolerance
  std::int64_t theta_load = 3000;  // running-load spread tolerance, tokens
  double affinity_ttl = 300.0;     // seconds before a user mapping expires
  int n_engines = 1;
  void validate() const;
};

enum class DispatchPolicy { kRoundRobin, kLoadAware };

// Engine selector. In kLoadAware mode every selection starts from the
// round-robin candidate, then applies (in order): KV-pressure relief to the
// least-used engine, running-load rebalancing, and user affinity when no
// engine is KV-saturated. kRoundRobin ignores metrics and user identity.
//
// One mutex serializes metric updates and selections; callers on any thread
// observe a consistent snapshot.
class Balancer {
 public:
  explicit Balancer(BalancerConfig cfg, DispatchPolicy policy = DispatchPolicy::kLoadAware);

  void update_metrics(const EngineMetrics& m);
  int select_engine(const Request& request, double now);

  bool metrics_complete() const;
  std::optional<std::pair<int, double>> user_entry(const std::string& user_id) const;

 private:
  int select_locked(const Request& request, double now);

  BalancerConfig cfg_;
  DispatchPolicy policy_;
  mutable std::mutex mu_;
  std::vector<std::optional<EngineMetrics>> latest_;
  std::unordered_map<std::string, std::pair<int, double>> user_engine_map_;
  int rr_cursor_ = 0;
};

}  // namespace gimbal
