#include "gimbal/balancer.hpp"

#include <stdexcept>

namespace gimbal {

void BalancerConfig::validate() const {
  if (!(theta_kv > 0.0 && theta_kv <= 1.0)) {
    throw std::invalid_argument("BalancerConfig: theta_kv must be in (0, 1]");
  }
  if (!(theta_diff >= 0.0 && theta_diff <= 1.0)) {
    throw std::invalid_argument("BalancerConfig: theta_diff must be in [0, 1]");
  }
  if (theta_load < 0) {
    throw std::invalid_argument("BalancerConfig: theta_load must be >= 0");
  }
  if (!(affinity_ttl > 0.0)) {
    throw std::invalid_argument("BalancerConfig: affinity_ttl must be > 0");
  }
  if (n_engines < 1) {
    throw std::invalid_argument("BalancerConfig: n_engines must be >= 1");
  }
}

Balancer::Balancer(BalancerConfig cfg, DispatchPolicy policy)
    : cfg_(cfg), policy_(policy), latest_(static_cast<std::size_t>(cfg.n_engines)) {
  cfg_.validate();
}

void Balancer::update_metrics(const EngineMetrics& m) {
  if (m.engine_id < 0 || m.engine_id >= cfg_.n_engines) {
    throw std::invalid_argument("update_metrics: unknown engine_id " +
                                std::to_string(m.engine_id));
  }
  std::lock_guard<std::mutex> lock(mu_);
  auto& slot = latest_[static_cast<std::size_t>(m.engine_id)];
  if (!slot || m.reported_at >= slot->reported_at) {
    slot = m;
  }
}

bool Balancer::metrics_complete() const {
  std::lock_guard<std::mutex> lock(mu_);
  for (const auto& slot : latest_) {
    if (!slot) return false;
  }
  return true;
}

std::optional<std::pair<int, double>> Balancer::user_entry(const std::string& user_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = user_engine_map_.find(user_id);
  if (it == user_engine_map_.end()) return std::nullopt;
  return it->second;
}

int Balancer::select_engine(const Request& request, double now) {
  std::lock_guard<std::mutex> lock(mu_);
  return select_locked(request, now);
}

int Balancer::select_locked(const Request& request, double now) {
  int chosen = rr_cursor_;
  rr_cursor_ = (rr_cursor_ + 1) % cfg_.n_engines;
  if (policy_ == DispatchPolicy::kRoundRobin) {
    return chosen;
  }

  bool complete = true;
  for (const auto& slot : latest_) {
    if (!slot) {
      complete = false;
      break;
    }
  }
  if (complete) {
    int i_max = 0, i_min = 0;
    int load_min = 0;
    std::int64_t max_load = latest_[0]->running_load;
    std::int64_t min_load = latest_[0]->running_load;
    for (int i = 1; i < cfg_.n_engines; ++i) {
      const auto& m = *latest_[static_cast<std::size_t>(i)];
      if (m.kv_usage > latest_[static_cast<std::size_t>(i_max)]->kv_usage) i_max = i;
      if (m.kv_usage < latest_[static_cast<std::size_t>(i_min)]->kv_usage) i_min = i;
      if (m.running_load > max_load) max_load = m.running_load;
      if (m.running_load < min_load) {
        min_load = m.running_load;
        load_min = i;
      }
    }
    const double kv_max = latest_[static_cast<std::size_t>(i_max)]->kv_usage;
    const double kv_min = latest_[static_cast<std::size_t>(i_min)]->kv_usage;
    if (kv_max >= cfg_.theta_kv) {
      if (kv_max - kv_min >= cfg_.theta_diff) {
        chosen = i_min;
      } else if (max_load - min_load > cfg_.theta_load) {
        chosen = load_min;
      }
    } else if (!request.user_id.empty()) {
      auto it = user_engine_map_.find(request.user_id);
      if (it != user_engine_map_.end() && now - it->second.second <= cfg_.affinity_ttl) {
        chosen = it->second.first;
      }
    }
  }

  if (!request.user_id.empty()) {
    user_engine_map_[request.user_id] = {chosen, now};
  }
  return chosen;
}

}  // namespace gimbal
