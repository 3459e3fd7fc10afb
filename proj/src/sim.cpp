#include "gimbal/sim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <queue>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace gimbal {

const char* to_string(Policy policy) {
  switch (policy) {
    case Policy::kGimbal: return "gimbal";
    case Policy::kBaselineRrFcfs: return "baseline_rr_fcfs";
    case Policy::kDplbOnly: return "dplb_only";
    case Policy::kSjfsOnly: return "sjfs_only";
    case Policy::kEdrOnly: return "edr_only";
  }
  return "gimbal";
}

Policy policy_from_string(const std::string& name) {
  if (name == "gimbal") return Policy::kGimbal;
  if (name == "baseline_rr_fcfs" || name == "baseline") return Policy::kBaselineRrFcfs;
  if (name == "dplb_only" || name == "dplb") return Policy::kDplbOnly;
  if (name == "sjfs_only" || name == "sjfs") return Policy::kSjfsOnly;
  if (name == "edr_only" || name == "edr") return Policy::kEdrOnly;
  throw std::invalid_argument("unknown policy: " + name);
}

PolicyFlags policy_flags(Policy policy) {
  switch (policy) {
    case Policy::kGimbal: return {true, true, true};
    case Policy::kBaselineRrFcfs: return {false, false, false};
    case Policy::kDplbOnly: return {true, false, false};
    case Policy::kSjfsOnly: return {false, true, false};
    case Policy::kEdrOnly: return {false, false, true};
  }
  return {};
}

void SimConfig::validate() const {
  if (n_engines < 1) throw std::invalid_argument("SimConfig: n_engines must be >= 1");
  BalancerConfig b = balancer;
  b.n_engines = n_engines;
  b.validate();
  sjf.validate();
  cost.validate();
  topo.validate();
  if (engine.kv_capacity < 1 || engine.block_size < 1 || engine.max_batch_tokens < 1) {
    throw std::invalid_argument("SimConfig: engine limits must be >= 1");
  }
  if (!(metric_interval > 0.0) || metric_delay < 0.0) {
    throw std::invalid_argument("SimConfig: metric timing invalid");
  }
  if (placement.tau < 1) throw std::invalid_argument("SimConfig: tau must be >= 1");
  if (placement.anchor_gpu < 0 || placement.anchor_gpu >= topo.n_gpus) {
    throw std::invalid_argument("SimConfig: anchor_gpu out of range");
  }
  if (placement.offline_tokens < 0) {
    throw std::invalid_argument("SimConfig: offline_tokens must be >= 0");
  }
  if (!(placement.alpha > 0.0) || !(placement.beta > 0.0)) {
    throw std::invalid_argument("SimConfig: alpha and beta must be > 0");
  }
}

namespace {

// Shared expert subsystem: one routing model and one global placement across
// all engines (expert parallelism spans the GPU pool; engines are
// data-parallel replicas feeding it).
class MoeSubsystem final : public MoeHook {
 public:
  MoeSubsystem(const SimConfig& cfg, bool edr_enabled)
      : topo_(cfg.topo),
        model_(cfg.topo, cfg.routing, mix_seed(cfg.seed, 0x70ce)),
        rng_(mix_seed(cfg.seed, 0x707e)),
        lifetime_(cfg.topo),
        window_(cfg.topo),
        pcfg_(cfg.placement),
        edr_(edr_enabled),
        record_placements_(cfg.record_placements),
        pending_stall_(static_cast<std::size_t>(cfg.n_engines), 0.0),
        layer_gpu_tokens_(Eigen::MatrixXd::Zero(cfg.topo.n_layers, cfg.topo.n_gpus)),
        gpu_activation_total_(static_cast<std::size_t>(cfg.topo.n_gpus), 0),
        scratch_(static_cast<std::size_t>(cfg.topo.n_layers * cfg.topo.top_k)) {
    if (edr_) {
      // offline calibration pass: collect an affinity profile, anchor the
      // strongest pairs, and lay out the initial placement from it
      Rng offline_rng(mix_seed(cfg.seed, 0x0ff1));
      moe::RoutingStats offline(topo_);
      for (std::int64_t t = 0; t < pcfg_.offline_tokens; ++t) {
        model_.route_token(std::nullopt, offline_rng, std::span<int>(scratch_));
        offline.add_token(std::span<const int>(scratch_));
      }
      affinity_ = placement::build_affinity_set(
          offline.affinity(), topo_, pcfg_.affinity_threshold, pcfg_.top_e,
          topo_.total_experts() / topo_.n_gpus, pcfg_.anchor_gpu);
      placement_ =
          placement::greedy_place(offline.flat_activation(), affinity_, topo_.n_gpus);
      relocations_.push_back({0, 0.0, 0});
      if (record_placements_) snapshots_.push_back(placement_.assign);
    } else {
      affinity_.anchor_gpu = pcfg_.anchor_gpu;
      placement_ = placement::static_placement(topo_);
    }
  }

  double iteration_cost(std::int64_t n_tokens, double base_duration,
                        const CostModel& cost) override {
    if (n_tokens <= 0) return 0.0;
    layer_gpu_tokens_.setZero();
    std::int64_t crossings = 0;
    for (std::int64_t t = 0; t < n_tokens; ++t) {
      model_.route_token(std::nullopt, rng_, std::span<int>(scratch_));
      lifetime_.add_token(std::span<const int>(scratch_));
      window_.add_token(std::span<const int>(scratch_));
      for (int layer = 0; layer < topo_.n_layers; ++layer) {
        for (int k = 0; k < topo_.top_k; ++k) {
          const int e = scratch_[static_cast<std::size_t>(layer * topo_.top_k + k)];
          const int gpu =
              placement_.assign[static_cast<std::size_t>(topo_.flat_id(layer, e))];
          layer_gpu_tokens_(layer, gpu) += 1.0;
          gpu_activation_total_[static_cast<std::size_t>(gpu)] += 1;
        }
      }
      crossings += token_crossings();
    }
    double extra = 0.0;
    if (cost.moe_imbalance_slowdown > 0.0) {
      // every pass is gated per layer by its most loaded GPU
      const double per_layer = static_cast<double>(n_tokens * topo_.top_k);
      double excess_sum = 0.0;
      for (int layer = 0; layer < topo_.n_layers; ++layer) {
        const double peak = layer_gpu_tokens_.row(layer).maxCoeff();
        excess_sum += std::max(0.0, peak * topo_.n_gpus / per_layer - 1.0);
      }
      extra += base_duration * cost.moe_imbalance_slowdown * excess_sum /
               static_cast<double>(topo_.n_layers);
    }
    extra += cost.comm_time_per_transition * static_cast<double>(crossings);
    return extra;
  }

  void on_forward_step(double now) override {
    ++global_step_;
    if (!edr_) return;
    auto reloc = placement::maybe_relocate(global_step_, pcfg_.tau, affinity_,
                                           window_.flat_activation(), topo_.n_gpus,
                                           placement_);
    if (!reloc) return;
    placement_ = std::move(reloc->placement);
    migrations_ += reloc->moved;
    relocations_.push_back({global_step_, now, reloc->moved});
    if (record_placements_) snapshots_.push_back(placement_.assign);
    window_.reset();
    if (pcfg_.migration_stall > 0.0 && reloc->moved > 0) {
      const double stall = pcfg_.migration_stall * static_cast<double>(reloc->moved);
      for (auto& s : pending_stall_) s += stall;
    }
  }

  double take_pending_stall(int engine_id) override {
    double s = pending_stall_[static_cast<std::size_t>(engine_id)];
    pending_stall_[static_cast<std::size_t>(engine_id)] = 0.0;
    return s;
  }

  std::vector<std::int64_t> gpu_activation_totals() const { return gpu_activation_total_; }

  std::int64_t migrations() const { return migrations_; }
  std::int64_t global_step() const { return global_step_; }
  const std::vector<RelocationEvent>& relocations() const { return relocations_; }
  const placement::AffinitySet& affinity() const { return affinity_; }
  const std::vector<std::vector<int>>& snapshots() const { return snapshots_; }
  const moe::RoutingStats& lifetime_stats() const { return lifetime_; }

 private:
  std::int64_t token_crossings() const {
    std::int64_t c = 0;
    for (int layer = 0; layer + 1 < topo_.n_layers; ++layer) {
      for (int j = 0; j < topo_.top_k; ++j) {
        const int a = scratch_[static_cast<std::size_t>(layer * topo_.top_k + j)];
        const int ga = placement_.assign[static_cast<std::size_t>(topo_.flat_id(layer, a))];
        for (int k = 0; k < topo_.top_k; ++k) {
          const int b = scratch_[static_cast<std::size_t>((layer + 1) * topo_.top_k + k)];
          if (ga != placement_.assign[static_cast<std::size_t>(topo_.flat_id(layer + 1, b))]) {
            ++c;
          }
        }
      }
    }
    return c;
  }

  moe::MoeTopology topo_;
  moe::RoutingModel model_;
  Rng rng_;
  moe::RoutingStats lifetime_;
  moe::RoutingStats window_;
  PlacementConfig pcfg_;
  bool edr_ = false;
  bool record_placements_ = false;
  placement::AffinitySet affinity_;
  placement::Placement placement_;
  std::vector<double> pending_stall_;
  Eigen::MatrixXd layer_gpu_tokens_;
  std::vector<std::int64_t> gpu_activation_total_;
  std::vector<int> scratch_;
  std::int64_t global_step_ = 0;
  std::int64_t migrations_ = 0;
  std::vector<RelocationEvent> relocations_;
  std::vector<std::vector<int>> snapshots_;
};

enum class EventKind : int {
  kMetricDelivery = 0,  // ranks define same-timestamp processing order
  kArrival = 1,
  kIterationEnd = 2,
  kMetricSnapshot = 3,
};

struct Event {
  double time = 0.0;
  EventKind kind = EventKind::kArrival;
  std::uint64_t seq = 0;
  int engine_id = 0;
  std::size_t payload = 0;  // request index or metric slot
};

struct EventAfter {
  bool operator()(const Event& a, const Event& b) const {
    if (a.time != b.time) return a.time > b.time;
    if (a.kind != b.kind) return static_cast<int>(a.kind) > static_cast<int>(b.kind);
    return a.seq > b.seq;
  }
};

double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const auto n = static_cast<double>(sorted.size());
  auto idx = static_cast<std::size_t>(std::ceil(q * n));
  if (idx > 0) --idx;
  return sorted[std::min(idx, sorted.size() - 1)];
}

double median_sorted(const std::vector<double>& sorted) {
  if (sorted.empty()) return 0.0;
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

}  // namespace

MetricsReport run(const SimConfig& cfg, const std::vector<Request>& requests) {
  cfg.validate();
  const PolicyFlags flags = policy_flags(cfg.policy);

  std::unordered_set<std::int64_t> ids;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& r = requests[i];
    if (i > 0 && r.arrival_time < requests[i - 1].arrival_time) {
      throw std::invalid_argument("run: requests must be sorted by arrival_time");
    }
    if (!ids.insert(r.id).second) {
      throw std::invalid_argument("run: duplicate request id " + std::to_string(r.id));
    }
    if (r.prefill_tokens < 1 || r.output_tokens < 1) {
      throw std::invalid_argument("run: token counts must be >= 1");
    }
    const double worst_need = static_cast<double>(r.prefill_tokens + r.output_tokens) *
                              cfg.cost.kv_tokens_per_token;
    if (worst_need > static_cast<double>(cfg.engine.kv_capacity)) {
      throw std::invalid_argument("run: request " + std::to_string(r.id) +
                                  " cannot fit engine KV capacity");
    }
  }

  MetricsReport report;
  report.policy = to_string(cfg.policy);
  report.seed = cfg.seed;
  report.n_requests = static_cast<std::int64_t>(requests.size());
  report.expert_load.assign(static_cast<std::size_t>(cfg.topo.n_gpus), 0);
  report.anchor_gpu = cfg.placement.anchor_gpu;
  if (requests.empty()) return report;

  BalancerConfig bcfg = cfg.balancer;
  bcfg.n_engines = cfg.n_engines;
  Balancer balancer(bcfg, flags.load_aware_dispatch ? DispatchPolicy::kLoadAware
                                                    : DispatchPolicy::kRoundRobin);

  MoeSubsystem moe_sys(cfg, flags.edr_placement);

  std::vector<Engine> engines;
  engines.reserve(static_cast<std::size_t>(cfg.n_engines));
  for (int e = 0; e < cfg.n_engines; ++e) {
    EngineParams p;
    p.engine_id = e;
    p.kv_capacity = cfg.engine.kv_capacity;
    p.block_size = cfg.engine.block_size;
    p.max_batch_tokens = cfg.engine.max_batch_tokens;
    p.load_metric = cfg.engine.load_metric;
    p.sjf_enabled = flags.sjf_queue;
    p.sjf = cfg.sjf;
    p.cost = cfg.cost;
    engines.emplace_back(p);
  }

  std::priority_queue<Event, std::vector<Event>, EventAfter> queue;
  std::uint64_t seq = 0;
  auto push = [&](double time, EventKind kind, int engine_id, std::size_t payload) {
    queue.push(Event{time, kind, seq++, engine_id, payload});
  };

  for (std::size_t i = 0; i < requests.size(); ++i) {
    push(requests[i].arrival_time, EventKind::kArrival, 0, i);
  }
  for (int e = 0; e < cfg.n_engines; ++e) {
    push(cfg.metric_interval, EventKind::kMetricSnapshot, e, 0);
  }

  std::vector<EngineMetrics> deliveries;
  std::unordered_map<std::int64_t, RequestMetrics> partial;
  partial.reserve(requests.size());

  std::size_t completed = 0;

  auto start_engine = [&](int e, double now) {
    if (auto end = engines[static_cast<std::size_t>(e)].try_start_iteration(now, &moe_sys)) {
      push(*end, EventKind::kIterationEnd, e, 0);
    }
  };
  auto handle_events = [&](int e, const std::vector<EngineEvent>& evs) {
    for (const auto& ev : evs) {
      if (ev.kind == EngineEvent::Kind::kFirstToken) {
        auto& pm = partial[ev.request_id];
        pm.id = ev.request_id;
        pm.engine_id = e;
        pm.dispatch = ev.dispatch_time;
        pm.first_token = ev.time;
        pm.service_time = static_cast<double>(ev.uncached_prefill) / cfg.cost.prefill_rate;
      } else {
        auto& pm = partial[ev.request_id];
        pm.completion = ev.time;
        ++completed;
      }
    }
  };

  double last_event_time = 0.0;
  while (!queue.empty()) {
    const Event ev = queue.top();
    queue.pop();
    if (ev.time < last_event_time) {
      throw std::logic_error("run: event clock went backwards");
    }
    last_event_time = ev.time;
    switch (ev.kind) {
      case EventKind::kMetricDelivery: {
        balancer.update_metrics(deliveries[ev.payload]);
        break;
      }
      case EventKind::kArrival: {
        const Request& r = requests[ev.payload];
        const int e = balancer.select_engine(r, ev.time);
        engines[static_cast<std::size_t>(e)].admit(r, ev.time);
        start_engine(e, ev.time);
        break;
      }
      case EventKind::kIterationEnd: {
        auto evs = engines[static_cast<std::size_t>(ev.engine_id)].finish_iteration(&moe_sys);
        handle_events(ev.engine_id, evs);
        start_engine(ev.engine_id, ev.time);
        break;
      }
      case EventKind::kMetricSnapshot: {
        if (completed < requests.size()) {
          deliveries.push_back(
              engines[static_cast<std::size_t>(ev.engine_id)].metrics_snapshot(ev.time));
          push(ev.time + cfg.metric_delay, EventKind::kMetricDelivery, ev.engine_id,
               deliveries.size() - 1);
          push(ev.time + cfg.metric_interval, EventKind::kMetricSnapshot, ev.engine_id, 0);
        }
        break;
      }
    }
  }

  if (completed != requests.size()) {
    throw std::logic_error("run: simulation drained with incomplete requests");
  }

  // assemble per-request metrics in input order
  report.per_request.reserve(requests.size());
  double sum_ttft = 0.0, sum_tpot = 0.0, sum_queue = 0.0, sum_service = 0.0;
  std::vector<double> ttfts;
  ttfts.reserve(requests.size());
  for (const auto& r : requests) {
    RequestMetrics m = partial.at(r.id);
    m.arrival = r.arrival_time;
    m.ttft = m.first_token - r.arrival_time;
    m.tpot = r.output_tokens > 1
                 ? (m.completion - m.first_token) / static_cast<double>(r.output_tokens - 1)
                 : 0.0;
    sum_ttft += m.ttft;
    sum_tpot += m.tpot;
    sum_queue += m.dispatch - m.arrival;
    sum_service += m.service_time;
    ttfts.push_back(m.ttft);
    report.makespan = std::max(report.makespan, m.completion);
    report.total_decoded_tokens += r.output_tokens;
    report.per_request.push_back(std::move(m));
  }
  const auto n = static_cast<double>(requests.size());
  report.mean_ttft = sum_ttft / n;
  report.mean_tpot = sum_tpot / n;
  report.mean_queue_delay = sum_queue / n;
  report.mean_service_time = sum_service / n;
  std::sort(ttfts.begin(), ttfts.end());
  report.median_ttft = median_sorted(ttfts);
  report.p99_ttft = percentile_sorted(ttfts, 0.99);
  if (report.makespan > 0.0) {
    report.throughput_rps = n / report.makespan;
    report.throughput_tps =
        static_cast<double>(report.total_decoded_tokens) / report.makespan;
  }
  for (const auto& engine : engines) {
    report.prefix_hits += engine.prefix_cache().hits;
    report.prefix_probes += engine.prefix_cache().probed;
    report.forward_steps += engine.forward_steps();
  }
  report.hit_rate = report.prefix_probes > 0
                        ? static_cast<double>(report.prefix_hits) /
                              static_cast<double>(report.prefix_probes)
                        : 0.0;
  report.expert_load = moe_sys.gpu_activation_totals();
  report.migrations = moe_sys.migrations();
  report.relocations = moe_sys.relocations();
  report.affinity_experts = moe_sys.affinity().experts;
  report.anchor_gpu = moe_sys.affinity().anchor_gpu;
  report.placement_snapshots = moe_sys.snapshots();

  if (!cfg.stats_dir.empty()) {
    std::filesystem::create_directories(cfg.stats_dir);
    const std::filesystem::path dir(cfg.stats_dir);
    const auto& stats = moe_sys.lifetime_stats();
    const auto aff = stats.affinity();
    moe::write_matrix((dir / "activation_matrix.txt").string(), stats.activation());
    moe::write_tensor((dir / "affinity_tensor.txt").string(), aff.E);
    moe::write_matrix((dir / "affinity_weights.txt").string(), aff.W);
  }
  return report;
}

ComparisonTable compare(const SimConfig& cfg_a, const SimConfig& cfg_b,
                        const std::vector<Request>& requests) {
  SimConfig a_as_b = cfg_a;
  a_as_b.policy = cfg_b.policy;
  // cheap structural check: serialize-free comparison over the fields that matter
  auto same = [&](const SimConfig& x, const SimConfig& y) {
    return x.n_engines == y.n_engines && x.seed == y.seed &&
           x.balancer.theta_kv == y.balancer.theta_kv &&
           x.balancer.theta_diff == y.balancer.theta_diff &&
           x.balancer.theta_load == y.balancer.theta_load &&
           x.balancer.affinity_ttl == y.balancer.affinity_ttl &&
           x.sjf.theta_age == y.sjf.theta_age &&
           x.sjf.age_from_arrival == y.sjf.age_from_arrival &&
           x.cost.prefill_rate == y.cost.prefill_rate &&
           x.cost.decode_time_per_token == y.cost.decode_time_per_token &&
           x.cost.kv_tokens_per_token == y.cost.kv_tokens_per_token &&
           x.cost.decode_batch_slowdown == y.cost.decode_batch_slowdown &&
           x.cost.moe_imbalance_slowdown == y.cost.moe_imbalance_slowdown &&
           x.cost.comm_time_per_transition == y.cost.comm_time_per_transition &&
           x.engine.kv_capacity == y.engine.kv_capacity &&
           x.engine.block_size == y.engine.block_size &&
           x.engine.max_batch_tokens == y.engine.max_batch_tokens &&
           x.engine.load_metric == y.engine.load_metric &&
           x.topo.n_layers == y.topo.n_layers && x.topo.n_experts == y.topo.n_experts &&
           x.topo.top_k == y.topo.top_k && x.topo.n_gpus == y.topo.n_gpus &&
           x.routing.zipf_s == y.routing.zipf_s && x.routing.lambda == y.routing.lambda &&
           x.routing.affinity_peak == y.routing.affinity_peak &&
           x.placement.alpha == y.placement.alpha && x.placement.beta == y.placement.beta &&
           x.placement.tau == y.placement.tau &&
           x.placement.anchor_gpu == y.placement.anchor_gpu &&
           x.placement.affinity_threshold == y.placement.affinity_threshold &&
           x.placement.top_e == y.placement.top_e &&
           x.placement.migration_stall == y.placement.migration_stall &&
           x.placement.offline_tokens == y.placement.offline_tokens &&
           x.metric_interval == y.metric_interval && x.metric_delay == y.metric_delay;
  };
  if (!same(a_as_b, cfg_b)) {
    throw std::invalid_argument("compare: configs differ beyond the policy field");
  }

  ComparisonTable table;
  table.policy_a = to_string(cfg_a.policy);
  table.policy_b = to_string(cfg_b.policy);
  if (requests.empty()) return table;

  const MetricsReport ra = run(cfg_a, requests);
  const MetricsReport rb = run(cfg_b, requests);
  auto add = [&](const std::string& name, double a, double b) {
    ComparisonRow row;
    row.metric = name;
    row.a = a;
    row.b = b;
    row.abs_delta = b - a;
    row.rel_delta = a != 0.0 ? (b - a) / a : 0.0;
    table.rows.push_back(std::move(row));
  };
  add("mean_ttft", ra.mean_ttft, rb.mean_ttft);
  add("median_ttft", ra.median_ttft, rb.median_ttft);
  add("p99_ttft", ra.p99_ttft, rb.p99_ttft);
  add("mean_tpot", ra.mean_tpot, rb.mean_tpot);
  add("throughput_rps", ra.throughput_rps, rb.throughput_rps);
  add("throughput_tps", ra.throughput_tps, rb.throughput_tps);
  add("prefix_hits", static_cast<double>(ra.prefix_hits),
      static_cast<double>(rb.prefix_hits));
  add("hit_rate", ra.hit_rate, rb.hit_rate);
  return table;
}

}  // namespace gimbal
