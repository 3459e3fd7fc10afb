// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 6-8 share one tuned saturating-load grid (five workload
// shapes x three seeds, five policies).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "gimbal/balancer.hpp"
#include "gimbal/cli.hpp"
#include "gimbal/moe.hpp"
#include "gimbal/placement.hpp"
#include "gimbal/report.hpp"
#include "gimbal/rng.hpp"
#include "gimbal/sim.hpp"
#include "gimbal/sjf.hpp"
#include "gimbal/workload.hpp"

using namespace gimbal;

namespace {

int g_failures = 0;

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++g_failures;
  std::printf("[%s] criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// criterion 1: engine-selection decision table

struct SelectionCase {
  std::vector<double> kv;
  std::vector<std::int64_t> load;
  std::string user;
  double now = 1.0;
  int expected = -1;
  const char* why = "";
};

void criterion_1() {
  Timer timer;
  BalancerConfig cfg;  // defaults: theta_kv 0.9, theta_diff 0.10, theta_load 3000
  cfg.affinity_ttl = 300.0;

  int checked = 0;
  bool ok = true;
  auto expect = [&](int actual, int expected, const char* why) {
    ++checked;
    if (actual != expected) {
      ok = false;
      std::printf("  case '%s': expected %d got %d\n", why, expected, actual);
    }
  };

  {
    // no metrics at all: pure round-robin across calls
    cfg.n_engines = 3;
    Balancer b(cfg);
    Request r;
    expect(b.select_engine(r, 0.0), 0, "rr first");
    expect(b.select_engine(r, 0.0), 1, "rr second");
    expect(b.select_engine(r, 0.0), 2, "rr third");
    expect(b.select_engine(r, 0.0), 0, "rr wraps");
  }
  {
    // partial metrics: still round-robin
    cfg.n_engines = 2;
    Balancer b(cfg);
    b.update_metrics({0, 0.99, 50000, 0.5});
    Request r;
    expect(b.select_engine(r, 1.0), 0, "partial metrics rr");
    expect(b.select_engine(r, 1.0), 1, "partial metrics rr advances");
  }

  cfg.n_engines = 2;
  const std::vector<SelectionCase> table = {
      // KV saturated, wide spread -> min usage engine
      {{0.95, 0.50}, {0, 0}, "", 1.0, 1, "kv relief to min"},
      {{0.50, 0.95}, {0, 0}, "", 1.0, 0, "kv relief to min (mirrored)"},
      {{0.90, 0.75}, {0, 0}, "", 1.0, 1, "kv exactly at theta_kv saturates"},
      {{0.89, 0.50}, {90000, 0}, "", 1.0, 0, "just under theta_kv ignores load"},
      // KV saturated, narrow spread -> load rule
      {{0.95, 0.90}, {8000, 2000}, "", 1.0, 1, "load spread 6000 > 3000"},
      {{0.95, 0.90}, {2000, 8000}, "", 1.0, 0, "load argmin is engine 0"},
      {{0.95, 0.90}, {5000, 2000}, "", 1.0, 0, "load spread exactly 3000 declines"},
      {{0.95, 0.90}, {4000, 2000}, "", 1.0, 0, "all rules decline: rr stands"},
      // unsaturated KV, anonymous -> rr
      {{0.30, 0.40}, {90000, 0}, "", 1.0, 0, "low kv ignores load rule"},
  };
  for (const auto& c : table) {
    Balancer b(cfg);
    for (std::size_t e = 0; e < c.kv.size(); ++e) {
      b.update_metrics({static_cast<int>(e), c.kv[e], c.load[e], 0.5});
    }
    Request r;
    r.user_id = c.user;
    expect(b.select_engine(r, c.now), c.expected, c.why);
  }

  {
    // user affinity under low pressure, honored until expiry
    Balancer b(cfg);
    b.update_metrics({0, 0.30, 0, 0.0});
    b.update_metrics({1, 0.40, 0, 0.0});
    Request u;
    u.user_id = "u1";
    expect(b.select_engine(u, 0.0), 0, "first contact takes rr engine");
    expect(b.select_engine(u, 5.0), 0, "fresh mapping honored");
    expect(b.select_engine(u, 305.0), 0, "mapping aged exactly ttl still honored");
    expect(b.select_engine(u, 700.0), 1, "expired mapping falls to rr cursor");
    expect(b.select_engine(u, 701.0), 1, "refreshed mapping now points at 1");
  }
  {
    // saturation disables affinity even with a fresh mapping
    Balancer b(cfg);
    b.update_metrics({0, 0.30, 0, 0.0});
    b.update_metrics({1, 0.40, 0, 0.0});
    Request u;
    u.user_id = "u2";
    expect(b.select_engine(u, 0.0), 0, "mapping seeded on engine 0");
    b.update_metrics({0, 0.95, 0, 1.0});
    expect(b.select_engine(u, 2.0), 1, "kv relief overrides affinity");
    b.update_metrics({0, 0.92, 0, 3.0});
    b.update_metrics({1, 0.91, 0, 3.0});
    // narrow spread, small load spread: rr candidate survives; map updated
    expect(b.select_engine(u, 4.0), 0, "declined rules leave rr under saturation");
  }
  {
    // argmax/argmin ties break to the lowest index
    cfg.n_engines = 3;
    Balancer b(cfg);
    b.update_metrics({0, 0.95, 0, 0.0});
    b.update_metrics({1, 0.50, 0, 0.0});
    b.update_metrics({2, 0.50, 0, 0.0});
    Request r;
    expect(b.select_engine(r, 1.0), 1, "kv argmin tie -> lowest index");
    Balancer b2(cfg);
    b2.update_metrics({0, 0.95, 9000, 0.0});
    b2.update_metrics({1, 0.93, 100, 0.0});
    b2.update_metrics({2, 0.93, 100, 0.0});
    expect(b2.select_engine(r, 1.0), 1, "load argmin tie -> lowest index");
    // stale update must not disturb the stored snapshot
    Balancer b3(cfg);
    b3.update_metrics({0, 0.95, 0, 5.0});
    b3.update_metrics({0, 0.10, 0, 1.0});  // stale, ignored
    b3.update_metrics({1, 0.50, 0, 5.0});
    b3.update_metrics({2, 0.60, 0, 5.0});
    expect(b3.select_engine(r, 6.0), 1, "stale metric ignored");
  }

  const double elapsed = timer.seconds();
  report(1, "engine-selection decision table", ok && checked >= 20 && elapsed < 1.0,
         std::to_string(checked) + " cases, " + fmt(elapsed) + " s");
}

// ---------------------------------------------------------------------------
// criterion 2: queue-reorder properties and no starvation

void criterion_2() {
  Timer timer;
  bool ok = true;
  SjfConfig cfg;  // theta_age = 5 s
  Rng rng(424242);
  for (int round = 0; round < 10000 && ok; ++round) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(16));
    std::vector<QueuedRequest> queue;
    for (std::size_t i = 0; i < n; ++i) {
      QueuedRequest q;
      q.request.id = static_cast<std::int64_t>(i);
      q.request.prefill_tokens = 1 + rng.uniform_int(9000);
      q.enqueued_at = rng.uniform() * 12.0;
      q.request.arrival_time = q.enqueued_at;
      queue.push_back(q);
    }
    const double now = 10.0;
    auto out = reorder_queue(queue, now, cfg);
    if (out.size() != queue.size()) ok = false;
    std::vector<std::int64_t> a, b;
    for (const auto& q : queue) a.push_back(q.request.id);
    for (const auto& q : out) b.push_back(q.request.id);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) ok = false;  // permutation
    bool seen_non_aged = false;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const bool aged = now - out[i].enqueued_at >= cfg.theta_age;
      if (!aged) seen_non_aged = true;
      if (seen_non_aged && aged) ok = false;  // aged-first
      if (i > 0) {
        const bool prev_aged = now - out[i - 1].enqueued_at >= cfg.theta_age;
        if (prev_aged && aged && out[i - 1].enqueued_at > out[i].enqueued_at) ok = false;
        if (!prev_aged && !aged &&
            out[i - 1].request.prefill_tokens > out[i].request.prefill_tokens) {
          ok = false;  // SJF within the non-aged suffix
        }
      }
    }
  }

  // No starvation: a saturated single engine (offered load above its prefill
  // capacity, whales mixed into a stream of short requests) must dispatch
  // everything within a bounded horizon once waits cross theta_age = 5 s.
  // Pure SJF on the same stream starves the whales three times longer.
  auto starvation_run = [](double theta_age) {
    SimConfig sim_cfg;
    sim_cfg.n_engines = 1;
    sim_cfg.policy = Policy::kSjfsOnly;
    sim_cfg.topo = moe::MoeTopology{2, 4, 1, 2};
    sim_cfg.cost.prefill_rate = 2000.0;
    sim_cfg.sjf.theta_age = theta_age;
    sim_cfg.seed = 7;
    std::vector<TraceRecord> records;
    Rng wrng(11);
    for (int i = 0; i < 400; ++i) {
      const bool whale = i % 10 == 0;
      records.push_back(
          {whale ? 6000 + wrng.uniform_int(2000) : 1 + wrng.uniform_int(400),
           1 + wrng.uniform_int(10), ""});
    }
    auto requests = workload::gen_arrivals(records, 2.4, 13);
    auto rep = run(sim_cfg, requests);
    double max_wait = 0.0;
    for (const auto& m : rep.per_request) {
      max_wait = std::max(max_wait, m.dispatch - m.arrival);
    }
    return std::make_pair(max_wait, rep.per_request.size() == requests.size());
  };
  const auto [aged_wait, aged_all] = starvation_run(5.0);
  const auto [sjf_wait, sjf_all] = starvation_run(1e9);
  const double horizon = 40.0;
  const bool bounded = aged_wait <= horizon && sjf_wait > horizon;

  const double elapsed = timer.seconds();
  report(2, "queue reorder properties and no starvation",
         ok && aged_all && sjf_all && bounded && elapsed < 10.0,
         "10000 queues; max wait " + fmt(aged_wait) + " s <= " + fmt(horizon) +
             " aged vs " + fmt(sjf_wait) + " s unaged, " + fmt(elapsed) + " s");
}

// ---------------------------------------------------------------------------
// criterion 3: exact solver never loses to the greedy heuristic

void criterion_3() {
  Timer timer;
  Rng rng(333);
  int trials = 0;
  int dominated = 0;
  bool feasible = true;
  const std::vector<std::pair<int, int>> sizes = {{4, 2}, {6, 2}, {6, 3}, {8, 2},
                                                  {8, 4}, {12, 2}, {12, 3}, {12, 4}};
  while (trials < 520) {
    const auto [m, g] = sizes[static_cast<std::size_t>(trials) % sizes.size()];
    const int layers = 1 + static_cast<int>(rng.uniform_int(3));
    Eigen::MatrixXd A(layers, m);
    for (int i = 0; i < layers; ++i) {
      for (int j = 0; j < m; ++j) A(i, j) = static_cast<double>(rng.uniform_int(200));
    }
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < m; ++j) {
      for (int k = j + 1; k < m; ++k) {
        if (rng.uniform() < 0.25) W(j, k) = static_cast<double>(rng.uniform_int(40));
      }
    }
    placement::PlacementProblem p;
    p.A = A;
    p.W = W;
    p.g = g;
    auto [exact_placement, exact_cost] = placement::exact_solve(p);
    auto greedy = placement::greedy_place(A, placement::AffinitySet{}, g);
    placement::PlacementCost greedy_cost;
    try {
      // eval_cost validates feasibility of both placements
      placement::eval_cost(p, exact_placement);
      greedy_cost = placement::eval_cost(p, greedy);
    } catch (const std::exception&) {
      feasible = false;
      break;
    }
    if (exact_cost.objective <= greedy_cost.objective + 1e-9) ++dominated;
    ++trials;
  }
  const double elapsed = timer.seconds();
  report(3, "exact placement dominates greedy on every instance",
         feasible && dominated == trials && elapsed < 120.0,
         std::to_string(dominated) + "/" + std::to_string(trials) + " dominated, " +
             fmt(elapsed) + " s");
}

// ---------------------------------------------------------------------------
// criterion 4: cut cost equals directly counted cross-GPU transitions

void criterion_4() {
  Timer timer;
  bool ok = true;
  Rng seed_rng(44);
  for (int round = 0; round < 100 && ok; ++round) {
    moe::MoeTopology topo;
    topo.n_layers = 2 + static_cast<int>(seed_rng.uniform_int(3));
    topo.n_gpus = 2 + static_cast<int>(seed_rng.uniform_int(2));
    topo.n_experts = topo.n_gpus * (2 + static_cast<int>(seed_rng.uniform_int(2)));
    topo.top_k = 1;
    moe::RoutingParams params;
    params.lambda = seed_rng.uniform();
    moe::RoutingModel model(topo, params, seed_rng.next_u64());
    Rng rng(seed_rng.next_u64());
    moe::RoutedStream stream;
    stream.topo = topo;
    stream.n_tokens = 50 + seed_rng.uniform_int(200);
    for (std::int64_t t = 0; t < stream.n_tokens; ++t) {
      auto choices = model.route_token(std::nullopt, rng);
      stream.choices.insert(stream.choices.end(), choices.begin(), choices.end());
    }
    auto stats = moe::record_stats(stream);

    placement::PlacementProblem p;
    p.A = stats.flat_activation();
    p.W = stats.flat_pair_weights();
    p.g = topo.n_gpus;
    // an arbitrary feasible placement: shuffled balanced assignment
    std::vector<int> assign;
    for (int e = 0; e < topo.total_experts(); ++e) {
      assign.push_back(e % topo.n_gpus);
    }
    Rng shuffle_rng(seed_rng.next_u64());
    shuffle_rng.shuffle(std::span<int>(assign));
    placement::Placement pl{assign};
    const auto cost = placement::eval_cost(p, pl);
    const auto counted = moe::comm_cost(stream, assign);
    if (cost.cut != static_cast<double>(counted)) ok = false;
  }
  const double elapsed = timer.seconds();
  report(4, "cut cost equals counted cross-GPU transitions", ok,
         std::string("100 streams, zero tolerance, ") + fmt(elapsed) + " s");
}

// ---------------------------------------------------------------------------
// criterion 5: aggregation identities on recorded stats

void criterion_5() {
  Timer timer;
  bool ok = true;
  Rng seed_rng(55);
  for (int round = 0; round < 25 && ok; ++round) {
    moe::MoeTopology topo;
    topo.n_layers = 1 + static_cast<int>(seed_rng.uniform_int(5));
    topo.n_gpus = 2;
    topo.n_experts = 2 * (1 + static_cast<int>(seed_rng.uniform_int(4)));
    topo.top_k = 1 + static_cast<int>(seed_rng.uniform_int(
                         std::min(3, topo.n_experts)));
    moe::RoutingParams params;
    params.lambda = seed_rng.uniform();
    params.zipf_s = 0.5 + seed_rng.uniform();
    moe::RoutingModel model(topo, params, seed_rng.next_u64());
    Rng rng(seed_rng.next_u64());
    const std::int64_t n_tokens = 1 + seed_rng.uniform_int(500);
    moe::RoutingStats stats(topo);
    std::vector<int> buf(static_cast<std::size_t>(topo.n_layers * topo.top_k));
    for (std::int64_t t = 0; t < n_tokens; ++t) {
      model.route_token(std::nullopt, rng, std::span<int>(buf));
      stats.add_token(std::span<const int>(buf));
    }
    // row-sum identity on A
    for (int layer = 0; layer < topo.n_layers; ++layer) {
      if (stats.activation().row(layer).sum() !=
          static_cast<double>(n_tokens * topo.top_k)) {
        ok = false;
      }
    }
    // W aggregates E exactly
    auto aff = stats.affinity();
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(topo.n_experts, topo.n_experts);
    for (const auto& e : aff.E) sum += e;
    if ((aff.W - sum).cwiseAbs().maxCoeff() != 0.0) ok = false;
  }
  const double elapsed = timer.seconds();
  report(5, "activation and affinity aggregation identities", ok,
         std::string("25 recorded tensors, exact, ") + fmt(elapsed) + " s");
}

// ---------------------------------------------------------------------------
// criteria 6-8: the saturating-load policy grid

struct GridResult {
  // [shape][seed][policy] -> report
  std::map<std::string, std::map<std::uint64_t, std::map<std::string, MetricsReport>>> cells;
};

std::vector<TraceRecord> acceptance_trace() {
  std::vector<TraceRecord> records;
  Rng rng(20240917);
  for (int i = 0; i < 6000; ++i) {
    TraceRecord rec;
    const double u = rng.uniform();
    if (u < 0.75) {
      // log-normal body
      const double z = std::sqrt(-2.0 * std::log(rng.uniform_open())) *
                       std::cos(6.283185307179586 * rng.uniform());
      rec.prefill_tokens = static_cast<std::int64_t>(std::exp(6.0 + 1.0 * z));
    } else if (u < 0.9) {
      rec.prefill_tokens = 1 + rng.uniform_int(8000);  // coverage of all buckets
    } else {
      rec.prefill_tokens = 4000 + rng.uniform_int(4000);  // heavy tail
    }
    rec.prefill_tokens = std::clamp<std::int64_t>(rec.prefill_tokens, 1, 8000);
    rec.output_tokens = 1 + rng.uniform_int(120);
    records.push_back(rec);
  }
  return records;
}

SimConfig grid_config() {
  SimConfig cfg;
  cfg.n_engines = 2;
  cfg.topo = moe::MoeTopology{4, 8, 2, 2};
  cfg.cost.prefill_rate = 9500.0;
  cfg.cost.decode_time_per_token = 0.025;
  cfg.cost.moe_imbalance_slowdown = 0.45;
  cfg.cost.decode_batch_slowdown = 0.02;
  cfg.engine.kv_capacity = 120000;  // desk-scale pressure so KV rules engage
  cfg.engine.max_batch_tokens = 4096;
  cfg.metric_interval = 0.05;
  cfg.metric_delay = 0.05;
  cfg.placement.tau = 3000;
  cfg.placement.top_e = 2;
  cfg.placement.offline_tokens = 30000;
  cfg.routing.affinity_peak = 0.9;
  return cfg;
}

constexpr int kGridRequests = 1000;
constexpr double kGridUtilization = 0.85;   // prefill utilization, burst phase
constexpr double kCoolUtilization = 0.30;   // drain phase keeps makespans comparable
constexpr std::size_t kBurstRequests = 850;

// Shapes change the mean prompt length by up to 1.6x, so each cell's request
// rate is normalized to the same prefill utilization; saturation is then
// verified against the measured baseline queueing delay. The stream ends with
// a light tail so every policy finishes against an empty queue and throughput
// reflects the same arrival span.
std::vector<Request> grid_arrivals(const SimConfig& cfg,
                                   const std::vector<TraceRecord>& shaped,
                                   std::uint64_t seed) {
  double tokens = 0.0;
  for (const auto& r : shaped) tokens += static_cast<double>(r.prefill_tokens);
  const double mean_prefill = tokens / static_cast<double>(shaped.size());
  const double per_util = cfg.n_engines * cfg.cost.prefill_rate / mean_prefill;

  std::vector<TraceRecord> burst(shaped.begin(), shaped.begin() + kBurstRequests);
  std::vector<TraceRecord> cool(shaped.begin() + kBurstRequests, shaped.end());
  auto requests =
      workload::gen_arrivals(burst, kGridUtilization * per_util, mix_seed(seed, 0xA221ULL));
  auto tail =
      workload::gen_arrivals(cool, kCoolUtilization * per_util, mix_seed(seed, 0xC001ULL));
  const double burst_end = requests.back().arrival_time;
  for (auto& r : tail) {
    r.id += static_cast<std::int64_t>(kBurstRequests);
    r.arrival_time += burst_end;
    requests.push_back(std::move(r));
  }
  return requests;
}

GridResult run_grid(double& elapsed) {
  Timer timer;
  const auto records = acceptance_trace();
  const std::vector<DistributionShape> shapes = {
      DistributionShape::kRandom, DistributionShape::kCentral,
      DistributionShape::kDescending, DistributionShape::kTwoEnd,
      DistributionShape::kAverage};
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  const std::vector<Policy> policies = {Policy::kBaselineRrFcfs, Policy::kGimbal,
                                        Policy::kDplbOnly, Policy::kSjfsOnly,
                                        Policy::kEdrOnly};
  GridResult grid;
  const SimConfig base = grid_config();
  for (auto shape : shapes) {
    for (auto seed : seeds) {
      auto shaped = workload::shape_distribution(records, shape, kGridRequests,
                                                 mix_seed(seed, 0x5AFEULL));
      auto requests = grid_arrivals(base, shaped, seed);
      for (auto policy : policies) {
        SimConfig cfg = base;
        cfg.policy = policy;
        cfg.seed = seed;
        grid.cells[to_string(shape)][seed][to_string(policy)] = run(cfg, requests);
      }
    }
  }
  elapsed = timer.seconds();
  return grid;
}

void criteria_6_7_8(const GridResult& grid, double grid_seconds) {
  // criterion 6: directional TTFT
  bool saturated = true;
  bool every_cell_lower = true;
  double sum_rel_reduction = 0.0;
  int cells = 0;
  double worst_margin = 1.0;
  for (const auto& [shape, by_seed] : grid.cells) {
    for (const auto& [seed, by_policy] : by_seed) {
      const auto& base = by_policy.at("baseline_rr_fcfs");
      const auto& gim = by_policy.at("gimbal");
      if (base.mean_queue_delay < 2.0 * base.mean_service_time) saturated = false;
      if (!(gim.mean_ttft < base.mean_ttft)) every_cell_lower = false;
      const double rel = (base.mean_ttft - gim.mean_ttft) / base.mean_ttft;
      worst_margin = std::min(worst_margin, rel);
      sum_rel_reduction += rel;
      ++cells;
    }
  }
  const double mean_reduction = sum_rel_reduction / cells;
  report(6, "gimbal lowers mean TTFT in every saturated cell",
         saturated && every_cell_lower && mean_reduction >= 0.05 &&
             grid_seconds < 300.0,
         "mean reduction " + fmt(mean_reduction * 100.0) + "%, worst cell " +
             fmt(worst_margin * 100.0) + "%, grid " + fmt(grid_seconds) + " s");

  // criterion 7: TPOT direction and throughput parity
  bool tpot_ok = true;
  bool tput_ok = true;
  double worst_tput = 0.0;
  for (const auto& [shape, by_seed] : grid.cells) {
    for (const auto& [seed, by_policy] : by_seed) {
      const auto& base = by_policy.at("baseline_rr_fcfs");
      const auto& gim = by_policy.at("gimbal");
      if (!(gim.mean_tpot <= base.mean_tpot)) tpot_ok = false;
      const double rel = std::abs(gim.throughput_rps - base.throughput_rps) /
                         base.throughput_rps;
      worst_tput = std::max(worst_tput, rel);
      if (rel > 0.02) tput_ok = false;
    }
  }
  report(7, "gimbal TPOT never worse; throughput within 2%", tpot_ok && tput_ok,
         "worst throughput delta " + fmt(worst_tput * 100.0) + "%");

  // criterion 8: the combined policy beats each single module in >= 80% of cells
  int wins = 0;
  int total = 0;
  for (const auto& [shape, by_seed] : grid.cells) {
    for (const auto& [seed, by_policy] : by_seed) {
      const auto& gim = by_policy.at("gimbal");
      const double best_single =
          std::min({by_policy.at("dplb_only").mean_ttft,
                    by_policy.at("sjfs_only").mean_ttft,
                    by_policy.at("edr_only").mean_ttft});
      if (gim.mean_ttft <= best_single) ++wins;
      ++total;
    }
  }
  report(8, "combined policy beats every ablation in >= 80% of cells",
         wins * 5 >= total * 4,
         std::to_string(wins) + "/" + std::to_string(total) + " cells");
}

// ---------------------------------------------------------------------------
// criterion 9: prefix-cache determinism and improvement under user affinity

void criterion_9() {
  Timer timer;
  // conversation-style workload: users return with longer prompts
  std::vector<TraceRecord> records;
  Rng rng(909);
  std::vector<std::int64_t> turn(120, 0);
  for (int i = 0; i < 2000; ++i) {
    const auto u = static_cast<std::size_t>(rng.uniform_int(120));
    TraceRecord rec;
    rec.user_id = "user" + std::to_string(u);
    rec.prefill_tokens = 64 + 96 * turn[u]++;
    rec.output_tokens = 1 + rng.uniform_int(30);
    records.push_back(rec);
  }
  auto requests = workload::gen_arrivals(records, 8.0, 17);

  SimConfig cfg;
  cfg.n_engines = 2;
  cfg.topo = moe::MoeTopology{2, 4, 1, 2};
  cfg.placement.offline_tokens = 2000;
  cfg.seed = 3;

  std::vector<std::int64_t> hits;
  for (int round = 0; round < 5; ++round) {
    cfg.policy = Policy::kGimbal;
    hits.push_back(run(cfg, requests).prefix_hits);
  }
  const bool identical = std::all_of(hits.begin(), hits.end(),
                                     [&](std::int64_t h) { return h == hits[0]; });
  cfg.policy = Policy::kBaselineRrFcfs;
  const auto base_hits = run(cfg, requests).prefix_hits;
  const bool improved = hits[0] >= base_hits;
  const double elapsed = timer.seconds();
  report(9, "prefix-cache hits are repeatable and no worse than round-robin",
         identical && improved,
         "gimbal " + std::to_string(hits[0]) + " vs baseline " +
             std::to_string(base_hits) + " hits, 5 runs identical, " + fmt(elapsed) +
             " s");
}

// ---------------------------------------------------------------------------
// criterion 10: relocation cadence at tau = 3000

void criterion_10() {
  Timer timer;
  SimConfig cfg;
  cfg.n_engines = 2;
  cfg.policy = Policy::kEdrOnly;
  cfg.topo = moe::MoeTopology{2, 4, 1, 2};
  cfg.placement.tau = 3000;
  cfg.placement.offline_tokens = 5000;
  cfg.record_placements = true;
  cfg.seed = 10;

  // enough decode traffic for > 9000 forward steps
  std::vector<TraceRecord> records(900, TraceRecord{64, 80, ""});
  auto requests = workload::gen_arrivals(records, 12.0, 23);
  auto rep = run(cfg, requests);

  bool ok = !rep.relocations.empty() && rep.relocations.front().step == 0;
  int fired = 0;
  for (std::size_t i = 1; i < rep.relocations.size(); ++i) {
    if (rep.relocations[i].step % 3000 != 0) ok = false;
    ++fired;
  }
  if (rep.forward_steps >= 3000 && fired == 0) ok = false;
  // every expected multiple within the run actually fired
  const auto expected = rep.forward_steps / 3000;
  if (fired != expected) ok = false;
  // post-relocation placements keep the affinity set on the anchor
  if (rep.placement_snapshots.size() != rep.relocations.size()) ok = false;
  for (const auto& snapshot : rep.placement_snapshots) {
    for (int e : rep.affinity_experts) {
      if (snapshot[static_cast<std::size_t>(e)] != rep.anchor_gpu) ok = false;
    }
  }
  const double elapsed = timer.seconds();
  report(10, "relocations fire exactly every 3000 steps and at load",
         ok,
         std::to_string(fired) + " relocations over " +
             std::to_string(rep.forward_steps) + " steps, " + fmt(elapsed) + " s");
}

// ---------------------------------------------------------------------------
// criterion 11: byte-identical determinism, including sweep parallelism

void criterion_11() {
  Timer timer;
  namespace fs = std::filesystem;
  const auto records = acceptance_trace();
  auto shaped = workload::shape_distribution(records, DistributionShape::kTwoEnd, 300,
                                             mix_seed(5, 0x5AFEULL));
  auto requests = workload::gen_arrivals(shaped, 6.0, mix_seed(5, 0xA221ULL));
  SimConfig cfg = grid_config();
  cfg.policy = Policy::kGimbal;
  cfg.seed = 5;
  const auto a = report_to_json(run(cfg, requests));
  const auto b = report_to_json(run(cfg, requests));
  const bool reports_identical = a == b && !a.empty();

  // sweep determinism across worker counts
  const auto trace_path = fs::temp_directory_path() / "gimbal_acceptance_trace.csv";
  workload::write_trace(trace_path.string(), records);
  RunSpec spec;
  spec.trace_path = trace_path.string();
  spec.n_requests = 200;
  spec.rps = 6.0;
  spec.seeds = {1, 2};
  SweepSpec grid;
  grid.shapes = {DistributionShape::kAverage, DistributionShape::kDescending};
  grid.rps_list = {6.0};
  grid.policies = {Policy::kBaselineRrFcfs, Policy::kGimbal};

  auto out1 = fs::temp_directory_path() / "gimbal_acceptance_sweep1";
  fs::remove_all(out1);
  spec.out_dir = out1.string();
  grid.jobs = 1;
  auto cells1 = cli::cmd_sweep(spec, grid_config(), grid);

  auto out4 = fs::temp_directory_path() / "gimbal_acceptance_sweep4";
  fs::remove_all(out4);
  spec.out_dir = out4.string();
  grid.jobs = 4;
  auto cells4 = cli::cmd_sweep(spec, grid_config(), grid);

  const bool sweeps_identical =
      cli::sweep_to_csv(cells1) == cli::sweep_to_csv(cells4);
  const double elapsed = timer.seconds();
  report(11, "byte-identical reports across runs and sweep thread counts",
         reports_identical && sweeps_identical, fmt(elapsed) + " s");
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  double grid_seconds = 0.0;
  const auto grid = run_grid(grid_seconds);
  criteria_6_7_8(grid, grid_seconds);
  criterion_9();
  criterion_10();
  criterion_11();
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
