#include "gimbal/config.hpp"

#include <fstream>
#include <stdexcept>

namespace gimbal {

void RunSpec::validate() const {
  if (trace_path.empty()) throw std::invalid_argument("RunSpec: trace path required");
  if (n_requests < 1) throw std::invalid_argument("RunSpec: n_requests must be >= 1");
  if (!(rps > 0.0)) throw std::invalid_argument("RunSpec: rps must be > 0");
  if (seeds.empty()) throw std::invalid_argument("RunSpec: at least one seed required");
  if (out_dir.empty()) throw std::invalid_argument("RunSpec: output directory required");
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    out = it->get<T>();
  }
}

}  // namespace

SimConfig config_from_json(const nlohmann::json& j) {
  SimConfig cfg;
  read_field(j, "n_engines", cfg.n_engines);
  if (auto it = j.find("policy"); it != j.end()) {
    cfg.policy = policy_from_string(it->get<std::string>());
  }
  read_field(j, "seed", cfg.seed);

  read_field(j, "theta_kv", cfg.balancer.theta_kv);
  read_field(j, "theta_diff", cfg.balancer.theta_diff);
  read_field(j, "theta_load", cfg.balancer.theta_load);
  read_field(j, "affinity_ttl", cfg.balancer.affinity_ttl);

  read_field(j, "theta_age", cfg.sjf.theta_age);
  read_field(j, "age_from_arrival", cfg.sjf.age_from_arrival);

  read_field(j, "prefill_rate", cfg.cost.prefill_rate);
  read_field(j, "decode_time_per_token", cfg.cost.decode_time_per_token);
  read_field(j, "kv_tokens_per_token", cfg.cost.kv_tokens_per_token);
  read_field(j, "decode_batch_slowdown", cfg.cost.decode_batch_slowdown);
  read_field(j, "moe_imbalance_slowdown", cfg.cost.moe_imbalance_slowdown);
  read_field(j, "comm_time_per_transition", cfg.cost.comm_time_per_transition);

  read_field(j, "kv_capacity", cfg.engine.kv_capacity);
  read_field(j, "block_size", cfg.engine.block_size);
  read_field(j, "max_batch_tokens", cfg.engine.max_batch_tokens);
  if (auto it = j.find("load_metric"); it != j.end()) {
    const auto name = it->get<std::string>();
    if (name == "prefill_only") {
      cfg.engine.load_metric = LoadMetric::kPrefillOnly;
    } else if (name == "prefill_plus_decode") {
      cfg.engine.load_metric = LoadMetric::kPrefillPlusDecode;
    } else {
      throw std::invalid_argument("config: unknown load_metric '" + name + "'");
    }
  }

  read_field(j, "n_layers", cfg.topo.n_layers);
  read_field(j, "n_experts", cfg.topo.n_experts);
  read_field(j, "top_k", cfg.topo.top_k);
  read_field(j, "n_gpus", cfg.topo.n_gpus);

  read_field(j, "zipf_s", cfg.routing.zipf_s);
  read_field(j, "lambda", cfg.routing.lambda);
  read_field(j, "affinity_peak", cfg.routing.affinity_peak);

  read_field(j, "alpha", cfg.placement.alpha);
  read_field(j, "beta", cfg.placement.beta);
  read_field(j, "tau", cfg.placement.tau);
  read_field(j, "anchor_gpu", cfg.placement.anchor_gpu);
  read_field(j, "affinity_threshold", cfg.placement.affinity_threshold);
  read_field(j, "top_e", cfg.placement.top_e);
  read_field(j, "migration_stall", cfg.placement.migration_stall);
  read_field(j, "offline_tokens", cfg.placement.offline_tokens);

  read_field(j, "metric_interval", cfg.metric_interval);
  read_field(j, "metric_delay", cfg.metric_delay);
  read_field(j, "record_placements", cfg.record_placements);
  return cfg;
}

nlohmann::json config_to_json(const SimConfig& cfg) {
  nlohmann::json j;
  j["n_engines"] = cfg.n_engines;
  j["policy"] = to_string(cfg.policy);
  j["seed"] = cfg.seed;
  j["theta_kv"] = cfg.balancer.theta_kv;
  j["theta_diff"] = cfg.balancer.theta_diff;
  j["theta_load"] = cfg.balancer.theta_load;
  j["affinity_ttl"] = cfg.balancer.affinity_ttl;
  j["theta_age"] = cfg.sjf.theta_age;
  j["age_from_arrival"] = cfg.sjf.age_from_arrival;
  j["prefill_rate"] = cfg.cost.prefill_rate;
  j["decode_time_per_token"] = cfg.cost.decode_time_per_token;
  j["kv_tokens_per_token"] = cfg.cost.kv_tokens_per_token;
  j["decode_batch_slowdown"] = cfg.cost.decode_batch_slowdown;
  j["moe_imbalance_slowdown"] = cfg.cost.moe_imbalance_slowdown;
  j["comm_time_per_transition"] = cfg.cost.comm_time_per_transition;
  j["kv_capacity"] = cfg.engine.kv_capacity;
  j["block_size"] = cfg.engine.block_size;
  j["max_batch_tokens"] = cfg.engine.max_batch_tokens;
  j["load_metric"] = cfg.engine.load_metric == LoadMetric::kPrefillOnly
                         ? "prefill_only"
                         : "prefill_plus_decode";
  j["n_layers"] = cfg.topo.n_layers;
  j["n_experts"] = cfg.topo.n_experts;
  j["top_k"] = cfg.topo.top_k;
  j["n_gpus"] = cfg.topo.n_gpus;
  j["zipf_s"] = cfg.routing.zipf_s;
  j["lambda"] = cfg.routing.lambda;
  j["affinity_peak"] = cfg.routing.affinity_peak;
  j["alpha"] = cfg.placement.alpha;
  j["beta"] = cfg.placement.beta;
  j["tau"] = cfg.placement.tau;
  j["anchor_gpu"] = cfg.placement.anchor_gpu;
  j["affinity_threshold"] = cfg.placement.affinity_threshold;
  j["top_e"] = cfg.placement.top_e;
  j["migration_stall"] = cfg.placement.migration_stall;
  j["offline_tokens"] = cfg.placement.offline_tokens;
  j["metric_interval"] = cfg.metric_interval;
  j["metric_delay"] = cfg.metric_delay;
  j["record_placements"] = cfg.record_placements;
  return j;
}

SimConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

SweepSpec sweep_from_json(const nlohmann::json& j) {
  SweepSpec spec;
  auto it = j.find("sweep");
  if (it == j.end()) return spec;
  const auto& s = *it;
  if (auto f = s.find("shapes"); f != s.end()) {
    spec.shapes.clear();
    for (const auto& name : *f) spec.shapes.push_back(shape_from_string(name.get<std::string>()));
  }
  if (auto f = s.find("rps"); f != s.end()) {
    spec.rps_list = f->get<std::vector<double>>();
  }
  if (auto f = s.find("policies"); f != s.end()) {
    spec.policies.clear();
    for (const auto& name : *f) spec.policies.push_back(policy_from_string(name.get<std::string>()));
  }
  if (auto f = s.find("jobs"); f != s.end()) spec.jobs = f->get<int>();
  if (spec.shapes.empty() || spec.rps_list.empty() || spec.policies.empty()) {
    throw std::invalid_argument("sweep grid must not be empty");
  }
  return spec;
}

}  // namespace gimbal
