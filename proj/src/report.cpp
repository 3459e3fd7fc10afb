#include "gimbal/report.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace gimbal {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

std::string report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["policy"] = report.policy;
  j["seed"] = report.seed;
  j["n_requests"] = report.n_requests;
  nlohmann::ordered_json agg;
  agg["mean_ttft"] = report.mean_ttft;
  agg["median_ttft"] = report.median_ttft;
  agg["p99_ttft"] = report.p99_ttft;
  agg["mean_tpot"] = report.mean_tpot;
  agg["throughput_rps"] = report.throughput_rps;
  agg["throughput_tps"] = report.throughput_tps;
  agg["makespan"] = report.makespan;
  agg["prefix_hits"] = report.prefix_hits;
  agg["prefix_probes"] = report.prefix_probes;
  agg["hit_rate"] = report.hit_rate;
  agg["expert_load"] = report.expert_load;
  agg["migrations"] = report.migrations;
  agg["forward_steps"] = report.forward_steps;
  agg["total_decoded_tokens"] = report.total_decoded_tokens;
  agg["mean_queue_delay"] = report.mean_queue_delay;
  agg["mean_service_time"] = report.mean_service_time;
  j["aggregates"] = std::move(agg);
  nlohmann::ordered_json relocs = nlohmann::ordered_json::array();
  for (const auto& r : report.relocations) {
    relocs.push_back({{"step", r.step}, {"time", r.time}, {"moved", r.moved}});
  }
  j["relocations"] = std::move(relocs);
  j["affinity"] = {{"anchor_gpu", report.anchor_gpu},
                   {"experts", report.affinity_experts}};
  if (!report.placement_snapshots.empty()) {
    j["placements"] = report.placement_snapshots;
  }
  nlohmann::ordered_json reqs = nlohmann::ordered_json::array();
  for (const auto& m : report.per_request) {
    reqs.push_back({{"id", m.id},
                    {"arrival", m.arrival},
                    {"engine", m.engine_id},
                    {"dispatch", m.dispatch},
                    {"first_token", m.first_token},
                    {"completion", m.completion},
                    {"ttft", m.ttft},
                    {"tpot", m.tpot}});
  }
  j["per_request"] = std::move(reqs);
  return j.dump(2) + "\n";
}

std::string per_request_csv(const MetricsReport& report) {
  std::string out =
      "id,arrival,engine,dispatch,first_token,completion,ttft,tpot,service_time\n";
  for (const auto& m : report.per_request) {
    out += std::to_string(m.id);
    out += ',';
    out += format_double(m.arrival);
    out += ',';
    out += std::to_string(m.engine_id);
    out += ',';
    out += format_double(m.dispatch);
    out += ',';
    out += format_double(m.first_token);
    out += ',';
    out += format_double(m.completion);
    out += ',';
    out += format_double(m.ttft);
    out += ',';
    out += format_double(m.tpot);
    out += ',';
    out += format_double(m.service_time);
    out += '\n';
  }
  return out;
}

std::string comparison_to_csv(const ComparisonTable& table) {
  std::string out = "metric," + table.policy_a + "," + table.policy_b +
                    ",abs_delta,rel_delta\n";
  for (const auto& row : table.rows) {
    out += row.metric;
    out += ',';
    out += format_double(row.a);
    out += ',';
    out += format_double(row.b);
    out += ',';
    out += format_double(row.abs_delta);
    out += ',';
    out += format_double(row.rel_delta);
    out += '\n';
  }
  return out;
}

void write_report_files(const std::string& out_dir, const std::string& stem,
                        const MetricsReport& report) {
  std::filesystem::create_directories(out_dir);
  const auto base = std::filesystem::path(out_dir) / stem;
  {
    std::ofstream out(base.string() + ".json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report: " + base.string() + ".json");
    out << report_to_json(report);
    if (!out) throw std::runtime_error("failed writing report: " + base.string() + ".json");
  }
  {
    std::ofstream out(base.string() + ".csv", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report: " + base.string() + ".csv");
    out << per_request_csv(report);
    if (!out) throw std::runtime_error("failed writing report: " + base.string() + ".csv");
  }
}

}  // namespace gimbal
