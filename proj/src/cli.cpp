#include "gimbal/cli.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "gimbal/moe.hpp"
#include "gimbal/report.hpp"
#include "gimbal/rng.hpp"
#include "gimbal/workload.hpp"

namespace gimbal::cli {

namespace {

std::string rps_tag(double rps) {
  std::string s = format_double(rps);
  for (auto& c : s) {
    if (c == '.') c = 'p';
  }
  return s;
}

std::string run_stem(Policy policy, DistributionShape shape, double rps,
                     std::uint64_t seed) {
  return std::string(to_string(policy)) + "_" + to_string(shape) + "_rps" + rps_tag(rps) +
         "_seed" + std::to_string(seed);
}

MetricsReport run_one(const RunSpec& spec, const SimConfig& cfg,
                      const std::vector<TraceRecord>& records, DistributionShape shape,
                      double rps, Policy policy, std::uint64_t seed) {
  auto shaped = workload::shape_distribution(records, shape, spec.n_requests,
                                             mix_seed(seed, 0x5AFEULL));
  auto requests = workload::gen_arrivals(shaped, rps, mix_seed(seed, 0xA221ULL));
  SimConfig run_cfg = cfg;
  run_cfg.policy = policy;
  run_cfg.seed = seed;
  return run(run_cfg, requests);
}

void print_report_line(const MetricsReport& r, DistributionShape shape, double rps) {
  std::printf("%-18s %-10s rps=%-5s seed=%-4llu mean_ttft=%.4f mean_tpot=%.4f "
              "p99_ttft=%.4f rps_out=%.3f hit_rate=%.4f\n",
              r.policy.c_str(), to_string(shape), format_double(rps).c_str(),
              static_cast<unsigned long long>(r.seed), r.mean_ttft, r.mean_tpot,
              r.p99_ttft, r.throughput_rps, r.hit_rate);
}

}  // namespace

std::vector<MetricsReport> cmd_run(const RunSpec& spec, const SimConfig& cfg) {
  spec.validate();
  cfg.validate();
  const auto records = workload::load_trace(spec.trace_path);
  std::printf("loaded %zu trace records from %s\n", records.size(),
              spec.trace_path.c_str());

  std::vector<MetricsReport> reports;
  reports.reserve(spec.seeds.size());
  for (std::uint64_t seed : spec.seeds) {
    reports.push_back(
        run_one(spec, cfg, records, spec.shape, spec.rps, cfg.policy, seed));
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto stem = run_stem(cfg.policy, spec.shape, spec.rps, spec.seeds[i]);
    write_report_files(spec.out_dir, stem, reports[i]);
    print_report_line(reports[i], spec.shape, spec.rps);
  }

  if (spec.seeds.size() > 1) {
    nlohmann::ordered_json summary;
    summary["policy"] = to_string(cfg.policy);
    summary["shape"] = to_string(spec.shape);
    summary["rps"] = spec.rps;
    summary["seeds"] = spec.seeds;
    double ttft = 0.0, tpot = 0.0, tput = 0.0, hit = 0.0;
    for (const auto& r : reports) {
      ttft += r.mean_ttft;
      tpot += r.mean_tpot;
      tput += r.throughput_rps;
      hit += r.hit_rate;
    }
    const auto n = static_cast<double>(reports.size());
    summary["mean_ttft"] = ttft / n;
    summary["mean_tpot"] = tpot / n;
    summary["throughput_rps"] = tput / n;
    summary["hit_rate"] = hit / n;
    std::filesystem::create_directories(spec.out_dir);
    const auto path = std::filesystem::path(spec.out_dir) / "summary.json";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << summary.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing " + path.string());
  }
  return reports;
}

std::vector<SweepCell> cmd_sweep(const RunSpec& spec, const SimConfig& cfg,
                                 const SweepSpec& grid) {
  spec.validate();
  cfg.validate();
  if (grid.shapes.empty() || grid.rps_list.empty() || grid.policies.empty()) {
    throw std::invalid_argument("cmd_sweep: grid must not be empty");
  }
  const auto records = workload::load_trace(spec.trace_path);
  std::printf("loaded %zu trace records from %s\n", records.size(),
              spec.trace_path.c_str());

  struct Job {
    std::size_t cell;
    DistributionShape shape;
    double rps;
    Policy policy;
    std::uint64_t seed;
  };
  std::vector<SweepCell> cells;
  std::vector<Job> jobs;
  for (auto shape : grid.shapes) {
    for (double rps : grid.rps_list) {
      for (auto policy : grid.policies) {
        for (std::uint64_t seed : spec.seeds) {
          jobs.push_back({cells.size(), shape, rps, policy, seed});
        }
        cells.push_back({shape, rps, policy, 0, 0, 0, 0, 0});
      }
    }
  }

  std::vector<MetricsReport> results(jobs.size());
  std::vector<std::string> failures(jobs.size());
  std::atomic<std::size_t> next{0};
  unsigned n_threads = grid.jobs > 0 ? static_cast<unsigned>(grid.jobs)
                                     : std::thread::hardware_concurrency();
  if (n_threads == 0) n_threads = 1;
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(jobs.size()));

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      try {
        results[i] =
            run_one(spec, cfg, records, job.shape, job.rps, job.policy, job.seed);
      } catch (const std::exception& e) {
        failures[i] = std::string("cell (") + to_string(job.shape) + ", rps=" +
                      format_double(job.rps) + ", " + to_string(job.policy) +
                      ", seed=" + std::to_string(job.seed) + "): " + e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (const auto& f : failures) {
    if (!f.empty()) throw std::runtime_error("sweep aborted at " + f);
  }

  std::vector<int> counts(cells.size(), 0);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& cell = cells[jobs[i].cell];
    cell.mean_ttft += results[i].mean_ttft;
    cell.mean_tpot += results[i].mean_tpot;
    cell.throughput_rps += results[i].throughput_rps;
    cell.throughput_tps += results[i].throughput_tps;
    cell.hit_rate += results[i].hit_rate;
    counts[jobs[i].cell] += 1;
  }
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto n = static_cast<double>(counts[c]);
    cells[c].mean_ttft /= n;
    cells[c].mean_tpot /= n;
    cells[c].throughput_rps /= n;
    cells[c].throughput_tps /= n;
    cells[c].hit_rate /= n;
  }

  std::filesystem::create_directories(spec.out_dir);
  const auto path = std::filesystem::path(spec.out_dir) / "sweep.csv";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << sweep_to_csv(cells);
  if (!out) throw std::runtime_error("failed writing " + path.string());
  std::printf("%s\n", sweep_to_csv(cells).c_str());
  return cells;
}

std::string sweep_to_csv(const std::vector<SweepCell>& cells) {
  std::string out = "shape,rps,policy,mean_ttft,mean_tpot,throughput_rps,throughput_tps,hit_rate\n";
  for (const auto& c : cells) {
    out += to_string(c.shape);
    out += ',';
    out += format_double(c.rps);
    out += ',';
    out += to_string(c.policy);
    out += ',';
    out += format_double(c.mean_ttft);
    out += ',';
    out += format_double(c.mean_tpot);
    out += ',';
    out += format_double(c.throughput_rps);
    out += ',';
    out += format_double(c.throughput_tps);
    out += ',';
    out += format_double(c.hit_rate);
    out += '\n';
  }
  return out;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Discrete-event simulator for data-parallel MoE LLM serving schedulers"};

  std::string config_path;
  std::string trace_path;
  std::string shape_name;
  std::string policy_name;
  std::string out_dir;
  std::string dump_dir;
  std::int64_t n_requests = -1;
  double rps = -1.0;
  std::vector<std::uint64_t> seeds;
  bool sweep = false;
  int jobs = -1;

  app.add_option("--config", config_path, "JSON config file")->envname("GIMBALSIM_CONFIG");
  app.add_option("--trace", trace_path, "trace CSV (prefill_tokens,output_tokens,user_id)")
      ->envname("GIMBALSIM_TRACE");
  app.add_option("--shape", shape_name,
                 "distribution shape: random|central|descending|two-end|average")
      ->envname("GIMBALSIM_SHAPE");
  app.add_option("--rps", rps, "request rate, requests/second")->envname("GIMBALSIM_RPS");
  app.add_option("--requests", n_requests, "requests per run")->envname("GIMBALSIM_REQUESTS");
  app.add_option("--seed", seeds, "run seed (repeatable)")->envname("GIMBALSIM_SEED");
  app.add_option("--policy", policy_name,
                 "gimbal|baseline_rr_fcfs|dplb_only|sjfs_only|edr_only")
      ->envname("GIMBALSIM_POLICY");
  app.add_option("--out", out_dir, "output directory")->envname("GIMBALSIM_OUT");
  app.add_flag("--sweep", sweep, "run the shape x rps x policy grid from the config");
  app.add_option("--jobs", jobs, "parallel sweep workers (default: hardware)");
  app.add_option("--dump-matrices", dump_dir,
                 "directory for activation/affinity matrix files from the run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    SimConfig cfg;
    SweepSpec grid;
    if (!config_path.empty()) {
      cfg = load_config(config_path);
      std::ifstream in(config_path);
      nlohmann::json j;
      in >> j;
      grid = sweep_from_json(j);
    }
    RunSpec spec;
    if (!trace_path.empty()) spec.trace_path = trace_path;
    if (!shape_name.empty()) spec.shape = shape_from_string(shape_name);
    if (n_requests >= 0) spec.n_requests = n_requests;
    if (rps >= 0.0) spec.rps = rps;
    if (!seeds.empty()) spec.seeds = seeds;
    if (!out_dir.empty()) spec.out_dir = out_dir;
    if (!policy_name.empty()) cfg.policy = policy_from_string(policy_name);
    if (jobs >= 0) grid.jobs = jobs;
    if (!dump_dir.empty()) cfg.stats_dir = dump_dir;

    if (sweep) {
      cmd_sweep(spec, cfg, grid);
    } else {
      cmd_run(spec, cfg);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace gimbal::cli
