#pragma once

#include <string>
#include <vector>

#include "gimbal/config.hpp"
#include "gimbal/sim.hpp"

namespace gimbal::cli {

// Runs one experiment per seed: shape the trace, synthesize arrivals, run the
// simulator, write <out>/<stem>.json/.csv per seed plus summary.json when
// several seeds are given. Returns the reports in seed order.
std::vector<MetricsReport> cmd_run(const RunSpec& spec, const SimConfig& cfg);

struct SweepCell {
  DistributionShape shape;
  double rps;
  Policy policy;
  double mean_ttft = 0.0;
  double mean_tpot = 0.0;
  double throughput_rps = 0.0;
  double throughput_tps = 0.0;
  double hit_rate = 0.0;
};

// Runs the full (shape x rps x policy) grid, every cell over all seeds, and
// writes <out>/sweep.csv. Cells run in parallel; output order is fixed.
std::vector<SweepCell> cmd_sweep(const RunSpec& spec, const SimConfig& cfg,
                                 const SweepSpec& grid);

std::string sweep_to_csv(const std::vector<SweepCell>& cells);

// argv entry point; returns the process exit status.
int run_cli(int argc, const char* const* argv);

}  // namespace gimbal::cli
