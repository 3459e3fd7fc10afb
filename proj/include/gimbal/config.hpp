#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gimbal/sim.hpp"
#include "gimbal/types.hpp"

namespace gimbal {

// Grid for A/B sweeps: every (shape, rps, policy) cell runs all seeds.
struct SweepSpec {
  std::vector<DistributionShape> shapes = {
      DistributionShape::kRandom, DistributionShape::kCentral,
      DistributionShape::kDescending, DistributionShape::kTwoEnd,
      DistributionShape::kAverage};
  std::vector<double> rps_list = {1.0, 1.2, 1.4};
  std::vector<Policy> policies = {Policy::kBaselineRrFcfs, Policy::kGimbal};
  int jobs = 0;  // parallel cells; 0 = hardware concurrency
};

struct RunSpec {
  std::string trace_path;
  DistributionShape shape = DistributionShape::kAverage;
  std::int64_t n_requests = 1000;
  double rps = 1.4;
  std::vector<std::uint64_t> seeds = {0};
  std::string out_dir = "out";
  void validate() const;
};

// Flat key/value config file; every key is optional and defaults match the
// built-in settings, so an empty object is a valid config.
SimConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const SimConfig& cfg);
SimConfig load_config(const std::string& path);

SweepSpec sweep_from_json(const nlohmann::json& j);

}  // namespace gimbal
