#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gimbal/moe.hpp"

namespace gimbal::placement {

// Expert id -> GPU id. Feasible when every expert is assigned exactly once
// and every GPU holds exactly experts/g of them.
struct Placement {
  std::vector<int> assign;
};

// Balanced partitioning instance over m expert vertices: A is per-layer
// activation (n_layers x m), W holds pair weights (m x m; the weight of an
// unordered pair {j, k} is W(j,k) + W(k,j)).
struct PlacementProblem {
  Eigen::MatrixXd A;
  Eigen::MatrixXd W;
  int g = 2;
  double alpha = 1.0;
  double beta = 1.0;
  int experts() const { return static_cast<int>(A.cols()); }
  void validate() const;
};

struct PlacementCost {
  double deviation = 0.0;  // max per-layer gap to the ideal equal share
  double cut = 0.0;        // total pair weight across GPU boundaries
  double objective = 0.0;  // alpha * deviation + beta * cut
};

// Experts that must ride on one anchor GPU across relocations.
struct AffinitySet {
  std::vector<int> experts;  // sorted, unique flattened ids
  int anchor_gpu = 0;
};

PlacementCost eval_cost(const PlacementProblem& problem, const Placement& placement);

// Exhaustive branch-and-bound over balanced partitions; exact for m <= 16,
// g <= 4 and rejects anything larger. Ties break to the lexicographically
// smallest assignment.
inline constexpr int kExactMaxExperts = 16;
inline constexpr int kExactMaxGpus = 4;
std::pair<Placement, PlacementCost> exact_solve(const PlacementProblem& problem);

// Pairs with aggregated weight >= threshold, keep the top_e heaviest, union
// their endpoints; drops lightest pairs until the union fits `capacity`.
AffinitySet build_affinity_set(const moe::AffinityTensor& affinity,
                               const moe::MoeTopology& topo, double threshold, int top_e,
                               int capacity, int anchor_gpu);

// Anchor the affinity set, then assign remaining experts by descending total
// activation to the least-loaded GPU that still has cardinality headroom.
// Load is tracked per layer and each expert compares loads in the layer
// where it is most active, keeping every layer balanced rather than just the
// grand totals.
Placement greedy_place(const Eigen::MatrixXd& activation, const AffinitySet& affinity,
                       int g);

struct Relocation {
  Placement placement;
  std::int64_t moved = 0;
};

// Fires every tau steps: re-runs greedy placement on the recent activation
// window, keeping the anchor fixed. Returns nothing off-cadence.
std::optional<Relocation> maybe_relocate(std::int64_t step_count, std::int64_t tau,
                                         const AffinitySet& affinity,
                                         const Eigen::MatrixXd& recent_activation, int g,
                                         const Placement& previous);

// Default layout: each layer's experts split into contiguous index ranges,
// one range per GPU.
Placement static_placement(const moe::MoeTopology& topo);

// Two-column text files: header "expert_id,gpu_id", one row per expert.
void write_placement(const std::string& path, const Placement& placement);
Placement read_placement(const std::string& path);

}  // namespace gimbal::placement
