#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gimbal/rng.hpp"

namespace gimbal::moe {

struct MoeTopology {
  int n_layers = 4;
  int n_experts = 8;  // per layer
  int top_k = 2;
  int n_gpus = 2;
  void validate() const;
  int total_experts() const { return n_layers * n_experts; }
  // Experts are partitioning vertices identified by a flattened (layer, index) id.
  int flat_id(int layer, int expert) const { return layer * n_experts + expert; }
};

struct RoutingParams {
  double zipf_s = 1.2;        // base-weight skew exponent
  double lambda = 0.5;        // inter-layer affinity mixing weight
  double affinity_peak = 0.8; // kernel mass on each expert's preferred successor
};

// Per-layer activation counts, n_layers x n_experts. Row i sums to
// (tokens routed) * top_k.
using ActivationMatrix = Eigen::MatrixXd;

// Consecutive-layer expert transition counts. E[i](j, k) is the number of
// (layer i expert j) -> (layer i+1 expert k) pairings; W aggregates E over i.
struct AffinityTensor {
  std::vector<Eigen::MatrixXd> E;
  Eigen::MatrixXd W;
};

// Generative stand-in for observed routing behavior: a skewed per-layer
// expert preference (Zipf over a seeded permutation) mixed with a sparse
// inter-layer affinity kernel. lambda = 0 makes layers independent.
class RoutingModel {
 public:
  RoutingModel(const MoeTopology& topo, const RoutingParams& params, std::uint64_t seed);
  // Custom matrices: base is n_layers x n_experts, kernel n_experts x n_experts;
  // rows must be normalizable (non-negative, positive sum).
  RoutingModel(const MoeTopology& topo, Eigen::MatrixXd base, Eigen::MatrixXd kernel,
               double lambda);

  // Routes one token through all layers; writes n_layers * top_k expert
  // indices into `out` (layer-major). Layer i > 0 mixes the base weights with
  // the kernel rows of the token's layer i-1 choices; `prev` seeds that
  // mixing for layer 0 when present.
  void route_token(std::optional<std::span<const int>> prev, Rng& rng,
                   std::span<int> out) const;
  std::vector<int> route_token(std::optional<std::span<const int>> prev, Rng& rng) const;

  const MoeTopology& topology() const { return topo_; }
  const Eigen::MatrixXd& base_weights() const { return base_; }
  const Eigen::MatrixXd& affinity_kernel() const { return kernel_; }
  double lambda() const { return lambda_; }

 private:
  MoeTopology topo_;
  Eigen::MatrixXd base_;    // n_layers x n_experts, rows sum to 1
  Eigen::MatrixXd kernel_;  // n_experts x n_experts, rows sum to 1
  double lambda_ = 0.0;
};

// A materialized routed token stream: choices is token-major then
// layer-major, n_tokens * n_layers * top_k entries.
struct RoutedStream {
  MoeTopology topo;
  std::int64_t n_tokens = 0;
  std::vector<int> choices;
  std::span<const int> token(std::int64_t t) const {
    const auto stride = static_cast<std::size_t>(topo.n_layers * topo.top_k);
    return std::span<const int>(choices).subspan(static_cast<std::size_t>(t) * stride, stride);
  }
};

// Incremental activation / transition accumulator.
class RoutingStats {
 public:
  explicit RoutingStats(const MoeTopology& topo);
  void add_token(std::span<const int> choices);
  void reset();
  const ActivationMatrix& activation() const { return A_; }
  AffinityTensor affinity() const;  // W computed on demand
  std::int64_t tokens() const { return tokens_; }

  // Flattened forms for placement: activation as n_layers x total_experts,
  // pair weights as an upper-triangular total x total matrix built from E.
  Eigen::MatrixXd flat_activation() const;
  Eigen::MatrixXd flat_pair_weights() const;

 private:
  MoeTopology topo_;
  ActivationMatrix A_;
  std::vector<Eigen::MatrixXd> E_;
  std::int64_t tokens_ = 0;
};

RoutingStats record_stats(const RoutedStream& stream);

// Cross-GPU transition count for a routed stream under a flattened
// expert -> GPU assignment (size total_experts, entries >= 0).
std::int64_t comm_cost(const RoutedStream& stream, std::span<const int> expert_to_gpu);

// Delimited-text matrix files: header line "rows,cols" (or
// "blocks,rows,cols" for tensors), then comma-separated rows.
void write_matrix(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix(const std::string& path);
void write_tensor(const std::string& path, const std::vector<Eigen::MatrixXd>& blocks);
std::vector<Eigen::MatrixXd> read_tensor(const std::string& path);

}  // namespace gimbal::moe
