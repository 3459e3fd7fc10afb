#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gimbal/rng.hpp"
#include "gimbal/types.hpp"

namespace gimbal::workload {

// Prefill-length histogram resolution used by shape_distribution.
inline constexpr int kNumBuckets = 10;

// Equal-width bucket over [1, max_prefill]; requires 1 <= prefill <= max.
int bucket_index(std::int64_t prefill_tokens, std::int64_t max_prefill);

// Normalized per-bucket sampling weights for a shape. Random draws its
// weights from `rng`; all other shapes are fixed vectors.
std::array<double, kNumBuckets> bucket_weights(DistributionShape shape, Rng& rng);

// Largest-remainder apportionment of n samples over normalized weights.
std::array<std::int64_t, kNumBuckets> quota_counts(
    const std::array<double, kNumBuckets>& weights, std::int64_t n);

// Parses a comma-separated trace file with header
// "prefill_tokens,output_tokens,user_id" (user_id column optional, value
// may be empty). Throws on I/O failure, malformed rows, or non-positive
// token counts; messages carry the 1-based line number.
std::vector<TraceRecord> load_trace(const std::string& path);

void write_trace(const std::string& path, const std::vector<TraceRecord>& records);

// Resamples `records` (with replacement, within prefill-length buckets) into
// exactly n records whose prefill histogram follows `shape`. Output order is
// a seeded shuffle. Deterministic for fixed inputs and seed.
std::vector<TraceRecord> shape_distribution(const std::vector<TraceRecord>& records,
                                            DistributionShape shape, std::int64_t n,
                                            std::uint64_t seed);

// Assigns Poisson-process arrival times at `rps` (exponential gaps), keeping
// record order. Times are strictly increasing and positive.
std::vector<Request> gen_arrivals(const std::vector<TraceRecord>& records, double rps,
                                  std::uint64_t seed);

}  // namespace gimbal::workload
