#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace gimbal {

// Block-level prefix cache keyed by chained block hashes: the hash of block k
// folds in the hash of blocks 0..k-1, so a match implies the whole leading
// prefix matches.
struct PrefixCacheTable {
  int block_size = 16;  // tokens per block
  std::unordered_set<std::uint64_t> entries;
  std::int64_t probed = 0;
  std::int64_t hits = 0;
};

struct PrefixLookupResult {
  std::int64_t hit_blocks = 0;
  std::int64_t probed_blocks = 0;
};

std::uint64_t chain_block_hash(std::uint64_t prev, std::span<const std::int32_t> block);

// Probes all full blocks of the prompt in prefix order, counting consecutive
// leading blocks already resident as hits (a miss ends the hit run but every
// full block is still probed). Updates the table counters and inserts every
// probed block (populate-on-miss).
PrefixLookupResult prefix_lookup(PrefixCacheTable& table,
                                 std::span<const std::int32_t> prompt_token_ids);

// Hit count the mutating lookup would report, without touching the table.
std::int64_t prefix_peek(const PrefixCacheTable& table,
                         std::span<const std::int32_t> prompt_token_ids);

// Deterministic prompt synthesis. Requests of one user draw prompts from the
// same per-user token stream (prompt = first n tokens of the stream), so a
// user's consecutive requests share leading blocks. Anonymous requests get a
// per-request stream and share nothing.
std::vector<std::int32_t> synth_prompt_tokens(const std::string& user_id,
                                              std::int64_t request_id, std::int64_t n);

}  // namespace gimbal
