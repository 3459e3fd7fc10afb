#include "gimbal/prefix_cache.hpp"

#include <stdexcept>

#include "gimbal/rng.hpp"

namespace gimbal {

namespace {

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a_u64(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= kFnvPrime;
  }
  return h;
}

std::int64_t count_hits(const PrefixCacheTable& table,
                        std::span<const std::int32_t> prompt, std::int64_t full_blocks) {
  std::uint64_t chain = kFnvOffset;
  std::int64_t hits = 0;
  for (std::int64_t b = 0; b < full_blocks; ++b) {
    chain = chain_block_hash(
        chain, prompt.subspan(static_cast<std::size_t>(b * table.block_size),
                              static_cast<std::size_t>(table.block_size)));
    if (table.entries.contains(chain)) {
      ++hits;
    } else {
      break;
    }
  }
  return hits;
}

}  // namespace

std::uint64_t chain_block_hash(std::uint64_t prev, std::span<const std::int32_t> block) {
  std::uint64_t h = fnv1a_u64(kFnvOffset, prev);
  for (std::int32_t tok : block) {
    h = fnv1a_u64(h, static_cast<std::uint64_t>(static_cast<std::uint32_t>(tok)));
  }
  return h;
}

PrefixLookupResult prefix_lookup(PrefixCacheTable& table,
                                 std::span<const std::int32_t> prompt_token_ids) {
  if (table.block_size < 1) {
    throw std::invalid_argument("prefix_lookup: block_size must be >= 1");
  }
  const auto full_blocks =
      static_cast<std::int64_t>(prompt_token_ids.size()) / table.block_size;
  PrefixLookupResult res;
  res.probed_blocks = full_blocks;
  res.hit_blocks = count_hits(table, prompt_token_ids, full_blocks);
  std::uint64_t chain = kFnvOffset;
  for (std::int64_t b = 0; b < full_blocks; ++b) {
    chain = chain_block_hash(
        chain, prompt_token_ids.subspan(static_cast<std::size_t>(b * table.block_size),
                                        static_cast<std::size_t>(table.block_size)));
    table.entries.insert(chain);
  }
  table.probed += res.probed_blocks;
  table.hits += res.hit_blocks;
  return res;
}

std::int64_t prefix_peek(const PrefixCacheTable& table,
                         std::span<const std::int32_t> prompt_token_ids) {
  if (table.block_size < 1) {
    throw std::invalid_argument("prefix_peek: block_size must be >= 1");
  }
  const auto full_blocks =
      static_cast<std::int64_t>(prompt_token_ids.size()) / table.block_size;
  return count_hits(table, prompt_token_ids, full_blocks);
}

std::vector<std::int32_t> synth_prompt_tokens(const std::string& user_id,
                                              std::int64_t request_id, std::int64_t n) {
  std::uint64_t stream_seed;
  if (user_id.empty()) {
    stream_seed = mix_seed(0x616e6f6eULL, static_cast<std::uint64_t>(request_id));
  } else {
    std::uint64_t h = kFnvOffset;
    for (char c : user_id) {
      h = fnv1a_u64(h, static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
    }
    stream_seed = splitmix64(h);
  }
  std::vector<std::int32_t> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t t = 0; t < n; ++t) {
    out.push_back(static_cast<std::int32_t>(
        mix_seed(stream_seed, static_cast<std::uint64_t>(t)) & 0x7fffffff));
  }
  return out;
}

}  // namespace gimbal
