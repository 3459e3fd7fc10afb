#pragma once

#include <cstdint>
#include <string>

namespace gimbal {

// One inference job. An empty user_id means the request is anonymous.
struct Request {
  std::int64_t id = 0;
  double arrival_time = 0.0;  // simulated seconds
  std::int64_t prefill_tokens = 1;
  std::int64_t output_tokens = 1;
  std::string user_id;
};

// A trace row: token counts only; arrival timing is synthesized separately.
struct TraceRecord {
  std::int64_t prefill_tokens = 1;
  std::int64_t output_tokens = 1;
  std::string user_id;
};

// Target histogram shape for resampled benchmark workloads.
enum class DistributionShape { kRandom, kCentral, kDescending, kTwoEnd, kAverage };

const char* to_string(DistributionShape shape);
DistributionShape shape_from_string(const std::string& name);

}  // namespace gimbal
