#include "gimbal/workload.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gimbal {

const char* to_string(DistributionShape shape) {
  switch (shape) {
    case DistributionShape::kRandom: return "random";
    case DistributionShape::kCentral: return "central";
    case DistributionShape::kDescending: return "descending";
    case DistributionShape::kTwoEnd: return "two-end";
    case DistributionShape::kAverage: return "average";
  }
  return "random";
}

DistributionShape shape_from_string(const std::string& name) {
  std::string s;
  s.reserve(name.size());
  for (char c : name) {
    if (c == '_') c = '-';
    s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (s == "random") return DistributionShape::kRandom;
  if (s == "central") return DistributionShape::kCentral;
  if (s == "descending") return DistributionShape::kDescending;
  if (s == "two-end" || s == "twoend") return DistributionShape::kTwoEnd;
  if (s == "average") return DistributionShape::kAverage;
  throw std::invalid_argument("unknown distribution shape: " + name);
}

}  // namespace gimbal

namespace gimbal::workload {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::int64_t parse_count(const std::string& field, const char* what, std::size_t line_no) {
  std::int64_t value = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw std::runtime_error("trace parse error at line " + std::to_string(line_no) +
                             ": bad " + std::string(what) + " value '" + field + "'");
  }
  if (value <= 0) {
    throw std::invalid_argument("trace validation error at line " + std::to_string(line_no) +
                                ": " + std::string(what) + " must be >= 1, got " + field);
  }
  return value;
}

}  // namespace

int bucket_index(std::int64_t prefill_tokens, std::int64_t max_prefill) {
  if (prefill_tokens < 1 || prefill_tokens > max_prefill) {
    throw std::invalid_argument("prefill_tokens out of bucket range");
  }
  const std::int64_t idx = (prefill_tokens - 1) * kNumBuckets / max_prefill;
  return static_cast<int>(std::min<std::int64_t>(idx, kNumBuckets - 1));
}

std::array<double, kNumBuckets> bucket_weights(DistributionShape shape, Rng& rng) {
  std::array<double, kNumBuckets> w{};
  switch (shape) {
    case DistributionShape::kRandom: {
      double total = 0.0;
      for (auto& v : w) {
        v = rng.uniform();
        total += v;
      }
      if (total <= 0.0) {
        w.fill(1.0);
        total = kNumBuckets;
      }
      for (auto& v : w) v /= total;
      return w;
    }
    case DistributionShape::kCentral: {
      // symmetric triangle peaking at the two middle buckets
      for (int b = 0; b < kNumBuckets; ++b) {
        w[b] = static_cast<double>(std::min(b + 1, kNumBuckets - b));
      }
      break;
    }
    case DistributionShape::kDescending: {
      for (int b = 0; b < kNumBuckets; ++b) w[b] = static_cast<double>(kNumBuckets - b);
      break;
    }
    case DistributionShape::kTwoEnd: {
      // 40% mass in each extreme bucket, remainder spread evenly
      w.fill(0.2 / (kNumBuckets - 2));
      w[0] = 0.4;
      w[kNumBuckets - 1] = 0.4;
      return w;
    }
    case DistributionShape::kAverage: {
      w.fill(1.0 / kNumBuckets);
      return w;
    }
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= total;
  return w;
}

std::array<std::int64_t, kNumBuckets> quota_counts(
    const std::array<double, kNumBuckets>& weights, std::int64_t n) {
  std::array<std::int64_t, kNumBuckets> counts{};
  std::array<double, kNumBuckets> remainders{};
  std::int64_t assigned = 0;
  for (int b = 0; b < kNumBuckets; ++b) {
    const double exact = weights[b] * static_cast<double>(n);
    counts[b] = static_cast<std::int64_t>(std::floor(exact));
    remainders[b] = exact - static_cast<double>(counts[b]);
    assigned += counts[b];
  }
  // hand out the remainder by largest fractional part, lowest bucket first on ties
  std::array<int, kNumBuckets> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainders[a] > remainders[b]; });
  for (int i = 0; assigned < n; ++i) {
    counts[order[static_cast<std::size_t>(i) % kNumBuckets]] += 1;
    ++assigned;
  }
  return counts;
}

std::vector<TraceRecord> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open trace file: " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("trace file is empty (header required): " + path);
  }
  {
    auto header = split_fields(line);
    if (header.size() < 2 || header[0] != "prefill_tokens" || header[1] != "output_tokens" ||
        (header.size() == 3 && header[2] != "user_id") || header.size() > 3) {
      throw std::runtime_error(
          "trace header must be 'prefill_tokens,output_tokens,user_id': " + path);
    }
  }
  std::vector<TraceRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_fields(line);
    if (fields.size() < 2 || fields.size() > 3) {
      throw std::runtime_error("trace parse error at line " + std::to_string(line_no) +
                               ": expected 2 or 3 fields, got " +
                               std::to_string(fields.size()));
    }
    TraceRecord rec;
    rec.prefill_tokens = parse_count(fields[0], "prefill_tokens", line_no);
    rec.output_tokens = parse_count(fields[1], "output_tokens", line_no);
    if (fields.size() == 3) rec.user_id = fields[2];
    records.push_back(std::move(rec));
  }
  return records;
}

void write_trace(const std::string& path, const std::vector<TraceRecord>& records) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot open trace file for writing: " + path);
  }
  out << "prefill_tokens,output_tokens,user_id\n";
  for (const auto& r : records) {
    out << r.prefill_tokens << ',' << r.output_tokens << ',' << r.user_id << '\n';
  }
  if (!out) {
    throw std::runtime_error("failed writing trace file: " + path);
  }
}

std::vector<TraceRecord> shape_distribution(const std::vector<TraceRecord>& records,
                                            DistributionShape shape, std::int64_t n,
                                            std::uint64_t seed) {
  if (records.empty()) {
    throw std::invalid_argument("shape_distribution: source trace is empty");
  }
  if (n < 0) {
    throw std::invalid_argument("shape_distribution: n must be >= 0");
  }
  std::int64_t max_prefill = 1;
  for (const auto& r : records) max_prefill = std::max(max_prefill, r.prefill_tokens);

  std::array<std::vector<std::size_t>, kNumBuckets> candidates;
  for (std::size_t i = 0; i < records.size(); ++i) {
    candidates[static_cast<std::size_t>(bucket_index(records[i].prefill_tokens, max_prefill))]
        .push_back(i);
  }

  Rng rng(seed);
  const auto weights = bucket_weights(shape, rng);
  const auto counts = quota_counts(weights, n);
  for (int b = 0; b < kNumBuckets; ++b) {
    if (counts[b] > 0 && candidates[b].empty()) {
      throw std::invalid_argument("shape_distribution: bucket " + std::to_string(b) +
                                  " required by shape '" + to_string(shape) +
                                  "' has no candidate records");
    }
  }

  std::vector<TraceRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int b = 0; b < kNumBuckets; ++b) {
    const auto& pool = candidates[b];
    for (std::int64_t i = 0; i < counts[b]; ++i) {
      out.push_back(records[pool[static_cast<std::size_t>(
          rng.uniform_int(static_cast<std::int64_t>(pool.size())))]]);
    }
  }
  rng.shuffle(std::span<TraceRecord>(out));
  return out;
}

std::vector<Request> gen_arrivals(const std::vector<TraceRecord>& records, double rps,
                                  std::uint64_t seed) {
  if (!(rps > 0.0)) {
    throw std::invalid_argument("gen_arrivals: rps must be > 0");
  }
  Rng rng(seed);
  std::vector<Request> out;
  out.reserve(records.size());
  double t = 0.0;
  std::int64_t id = 0;
  for (const auto& r : records) {
    if (r.prefill_tokens < 1 || r.output_tokens < 1) {
      throw std::invalid_argument("gen_arrivals: token counts must be >= 1");
    }
    t += rng.exponential(rps);
    Request req;
    req.id = id++;
    req.arrival_time = t;
    req.prefill_tokens = r.prefill_tokens;
    req.output_tokens = r.output_tokens;
    req.user_id = r.user_id;
    out.push_back(std::move(req));
  }
  return out;
}

}  // namespace gimbal::workload
