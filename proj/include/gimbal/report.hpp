#pragma once

#include <string>

#include "gimbal/sim.hpp"

namespace gimbal {

// Shortest round-trip decimal form; byte-stable for identical values.
std::string format_double(double v);

// Full run report as a JSON document with stable key order and formatting.
std::string report_to_json(const MetricsReport& report);

// Flat per-request table for external plotting.
std::string per_request_csv(const MetricsReport& report);

std::string comparison_to_csv(const ComparisonTable& table);

// Writes <stem>.json and <stem>.csv under out_dir (created if missing).
void write_report_files(const std::string& out_dir, const std::string& stem,
                        const MetricsReport& report);

}  // namespace gimbal
