#pragma once

// Capture files plus a query log to per-query exchanges.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "llmtraffic/flow.hpp"
#include "llmtraffic/query_log.hpp"

namespace llmtraffic::analysis {

struct CaptureInput {
  flow::CapturePoint point = flow::CapturePoint::Local;
  std::filesystem::path path;
  std::optional<std::uint16_t> port;  // keep only streams touching this port
};

struct PointAnalysis {
  flow::CapturePoint point = flow::CapturePoint::Local;
  std::filesystem::path path;
  std::size_t frame_count = 0;
  std::vector<flow::StreamStats> streams;   // every TCP stream
  std::vector<flow::StreamStats> selected;  // the ones joined to queries
  flow::Conservation conservation;
  bool truncated = false;
  std::uint64_t syn_count = 0;  // bare SYNs, one per connection attempt
};

struct Analysis {
  std::vector<PointAnalysis> points;
  flow::MatchResult match;

  bool conservation_holds() const noexcept;
};

PointAnalysis analyze_capture(const CaptureInput& input);
Analysis analyze(std::span<const CaptureInput> inputs, const QueryLog& log);

}  // namespace llmtraffic::analysis
