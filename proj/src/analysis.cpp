#include "llmtraffic/analysis.hpp"

#include <algorithm>

#include "llmtraffic/pcap.hpp"

namespace llmtraffic::analysis {

bool Analysis::conservation_holds() const noexcept {
  return std::all_of(points.begin(), points.end(), [](const PointAnalysis& p) { return p.conservation.holds(); });
}

PointAnalysis analyze_capture(const CaptureInput& input) {
  const auto cap = pcap::read_capture(input.path);
  const auto assignment = flow::assign_stream_indices(cap.packets);
  PointAnalysis out;
  out.point = input.point;
  out.path = input.path;
  out.frame_count = cap.records.size();
  out.truncated = cap.truncated;
  out.streams = flow::sum_stream_bytes(cap, assignment);
  out.conservation = flow::check_conservation(cap, assignment, out.streams);
  out.selected = input.port ? flow::streams_on_port(out.streams, *input.port) : out.streams;
  for (const auto& p : cap.packets) {
    if (const auto* t = p.tcp(); t && t->flags.syn && !t->flags.ack) ++out.syn_count;
  }
  return out;
}

Analysis analyze(std::span<const CaptureInput> inputs, const QueryLog& log) {
  Analysis out;
  std::vector<flow::PointStreams> points;
  for (const auto& in : inputs) {
    out.points.push_back(analyze_capture(in));
    points.push_back({in.point, out.points.back().selected});
  }
  out.match = flow::match_streams_to_queries(points, log);
  return out;
}

}  // namespace llmtraffic::analysis
