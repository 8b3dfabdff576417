#pragma once

// TCP stream indexing (first-seen order, tuple reuse after teardown),
// per-stream byte accounting, and the ordinal stream-to-query join.

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "llmtraffic/pcap.hpp"
#include "llmtraffic/query_log.hpp"

namespace llmtraffic::flow {

struct FlowEndpoint {
  pcap::IpAddress address;
  std::uint16_t port = 0;

  std::string to_string() const;
  friend auto operator<=>(const FlowEndpoint&, const FlowEndpoint&) = default;
};

// Canonically ordered: endpoint_a <= endpoint_b, so both directions agree.
struct FlowKey {
  FlowEndpoint endpoint_a;
  FlowEndpoint endpoint_b;

  static FlowKey from(const FlowEndpoint& src, const FlowEndpoint& dst);
  // Nullopt for packets that are not TCP.
  static std::optional<FlowKey> of(const pcap::PacketRecord& packet);

  bool involves_port(std::uint16_t port) const noexcept {
    return endpoint_a.port == port || endpoint_b.port == port;
  }
  std::string to_string() const;
  friend auto operator<=>(const FlowKey&, const FlowKey&) = default;
};

struct StreamAssignment {
  std::vector<std::optional<std::size_t>> stream_of;  // by packet position
  std::size_t stream_count = 0;

  friend bool operator==(const StreamAssignment&, const StreamAssignment&) = default;
};

StreamAssignment assign_stream_indices(std::span<const pcap::PacketRecord> packets);

struct StreamStats {
  std::size_t stream_index = 0;
  FlowKey flow_key;
  std::uint64_t total_bytes = 0;
  std::uint64_t packet_count = 0;
  std::uint64_t payload_bytes = 0;
  pcap::Timestamp first_timestamp;
  pcap::Timestamp last_timestamp;
  bool saw_syn = false;
  bool saw_fin_both = false;
  bool saw_rst = false;

  friend bool operator==(const StreamStats&, const StreamStats&) = default;
};

// One entry per stream index, ordered by index.
std::vector<StreamStats> sum_stream_bytes(std::span<const pcap::PacketRecord> packets,
                                          const StreamAssignment& assignment);
std::vector<StreamStats> sum_stream_bytes(const pcap::CaptureFile& capture, const StreamAssignment& assignment);

struct Conservation {
  std::uint64_t stream_bytes = 0;
  std::uint64_t unassigned_bytes = 0;
  std::uint64_t all_frame_bytes = 0;
  std::uint64_t record_incl_bytes = 0;  // Σ incl_len as stored

  bool holds() const noexcept { return stream_bytes + unassigned_bytes == all_frame_bytes; }
};

Conservation check_conservation(const pcap::CaptureFile& capture, const StreamAssignment& assignment,
                                std::span<const StreamStats> streams);

// Keeps streams touching `port`, preserving order; indices are unchanged.
std::vector<StreamStats> streams_on_port(std::span<const StreamStats> streams, std::uint16_t port);

enum class CapturePoint { Local, External };
std::string_view to_string(CapturePoint point) noexcept;

struct PointStreams {
  CapturePoint point = CapturePoint::Local;
  std::vector<StreamStats> streams;
};

struct QueryExchange {
  std::int64_t query_id = 0;
  std::string model_profile_name;
  std::string prompt_text;
  std::string response_text;
  std::optional<std::size_t> local_stream_index;
  std::optional<std::size_t> external_stream_index;
  std::uint64_t local_total_bytes = 0;
  std::uint64_t external_total_bytes = 0;
  std::uint64_t request_body_bytes = 0;
  std::uint64_t response_body_bytes = 0;
  double latency = 0.0;
  int upstream_status = 0;
};

struct Orphan {
  CapturePoint point = CapturePoint::Local;
  std::optional<std::size_t> stream_index;  // set for an unmatched stream
  std::optional<std::int64_t> query_id;     // set for an unmatched query
};

struct MatchResult {
  std::vector<QueryExchange> exchanges;
  std::vector<Orphan> orphans;
  std::vector<std::string> diagnostics;

  bool count_mismatch() const noexcept { return !orphans.empty(); }
};

// k-th stream by first timestamp joins the k-th log entry at each point.
MatchResult match_streams_to_queries(std::span<const PointStreams> points, const QueryLog& log);

void write_streams_csv(std::ostream& out, std::span<const StreamStats> streams);
void write_exchanges_csv(std::ostream& out, std::span<const QueryExchange> exchanges);
std::vector<QueryExchange> read_exchanges_csv(std::istream& in);

}  // namespace llmtraffic::flow
