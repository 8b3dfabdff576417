#include "llmtraffic/flow.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "llmtraffic/error.hpp"

namespace llmtraffic::flow {

std::string FlowEndpoint::to_string() const {
  if (address.v6) return fmt::format("[{}]:{}", address.to_string(), port);
  return fmt::format("{}:{}", address.to_string(), port);
}

FlowKey FlowKey::from(const FlowEndpoint& src, const FlowEndpoint& dst) {
  if (dst < src) return {dst, src};
  return {src, dst};
}

std::optional<FlowKey> FlowKey::of(const pcap::PacketRecord& packet) {
  const auto* tcp = packet.tcp();
  if (!tcp || !packet.network) return std::nullopt;
  return from({packet.network->src, tcp->src_port}, {packet.network->dst, tcp->dst_port});
}

std::string FlowKey::to_string() const { return endpoint_a.to_string() + "<->" + endpoint_b.to_string(); }

namespace {

struct StreamState {
  std::size_t index = 0;
  bool fin_from_a = false;
  bool fin_from_b = false;
  bool rst = false;

  bool closed() const noexcept { return (fin_from_a && fin_from_b) || rst; }
};

}  // namespace

StreamAssignment assign_stream_indices(std::span<const pcap::PacketRecord> packets) {
  StreamAssignment out;
  out.stream_of.resize(packets.size());
  std::map<FlowKey, StreamState> live;
  for (std::size_t i = 0; i < packets.size(); ++i) {
    const auto key = FlowKey::of(packets[i]);
    if (!key) continue;
    const auto& tcp = *packets[i].tcp();
    auto it = live.find(*key);
    if (it == live.end()) {
      it = live.emplace(*key, StreamState{out.stream_count++}).first;
    } else if (tcp.flags.syn && !tcp.flags.ack && it->second.closed()) {
      it->second = StreamState{out.stream_count++};
    }
    auto& state = it->second;
    const bool from_a = FlowEndpoint{packets[i].network->src, tcp.src_port} == key->endpoint_a;
    if (tcp.flags.fin) (from_a ? state.fin_from_a : state.fin_from_b) = true;
    if (tcp.flags.rst) state.rst = true;
    out.stream_of[i] = state.index;
  }
  return out;
}

std::vector<StreamStats> sum_stream_bytes(std::span<const pcap::PacketRecord> packets,
                                          const StreamAssignment& assignment) {
  std::vector<StreamStats> streams(assignment.stream_count);
  std::vector<bool> seen(assignment.stream_count, false);
  std::vector<std::pair<bool, bool>> fins(assignment.stream_count);
  for (std::size_t i = 0; i < packets.size() && i < assignment.stream_of.size(); ++i) {
    if (!assignment.stream_of[i]) continue;
    const std::size_t idx = *assignment.stream_of[i];
    const auto& pkt = packets[i];
    const auto& tcp = *pkt.tcp();
    auto& s = streams[idx];
    const auto key = *FlowKey::of(pkt);
    if (!seen[idx]) {
      seen[idx] = true;
      s.stream_index = idx;
      s.flow_key = key;
      s.first_timestamp = pkt.timestamp;
      s.last_timestamp = pkt.timestamp;
    }
    s.total_bytes += pkt.frame_length;
    s.payload_bytes += tcp.payload_length;
    ++s.packet_count;
    if (pkt.timestamp.nanoseconds() < s.first_timestamp.nanoseconds()) s.first_timestamp = pkt.timestamp;
    if (pkt.timestamp.nanoseconds() > s.last_timestamp.nanoseconds()) s.last_timestamp = pkt.timestamp;
    s.saw_syn |= tcp.flags.syn;
    s.saw_rst |= tcp.flags.rst;
    if (tcp.flags.fin) {
      const bool from_a = FlowEndpoint{pkt.network->src, tcp.src_port} == key.endpoint_a;
      (from_a ? fins[idx].first : fins[idx].second) = true;
    }
    s.saw_fin_both = fins[idx].first && fins[idx].second;
  }
  return streams;
}

std::vector<StreamStats> sum_stream_bytes(const pcap::CaptureFile& capture, const StreamAssignment& assignment) {
  return sum_stream_bytes(capture.packets, assignment);
}

Conservation check_conservation(const pcap::CaptureFile& capture, const StreamAssignment& assignment,
                                std::span<const StreamStats> streams) {
  Conservation c;
  for (const auto& s : streams) c.stream_bytes += s.total_bytes;
  for (std::size_t i = 0; i < capture.packets.size(); ++i) {
    c.all_frame_bytes += capture.packets[i].frame_length;
    if (i >= assignment.stream_of.size() || !assignment.stream_of[i]) {
      c.unassigned_bytes += capture.packets[i].frame_length;
    }
  }
  for (const auto& r : capture.records) c.record_incl_bytes += r.data.size();
  return c;
}

std::vector<StreamStats> streams_on_port(std::span<const StreamStats> streams, std::uint16_t port) {
  std::vector<StreamStats> out;
  std::copy_if(streams.begin(), streams.end(), std::back_inserter(out),
               [port](const StreamStats& s) { return s.flow_key.involves_port(port); });
  return out;
}

std::string_view to_string(CapturePoint point) noexcept {
  return point == CapturePoint::Local ? "local" : "external";
}

MatchResult match_streams_to_queries(std::span<const PointStreams> points, const QueryLog& log) {
  MatchResult result;
  result.exchanges.reserve(log.size());
  for (const auto& e : log) {
    QueryExchange x;
    x.query_id = e.query_id;
    x.model_profile_name = e.model_profile_name;
    x.prompt_text = e.question.value_or("");
    x.response_text = e.answer.value_or("");
    x.request_body_bytes = e.request_body_bytes;
    x.response_body_bytes = e.response_body_bytes;
    x.latency = std::max(0.0, e.recv_timestamp - e.send_timestamp);
    x.upstream_status = e.upstream_status;
    result.exchanges.push_back(std::move(x));
  }

  for (const auto& point : points) {
    std::vector<const StreamStats*> ordered;
    for (const auto& s : point.streams) ordered.push_back(&s);
    std::stable_sort(ordered.begin(), ordered.end(), [](const StreamStats* a, const StreamStats* b) {
      return a->first_timestamp.nanoseconds() < b->first_timestamp.nanoseconds();
    });
    const std::size_t paired = std::min(ordered.size(), log.size());
    for (std::size_t k = 0; k < paired; ++k) {
      auto& x = result.exchanges[k];
      if (point.point == CapturePoint::Local) {
        x.local_stream_index = ordered[k]->stream_index;
        x.local_total_bytes = ordered[k]->total_bytes;
      } else {
        x.external_stream_index = ordered[k]->stream_index;
        x.external_total_bytes = ordered[k]->total_bytes;
      }
    }
    if (ordered.size() != log.size()) {
      std::ostringstream msg;
      msg << "CountMismatch at " << to_string(point.point) << " point: " << ordered.size() << " streams, "
          << log.size() << " queries;";
      for (std::size_t k = paired; k < ordered.size(); ++k) {
        result.orphans.push_back({point.point, ordered[k]->stream_index, std::nullopt});
        msg << " orphan stream " << ordered[k]->stream_index << " (" << ordered[k]->flow_key.to_string() << ")";
      }
      for (std::size_t k = paired; k < log.size(); ++k) {
        result.orphans.push_back({point.point, std::nullopt, log[k].query_id});
        msg << " unmatched query " << log[k].query_id;
      }
      result.diagnostics.push_back(msg.str());
    }
  }
  return result;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

std::string opt_index(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : ""; }

std::string ts(const pcap::Timestamp& t) {
  const auto ns = t.nanoseconds();
  return fmt::format("{}.{:09d}", ns / 1'000'000'000, ns % 1'000'000'000);
}

constexpr const char* kExchangeHeader =
    "query_id,model,local_stream_index,external_stream_index,local_total_bytes,external_total_bytes,"
    "request_body_bytes,response_body_bytes,upstream_status,latency_s";

}  // namespace

void write_streams_csv(std::ostream& out, std::span<const StreamStats> streams) {
  out << "stream_index,endpoints,packets,total_bytes,payload_bytes,first_ts,last_ts\n";
  for (const auto& s : streams) {
    out << s.stream_index << ',' << csv_field(s.flow_key.to_string()) << ',' << s.packet_count << ','
        << s.total_bytes << ',' << s.payload_bytes << ',' << ts(s.first_timestamp) << ',' << ts(s.last_timestamp)
        << '\n';
  }
}

void write_exchanges_csv(std::ostream& out, std::span<const QueryExchange> exchanges) {
  out << kExchangeHeader << '\n';
  for (const auto& x : exchanges) {
    out << x.query_id << ',' << csv_field(x.model_profile_name) << ',' << opt_index(x.local_stream_index) << ','
        << opt_index(x.external_stream_index) << ',' << x.local_total_bytes << ',' << x.external_total_bytes << ','
        << x.request_body_bytes << ',' << x.response_body_bytes << ',' << x.upstream_status << ','
        << fmt::format("{:.6f}", x.latency) << '\n';
  }
}

std::vector<QueryExchange> read_exchanges_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) return {};
  if (split_csv_line(line).size() != 10) throw Error(ErrorKind::MalformedRecord, "unexpected exchange CSV header");
  std::vector<QueryExchange> out;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 10) throw Error(ErrorKind::MalformedRecord, "exchange CSV line " + std::to_string(lineno));
    try {
      QueryExchange x;
      x.query_id = std::stoll(f[0]);
      x.model_profile_name = f[1];
      if (!f[2].empty()) x.local_stream_index = std::stoull(f[2]);
      if (!f[3].empty()) x.external_stream_index = std::stoull(f[3]);
      x.local_total_bytes = std::stoull(f[4]);
      x.external_total_bytes = std::stoull(f[5]);
      x.request_body_bytes = std::stoull(f[6]);
      x.response_body_bytes = std::stoull(f[7]);
      x.upstream_status = std::stoi(f[8]);
      x.latency = std::stod(f[9]);
      out.push_back(std::move(x));
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::MalformedRecord, "exchange CSV line " + std::to_string(lineno));
    }
  }
  return out;
}

}  // namespace llmtraffic::flow
