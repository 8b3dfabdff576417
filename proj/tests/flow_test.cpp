#include "llmtraffic/flow.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fixture_captures.hpp"

using namespace llmtraffic;
using namespace llmtraffic::flow;
using llmtraffic::fixtures::ep;

namespace {

pcap::PacketRecord tcp_packet(std::size_t index, const synth::Endpoint& src, const synth::Endpoint& dst,
                              pcap::TcpFlags flags, std::uint32_t frame_length, std::uint32_t payload = 0) {
  pcap::PacketRecord p;
  p.index = index;
  p.timestamp = {100, static_cast<std::uint32_t>(index), pcap::TimeResolution::Microsecond};
  p.frame_length = frame_length;
  p.captured_length = frame_length;
  p.network = pcap::NetworkHeader{src.address, dst.address, 6};
  p.transport = pcap::TcpSegment{src.port, dst.port, flags, payload};
  return p;
}

nlohmann::json expected(const char* name) {
  std::ifstream in(std::string(LLMTRAFFIC_FIXTURES) + "/" + name + ".expected.json");
  return nlohmann::json::parse(in);
}

std::vector<std::size_t> indices(const StreamAssignment& a) {
  std::vector<std::size_t> out;
  for (const auto& i : a.stream_of) {
    if (i) out.push_back(*i);
  }
  return out;
}

PointStreams point_of(const pcap::CaptureFile& cap, CapturePoint point) {
  const auto a = assign_stream_indices(cap.packets);
  return {point, sum_stream_bytes(cap, a)};
}

}  // namespace

TEST_CASE("flow key is direction blind") {
  const FlowEndpoint a{pcap::IpAddress::parse("10.0.0.1"), 5000};
  const FlowEndpoint b{pcap::IpAddress::parse("10.0.0.2"), 80};
  CHECK(FlowKey::from(a, b) == FlowKey::from(b, a));
  CHECK(FlowKey::from(a, b).endpoint_a == a);
  CHECK_FALSE(FlowKey::from(a, b) == FlowKey::from(a, {b.address, 81}));
}

TEST_CASE("single connection maps to stream 0") {
  const auto c = ep("10.0.0.1", 1111);
  const auto s = ep("10.0.0.2", 80);
  std::vector<pcap::PacketRecord> pkts = {
      tcp_packet(0, c, s, {.syn = true}, 74), tcp_packet(1, s, c, {.syn = true, .ack = true}, 74),
      tcp_packet(2, c, s, {.ack = true, .psh = true}, 200, 134), tcp_packet(3, c, s, {.ack = true, .fin = true}, 66)};
  const auto a = assign_stream_indices(pkts);
  CHECK(a.stream_count == 1);
  CHECK(indices(a) == std::vector<std::size_t>{0, 0, 0, 0});
}

TEST_CASE("interleaved connections get first-seen indices") {
  const auto ca = ep("10.0.0.1", 1111);
  const auto cb = ep("10.0.0.1", 2222);
  const auto s = ep("10.0.0.2", 80);
  std::vector<pcap::PacketRecord> pkts = {tcp_packet(0, ca, s, {.syn = true}, 74), tcp_packet(1, cb, s, {.syn = true}, 74),
                                          tcp_packet(2, s, ca, {.syn = true, .ack = true}, 74),
                                          tcp_packet(3, s, cb, {.syn = true, .ack = true}, 74)};
  CHECK(indices(assign_stream_indices(pkts)) == std::vector<std::size_t>{0, 1, 0, 1});
}

TEST_CASE("tuple reuse needs a bidirectional FIN or RST before a bare SYN") {
  const auto c = ep("10.0.0.1", 1111);
  const auto s = ep("10.0.0.2", 80);
  SUBCASE("open stream: repeated SYN stays on the same index") {
    std::vector<pcap::PacketRecord> pkts = {tcp_packet(0, c, s, {.syn = true}, 74), tcp_packet(1, c, s, {.syn = true}, 74)};
    CHECK(indices(assign_stream_indices(pkts)) == std::vector<std::size_t>{0, 0});
  }
  SUBCASE("one-sided FIN is not enough") {
    std::vector<pcap::PacketRecord> pkts = {tcp_packet(0, c, s, {.syn = true}, 74), tcp_packet(1, c, s, {.fin = true}, 66),
                                            tcp_packet(2, c, s, {.syn = true}, 74)};
    CHECK(indices(assign_stream_indices(pkts)) == std::vector<std::size_t>{0, 0, 0});
  }
  SUBCASE("RST then SYN opens a new stream") {
    std::vector<pcap::PacketRecord> pkts = {tcp_packet(0, c, s, {.syn = true}, 74), tcp_packet(1, s, c, {.rst = true}, 54),
                                            tcp_packet(2, c, s, {.syn = true}, 74), tcp_packet(3, s, c, {.ack = true}, 54)};
    CHECK(indices(assign_stream_indices(pkts)) == std::vector<std::size_t>{0, 0, 1, 1});
  }
  SUBCASE("SYN-ACK after close does not open a stream") {
    std::vector<pcap::PacketRecord> pkts = {tcp_packet(0, c, s, {.fin = true}, 66), tcp_packet(1, s, c, {.fin = true}, 66),
                                            tcp_packet(2, s, c, {.syn = true, .ack = true}, 74)};
    CHECK(indices(assign_stream_indices(pkts)) == std::vector<std::size_t>{0, 0, 0});
  }
}

TEST_CASE("stream byte sums") {
  const auto c = ep("10.0.0.1", 1111);
  const auto s = ep("10.0.0.2", 80);
  std::vector<pcap::PacketRecord> pkts = {tcp_packet(0, c, s, {.syn = true}, 74),
                                          tcp_packet(1, s, c, {.syn = true, .ack = true}, 66),
                                          tcp_packet(2, c, s, {.ack = true, .psh = true}, 180, 114)};
  const auto stats = sum_stream_bytes(pkts, assign_stream_indices(pkts));
  REQUIRE(stats.size() == 1);
  CHECK(stats[0].total_bytes == 320);
  CHECK(stats[0].packet_count == 3);
  CHECK(stats[0].payload_bytes == 114);
  CHECK(stats[0].saw_syn);
  CHECK_FALSE(stats[0].saw_fin_both);
  CHECK(stats[0].first_timestamp.nanoseconds() <= stats[0].last_timestamp.nanoseconds());

  std::vector<pcap::PacketRecord> none(2);
  none[0].frame_length = 60;
  none[1].frame_length = 42;
  CHECK(sum_stream_bytes(none, assign_stream_indices(none)).empty());
}

TEST_CASE("fixture streams match the reference indexing and totals") {
  for (const char* name : {"ten_connections", "interleaved_v6_null_be_ns", "raw_ip_tuple_reuse", "three_streams"}) {
    CAPTURE(name);
    const auto cap = pcap::read_capture(std::string(LLMTRAFFIC_FIXTURES) + "/" + name + ".pcap");
    const auto ref = expected(name);
    const auto a = assign_stream_indices(cap.packets);
    for (std::size_t i = 0; i < cap.packets.size(); ++i) {
      const auto& e = ref["packets"][i];
      if (e.contains("stream_index")) {
        REQUIRE(a.stream_of[i]);
        CHECK(*a.stream_of[i] == e["stream_index"].get<std::size_t>());
      } else {
        CHECK_FALSE(a.stream_of[i]);
      }
    }
    const auto streams = sum_stream_bytes(cap, a);
    REQUIRE(streams.size() == ref["streams"].size());
    for (std::size_t k = 0; k < streams.size(); ++k) {
      CHECK(streams[k].stream_index == k);
      CHECK(streams[k].packet_count == ref["streams"][k]["packets"].get<std::uint64_t>());
      CHECK(streams[k].total_bytes == ref["streams"][k]["total_bytes"].get<std::uint64_t>());
      CHECK(streams[k].payload_bytes == ref["streams"][k]["payload_bytes"].get<std::uint64_t>());
    }
    const auto cons = check_conservation(cap, a, streams);
    CHECK(cons.holds());
    CHECK(cons.all_frame_bytes == ref["total_frame_bytes"].get<std::uint64_t>());
  }
}

TEST_CASE("reused tuple fixture yields three streams with clean teardown flags") {
  const auto cap = fixtures::raw_ip_reuse();
  const auto streams = sum_stream_bytes(cap, assign_stream_indices(cap.packets));
  REQUIRE(streams.size() == 3);
  CHECK(streams[0].flow_key == streams[1].flow_key);
  for (const auto& s : streams) {
    CHECK(s.saw_syn);
    CHECK(s.saw_fin_both);
    CHECK_FALSE(s.saw_rst);
  }
}

TEST_CASE("property: conservation, density, determinism, direction blindness") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<pcap::PacketRecord> pkts;
    const int n = static_cast<int>(rng() % 60);
    for (int i = 0; i < n; ++i) {
      if (rng() % 6 == 0) {
        pcap::PacketRecord p;
        p.index = static_cast<std::size_t>(i);
        p.frame_length = 40 + rng() % 200;
        pkts.push_back(p);
        continue;
      }
      const auto c = ep("10.0.0.1", static_cast<std::uint16_t>(1000 + rng() % 4));
      const auto s = ep(rng() % 2 ? "10.0.0.2" : "10.0.0.3", 80);
      const bool fwd = rng() % 2;
      pkts.push_back(tcp_packet(static_cast<std::size_t>(i), fwd ? c : s, fwd ? s : c,
                                pcap::TcpFlags::from_bits(static_cast<std::uint8_t>(rng() & 0x17)), 54 + rng() % 1500,
                                rng() % 10));
    }
    const auto a = assign_stream_indices(pkts);
    const auto streams = sum_stream_bytes(pkts, a);

    pcap::CaptureFile cap;
    cap.packets = pkts;
    const auto cons = check_conservation(cap, a, streams);
    CHECK(cons.holds());

    std::vector<bool> used(a.stream_count, false);
    for (const auto& i : a.stream_of) {
      if (i) used[*i] = true;
    }
    CHECK(std::all_of(used.begin(), used.end(), [](bool b) { return b; }));
    for (const auto& s : streams) {
      CHECK(s.packet_count >= 1);
      CHECK(s.total_bytes >= s.payload_bytes);
    }

    CHECK(assign_stream_indices(pkts) == a);

    auto swapped = pkts;
    for (auto& p : swapped) {
      if (!p.network) continue;
      std::swap(p.network->src, p.network->dst);
      auto& t = std::get<pcap::TcpSegment>(p.transport);
      std::swap(t.src_port, t.dst_port);
    }
    const auto sa = assign_stream_indices(swapped);
    CHECK(sa == a);
    const auto ss = sum_stream_bytes(swapped, sa);
    REQUIRE(ss.size() == streams.size());
    for (std::size_t k = 0; k < ss.size(); ++k) {
      CHECK(ss[k].flow_key == streams[k].flow_key);
      CHECK(ss[k].total_bytes == streams[k].total_bytes);
    }
  }
}

TEST_CASE("ordinal join of streams to queries") {
  const auto cap = fixtures::three_streams();
  const auto log = fixtures::three_streams_log();
  const PointStreams local = point_of(cap, CapturePoint::Local);

  SUBCASE("3 streams, 3 entries") {
    const auto m = match_streams_to_queries(std::span(&local, 1), log);
    CHECK_FALSE(m.count_mismatch());
    REQUIRE(m.exchanges.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(m.exchanges[k].query_id == static_cast<std::int64_t>(k));
      REQUIRE(m.exchanges[k].local_stream_index);
      CHECK(*m.exchanges[k].local_stream_index == k);
      CHECK(m.exchanges[k].local_total_bytes == local.streams[k].total_bytes);
      CHECK_FALSE(m.exchanges[k].external_stream_index);
      CHECK(m.exchanges[k].latency >= 0);
      CHECK(m.exchanges[k].local_total_bytes >=
            m.exchanges[k].request_body_bytes + m.exchanges[k].response_body_bytes);
    }
  }
  SUBCASE("3 streams, 2 entries names the orphan stream") {
    auto short_log = log;
    short_log.pop_back();
    const auto m = match_streams_to_queries(std::span(&local, 1), short_log);
    CHECK(m.count_mismatch());
    REQUIRE(m.orphans.size() == 1);
    REQUIRE(m.orphans[0].stream_index);
    CHECK(*m.orphans[0].stream_index == 2);
    CHECK(m.exchanges.size() == 2);
    REQUIRE(m.diagnostics.size() == 1);
    CHECK(m.diagnostics[0].find("orphan stream 2") != std::string::npos);
  }
  SUBCASE("missing external stream reports the unmatched query") {
    auto ext_cap = fixtures::three_streams();
    ext_cap.records.resize(20);  // first two connections only
    pcap::decode_all(ext_cap);
    const PointStreams both[] = {local, point_of(ext_cap, CapturePoint::External)};
    const auto m = match_streams_to_queries(both, log);
    CHECK(m.count_mismatch());
    REQUIRE(m.orphans.size() == 1);
    CHECK(m.orphans[0].point == CapturePoint::External);
    REQUIRE(m.orphans[0].query_id);
    CHECK(*m.orphans[0].query_id == 2);
    CHECK(m.exchanges[1].external_stream_index.value() == 1);
    CHECK_FALSE(m.exchanges[2].external_stream_index);
  }
  SUBCASE("ordering follows first timestamp, not index") {
    PointStreams shuffled = local;
    std::swap(shuffled.streams[0], shuffled.streams[2]);
    const auto m = match_streams_to_queries(std::span(&shuffled, 1), log);
    CHECK(*m.exchanges[0].local_stream_index == 0);
    CHECK(*m.exchanges[2].local_stream_index == 2);
  }
}

TEST_CASE("CSV exports") {
  const auto cap = fixtures::three_streams();
  const auto local = point_of(cap, CapturePoint::Local);
  std::ostringstream streams_csv;
  write_streams_csv(streams_csv, local.streams);
  const auto text = streams_csv.str();
  CHECK(text.rfind("stream_index,endpoints,packets,total_bytes,payload_bytes,first_ts,last_ts\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(text.find("127.0.0.1:3836<->127.0.0.1:45000") != std::string::npos);

  auto m = match_streams_to_queries(std::span(&local, 1), fixtures::three_streams_log());
  m.exchanges[1].model_profile_name = "Qwen-2.5-32b (Groq), \"quoted\"";
  std::stringstream csv;
  write_exchanges_csv(csv, m.exchanges);
  const auto back = read_exchanges_csv(csv);
  REQUIRE(back.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(back[k].query_id == m.exchanges[k].query_id);
    CHECK(back[k].model_profile_name == m.exchanges[k].model_profile_name);
    CHECK(back[k].local_stream_index == m.exchanges[k].local_stream_index);
    CHECK(back[k].external_stream_index == m.exchanges[k].external_stream_index);
    CHECK(back[k].local_total_bytes == m.exchanges[k].local_total_bytes);
    CHECK(back[k].response_body_bytes == m.exchanges[k].response_body_bytes);
  }
}
