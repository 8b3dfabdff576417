#pragma once

// Programmatic frame and session construction for fixtures and tests.

#include <cstdint>
#include <vector>

#include "llmtraffic/pcap.hpp"

namespace llmtraffic::synth {

struct Endpoint {
  pcap::IpAddress address;
  std::uint16_t port = 0;
};

struct FrameSpec {
  std::uint32_t link_type = pcap::linktype::kEthernet;
  Endpoint src;
  Endpoint dst;
  std::uint8_t protocol = 6;  // 6 TCP, 17 UDP, anything else raw IP payload
  pcap::TcpFlags flags;
  std::uint32_t seq = 0;
  std::uint32_t ack = 0;
  std::uint32_t payload_length = 0;
  std::uint8_t tcp_options_length = 0;  // multiple of 4
};

// Headers are well-formed; payload bytes are a repeating pattern.
std::vector<std::uint8_t> build_frame(const FrameSpec& spec);

std::vector<std::uint8_t> build_arp_frame();

// Emits a full connection: three-way handshake, request segments, response
// segments with ACKs, and a bidirectional FIN teardown.
class SessionBuilder {
 public:
  SessionBuilder(std::uint32_t link_type, pcap::TimeResolution resolution,
                 std::uint32_t start_seconds);

  // mss bounds each data segment's payload
  void add_connection(const Endpoint& client, const Endpoint& server, std::uint32_t request_bytes,
                      std::uint32_t response_bytes, std::uint32_t mss = 1448);

  void add_frame(const FrameSpec& spec);
  void add_raw(std::vector<std::uint8_t> frame);

  pcap::CaptureFile build() const;
  const std::vector<pcap::RawRecord>& records() const noexcept { return records_; }

 private:
  pcap::Timestamp next_timestamp();

  std::uint32_t link_type_;
  pcap::TimeResolution resolution_;
  std::uint64_t clock_;  // in file resolution units
  std::vector<pcap::RawRecord> records_;
};

}  // namespace llmtraffic::synth
