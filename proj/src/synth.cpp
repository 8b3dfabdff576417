#include "llmtraffic/synth.hpp"

namespace llmtraffic::synth {

namespace {

void put16(std::vector<std::uint8_t>& v, std::size_t at, std::uint16_t x) {
  v[at] = static_cast<std::uint8_t>(x >> 8);
  v[at + 1] = static_cast<std::uint8_t>(x);
}

void put32(std::vector<std::uint8_t>& v, std::size_t at, std::uint32_t x) {
  put16(v, at, static_cast<std::uint16_t>(x >> 16));
  put16(v, at + 2, static_cast<std::uint16_t>(x));
}

std::uint16_t checksum(const std::uint8_t* p, std::size_t n) {
  std::uint32_t sum = 0;
  for (std::size_t i = 0; i + 1 < n; i += 2) sum += static_cast<std::uint32_t>(p[i] << 8 | p[i + 1]);
  if (n % 2) sum += static_cast<std::uint32_t>(p[n - 1] << 8);
  while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
  return static_cast<std::uint16_t>(~sum);
}

}  // namespace

std::vector<std::uint8_t> build_frame(const FrameSpec& spec) {
  const bool v6 = spec.src.address.v6;
  std::size_t l4_header = 0;
  if (spec.protocol == 6) l4_header = 20u + spec.tcp_options_length;
  else if (spec.protocol == 17) l4_header = 8;
  const std::size_t ip_header = v6 ? 40 : 20;
  std::size_t link = 0;
  if (spec.link_type == pcap::linktype::kEthernet) link = 14;
  else if (spec.link_type == pcap::linktype::kNull) link = 4;

  std::vector<std::uint8_t> f(link + ip_header + l4_header + spec.payload_length, 0);
  if (spec.link_type == pcap::linktype::kEthernet) {
    for (int i = 0; i < 6; ++i) {
      f[i] = static_cast<std::uint8_t>(0x02 + i);
      f[6 + i] = static_cast<std::uint8_t>(0x12 + i);
    }
    put16(f, 12, v6 ? 0x86DD : 0x0800);
  } else if (spec.link_type == pcap::linktype::kNull) {
    f[0] = v6 ? 30 : 2;  // little-endian host family word
  }

  const std::size_t ip = link;
  const std::size_t l4_len = l4_header + spec.payload_length;
  if (v6) {
    f[ip] = 0x60;
    put16(f, ip + 4, static_cast<std::uint16_t>(l4_len));
    f[ip + 6] = spec.protocol;
    f[ip + 7] = 64;
    std::copy_n(spec.src.address.bytes.begin(), 16, f.begin() + static_cast<std::ptrdiff_t>(ip + 8));
    std::copy_n(spec.dst.address.bytes.begin(), 16, f.begin() + static_cast<std::ptrdiff_t>(ip + 24));
  } else {
    f[ip] = 0x45;
    put16(f, ip + 2, static_cast<std::uint16_t>(20 + l4_len));
    put16(f, ip + 6, 0x4000);  // DF
    f[ip + 8] = 64;
    f[ip + 9] = spec.protocol;
    std::copy_n(spec.src.address.bytes.begin(), 4, f.begin() + static_cast<std::ptrdiff_t>(ip + 12));
    std::copy_n(spec.dst.address.bytes.begin(), 4, f.begin() + static_cast<std::ptrdiff_t>(ip + 16));
    put16(f, ip + 10, checksum(f.data() + ip, 20));
  }

  const std::size_t l4 = ip + ip_header;
  if (spec.protocol == 6) {
    put16(f, l4, spec.src.port);
    put16(f, l4 + 2, spec.dst.port);
    put32(f, l4 + 4, spec.seq);
    put32(f, l4 + 8, spec.ack);
    f[l4 + 12] = static_cast<std::uint8_t>(((20 + spec.tcp_options_length) / 4) << 4);
    f[l4 + 13] = spec.flags.bits();
    put16(f, l4 + 14, 65535);
    for (std::size_t i = 0; i < spec.tcp_options_length; ++i) f[l4 + 20 + i] = 1;  // NOP
  } else if (spec.protocol == 17) {
    put16(f, l4, spec.src.port);
    put16(f, l4 + 2, spec.dst.port);
    put16(f, l4 + 4, static_cast<std::uint16_t>(l4_len));
  }
  for (std::size_t i = 0; i < spec.payload_length; ++i) {
    f[l4 + l4_header + i] = static_cast<std::uint8_t>('a' + i % 26);
  }
  return f;
}

std::vector<std::uint8_t> build_arp_frame() {
  std::vector<std::uint8_t> f(42, 0);
  for (int i = 0; i < 6; ++i) {
    f[i] = 0xFF;
    f[6 + i] = static_cast<std::uint8_t>(0x12 + i);
  }
  put16(f, 12, 0x0806);
  put16(f, 14, 1);
  put16(f, 16, 0x0800);
  f[18] = 6;
  f[19] = 4;
  put16(f, 20, 1);
  return f;
}

SessionBuilder::SessionBuilder(std::uint32_t link_type, pcap::TimeResolution resolution,
                               std::uint32_t start_seconds)
    : link_type_(link_type), resolution_(resolution) {
  const std::uint64_t per_second = resolution == pcap::TimeResolution::Nanosecond ? 1'000'000'000 : 1'000'000;
  clock_ = std::uint64_t{start_seconds} * per_second;
}

pcap::Timestamp SessionBuilder::next_timestamp() {
  const std::uint64_t per_second = resolution_ == pcap::TimeResolution::Nanosecond ? 1'000'000'000 : 1'000'000;
  const std::uint64_t step = resolution_ == pcap::TimeResolution::Nanosecond ? 137'000 : 137;
  clock_ += step;
  return {static_cast<std::uint32_t>(clock_ / per_second), static_cast<std::uint32_t>(clock_ % per_second),
          resolution_};
}

void SessionBuilder::add_raw(std::vector<std::uint8_t> frame) {
  pcap::RawRecord rec;
  rec.timestamp = next_timestamp();
  rec.orig_len = static_cast<std::uint32_t>(frame.size());
  rec.data = std::move(frame);
  records_.push_back(std::move(rec));
}

void SessionBuilder::add_frame(const FrameSpec& spec) {
  FrameSpec s = spec;
  s.link_type = link_type_;
  add_raw(build_frame(s));
}

void SessionBuilder::add_connection(const Endpoint& client, const Endpoint& server, std::uint32_t request_bytes,
                                    std::uint32_t response_bytes, std::uint32_t mss) {
  std::uint32_t cseq = 1000;
  std::uint32_t sseq = 5000;
  auto seg = [&](bool from_client, pcap::TcpFlags flags, std::uint32_t payload, std::uint8_t opts) {
    FrameSpec s;
    s.src = from_client ? client : server;
    s.dst = from_client ? server : client;
    s.flags = flags;
    s.seq = from_client ? cseq : sseq;
    s.ack = from_client ? sseq : cseq;
    s.payload_length = payload;
    s.tcp_options_length = opts;
    add_frame(s);
  };
  seg(true, {.syn = true}, 0, 20);
  ++cseq;
  seg(false, {.syn = true, .ack = true}, 0, 20);
  ++sseq;
  seg(true, {.ack = true}, 0, 12);
  for (std::uint32_t left = request_bytes; left > 0;) {
    const std::uint32_t n = std::min(left, mss);
    seg(true, {.ack = true, .psh = true}, n, 12);
    cseq += n;
    left -= n;
  }
  seg(false, {.ack = true}, 0, 12);
  for (std::uint32_t left = response_bytes; left > 0;) {
    const std::uint32_t n = std::min(left, mss);
    seg(false, {.ack = true, .psh = true}, n, 12);
    sseq += n;
    left -= n;
  }
  seg(true, {.ack = true}, 0, 12);
  seg(false, {.ack = true, .fin = true}, 0, 12);
  ++sseq;
  seg(true, {.ack = true, .fin = true}, 0, 12);
  ++cseq;
  seg(false, {.ack = true}, 0, 12);
}

pcap::CaptureFile SessionBuilder::build() const {
  pcap::CaptureFile cap;
  cap.link_type = link_type_;
  cap.timestamp_resolution = resolution_;
  cap.records = records_;
  pcap::decode_all(cap);
  return cap;
}

}  // namespace llmtraffic::synth
