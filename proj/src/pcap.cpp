#include "llmtraffic/pcap.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <fstream>
#include <iterator>

#include "llmtraffic/error.hpp"

namespace llmtraffic::pcap {

namespace {

std::uint32_t load32(const std::uint8_t* p, ByteOrder order) {
  if (order == ByteOrder::Little) {
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 |
           std::uint32_t{p[3]} << 24;
  }
  return std::uint32_t{p[3]} | std::uint32_t{p[2]} << 8 | std::uint32_t{p[1]} << 16 |
         std::uint32_t{p[0]} << 24;
}

std::uint16_t load16(const std::uint8_t* p, ByteOrder order) {
  if (order == ByteOrder::Little) return static_cast<std::uint16_t>(p[0] | p[1] << 8);
  return static_cast<std::uint16_t>(p[1] | p[0] << 8);
}

std::uint16_t be16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] << 8 | p[1]); }

void store32(std::vector<std::uint8_t>& out, std::uint32_t v, ByteOrder order) {
  if (order == ByteOrder::Little) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  } else {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

void store16(std::vector<std::uint8_t>& out, std::uint16_t v, ByteOrder order) {
  if (order == ByteOrder::Little) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  } else {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
  }
}

constexpr std::uint16_t kEtherIpv4 = 0x0800;
constexpr std::uint16_t kEtherIpv6 = 0x86DD;
constexpr std::uint16_t kEtherVlan = 0x8100;
constexpr std::uint8_t kProtoTcp = 6;
constexpr std::uint8_t kProtoUdp = 17;

struct IpPayload {
  std::span<const std::uint8_t> bytes;  // captured bytes of the L4 header+payload
  std::uint32_t declared_length = 0;    // L4 length per the IP header
};

void mark_malformed(PacketRecord& pkt, std::string why) {
  pkt.transport = std::monostate{};
  pkt.diagnostic = std::move(why);
}

void decode_transport(PacketRecord& pkt, std::uint8_t proto, IpPayload l4) {
  const bool snapped = pkt.captured_length < pkt.frame_length;
  if (proto == kProtoTcp) {
    if (l4.bytes.size() < 20) {
      if (!snapped) mark_malformed(pkt, "tcp header exceeds captured bytes");
      return;
    }
    const std::uint32_t header_len = (l4.bytes[12] >> 4) * 4u;
    if (header_len < 20 || header_len > l4.declared_length) {
      mark_malformed(pkt, "tcp data offset inconsistent with ip length");
      return;
    }
    if (header_len > l4.bytes.size() && !snapped) {
      mark_malformed(pkt, "tcp options exceed captured bytes");
      return;
    }
    TcpSegment seg;
    seg.src_port = be16(l4.bytes.data());
    seg.dst_port = be16(l4.bytes.data() + 2);
    seg.flags = TcpFlags::from_bits(l4.bytes[13]);
    std::uint32_t payload = l4.declared_length - header_len;
    // A snap-truncated frame can only vouch for bytes it still carries.
    if (payload > pkt.captured_length) payload = pkt.captured_length;
    seg.payload_length = payload;
    pkt.transport = seg;
  } else if (proto == kProtoUdp) {
    if (l4.bytes.size() < 8) {
      if (!snapped) mark_malformed(pkt, "udp header exceeds captured bytes");
      return;
    }
    if (l4.declared_length < 8) {
      mark_malformed(pkt, "udp datagram shorter than its header");
      return;
    }
    UdpDatagram dgram;
    dgram.src_port = be16(l4.bytes.data());
    dgram.dst_port = be16(l4.bytes.data() + 2);
    std::uint32_t payload = l4.declared_length - 8;
    if (payload > pkt.captured_length) payload = pkt.captured_length;
    dgram.payload_length = payload;
    pkt.transport = dgram;
  }
}

void decode_ipv4(PacketRecord& pkt, std::span<const std::uint8_t> ip, std::size_t link_len) {
  const bool snapped = pkt.captured_length < pkt.frame_length;
  if (ip.size() < 20) {
    if (!snapped) mark_malformed(pkt, "ipv4 header exceeds captured bytes");
    return;
  }
  const std::size_t ihl = (ip[0] & 0x0F) * 4u;
  const std::uint16_t total = be16(ip.data() + 2);
  if (ihl < 20 || total < ihl) {
    mark_malformed(pkt, "ipv4 header length fields inconsistent");
    return;
  }
  if (link_len + total > pkt.frame_length) {
    mark_malformed(pkt, "ipv4 total length exceeds frame length");
    return;
  }
  if (ihl > ip.size()) {
    if (!snapped) mark_malformed(pkt, "ipv4 options exceed captured bytes");
    return;
  }
  NetworkHeader net;
  net.src = IpAddress::v4(ip[12], ip[13], ip[14], ip[15]);
  net.dst = IpAddress::v4(ip[16], ip[17], ip[18], ip[19]);
  net.protocol = ip[9];
  pkt.network = net;
  const std::uint16_t frag = be16(ip.data() + 6) & 0x1FFF;
  if (frag != 0) return;  // non-first fragment: no transport header
  const std::size_t end = std::min<std::size_t>(total, ip.size());
  decode_transport(pkt, net.protocol, {ip.subspan(ihl, end - ihl), static_cast<std::uint32_t>(total - ihl)});
}

void decode_ipv6(PacketRecord& pkt, std::span<const std::uint8_t> ip, std::size_t link_len) {
  const bool snapped = pkt.captured_length < pkt.frame_length;
  if (ip.size() < 40) {
    if (!snapped) mark_malformed(pkt, "ipv6 header exceeds captured bytes");
    return;
  }
  const std::uint32_t payload_len = be16(ip.data() + 4);
  if (link_len + 40 + payload_len > pkt.frame_length) {
    mark_malformed(pkt, "ipv6 payload length exceeds frame length");
    return;
  }
  NetworkHeader net;
  net.src.v6 = net.dst.v6 = true;
  std::copy_n(ip.data() + 8, 16, net.src.bytes.begin());
  std::copy_n(ip.data() + 24, 16, net.dst.bytes.begin());
  std::uint8_t next = ip[6];
  std::size_t offset = 40;
  std::uint32_t remaining = payload_len;
  // Hop-by-hop, routing, destination options, fragment.
  while (next == 0 || next == 43 || next == 60 || next == 44) {
    if (offset + 8 > ip.size()) {
      net.protocol = next;
      pkt.network = net;
      if (!snapped) mark_malformed(pkt, "ipv6 extension header exceeds captured bytes");
      return;
    }
    std::size_t ext_len = next == 44 ? 8 : (ip[offset + 1] + 1u) * 8u;
    if (next == 44 && (be16(ip.data() + offset + 2) & 0xFFF8) != 0) {
      net.protocol = ip[offset];
      pkt.network = net;
      return;  // non-first fragment
    }
    if (ext_len > remaining) {
      net.protocol = next;
      pkt.network = net;
      mark_malformed(pkt, "ipv6 extension header exceeds payload length");
      return;
    }
    next = ip[offset];
    offset += ext_len;
    remaining -= static_cast<std::uint32_t>(ext_len);
  }
  net.protocol = next;
  pkt.network = net;
  const std::size_t end = std::min<std::size_t>(40 + payload_len, ip.size());
  if (offset > end) return;
  decode_transport(pkt, next, {ip.subspan(offset, end - offset), remaining});
}

void decode_ip(PacketRecord& pkt, std::span<const std::uint8_t> ip, std::size_t link_len) {
  if (ip.empty()) return;
  switch (ip[0] >> 4) {
    case 4: decode_ipv4(pkt, ip, link_len); break;
    case 6: decode_ipv6(pkt, ip, link_len); break;
    default: break;
  }
}

}  // namespace

IpAddress IpAddress::v4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
  IpAddress ip;
  ip.bytes[0] = a;
  ip.bytes[1] = b;
  ip.bytes[2] = c;
  ip.bytes[3] = d;
  return ip;
}

IpAddress IpAddress::parse(const std::string& text) {
  IpAddress ip;
  if (inet_pton(AF_INET, text.c_str(), ip.bytes.data()) == 1) return ip;
  if (inet_pton(AF_INET6, text.c_str(), ip.bytes.data()) == 1) {
    ip.v6 = true;
    return ip;
  }
  throw Error(ErrorKind::InvalidArgument, "not an IP address: " + text);
}

std::string IpAddress::to_string() const {
  char buf[INET6_ADDRSTRLEN] = {};
  inet_ntop(v6 ? AF_INET6 : AF_INET, bytes.data(), buf, sizeof buf);
  return buf;
}

std::uint8_t TcpFlags::bits() const noexcept {
  return static_cast<std::uint8_t>((fin ? 0x01 : 0) | (syn ? 0x02 : 0) | (rst ? 0x04 : 0) |
                                   (psh ? 0x08 : 0) | (ack ? 0x10 : 0));
}

TcpFlags TcpFlags::from_bits(std::uint8_t bits) noexcept {
  TcpFlags f;
  f.fin = bits & 0x01;
  f.syn = bits & 0x02;
  f.rst = bits & 0x04;
  f.psh = bits & 0x08;
  f.ack = bits & 0x10;
  return f;
}

PacketRecord decode_packet(std::uint32_t link_type, const RawRecord& record, std::size_t index) {
  PacketRecord pkt;
  pkt.index = index;
  pkt.timestamp = record.timestamp;
  pkt.frame_length = record.orig_len;
  pkt.captured_length = static_cast<std::uint32_t>(record.data.size());
  if (pkt.captured_length > pkt.frame_length) {
    mark_malformed(pkt, "captured length exceeds frame length");
    return pkt;
  }
  const std::span<const std::uint8_t> frame(record.data);

  switch (link_type) {
    case linktype::kEthernet: {
      if (frame.size() < 14) {
        if (pkt.captured_length == pkt.frame_length) mark_malformed(pkt, "ethernet header truncated");
        return pkt;
      }
      std::size_t offset = 12;
      std::uint16_t ethertype = be16(frame.data() + offset);
      if (ethertype == kEtherVlan && frame.size() >= 18) {
        offset += 4;
        ethertype = be16(frame.data() + offset);
      }
      offset += 2;
      if (ethertype == kEtherIpv4 || ethertype == kEtherIpv6) decode_ip(pkt, frame.subspan(offset), offset);
      break;
    }
    case linktype::kNull: {
      if (frame.size() < 4) {
        if (pkt.captured_length == pkt.frame_length) mark_malformed(pkt, "loopback header truncated");
        return pkt;
      }
      // The family word is in the capturing host's byte order; accept either.
      const std::uint32_t le = load32(frame.data(), ByteOrder::Little);
      const std::uint32_t be = load32(frame.data(), ByteOrder::Big);
      auto is_family = [&](std::uint32_t v) { return le == v || be == v; };
      if (is_family(2) || is_family(24) || is_family(28) || is_family(30)) decode_ip(pkt, frame.subspan(4), 4);
      break;
    }
    case linktype::kRaw:
    case linktype::kRawAlt:
      decode_ip(pkt, frame, 0);
      break;
    default:
      pkt.diagnostic = "unsupported link type " + std::to_string(link_type);
      break;
  }
  return pkt;
}

void decode_all(CaptureFile& capture) {
  capture.packets.clear();
  capture.packets.reserve(capture.records.size());
  for (std::size_t i = 0; i < capture.records.size(); ++i) {
    capture.packets.push_back(decode_packet(capture.link_type, capture.records[i], i));
  }
}

CaptureFile parse_capture(std::span<const std::uint8_t> raw) {
  if (raw.size() < 4) throw Error(ErrorKind::TruncatedHeader, "input shorter than pcap magic");
  CaptureFile cap;
  const std::uint32_t magic = load32(raw.data(), ByteOrder::Big);
  switch (magic) {
    case 0xA1B2C3D4: cap.byte_order = ByteOrder::Big; cap.timestamp_resolution = TimeResolution::Microsecond; break;
    case 0xD4C3B2A1: cap.byte_order = ByteOrder::Little; cap.timestamp_resolution = TimeResolution::Microsecond; break;
    case 0xA1B23C4D: cap.byte_order = ByteOrder::Big; cap.timestamp_resolution = TimeResolution::Nanosecond; break;
    case 0x4D3CB2A1: cap.byte_order = ByteOrder::Little; cap.timestamp_resolution = TimeResolution::Nanosecond; break;
    default: throw Error(ErrorKind::UnknownMagic, "not a classic pcap file");
  }
  if (raw.size() < kGlobalHeaderSize) throw Error(ErrorKind::TruncatedHeader, "pcap global header truncated");
  const auto order = cap.byte_order;
  cap.version_major = load16(raw.data() + 4, order);
  cap.version_minor = load16(raw.data() + 6, order);
  cap.thiszone = static_cast<std::int32_t>(load32(raw.data() + 8, order));
  cap.sigfigs = load32(raw.data() + 12, order);
  cap.snap_length = load32(raw.data() + 16, order);
  cap.link_type = load32(raw.data() + 20, order);

  std::size_t pos = kGlobalHeaderSize;
  while (pos < raw.size()) {
    if (raw.size() - pos < kRecordHeaderSize) {
      cap.truncated = true;
      cap.diagnostic = "record header truncated at offset " + std::to_string(pos);
      break;
    }
    const std::uint8_t* h = raw.data() + pos;
    RawRecord rec;
    rec.timestamp = {load32(h, order), load32(h + 4, order), cap.timestamp_resolution};
    const std::uint32_t incl = load32(h + 8, order);
    rec.orig_len = load32(h + 12, order);
    pos += kRecordHeaderSize;
    if (incl > raw.size() - pos) {
      cap.truncated = true;
      cap.diagnostic = "record " + std::to_string(cap.records.size()) + " promises " + std::to_string(incl) +
                       " bytes, " + std::to_string(raw.size() - pos) + " remain";
      break;
    }
    rec.data.assign(raw.begin() + static_cast<std::ptrdiff_t>(pos),
                    raw.begin() + static_cast<std::ptrdiff_t>(pos + incl));
    pos += incl;
    cap.records.push_back(std::move(rec));
  }
  decode_all(cap);
  return cap;
}

CaptureFile read_capture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::FileUnreadable, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_capture(bytes);
}

std::vector<std::uint8_t> write_capture(const CaptureFile& capture) {
  std::vector<std::uint8_t> out;
  const auto order = capture.byte_order;
  store32(out, capture.timestamp_resolution == TimeResolution::Nanosecond ? kMagicNano : kMagicMicro, order);
  store16(out, capture.version_major, order);
  store16(out, capture.version_minor, order);
  store32(out, static_cast<std::uint32_t>(capture.thiszone), order);
  store32(out, capture.sigfigs, order);
  store32(out, capture.snap_length, order);
  store32(out, capture.link_type, order);
  for (const auto& rec : capture.records) {
    store32(out, rec.timestamp.seconds, order);
    store32(out, rec.timestamp.fraction, order);
    store32(out, static_cast<std::uint32_t>(rec.data.size()), order);
    store32(out, rec.orig_len, order);
    out.insert(out.end(), rec.data.begin(), rec.data.end());
  }
  return out;
}

void write_capture(const CaptureFile& capture, const std::filesystem::path& path) {
  const auto bytes = write_capture(capture);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::FileUnreadable, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace llmtraffic::pcap
