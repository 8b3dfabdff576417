#pragma once

// Classic pcap container: bit-exact reader/writer plus link/IP/transport
// decoding into normalized packet records.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace llmtraffic::pcap {

enum class ByteOrder { Little, Big };
enum class TimeResolution { Microsecond, Nanosecond };

// Link types from the tcpdump.org registry.
namespace linktype {
inline constexpr std::uint32_t kNull = 0;
inline constexpr std::uint32_t kEthernet = 1;
inline constexpr std::uint32_t kRawAlt = 12;  // DLT_RAW on some BSDs
inline constexpr std::uint32_t kRaw = 101;
}  // namespace linktype

inline constexpr std::uint32_t kMagicMicro = 0xA1B2C3D4;
inline constexpr std::uint32_t kMagicNano = 0xA1B23C4D;
inline constexpr std::size_t kGlobalHeaderSize = 24;
inline constexpr std::size_t kRecordHeaderSize = 16;

struct Timestamp {
  std::uint32_t seconds = 0;
  std::uint32_t fraction = 0;  // micro- or nanoseconds, per `resolution`
  TimeResolution resolution = TimeResolution::Microsecond;

  std::int64_t nanoseconds() const noexcept {
    const std::int64_t scale = resolution == TimeResolution::Nanosecond ? 1 : 1000;
    return static_cast<std::int64_t>(seconds) * 1'000'000'000 + fraction * scale;
  }
  double seconds_f() const noexcept { return static_cast<double>(nanoseconds()) * 1e-9; }

  friend bool operator==(const Timestamp&, const Timestamp&) = default;
};

// One record exactly as stored in the file.
struct RawRecord {
  Timestamp timestamp;
  std::uint32_t orig_len = 0;    // frame length on the wire
  std::vector<std::uint8_t> data;  // incl_len bytes

  friend bool operator==(const RawRecord&, const RawRecord&) = default;
};

struct IpAddress {
  bool v6 = false;
  std::array<std::uint8_t, 16> bytes{};  // v4 uses the first four

  static IpAddress v4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d);
  static IpAddress parse(const std::string& text);
  std::string to_string() const;

  friend auto operator<=>(const IpAddress&, const IpAddress&) = default;
};

struct TcpFlags {
  bool syn = false;
  bool ack = false;
  bool fin = false;
  bool rst = false;
  bool psh = false;

  std::uint8_t bits() const noexcept;
  static TcpFlags from_bits(std::uint8_t bits) noexcept;
  friend bool operator==(const TcpFlags&, const TcpFlags&) = default;
};

struct NetworkHeader {
  IpAddress src;
  IpAddress dst;
  std::uint8_t protocol = 0;
  friend bool operator==(const NetworkHeader&, const NetworkHeader&) = default;
};

struct TcpSegment {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  TcpFlags flags;
  std::uint32_t payload_length = 0;
  friend bool operator==(const TcpSegment&, const TcpSegment&) = default;
};

struct UdpDatagram {
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint32_t payload_length = 0;
  friend bool operator==(const UdpDatagram&, const UdpDatagram&) = default;
};

// monostate marks a NonTransport frame (non-IP, IP without TCP/UDP, or malformed).
using Transport = std::variant<std::monostate, TcpSegment, UdpDatagram>;

struct PacketRecord {
  std::size_t index = 0;
  Timestamp timestamp;
  std::uint32_t frame_length = 0;
  std::uint32_t captured_length = 0;
  std::optional<NetworkHeader> network;
  Transport transport;
  std::string diagnostic;  // set for malformed frames

  bool is_transport() const noexcept { return !std::holds_alternative<std::monostate>(transport); }
  const TcpSegment* tcp() const noexcept { return std::get_if<TcpSegment>(&transport); }
  const UdpDatagram* udp() const noexcept { return std::get_if<UdpDatagram>(&transport); }

  friend bool operator==(const PacketRecord&, const PacketRecord&) = default;
};

struct CaptureFile {
  ByteOrder byte_order = ByteOrder::Little;
  TimeResolution timestamp_resolution = TimeResolution::Microsecond;
  std::uint16_t version_major = 2;
  std::uint16_t version_minor = 4;
  std::int32_t thiszone = 0;
  std::uint32_t sigfigs = 0;
  std::uint32_t snap_length = 262144;
  std::uint32_t link_type = linktype::kEthernet;

  std::vector<RawRecord> records;
  std::vector<PacketRecord> packets;  // decode of `records`, same order

  // Set when the final record header promised more bytes than remained.
  bool truncated = false;
  std::string diagnostic;
};

// Throws Error{UnknownMagic|TruncatedHeader}. A short final record sets
// `truncated` and keeps everything decoded before it.
CaptureFile parse_capture(std::span<const std::uint8_t> raw);
CaptureFile read_capture(const std::filesystem::path& path);

std::vector<std::uint8_t> write_capture(const CaptureFile& capture);
void write_capture(const CaptureFile& capture, const std::filesystem::path& path);

PacketRecord decode_packet(std::uint32_t link_type, const RawRecord& record, std::size_t index = 0);

// Re-decodes every record; used after building a CaptureFile in memory.
void decode_all(CaptureFile& capture);

}  // namespace llmtraffic::pcap
