#include "llmtraffic/capture.hpp"

#include <arpa/inet.h>
#include <linux/if_packet.h>
#include <net/ethernet.h>
#include <net/if.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <fmt/format.h>

#include "llmtraffic/error.hpp"

namespace llmtraffic {

namespace {

constexpr std::size_t kSnapLength = 262144;
constexpr int kReceiveBuffer = 64 << 20;

}  // namespace

InterfaceCapture::InterfaceCapture(std::string interface_name) : interface_(std::move(interface_name)) {
  const unsigned index = if_nametoindex(interface_.c_str());
  if (index == 0) throw Error(ErrorKind::CaptureUnavailable, "no interface named " + interface_);
  fd_ = ::socket(AF_PACKET, SOCK_RAW | SOCK_CLOEXEC, htons(ETH_P_ALL));
  if (fd_ < 0) {
    throw Error(ErrorKind::CaptureUnavailable,
                fmt::format("packet socket on {}: {} (needs CAP_NET_RAW)", interface_, std::strerror(errno)));
  }
  int on = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_TIMESTAMPNS, &on, sizeof on);
  if (::setsockopt(fd_, SOL_SOCKET, SO_RCVBUFFORCE, &kReceiveBuffer, sizeof kReceiveBuffer) != 0) {
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &kReceiveBuffer, sizeof kReceiveBuffer);
  }
  sockaddr_ll sll{};
  sll.sll_family = AF_PACKET;
  sll.sll_protocol = htons(ETH_P_ALL);
  sll.sll_ifindex = static_cast<int>(index);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&sll), sizeof sll) != 0) {
    const int err = errno;
    ::close(fd_);
    fd_ = -1;
    throw Error(ErrorKind::CaptureUnavailable, fmt::format("bind to {}: {}", interface_, std::strerror(err)));
  }
}

InterfaceCapture::~InterfaceCapture() {
  stop();
  if (fd_ >= 0) ::close(fd_);
}

void InterfaceCapture::start() {
  if (thread_.joinable()) return;
  stopping_ = false;
  thread_ = std::thread([this] { loop(); });
}

void InterfaceCapture::stop() {
  if (!thread_.joinable()) return;
  stopping_ = true;
  thread_.join();
  tpacket_stats st{};
  socklen_t len = sizeof st;
  if (::getsockopt(fd_, SOL_PACKET, PACKET_STATISTICS, &st, &len) == 0) {
    std::lock_guard lock(mutex_);
    drops_ += st.tp_drops;
  }
}

CaptureStats InterfaceCapture::stats() const {
  std::lock_guard lock(mutex_);
  return {records_.size(), drops_};
}

void InterfaceCapture::loop() {
  pollfd pfd{fd_, POLLIN, 0};
  while (true) {
    const bool draining = stopping_;
    const int ready = ::poll(&pfd, 1, draining ? 0 : 20);
    if (ready > 0) {
      while (read_one()) {
      }
    } else if (draining) {
      return;
    }
  }
}

bool InterfaceCapture::read_one() {
  std::vector<std::uint8_t> buf(kSnapLength);
  sockaddr_ll from{};
  alignas(cmsghdr) char control[256];
  iovec iov{buf.data(), buf.size()};
  msghdr msg{};
  msg.msg_name = &from;
  msg.msg_namelen = sizeof from;
  msg.msg_iov = &iov;
  msg.msg_iovlen = 1;
  msg.msg_control = control;
  msg.msg_controllen = sizeof control;
  const ssize_t n = ::recvmsg(fd_, &msg, MSG_TRUNC | MSG_DONTWAIT);
  if (n < 0) return false;
  // Loopback delivers every frame twice; keep the inbound copy as libpcap does.
  if (from.sll_pkttype == PACKET_OUTGOING) return true;
  pcap::RawRecord rec;
  rec.timestamp.resolution = pcap::TimeResolution::Nanosecond;
  for (cmsghdr* c = CMSG_FIRSTHDR(&msg); c != nullptr; c = CMSG_NXTHDR(&msg, c)) {
    if (c->cmsg_level == SOL_SOCKET && c->cmsg_type == SCM_TIMESTAMPNS) {
      timespec ts{};
      std::memcpy(&ts, CMSG_DATA(c), sizeof ts);
      rec.timestamp.seconds = static_cast<std::uint32_t>(ts.tv_sec);
      rec.timestamp.fraction = static_cast<std::uint32_t>(ts.tv_nsec);
    }
  }
  rec.orig_len = static_cast<std::uint32_t>(n);
  buf.resize(std::min<std::size_t>(static_cast<std::size_t>(n), kSnapLength));
  rec.data = std::move(buf);
  std::lock_guard lock(mutex_);
  records_.push_back(std::move(rec));
  return true;
}

pcap::CaptureFile InterfaceCapture::filtered(const std::set<std::uint16_t>& ports) const {
  pcap::CaptureFile cap;
  cap.byte_order = pcap::ByteOrder::Little;
  cap.timestamp_resolution = pcap::TimeResolution::Nanosecond;
  cap.snap_length = kSnapLength;
  cap.link_type = pcap::linktype::kEthernet;
  std::lock_guard lock(mutex_);
  for (const auto& rec : records_) {
    const auto pkt = pcap::decode_packet(cap.link_type, rec, 0);
    std::uint16_t sp = 0, dp = 0;
    if (const auto* t = pkt.tcp()) {
      sp = t->src_port;
      dp = t->dst_port;
    } else if (const auto* u = pkt.udp()) {
      sp = u->src_port;
      dp = u->dst_port;
    } else {
      continue;
    }
    if (ports.count(sp) || ports.count(dp)) cap.records.push_back(rec);
  }
  pcap::decode_all(cap);
  return cap;
}

}  // namespace llmtraffic
