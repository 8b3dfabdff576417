#pragma once

// Live packet capture on one Linux interface via an AF_PACKET socket,
// recorded as Ethernet frames with nanosecond timestamps.

#include <atomic>
#include <cstdint>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "llmtraffic/pcap.hpp"

namespace llmtraffic {

struct CaptureStats {
  std::uint64_t frames = 0;
  std::uint64_t kernel_drops = 0;
};

class InterfaceCapture {
 public:
  // Opens and binds the socket; throws Error{CaptureUnavailable}.
  explicit InterfaceCapture(std::string interface_name = "lo");
  ~InterfaceCapture();
  InterfaceCapture(const InterfaceCapture&) = delete;
  InterfaceCapture& operator=(const InterfaceCapture&) = delete;

  void start();
  // Drains whatever the kernel still holds, then joins the reader thread.
  void stop();

  const std::string& interface_name() const { return interface_; }
  CaptureStats stats() const;

  // Frames with a TCP or UDP port in `ports`, in arrival order.
  pcap::CaptureFile filtered(const std::set<std::uint16_t>& ports) const;

 private:
  void loop();
  bool read_one();

  std::string interface_;
  int fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
  mutable std::mutex mutex_;
  std::vector<pcap::RawRecord> records_;
  std::uint64_t drops_ = 0;
};

}  // namespace llmtraffic
