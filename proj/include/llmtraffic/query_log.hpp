#pragma once

// JSON-lines run log written by the querying agent, one entry per prompt.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace llmtraffic {

struct QueryLogEntry {
  std::int64_t query_id = 0;
  double send_timestamp = 0.0;  // wall clock, seconds since epoch
  double recv_timestamp = 0.0;
  std::uint64_t request_body_bytes = 0;
  std::uint64_t response_body_bytes = 0;
  int upstream_status = 0;  // 0 when no HTTP response arrived
  std::string model_profile_name;
  std::optional<std::string> question;
  std::optional<std::string> answer;
  std::optional<std::string> error;

  friend bool operator==(const QueryLogEntry&, const QueryLogEntry&) = default;
};

using QueryLog = std::vector<QueryLogEntry>;

std::string to_json_line(const QueryLogEntry& entry);
QueryLogEntry parse_query_log_line(const std::string& line);

// Throws Error{FileUnreadable|MalformedRecord}.
QueryLog read_query_log(const std::filesystem::path& path);
void write_query_log(const QueryLog& log, const std::filesystem::path& path);

// Serializes appends from any thread; each line is flushed.
class QueryLogWriter {
 public:
  explicit QueryLogWriter(const std::filesystem::path& path);
  ~QueryLogWriter();
  QueryLogWriter(const QueryLogWriter&) = delete;
  QueryLogWriter& operator=(const QueryLogWriter&) = delete;

  void append(const QueryLogEntry& entry);

 private:
  std::mutex mutex_;
  std::FILE* file_ = nullptr;
};

}  // namespace llmtraffic
