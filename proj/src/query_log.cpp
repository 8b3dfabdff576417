#include "llmtraffic/query_log.hpp"

#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>

#include "llmtraffic/error.hpp"

namespace llmtraffic {

using nlohmann::json;

std::string to_json_line(const QueryLogEntry& e) {
  json j = {
      {"query_id", e.query_id},
      {"send_timestamp", e.send_timestamp},
      {"recv_timestamp", e.recv_timestamp},
      {"request_body_bytes", e.request_body_bytes},
      {"response_body_bytes", e.response_body_bytes},
      {"upstream_status", e.upstream_status},
      {"model_profile_name", e.model_profile_name},
  };
  if (e.question) j["question"] = *e.question;
  if (e.answer) j["answer"] = *e.answer;
  if (e.error) j["error"] = *e.error;
  return j.dump();
}

QueryLogEntry parse_query_log_line(const std::string& line) {
  const json j = json::parse(line);
  QueryLogEntry e;
  e.query_id = j.at("query_id").get<std::int64_t>();
  e.send_timestamp = j.at("send_timestamp").get<double>();
  e.recv_timestamp = j.at("recv_timestamp").get<double>();
  e.request_body_bytes = j.at("request_body_bytes").get<std::uint64_t>();
  e.response_body_bytes = j.at("response_body_bytes").get<std::uint64_t>();
  e.upstream_status = j.at("upstream_status").get<int>();
  e.model_profile_name = j.at("model_profile_name").get<std::string>();
  if (j.contains("question")) e.question = j["question"].get<std::string>();
  if (j.contains("answer")) e.answer = j["answer"].get<std::string>();
  if (j.contains("error")) e.error = j["error"].get<std::string>();
  return e;
}

QueryLog read_query_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::FileUnreadable, "cannot open " + path.string());
  QueryLog log;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    try {
      log.push_back(parse_query_log_line(line));
    } catch (const json::exception& ex) {
      throw Error(ErrorKind::MalformedRecord,
                  path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return log;
}

void write_query_log(const QueryLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::FileUnreadable, "cannot write " + path.string());
  for (const auto& e : log) out << to_json_line(e) << '\n';
}

QueryLogWriter::QueryLogWriter(const std::filesystem::path& path) {
  file_ = std::fopen(path.c_str(), "w");
  if (!file_) throw Error(ErrorKind::FileUnreadable, "cannot write " + path.string());
}

QueryLogWriter::~QueryLogWriter() {
  if (file_) std::fclose(file_);
}

void QueryLogWriter::append(const QueryLogEntry& entry) {
  const std::string line = to_json_line(entry) + "\n";
  std::lock_guard lock(mutex_);
  std::fwrite(line.data(), 1, line.size(), file_);
  std::fflush(file_);
}

}  // namespace llmtraffic
