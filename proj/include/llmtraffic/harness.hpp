#pragma once

// Two-agent experiment: a querying agent replays prompts over HTTP to a
// responding agent, which forwards each one to a mock or live upstream.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "llmtraffic/capture.hpp"
#include "llmtraffic/mock_backend.hpp"
#include "llmtraffic/prompts.hpp"
#include "llmtraffic/query_log.hpp"

namespace llmtraffic::harness {

enum class UpstreamKind { Mock, Live };
enum class ConnectionPolicy { ClosePerQuery, KeepAlive };
enum class Pacing { Sequential, Concurrent };

// Generic HTTP JSON endpoint. Header values may contain {credential};
// string values in the request template may be "{id}", "{question}" or
// "{model}" placeholders.
struct LiveEndpoint {
  std::string url;  // http[s]://host[:port]/path
  std::map<std::string, std::string> headers{{"Authorization", "Bearer {credential}"}};
  std::string credential_env = "LLM_API_KEY";
  nlohmann::json request_template = {{"model", "{model}"}, {"prompt", "{question}"}};
  std::string answer_pointer = "/answer";  // JSON pointer into the upstream reply
  std::string external_interface;          // capture interface for the external point
};

struct CapturePoints {
  bool local = false;
  bool external = false;
};

struct RunConfig {
  std::filesystem::path dataset_path;  // empty: synthetic prompts
  std::size_t prompt_count = 1000;
  UpstreamKind upstream = UpstreamKind::Mock;
  LiveEndpoint live;
  std::string model_profile_name = "mistral-7b";
  bool measurement_mode = true;
  ConnectionPolicy connection_policy = ConnectionPolicy::ClosePerQuery;
  Pacing pacing = Pacing::Sequential;
  std::size_t concurrency = 4;
  CapturePoints capture_points;
  std::string listen_address = "127.0.0.1";
  std::uint16_t listen_port = 0;    // 0 picks a free port
  std::uint16_t upstream_port = 0;  // mock upstream
  std::uint64_t seed = 0;
  std::optional<mock::MockBackendConfig> mock;  // default: calibrated to the local table
  bool tls = false;                             // mock upstream over TLS
  double upstream_timeout_s = 30;
  std::filesystem::path out_dir = "out";
  std::string run_id;  // empty: derived from the config

  // Measurement mode forces close-per-query and sequential pacing.
  RunConfig normalized() const;
  void validate() const;  // throws Error{Config}
  std::string effective_run_id() const;
  mock::MockBackendConfig mock_config() const;
};

// Overlays keys present in `j` onto `cfg`; unknown keys are a Config error.
void apply_run_config(const nlohmann::json& j, RunConfig& cfg);
nlohmann::json run_config_json(const RunConfig& cfg);

// Value of the live credential, or Error{Config} if the variable is unset.
std::string live_credential(const LiveEndpoint& live);

struct TlsMaterial {
  std::string certificate_pem;
  std::string private_key_pem;
};
// Self-signed certificate for 127.0.0.1 / localhost.
TlsMaterial generate_self_signed();

// Mock LLM served at POST /v1/generate with {"id","question","model"}.
class MockUpstream {
 public:
  MockUpstream(mock::MockBackendConfig cfg, std::string default_model, const std::string& address,
               std::uint16_t port, std::optional<TlsMaterial> tls = std::nullopt);
  ~MockUpstream();
  MockUpstream(const MockUpstream&) = delete;
  MockUpstream& operator=(const MockUpstream&) = delete;

  std::uint16_t port() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct UpstreamTarget {
  std::string scheme = "http";
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::string path = "/v1/generate";
  std::map<std::string, std::string> headers;  // already resolved
  nlohmann::json request_template = {{"id", "{id}"}, {"question", "{question}"}, {"model", "{model}"}};
  std::string answer_pointer;  // empty: relay the upstream body verbatim
  std::string model;
  std::optional<std::string> ca_pem;  // trust anchor for a self-signed upstream
  double timeout_s = 30;
  bool keep_alive = false;
};

UpstreamTarget live_target(const RunConfig& cfg);

// POST /query with {"id","question"}; answers {"id","answer"}. Upstream
// connection failures become 502 and deadline overruns 504.
class RespondingAgent {
 public:
  RespondingAgent(UpstreamTarget target, const std::string& address, std::uint16_t port);
  ~RespondingAgent();
  RespondingAgent(const RespondingAgent&) = delete;
  RespondingAgent& operator=(const RespondingAgent&) = delete;

  std::uint16_t port() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct AgentAddress {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

using LogSink = std::function<void(const QueryLogEntry&)>;

// Sends every prompt and logs one entry each, failures included. Empty
// questions are rejected before anything is sent. A refused connection
// logs the attempt and throws Error{ConnectionRefused}; entries already
// passed to `sink` stay there.
QueryLog querying_agent_run(const RunConfig& cfg, const AgentAddress& agent, const std::vector<PromptRecord>& prompts,
                            const LogSink& sink = {});

struct RunArtifacts {
  std::string run_id;
  std::filesystem::path directory;
  std::filesystem::path query_log;
  std::filesystem::path manifest;
  std::optional<std::filesystem::path> prompts;
  std::optional<std::filesystem::path> local_capture;
  std::optional<std::filesystem::path> external_capture;
  std::uint16_t agent_port = 0;
  std::uint16_t upstream_port = 0;
  bool capture_unavailable = false;
  std::vector<std::string> warnings;
};

// Artifacts land in out_dir/run_id: querylog.jsonl, local.pcap,
// external.pcap, prompts.jsonl (synthetic prompts only) and run.json.
RunArtifacts run_experiment(const RunConfig& cfg);

}  // namespace llmtraffic::harness
