#pragma once

// Deterministic stand-in for a cloud LLM: response bodies whose sizes follow
// a seeded truncated normal, keyed by (seed, query_id).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "llmtraffic/profiles.hpp"

namespace llmtraffic::mock {

// Frame and header bytes of one close-per-query exchange on the loopback
// point beyond the two bodies: handshake, HTTP headers, ACKs and teardown
// (14 frames with Linux default TCP options). Measured with an envelope-only
// response; tests/harness_capture_test.cpp re-measures it.
inline constexpr std::uint64_t kLocalProtocolOverheadBytes = 1194;

// Bytes of answer text allowed per max_tokens token.
inline constexpr std::uint64_t kBytesPerToken = 4;

// Target moments of the truncated distribution; `location`/`scale` are the
// untruncated normal parameters that reproduce them on [min, max].
struct SizeDistribution {
  double mean = 0;
  double sd = 0;
  double min = 0;
  double max = 0;
  double location = 0;
  double scale = 0;

  static SizeDistribution fit(double mean, double sd, double min, double max);
  void validate() const;

  double truncated_mean() const;
  double truncated_sd() const;
};

struct DelayDistribution {
  double mean_ms = 0;
  double jitter_ms = 0;  // uniform in [-jitter, +jitter]
};

enum class UpstreamTransport { Plain, Tls };

struct MockBackendConfig {
  std::uint64_t seed = 0;
  SizeDistribution response_size_distribution = SizeDistribution::fit(1600, 300, 200, 8000);
  std::map<std::string, SizeDistribution> per_model;  // keyed by model_profile_name
  std::optional<DelayDistribution> response_delay_distribution;
  UpstreamTransport transport = UpstreamTransport::Plain;

  void validate() const;
  const SizeDistribution& distribution_for(std::string_view model_name) const;

  // Per-model overrides fit to the local reference table minus
  // kLocalProtocolOverheadBytes.
  static MockBackendConfig calibrated(std::uint64_t seed);
};

SizeDistribution calibrated_distribution(const ReferenceRow& local_row);

// Smallest body the JSON envelope allows for this id.
std::uint64_t envelope_bytes(std::int64_t query_id);

std::uint64_t draw_response_size(const MockBackendConfig& cfg, const ModelProfile& model, std::int64_t query_id);
double draw_response_delay_ms(const MockBackendConfig& cfg, std::int64_t query_id);

// {"answer":"<text>","id":<query_id>} padded to the drawn length.
std::string mock_llm_respond(std::int64_t query_id, std::string_view prompt, const MockBackendConfig& cfg,
                             const ModelProfile& model);

}  // namespace llmtraffic::mock
