#pragma once

// Model registry and the published per-model traffic tables used as
// fixtures and for mock calibration.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "llmtraffic/stats.hpp"

namespace llmtraffic {

struct ModelProfile {
  std::string model_name;  // registry key
  std::string display_name;
  std::string company;
  std::string release_date;
  std::optional<double> parameter_count;  // billions
  std::optional<std::uint32_t> context_length;
  std::optional<std::uint32_t> max_tokens;
  double temperature = 0.7;
  double top_p = 1.0;
  // Row labels in the local / external reference tables, when measured.
  std::optional<std::string> local_reference_row;
  std::optional<std::string> external_reference_row;
  std::string note;

  // Throws Error{InvalidArgument} when an invariant is violated.
  void validate() const;
};

std::span<const ModelProfile> model_registry();
// Case-insensitive on the registry key; throws Error{InvalidArgument}.
const ModelProfile& find_model(std::string_view name);

struct ReferenceRow {
  std::string_view model;
  stats::TrafficSummary summary;
};

inline constexpr std::size_t kReferenceSamplesPerModel = 1000;

std::span<const ReferenceRow> reference_local_table();
std::span<const ReferenceRow> reference_external_table();
const ReferenceRow* find_reference_row(std::span<const ReferenceRow> table, std::string_view model);

stats::SummaryTable reference_summary_table(flow::CapturePoint point);

}  // namespace llmtraffic
