#pragma once

// Seven-statistic traffic summaries, cross-model aggregation, report
// rendering and boxplot-ready exports.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "llmtraffic/flow.hpp"

namespace llmtraffic::stats {

struct TrafficSummary {
  double min = 0;
  double q1 = 0;
  double median = 0;
  double avg = 0;
  double q3 = 0;
  double max = 0;
  double sd = 0;
};

// Linear interpolation between order statistics (Hyndman-Fan type 7).
// `sorted` must be ascending and non-empty; p in [0, 1].
double quantile_type7(std::span<const double> sorted, double p);

// Requires >= 2 samples (Error{TooFewSamples}); sd uses the n-1 denominator.
TrafficSummary summarize(std::span<const double> samples);

struct GrandMean {
  double grand_avg = 0;
  double grand_sd = 0;        // sample sd of the per-model averages
  double population_sd = 0;   // n denominator, reported alongside
  double mean_within_sd = 0;  // unweighted mean of the per-model sd values
  std::size_t model_count = 0;
};

// Abstract-level figure the per-model table does not reproduce.
inline constexpr double kPublishedGrandSd = 369.0;
inline constexpr std::string_view kGrandSdConvention = "sample sd (n-1) of per-model Avg values";

GrandMean cross_model_mean(std::span<const TrafficSummary> summaries);

// True when grand_sd differs from the published figure by more than `tolerance` bytes.
bool grand_sd_diverges(const GrandMean& g, double tolerance = 1.0);

struct SummaryRow {
  std::string model_name;
  TrafficSummary summary;
  std::size_t sample_count = 0;
};

struct SummaryTable {
  flow::CapturePoint capture_point = flow::CapturePoint::Local;
  std::vector<SummaryRow> rows;
};

// Groups exchanges by model (first-seen order) and summarizes one capture point.
SummaryTable summarize_exchanges(std::span<const flow::QueryExchange> exchanges, flow::CapturePoint point);

enum class ReportFormat { Csv, Json, Markdown };
ReportFormat parse_report_format(std::string_view name);

std::string emit_report(const SummaryTable& table, ReportFormat format);

struct BoxplotSeries {
  std::string model_name;
  flow::CapturePoint capture_point = flow::CapturePoint::Local;
  std::size_t sample_count = 0;
  double min = 0;
  double q1 = 0;
  double median = 0;
  double q3 = 0;
  double max = 0;
  double lower_whisker = 0;  // most extreme samples inside the 1.5 IQR fences
  double upper_whisker = 0;
  std::vector<double> outliers;
};

struct DistributionInput {
  std::string model_name;
  flow::CapturePoint capture_point = flow::CapturePoint::Local;
  std::vector<double> samples;
};

BoxplotSeries boxplot(std::string model_name, flow::CapturePoint point, std::span<const double> samples);
std::vector<BoxplotSeries> export_distribution(std::span<const DistributionInput> inputs);
std::string distribution_json(std::span<const BoxplotSeries> series);

}  // namespace llmtraffic::stats
