#include "llmtraffic/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "llmtraffic/error.hpp"

namespace llmtraffic::stats {

namespace {

double mean_of(std::span<const double> xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sum_sq_dev(std::span<const double> xs, double mean) {
  double acc = 0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return acc;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

}  // namespace

double quantile_type7(std::span<const double> sorted, double p) {
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

TrafficSummary summarize(std::span<const double> samples) {
  if (samples.size() < 2) {
    throw Error(ErrorKind::TooFewSamples,
                "summarize needs at least 2 samples, got " + std::to_string(samples.size()));
  }
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  TrafficSummary s;
  s.min = sorted.front();
  s.max = sorted.back();
  s.q1 = quantile_type7(sorted, 0.25);
  s.median = quantile_type7(sorted, 0.5);
  s.q3 = quantile_type7(sorted, 0.75);
  // Summing in sorted order keeps the result independent of input order.
  s.avg = std::clamp(mean_of(sorted), s.min, s.max);
  s.sd = std::sqrt(sum_sq_dev(sorted, s.avg) / static_cast<double>(sorted.size() - 1));
  return s;
}

GrandMean cross_model_mean(std::span<const TrafficSummary> summaries) {
  if (summaries.size() < 2) {
    throw Error(ErrorKind::TooFewSamples, "cross-model mean needs at least 2 summaries");
  }
  std::vector<double> avgs;
  for (const auto& s : summaries) avgs.push_back(s.avg);
  GrandMean g;
  g.model_count = avgs.size();
  g.grand_avg = mean_of(avgs);
  const double ss = sum_sq_dev(avgs, g.grand_avg);
  g.grand_sd = std::sqrt(ss / static_cast<double>(avgs.size() - 1));
  g.population_sd = std::sqrt(ss / static_cast<double>(avgs.size()));
  double sd_sum = 0;
  for (const auto& s : summaries) sd_sum += s.sd;
  g.mean_within_sd = sd_sum / static_cast<double>(summaries.size());
  return g;
}

bool grand_sd_diverges(const GrandMean& g, double tolerance) {
  return std::abs(g.grand_sd - kPublishedGrandSd) > tolerance;
}

SummaryTable summarize_exchanges(std::span<const flow::QueryExchange> exchanges, flow::CapturePoint point) {
  SummaryTable table;
  table.capture_point = point;
  std::vector<std::string> order;
  std::vector<std::vector<double>> samples;
  for (const auto& x : exchanges) {
    const bool present = point == flow::CapturePoint::Local ? x.local_stream_index.has_value()
                                                            : x.external_stream_index.has_value();
    if (!present) continue;
    auto it = std::find(order.begin(), order.end(), x.model_profile_name);
    if (it == order.end()) {
      order.push_back(x.model_profile_name);
      samples.emplace_back();
      it = order.end() - 1;
    }
    const auto bytes = point == flow::CapturePoint::Local ? x.local_total_bytes : x.external_total_bytes;
    samples[static_cast<std::size_t>(it - order.begin())].push_back(static_cast<double>(bytes));
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    table.rows.push_back({order[i], summarize(samples[i]), samples[i].size()});
  }
  return table;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "csv") return ReportFormat::Csv;
  if (name == "json") return ReportFormat::Json;
  if (name == "markdown" || name == "md") return ReportFormat::Markdown;
  throw Error(ErrorKind::InvalidArgument, "unknown report format: " + std::string(name));
}

std::string emit_report(const SummaryTable& table, ReportFormat format) {
  std::string out;
  switch (format) {
    case ReportFormat::Csv:
      out = "model,min,q1,median,avg,q3,max,sd,sample_count\n";
      for (const auto& r : table.rows) {
        const auto& s = r.summary;
        const bool quote = r.model_name.find(',') != std::string::npos;
        const std::string name = quote ? "\"" + r.model_name + "\"" : r.model_name;
        out += fmt::format("{},{:.2f},{:.2f},{:.2f},{:.2f},{:.2f},{:.2f},{:.2f},{}\n", name, s.min, s.q1, s.median,
                           s.avg, s.q3, s.max, s.sd, r.sample_count);
      }
      break;
    case ReportFormat::Json: {
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& r : table.rows) {
        const auto& s = r.summary;
        rows.push_back({{"model", r.model_name},
                        {"min", round2(s.min)},
                        {"q1", round2(s.q1)},
                        {"median", round2(s.median)},
                        {"avg", round2(s.avg)},
                        {"q3", round2(s.q3)},
                        {"max", round2(s.max)},
                        {"sd", round2(s.sd)},
                        {"sample_count", r.sample_count}});
      }
      nlohmann::json doc = {{"capture_point", std::string(flow::to_string(table.capture_point))},
                            {"columns", {"Min", "1st-Q", "Median", "Avg", "3rd-Q", "Max", "Sd"}},
                            {"unit", "bytes"},
                            {"rows", rows}};
      out = doc.dump(2) + "\n";
      break;
    }
    case ReportFormat::Markdown:
      out = "| Model | Min | 1st-Q | Median | Avg | 3rd-Q | Max | Sd |\n";
      out += "|---|---|---|---|---|---|---|---|\n";
      for (const auto& r : table.rows) {
        const auto& s = r.summary;
        out += fmt::format("| {} | {:.2f} | {:.2f} | {:.2f} | {:.2f} | {:.2f} | {:.2f} | {:.2f} |\n", r.model_name,
                           s.min, s.q1, s.median, s.avg, s.q3, s.max, s.sd);
      }
      break;
  }
  return out;
}

BoxplotSeries boxplot(std::string model_name, flow::CapturePoint point, std::span<const double> samples) {
  if (samples.empty()) throw Error(ErrorKind::TooFewSamples, "boxplot of an empty sample set");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  BoxplotSeries b;
  b.model_name = std::move(model_name);
  b.capture_point = point;
  b.sample_count = sorted.size();
  b.min = sorted.front();
  b.max = sorted.back();
  b.q1 = quantile_type7(sorted, 0.25);
  b.median = quantile_type7(sorted, 0.5);
  b.q3 = quantile_type7(sorted, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr;
  const double hi_fence = b.q3 + 1.5 * iqr;
  b.lower_whisker = b.q1;
  b.upper_whisker = b.q3;
  for (double x : sorted) {
    if (x < lo_fence || x > hi_fence) {
      b.outliers.push_back(x);
      continue;
    }
    b.lower_whisker = std::min(b.lower_whisker, x);
    b.upper_whisker = std::max(b.upper_whisker, x);
  }
  return b;
}

std::vector<BoxplotSeries> export_distribution(std::span<const DistributionInput> inputs) {
  std::vector<BoxplotSeries> out;
  for (const auto& in : inputs) out.push_back(boxplot(in.model_name, in.capture_point, in.samples));
  return out;
}

std::string distribution_json(std::span<const BoxplotSeries> series) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& b : series) {
    arr.push_back({{"model", b.model_name},
                   {"capture_point", std::string(flow::to_string(b.capture_point))},
                   {"n", b.sample_count},
                   {"min", b.min},
                   {"q1", b.q1},
                   {"median", b.median},
                   {"q3", b.q3},
                   {"max", b.max},
                   {"whisker_low", b.lower_whisker},
                   {"whisker_high", b.upper_whisker},
                   {"outliers", b.outliers}});
  }
  return nlohmann::json{{"whisker_rule", "1.5*IQR"}, {"quantiles", "type7"}, {"series", arr}}.dump(2) + "\n";
}

}  // namespace llmtraffic::stats
