#include "llmtraffic/stats.hpp"

#include <cmath>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>

#include "doctest.h"
#include "llmtraffic/error.hpp"
#include "llmtraffic/profiles.hpp"

using namespace llmtraffic;
using namespace llmtraffic::stats;

namespace {

// Brute-force reference: insertion sort, type-7 quantile by locating the
// segment of the piecewise-linear curve through ((k)/(n-1), x_(k)), mean and
// sd from long-double power sums.
struct Oracle {
  long double min, q1, median, avg, q3, max, sd;
};

long double oracle_quantile(const std::vector<long double>& x, long double p) {
  const std::size_t n = x.size();
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const long double lo = static_cast<long double>(k) / static_cast<long double>(n - 1);
    const long double hi = static_cast<long double>(k + 1) / static_cast<long double>(n - 1);
    if (p >= lo && p <= hi) return x[k] + (p - lo) / (hi - lo) * (x[k + 1] - x[k]);
  }
  return x.back();
}

Oracle oracle(const std::vector<double>& samples) {
  std::vector<long double> x(samples.begin(), samples.end());
  for (std::size_t i = 1; i < x.size(); ++i) {
    for (std::size_t j = i; j > 0 && x[j - 1] > x[j]; --j) std::swap(x[j - 1], x[j]);
  }
  long double s1 = 0, s2 = 0;
  for (auto v : x) {
    s1 += v;
    s2 += v * v;
  }
  const long double n = static_cast<long double>(x.size());
  const long double var = (s2 - s1 * s1 / n) / (n - 1);
  return {x.front(), oracle_quantile(x, 0.25L), oracle_quantile(x, 0.5L), s1 / n,
          oracle_quantile(x, 0.75L), x.back(), std::sqrt(std::max(var, 0.0L))};
}

bool close_rel(double got, long double want, double rel = 1e-9, double abs_floor = 1e-9) {
  const double w = static_cast<double>(want);
  return std::abs(got - w) <= std::max(rel * std::abs(w), abs_floor);
}

bool matches_oracle(const TrafficSummary& s, const Oracle& o, double abs_floor) {
  return close_rel(s.min, o.min, 1e-9, abs_floor) && close_rel(s.q1, o.q1, 1e-9, abs_floor) &&
         close_rel(s.median, o.median, 1e-9, abs_floor) && close_rel(s.avg, o.avg, 1e-9, abs_floor) &&
         close_rel(s.q3, o.q3, 1e-9, abs_floor) && close_rel(s.max, o.max, 1e-9, abs_floor) &&
         close_rel(s.sd, o.sd, 1e-9, abs_floor);
}

std::vector<TrafficSummary> avg_column(std::span<const ReferenceRow> rows) {
  std::vector<TrafficSummary> out;
  for (const auto& r : rows) out.push_back(r.summary);
  return out;
}

}  // namespace

TEST_CASE("type-7 quartiles on a small list") {
  const std::vector<double> x = {4, 1, 3, 2};
  const auto s = summarize(x);
  CHECK(s.median == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(s.q1 == doctest::Approx(1.75).epsilon(1e-15));
  CHECK(s.q3 == doctest::Approx(3.25).epsilon(1e-15));
  CHECK(s.min == 1);
  CHECK(s.max == 4);
  CHECK(s.avg == 2.5);
}

TEST_CASE("constant data") {
  const std::vector<double> x(5, 5.0);
  const auto s = summarize(x);
  CHECK(s.min == 5);
  CHECK(s.q1 == 5);
  CHECK(s.median == 5);
  CHECK(s.avg == 5);
  CHECK(s.q3 == 5);
  CHECK(s.max == 5);
  CHECK(s.sd == 0);
}

TEST_CASE("too few samples") {
  const std::vector<double> one = {3};
  CHECK_THROWS_AS(summarize(one), Error);
  try {
    summarize(std::span<const double>{});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooFewSamples);
  }
  const std::vector<TrafficSummary> single(1);
  CHECK_THROWS_AS(cross_model_mean(single), Error);
}

TEST_CASE("1000 seeded samples match the brute-force oracle") {
  std::mt19937_64 rng(1000);
  std::vector<double> x;
  for (int i = 0; i < 1000; ++i) x.push_back(static_cast<double>(1000 + rng() % 9000));
  CHECK(matches_oracle(summarize(x), oracle(x), 0));
}

TEST_CASE("exhaustive small lists match the oracle") {
  std::size_t checked = 0;
  std::size_t failures = 0;
  for (std::size_t len = 2; len <= 6; ++len) {
    std::vector<int> digits(len, 0);
    while (true) {
      std::vector<double> x(digits.begin(), digits.end());
      if (!matches_oracle(summarize(x), oracle(x), 1e-12)) ++failures;
      ++checked;
      std::size_t k = 0;
      while (k < len && ++digits[k] > 10) digits[k++] = 0;
      if (k == len) break;
    }
  }
  CHECK(checked == 121 + 1331 + 14641 + 161051 + 1771561);
  CHECK(failures == 0);
}

TEST_CASE("property: permutation, translation and scaling") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(2 + rng() % 50);
    for (auto& v : x) v = static_cast<double>(rng() % 100000) / 7.0;
    const auto base = summarize(x);
    CHECK(base.min <= base.q1);
    CHECK(base.q1 <= base.median);
    CHECK(base.median <= base.q3);
    CHECK(base.q3 <= base.max);
    CHECK(base.min <= base.avg);
    CHECK(base.avg <= base.max);
    CHECK(base.sd >= 0);

    auto perm = x;
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto p = summarize(perm);
    CHECK(p.min == base.min);
    CHECK(p.median == base.median);
    CHECK(p.avg == base.avg);
    CHECK(p.sd == base.sd);

    const double c = static_cast<double>(rng() % 5000) + 0.5;
    auto shifted = x;
    for (auto& v : shifted) v += c;
    const auto t = summarize(shifted);
    CHECK(close_rel(t.min, base.min + c));
    CHECK(close_rel(t.q1, base.q1 + c));
    CHECK(close_rel(t.median, base.median + c));
    CHECK(close_rel(t.avg, base.avg + c));
    CHECK(close_rel(t.q3, base.q3 + c));
    CHECK(close_rel(t.max, base.max + c));
    CHECK(close_rel(t.sd, base.sd, 1e-9, 1e-9 * std::max(1.0, base.sd)));

    const double k = 0.25 + static_cast<double>(rng() % 100);
    auto scaled = x;
    for (auto& v : scaled) v *= k;
    const auto sc = summarize(scaled);
    CHECK(close_rel(sc.q1, base.q1 * k));
    CHECK(close_rel(sc.median, base.median * k));
    CHECK(close_rel(sc.avg, base.avg * k));
    CHECK(close_rel(sc.sd, base.sd * k));
  }
}

TEST_CASE("cross-model mean over the external reference table") {
  const auto col = avg_column(reference_external_table());
  const auto g = cross_model_mean(col);
  CHECK(g.model_count == 7);
  CHECK(std::abs(g.grand_avg - 7592.57) <= 0.01);
  CHECK(std::lround(g.grand_avg) == 7593);
  // Independently computed: sample 545.749, population 505.266, mean sd 369.231.
  CHECK(g.grand_sd == doctest::Approx(545.7491203753574).epsilon(1e-12));
  CHECK(g.population_sd == doctest::Approx(505.2655050766956).epsilon(1e-12));
  CHECK(g.mean_within_sd == doctest::Approx(369.2314285714286).epsilon(1e-12));
  CHECK(grand_sd_diverges(g));
}

TEST_CASE("cross-model mean over the local reference table") {
  const auto g = cross_model_mean(avg_column(reference_local_table()));
  CHECK(std::abs(g.grand_avg - 1943.67) <= 0.5);
}

TEST_CASE("identical summaries give zero spread") {
  TrafficSummary s{1, 2, 3, 4, 5, 6, 7};
  const std::vector<TrafficSummary> two = {s, s};
  const auto g = cross_model_mean(two);
  CHECK(g.grand_avg == 4);
  CHECK(g.grand_sd == 0);
}

TEST_CASE("markdown rendering reproduces the local reference table") {
  const auto md = emit_report(reference_summary_table(flow::CapturePoint::Local), ReportFormat::Markdown);
  const char* published[] = {
      "| MistralAI | 1094.00 | 1714.75 | 1895.50 | 1961.18 | 2143.00 | 4873.00 | 398.37 |",
      "| Claude-3-sonnet-20240229 | 1548.00 | 2047.50 | 2257.50 | 2305.60 | 2537.00 | 3724.00 | 359.68 |",
      "| llama3.1-70b | 1144.00 | 1501.50 | 1792.00 | 1837.18 | 2100.75 | 7518.00 | 464.88 |",
      "| llama3.2-11b-vision | 1191.00 | 1810.00 | 2074.00 | 2131.41 | 2350.25 | 7558.00 | 502.24 |",
      "| Qwen-2.5-32b (Groq) | 1222.00 | 1833.00 | 2086.50 | 2120.99 | 2350.25 | 4266.00 | 389.84 |",
      "| Openai gpt-4o | 1071.00 | 1310.00 | 1496.50 | 1546.78 | 1716.25 | 2748.00 | 297.75 |",
      "| DeepSeek R1 | 1184.00 | 1536.00 | 1664.00 | 1702.52 | 1828.25 | 2660.00 | 235.23 |",
  };
  CHECK(md.rfind("| Model | Min | 1st-Q | Median | Avg | 3rd-Q | Max | Sd |\n", 0) == 0);
  for (const char* row : published) CHECK(md.find(std::string(row) + "\n") != std::string::npos);
}

TEST_CASE("empty table renders header only") {
  SummaryTable empty;
  CHECK(emit_report(empty, ReportFormat::Csv) == "model,min,q1,median,avg,q3,max,sd,sample_count\n");
  const auto md = emit_report(empty, ReportFormat::Markdown);
  CHECK(std::count(md.begin(), md.end(), '\n') == 2);
  CHECK(nlohmann::json::parse(emit_report(empty, ReportFormat::Json))["rows"].empty());
}

TEST_CASE("csv and json renderings carry identical values") {
  SummaryTable table;
  std::mt19937_64 rng(3);
  for (const char* name : {"a", "b,with comma", "c"}) {
    std::vector<double> x(40);
    for (auto& v : x) v = static_cast<double>(rng() % 100000) / 3.0;
    table.rows.push_back({name, summarize(x), x.size()});
  }
  const auto json = nlohmann::json::parse(emit_report(table, ReportFormat::Json));
  std::istringstream csv(emit_report(table, ReportFormat::Csv));
  std::string line;
  std::getline(csv, line);
  for (std::size_t r = 0; std::getline(csv, line); ++r) {
    const auto& j = json["rows"][r];
    // Model names may be quoted; values are the final eight fields.
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line.substr(line.rfind('"') == std::string::npos ? 0 : line.rfind('"') + 1)) {
      if (ch == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    fields.push_back(cur);
    const std::size_t off = fields.size() - 8;
    const char* keys[] = {"min", "q1", "median", "avg", "q3", "max", "sd"};
    for (std::size_t k = 0; k < 7; ++k) CHECK(std::stod(fields[off + k]) == j[keys[k]].get<double>());
    CHECK(std::stoul(fields[off + 7]) == j["sample_count"].get<std::size_t>());
  }
}

TEST_CASE("boxplot whiskers and outliers") {
  std::vector<double> x = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto b = boxplot("m", flow::CapturePoint::Local, x);
  CHECK(b.lower_whisker == 1);
  CHECK(b.upper_whisker == 9);
  CHECK(b.outliers.empty());

  x.push_back(100);
  b = boxplot("m", flow::CapturePoint::External, x);
  REQUIRE(b.outliers.size() == 1);
  CHECK(b.outliers[0] == 100);
  CHECK(b.upper_whisker == 9);
  CHECK(b.max == 100);
}

TEST_CASE("distribution export agrees with summarize") {
  std::mt19937_64 rng(11);
  std::vector<DistributionInput> inputs;
  for (const char* model : {"mistral-7b", "deepseek-r1"}) {
    for (auto point : {flow::CapturePoint::Local, flow::CapturePoint::External}) {
      DistributionInput in{model, point, {}};
      for (int i = 0; i < 300; ++i) in.samples.push_back(static_cast<double>(1500 + rng() % 800));
      inputs.push_back(std::move(in));
    }
  }
  const auto series = export_distribution(inputs);
  REQUIRE(series.size() == inputs.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto s = summarize(inputs[i].samples);
    CHECK(series[i].min == s.min);
    CHECK(series[i].q1 == s.q1);
    CHECK(series[i].median == s.median);
    CHECK(series[i].q3 == s.q3);
    CHECK(series[i].max == s.max);
  }
  const auto doc = nlohmann::json::parse(distribution_json(series));
  CHECK(doc["series"].size() == 4);
  CHECK(doc["series"][1]["capture_point"] == "external");
}
