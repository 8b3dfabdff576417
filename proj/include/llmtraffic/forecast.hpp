#pragma once

// Three-parameter traffic forecast (users x bytes per exchange x queries
// per user per day) with exact wide-integer byte arithmetic.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace llmtraffic::forecast {

// Values reach 1e20 bytes and beyond, past uint64.
using ByteCount = unsigned __int128;

std::string to_decimal(ByteCount value);

// Exact decimal SI rendering at powers of 1000, e.g. "3.75 TB", "100 EB".
std::string format_si_bytes(ByteCount bytes);
// Accepts "400EB", "7.5 kB", "3.75 TB", "512"; throws Error{InvalidArgument}
// when the value is not a whole number of bytes.
ByteCount parse_si_bytes(std::string_view text);

enum class Period { Day, Month };

inline constexpr std::uint32_t kDaysPerMonth = 30;

struct TrafficFigure {
  ByteCount bytes = 0;
  Period period = Period::Day;

  std::string human_readable() const { return format_si_bytes(bytes); }
  TrafficFigure monthly() const;
};

struct ForecastScenario {
  std::string label;
  std::uint64_t users = 0;
  std::uint64_t avg_exchange_bytes = 0;
  std::uint64_t queries_per_user_per_day = 0;

  void validate() const;
};

std::vector<ForecastScenario> paper_default_scenarios();
std::vector<ForecastScenario> load_scenarios(const std::filesystem::path& path);
std::vector<ForecastScenario> parse_scenarios(std::string_view json_text);

// Per-day product; throws Error{InvalidArgument} on invalid input or overflow.
TrafficFigure scenario_traffic(const ForecastScenario& scenario);

enum class GrowthQuantity { Users, QueriesPerDay, Visits };
enum class GrowthPeriod { Month, Year };

struct GrowthAssumption {
  GrowthQuantity quantity = GrowthQuantity::Users;
  double rate = 0;  // fraction per period, > -1
  GrowthPeriod period = GrowthPeriod::Month;

  void validate() const;
  // Compounded factor over one year (12 monthly periods or one yearly).
  double annual_factor() const;
};

// value_k = initial * (1 + rate)^k for k = 0..horizon.
std::vector<double> project_growth(double initial, const GrowthAssumption& growth, std::size_t horizon);

// Day figures convert to month at kDaysPerMonth.
double share_of_internet(const TrafficFigure& traffic, ByteCount internet_monthly_bytes);

inline constexpr std::string_view kInternetMonthly2025 = "400 EB";

// Matches the model-site convention: 500M, 1B, 2B.
std::string format_count(std::uint64_t value);

struct ForecastRow {
  ForecastScenario scenario;
  TrafficFigure daily;
  TrafficFigure monthly;
  std::optional<double> share_of_internet;  // of the monthly figure
};

std::vector<ForecastRow> build_forecast(std::span<const ForecastScenario> scenarios,
                                        std::optional<ByteCount> internet_monthly_bytes);

std::string forecast_markdown(std::span<const ForecastRow> rows);
std::string forecast_json(std::span<const ForecastRow> rows);
std::string forecast_csv(std::span<const ForecastRow> rows);

}  // namespace llmtraffic::forecast
