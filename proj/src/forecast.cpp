#include "llmtraffic/forecast.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "llmtraffic/error.hpp"

namespace llmtraffic::forecast {

namespace {

constexpr std::array<std::string_view, 9> kPrefixes = {"B", "kB", "MB", "GB", "TB", "PB", "EB", "ZB", "YB"};

ByteCount pow1000(std::size_t p) {
  ByteCount v = 1;
  for (std::size_t i = 0; i < p; ++i) v *= 1000;
  return v;
}

ByteCount checked_mul(ByteCount a, ByteCount b) {
  ByteCount out = 0;
  if (__builtin_mul_overflow(a, b, &out)) throw Error(ErrorKind::InvalidArgument, "byte count overflow");
  return out;
}

std::string with_commas(std::uint64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

std::uint64_t json_bytes(const nlohmann::json& j) {
  if (j.is_string()) {
    const ByteCount b = parse_si_bytes(j.get<std::string>());
    if (b > std::numeric_limits<std::uint64_t>::max()) throw Error(ErrorKind::InvalidArgument, "exchange size too large");
    return static_cast<std::uint64_t>(b);
  }
  return j.get<std::uint64_t>();
}

}  // namespace

std::string to_decimal(ByteCount value) {
  if (value == 0) return "0";
  std::string out;
  while (value > 0) {
    out += static_cast<char>('0' + static_cast<int>(value % 10));
    value /= 10;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::string format_si_bytes(ByteCount bytes) {
  std::size_t p = 0;
  while (p + 1 < kPrefixes.size() && bytes >= pow1000(p + 1)) ++p;
  const ByteCount unit = pow1000(p);
  std::string out = to_decimal(bytes / unit);
  if (p > 0) {
    std::string frac = to_decimal(bytes % unit);
    frac.insert(0, 3 * p - frac.size(), '0');
    while (!frac.empty() && frac.back() == '0') frac.pop_back();
    if (!frac.empty()) out += "." + frac;
  }
  return out + " " + std::string(kPrefixes[p]);
}

ByteCount parse_si_bytes(std::string_view text) {
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
  };
  skip_ws();
  std::string int_part;
  std::string frac_part;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) int_part += text[i++];
  if (i < text.size() && text[i] == '.') {
    ++i;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) frac_part += text[i++];
  }
  if (int_part.empty() && frac_part.empty()) {
    throw Error(ErrorKind::InvalidArgument, "no number in byte quantity: " + std::string(text));
  }
  skip_ws();
  std::string unit(text.substr(i));
  while (!unit.empty() && std::isspace(static_cast<unsigned char>(unit.back()))) unit.pop_back();
  std::size_t p = 0;
  if (!unit.empty()) {
    std::string u = unit;
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
    if (u.size() == 1 && u != "B") u += "B";
    auto it = std::find_if(kPrefixes.begin(), kPrefixes.end(), [&](std::string_view pf) {
      std::string up(pf);
      std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
      return up == u;
    });
    if (it == kPrefixes.end()) throw Error(ErrorKind::InvalidArgument, "unknown byte unit: " + unit);
    p = static_cast<std::size_t>(it - kPrefixes.begin());
  }
  while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();
  if (frac_part.size() > 3 * p) {
    throw Error(ErrorKind::InvalidArgument, "not a whole number of bytes: " + std::string(text));
  }
  ByteCount value = 0;
  for (char c : int_part) value = checked_mul(value, 10) + static_cast<unsigned>(c - '0');
  value = checked_mul(value, pow1000(p));
  ByteCount frac = 0;
  for (char c : frac_part) frac = frac * 10 + static_cast<unsigned>(c - '0');
  ByteCount frac_scale = 1;
  for (std::size_t k = frac_part.size(); k < 3 * p; ++k) frac_scale *= 10;
  return value + frac * frac_scale;
}

TrafficFigure TrafficFigure::monthly() const {
  if (period == Period::Month) return *this;
  return {checked_mul(bytes, kDaysPerMonth), Period::Month};
}

void ForecastScenario::validate() const {
  if (users == 0 || avg_exchange_bytes == 0 || queries_per_user_per_day == 0) {
    throw Error(ErrorKind::InvalidArgument, "forecast scenario '" + label + "' needs all parameters > 0");
  }
}

std::vector<ForecastScenario> paper_default_scenarios() {
  return {
      {"short", 500'000'000, 7'500, 1},
      {"medium", 1'000'000'000, 1'000'000, 100},
      {"long", 2'000'000'000, 50'000'000, 1'000},
  };
}

std::vector<ForecastScenario> parse_scenarios(std::string_view json_text) {
  std::vector<ForecastScenario> out;
  try {
    const auto doc = nlohmann::json::parse(json_text);
    nlohmann::json arr = doc.is_object() && doc.contains("scenarios") ? doc["scenarios"] : doc;
    if (arr.is_object()) arr = nlohmann::json::array({arr});
    if (!arr.is_array()) throw Error(ErrorKind::MalformedRecord, "scenario file must hold a JSON array");
    for (const auto& j : arr) {
      ForecastScenario s;
      s.label = j.value("label", "custom");
      s.users = j.at("users").get<std::uint64_t>();
      s.avg_exchange_bytes = json_bytes(j.at("avg_exchange_bytes"));
      s.queries_per_user_per_day = j.at("queries_per_user_per_day").get<std::uint64_t>();
      s.validate();
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::MalformedRecord, std::string("scenario file: ") + ex.what());
  }
  return out;
}

std::vector<ForecastScenario> load_scenarios(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::FileUnreadable, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenarios(ss.str());
}

TrafficFigure scenario_traffic(const ForecastScenario& s) {
  s.validate();
  const ByteCount product = checked_mul(checked_mul(s.users, s.avg_exchange_bytes), s.queries_per_user_per_day);
  return {product, Period::Day};
}

void GrowthAssumption::validate() const {
  if (!(rate > -1)) throw Error(ErrorKind::InvalidArgument, "growth rate must be > -1");
}

double GrowthAssumption::annual_factor() const {
  return period == GrowthPeriod::Month ? std::pow(1 + rate, 12) : 1 + rate;
}

std::vector<double> project_growth(double initial, const GrowthAssumption& growth, std::size_t horizon) {
  growth.validate();
  std::vector<double> series;
  series.reserve(horizon + 1);
  for (std::size_t k = 0; k <= horizon; ++k) {
    series.push_back(initial * std::pow(1 + growth.rate, static_cast<double>(k)));
  }
  return series;
}

double share_of_internet(const TrafficFigure& traffic, ByteCount internet_monthly_bytes) {
  if (internet_monthly_bytes == 0) throw Error(ErrorKind::InvalidArgument, "internet monthly bytes must be > 0");
  return static_cast<double>(static_cast<long double>(traffic.monthly().bytes) /
                             static_cast<long double>(internet_monthly_bytes));
}

std::string format_count(std::uint64_t value) {
  if (value >= 1'000'000'000 && value % 1'000'000'000 == 0) return std::to_string(value / 1'000'000'000) + "B";
  if (value >= 1'000'000 && value % 1'000'000 == 0) return std::to_string(value / 1'000'000) + "M";
  return with_commas(value);
}

std::vector<ForecastRow> build_forecast(std::span<const ForecastScenario> scenarios,
                                        std::optional<ByteCount> internet_monthly_bytes) {
  std::vector<ForecastRow> rows;
  for (const auto& s : scenarios) {
    ForecastRow r{s, scenario_traffic(s), {}, std::nullopt};
    r.monthly = r.daily.monthly();
    if (internet_monthly_bytes) r.share_of_internet = share_of_internet(r.monthly, *internet_monthly_bytes);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string forecast_markdown(std::span<const ForecastRow> rows) {
  auto line = [&](std::string_view head, auto&& cell) {
    std::string out = "| " + std::string(head) + " |";
    for (const auto& r : rows) out += " " + cell(r) + " |";
    return out + "\n";
  };
  std::string out = line("", [](const ForecastRow& r) { return r.scenario.label; });
  out += "|---|";
  for (std::size_t i = 0; i < rows.size(); ++i) out += "---|";
  out += "\n";
  out += line("Number of Users", [](const ForecastRow& r) { return format_count(r.scenario.users); });
  out += line("Avg. Response [Bytes]",
              [](const ForecastRow& r) { return format_si_bytes(r.scenario.avg_exchange_bytes); });
  out += line("Usage [queries/user/day]",
              [](const ForecastRow& r) { return with_commas(r.scenario.queries_per_user_per_day); });
  out += line("Total Monthly traffic (published label; per-day product)",
              [](const ForecastRow& r) { return r.daily.human_readable(); });
  out += line("Monthly traffic (30 x daily)", [](const ForecastRow& r) { return r.monthly.human_readable(); });
  const bool has_share = std::any_of(rows.begin(), rows.end(), [](const ForecastRow& r) { return r.share_of_internet; });
  if (has_share) {
    out += line("Share of Internet (monthly)", [](const ForecastRow& r) {
      return r.share_of_internet ? fmt::format("{:.6g}", *r.share_of_internet) : std::string("-");
    });
  }
  return out;
}

std::string forecast_json(std::span<const ForecastRow> rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {
        {"label", r.scenario.label},
        {"users", r.scenario.users},
        {"avg_exchange_bytes", r.scenario.avg_exchange_bytes},
        {"queries_per_user_per_day", r.scenario.queries_per_user_per_day},
        {"daily_bytes", to_decimal(r.daily.bytes)},
        {"daily_human", r.daily.human_readable()},
        {"published_label_total_monthly_human", r.daily.human_readable()},
        {"monthly_bytes", to_decimal(r.monthly.bytes)},
        {"monthly_human", r.monthly.human_readable()},
        {"days_per_month", kDaysPerMonth},
    };
    if (r.share_of_internet) j["share_of_internet"] = *r.share_of_internet;
    arr.push_back(std::move(j));
  }
  return nlohmann::json{{"scenarios", arr}}.dump(2) + "\n";
}

std::string forecast_csv(std::span<const ForecastRow> rows) {
  const bool has_share = std::any_of(rows.begin(), rows.end(), [](const ForecastRow& r) { return r.share_of_internet; });
  std::string out = "label,users,avg_exchange_bytes,queries_per_user_per_day,daily_bytes,daily_human,monthly_bytes,monthly_human";
  out += has_share ? ",share_of_internet\n" : "\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{},{},{}", r.scenario.label, r.scenario.users, r.scenario.avg_exchange_bytes,
                       r.scenario.queries_per_user_per_day, to_decimal(r.daily.bytes), r.daily.human_readable(),
                       to_decimal(r.monthly.bytes), r.monthly.human_readable());
    if (has_share) out += r.share_of_internet ? fmt::format(",{:.6g}", *r.share_of_internet) : std::string(",");
    out += "\n";
  }
  return out;
}

}  // namespace llmtraffic::forecast
