#include "llmtraffic/profiles.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "llmtraffic/error.hpp"

namespace llmtraffic {

namespace {

const std::vector<ModelProfile>& registry() {
  static const std::vector<ModelProfile> models = {
      {"mistral-7b", "MistralAI (open-mistral-7b)", "Mistral", "Sept. 2023", 7.0, 8192, 4096, 0.7, 1.0,
       "MistralAI", "MistralAI", ""},
      {"claude-3-sonnet", "Claude-3-sonnet", "Anthropic", "Mar. 2024", std::nullopt, 200000, 4096, 0.7, 1.0,
       "Claude-3-sonnet-20240229", "Claude-3-sonnet", ""},
      {"llama3.1-70b", "LLaMA3.1-70B", "Meta", "Apr. 2024", 70.0, 128000, 4096, 0.7, 0.9, "llama3.1-70b",
       "llama3.1-70b", ""},
      {"llama3.2-11b-vision", "LLaMA3.2-11B-Vision", "Meta", "Sept. 2024", 11.0, 128000, 4096, 0.7, 0.9,
       "llama3.2-11b-vision", "llama3.2-11b-vision", ""},
      {"qwen-2.5-32b", "Qwen-2.5-32b (Groq)", "Alibaba", "Sept. 2024", 32.0, 128000, 1024, 0.7, 1.0,
       "Qwen-2.5-32b (Groq)", "Qwen-2.5-32b (Groq)", ""},
      {"gpt-3.5-turbo-instruct", "GPT-3.5-turbo-instruct", "OpenAI", "Mar. 2023", 175.0, 16385, 4096, 0.9, 1.0,
       "Openai gpt-4o", "Openai gpt-4o", "traffic tables label the OpenAI row gpt-4o"},
      {"gpt-4o", "Openai gpt-4o", "OpenAI", "", std::nullopt, std::nullopt, 4096, 0.9, 1.0, "Openai gpt-4o",
       "Openai gpt-4o", "traffic-table label; inference settings taken from the OpenAI model-table row"},
      {"deepseek-r1", "DeepSeek R1", "High-Flyer AI", "Jan. 2025", 7.0, 128000, 32768, 0.8, 0.9, "DeepSeek R1",
       "DeepSeek R1", ""},
      {"gemini-pro", "Gemini-pro", "Google", "", std::nullopt, std::nullopt, std::nullopt, 0.7, 1.0,
       std::nullopt, std::nullopt, "named among evaluated models but absent from the settings and traffic tables"},
  };
  return models;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

using stats::TrafficSummary;

// Min, 1st-Q, Median, Avg, 3rd-Q, Max, Sd.
constexpr TrafficSummary row(double mn, double q1, double med, double avg, double q3, double mx, double sd) {
  return {mn, q1, med, avg, q3, mx, sd};
}

const std::array<ReferenceRow, 7> kLocal = {{
    {"MistralAI", row(1094.00, 1714.75, 1895.50, 1961.18, 2143.00, 4873.00, 398.37)},
    {"Claude-3-sonnet-20240229", row(1548.00, 2047.50, 2257.50, 2305.60, 2537.00, 3724.00, 359.68)},
    {"llama3.1-70b", row(1144.00, 1501.50, 1792.00, 1837.18, 2100.75, 7518.00, 464.88)},
    {"llama3.2-11b-vision", row(1191.00, 1810.00, 2074.00, 2131.41, 2350.25, 7558.00, 502.24)},
    {"Qwen-2.5-32b (Groq)", row(1222.00, 1833.00, 2086.50, 2120.99, 2350.25, 4266.00, 389.84)},
    {"Openai gpt-4o", row(1071.00, 1310.00, 1496.50, 1546.78, 1716.25, 2748.00, 297.75)},
    {"DeepSeek R1", row(1184.00, 1536.00, 1664.00, 1702.52, 1828.25, 2660.00, 235.23)},
}};

const std::array<ReferenceRow, 7> kExternal = {{
    {"MistralAI", row(6668.00, 6994.00, 7092.00, 7159.72, 7219.00, 9066.00, 313.28)},
    {"Claude-3-sonnet", row(7461.00, 7713.00, 7803.00, 7834.97, 7916.25, 10074.00, 216.59)},
    // Median equals Avg in the published row; kept as published.
    {"llama3.1-70b", row(6095.00, 6489.75, 6814.16, 6814.16, 7077.25, 7832.00, 338.55)},
    {"llama3.2-11b-vision", row(6673.00, 7074.75, 7202.00, 7239.43, 7323.00, 14412.00, 486.32)},
    {"Qwen-2.5-32b (Groq)", row(7290.00, 7648.75, 7764.00, 7794.98, 7878.25, 9480.00, 250.94)},
    {"Openai gpt-4o", row(7547.00, 7740.00, 7860.00, 7885.38, 8008.00, 8500.00, 179.57)},
    {"DeepSeek R1", row(7433.00, 7971.75, 8214.00, 8419.37, 8580.25, 15901.00, 799.37)},
}};

}  // namespace

void ModelProfile::validate() const {
  if (model_name.empty()) throw Error(ErrorKind::InvalidArgument, "model profile without a name");
  if (temperature < 0) throw Error(ErrorKind::InvalidArgument, model_name + ": temperature < 0");
  if (!(top_p > 0 && top_p <= 1)) throw Error(ErrorKind::InvalidArgument, model_name + ": top_p outside (0, 1]");
  if (max_tokens && context_length && *max_tokens > *context_length) {
    throw Error(ErrorKind::InvalidArgument, model_name + ": max_tokens exceeds context_length");
  }
}

std::span<const ModelProfile> model_registry() { return registry(); }

const ModelProfile& find_model(std::string_view name) {
  const auto key = lower(name);
  for (const auto& m : registry()) {
    if (lower(m.model_name) == key) return m;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown model profile: " + std::string(name));
}

std::span<const ReferenceRow> reference_local_table() { return kLocal; }
std::span<const ReferenceRow> reference_external_table() { return kExternal; }

const ReferenceRow* find_reference_row(std::span<const ReferenceRow> table, std::string_view model) {
  for (const auto& r : table) {
    if (r.model == model) return &r;
  }
  return nullptr;
}

stats::SummaryTable reference_summary_table(flow::CapturePoint point) {
  stats::SummaryTable table;
  table.capture_point = point;
  const auto rows = point == flow::CapturePoint::Local ? reference_local_table() : reference_external_table();
  for (const auto& r : rows) table.rows.push_back({std::string(r.model), r.summary, kReferenceSamplesPerModel});
  return table;
}

}  // namespace llmtraffic
