#include "llmtraffic/mock_backend.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "llmtraffic/error.hpp"

namespace llmtraffic::mock {

namespace {

double pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi); }
double cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

struct Moments {
  double mean;
  double sd;
};

Moments truncated_moments(double mu, double sigma, double a, double b) {
  if (sigma <= 0) return {std::clamp(mu, a, b), 0};
  const double alpha = (a - mu) / sigma;
  const double beta = (b - mu) / sigma;
  const double z = cdf(beta) - cdf(alpha);
  if (z < 1e-300) return {mu < a ? a : b, 0};
  const double ratio = (pdf(alpha) - pdf(beta)) / z;
  const double var = sigma * sigma * (1 + (alpha * pdf(alpha) - beta * pdf(beta)) / z - ratio * ratio);
  return {mu + sigma * ratio, std::sqrt(std::max(var, 0.0))};
}

enum class Stream : std::uint32_t { Size = 1, Delay = 2, Text = 3 };

std::mt19937_64 engine_for(std::uint64_t seed, std::int64_t query_id, Stream stream) {
  const auto q = static_cast<std::uint64_t>(query_id);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(q), static_cast<std::uint32_t>(q >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

// Bit-level conversions so draws do not depend on the standard library's
// distribution implementations.
double unit_uniform(std::mt19937_64& eng) { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }

double standard_normal(std::mt19937_64& eng) {
  const double u1 = 1.0 - unit_uniform(eng);  // (0, 1]
  const double u2 = unit_uniform(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
}

constexpr std::array<std::string_view, 24> kWords = {
    "the",   "answer", "is",    "so",     "we",    "add",  "then",  "total", "each", "per",   "step",   "first",
    "next", "result", "apples", "friends", "hours", "miles", "sold",  "left",  "more", "times", "equals", "dollars"};

}  // namespace

SizeDistribution SizeDistribution::fit(double mean, double sd, double min, double max) {
  SizeDistribution d{mean, sd, min, max, mean, sd};
  if (sd == 0 || !(min < max)) {
    d.scale = 0;
    return d;
  }
  double best_err = INFINITY;
  double best_mu = mean;
  double best_sigma = sd;
  double mu = mean;
  double sigma = sd;
  for (int iter = 0; iter < 500; ++iter) {
    const auto m = truncated_moments(mu, sigma, min, max);
    const double err = std::abs(m.mean - mean) + std::abs(m.sd - sd);
    if (err < best_err) {
      best_err = err;
      best_mu = mu;
      best_sigma = sigma;
    }
    if (err < 1e-9 * std::max(1.0, mean)) break;
    mu += mean - m.mean;
    if (m.sd > 0) sigma *= std::clamp(sd / m.sd, 0.5, 2.0);
    if (iter >= 50) break;
  }
  // Newton with a finite-difference Jacobian finishes near the truncation
  // bounds, where the fixed-point step crawls.
  auto residual = [&](double u, double s) {
    const auto m = truncated_moments(u, s, min, max);
    return std::array<double, 2>{m.mean - mean, m.sd - sd};
  };
  for (int iter = 0; iter < 100 && best_err >= 1e-9 * std::max(1.0, mean); ++iter) {
    const double h = 1e-6 * best_sigma;
    const auto r = residual(best_mu, best_sigma);
    const auto du = residual(best_mu + h, best_sigma);
    const auto ds = residual(best_mu, best_sigma + h);
    const double j11 = (du[0] - r[0]) / h, j12 = (ds[0] - r[0]) / h;
    const double j21 = (du[1] - r[1]) / h, j22 = (ds[1] - r[1]) / h;
    const double det = j11 * j22 - j12 * j21;
    if (det == 0 || !std::isfinite(det)) break;
    const double step_mu = (r[0] * j22 - r[1] * j12) / det;
    const double step_sigma = (r[1] * j11 - r[0] * j21) / det;
    bool improved = false;
    for (double t = 1; t > 1e-4; t /= 2) {
      const double u = best_mu - t * step_mu;
      const double sg = best_sigma - t * step_sigma;
      if (!(sg > 0)) continue;
      const auto rr = residual(u, sg);
      const double err = std::abs(rr[0]) + std::abs(rr[1]);
      if (err < best_err) {
        best_err = err;
        best_mu = u;
        best_sigma = sg;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  d.location = best_mu;
  d.scale = best_sigma;
  return d;
}

double SizeDistribution::truncated_mean() const { return truncated_moments(location, scale, min, max).mean; }
double SizeDistribution::truncated_sd() const { return truncated_moments(location, scale, min, max).sd; }

void SizeDistribution::validate() const {
  if (!(min <= mean && mean <= max)) throw Error(ErrorKind::InvalidArgument, "size distribution needs min <= mean <= max");
  if (sd < 0) throw Error(ErrorKind::InvalidArgument, "size distribution needs sd >= 0");
}

void MockBackendConfig::validate() const {
  response_size_distribution.validate();
  for (const auto& [name, d] : per_model) d.validate();
  if (response_delay_distribution && response_delay_distribution->mean_ms < 0) {
    throw Error(ErrorKind::InvalidArgument, "response delay mean must be >= 0");
  }
}

const SizeDistribution& MockBackendConfig::distribution_for(std::string_view model_name) const {
  const auto it = per_model.find(std::string(model_name));
  return it == per_model.end() ? response_size_distribution : it->second;
}

SizeDistribution calibrated_distribution(const ReferenceRow& row) {
  const auto overhead = static_cast<double>(kLocalProtocolOverheadBytes);
  const auto& s = row.summary;
  return SizeDistribution::fit(s.avg - overhead, s.sd, std::max(0.0, s.min - overhead), s.max - overhead);
}

MockBackendConfig MockBackendConfig::calibrated(std::uint64_t seed) {
  MockBackendConfig cfg;
  cfg.seed = seed;
  for (const auto& model : model_registry()) {
    if (!model.local_reference_row) continue;
    if (const auto* row = find_reference_row(reference_local_table(), *model.local_reference_row)) {
      cfg.per_model.emplace(model.model_name, calibrated_distribution(*row));
    }
  }
  return cfg;
}

std::uint64_t envelope_bytes(std::int64_t query_id) {
  return nlohmann::json{{"answer", ""}, {"id", query_id}}.dump().size();
}

std::uint64_t draw_response_size(const MockBackendConfig& cfg, const ModelProfile& model, std::int64_t query_id) {
  const auto& d = cfg.distribution_for(model.model_name);
  const auto lo = static_cast<std::uint64_t>(std::ceil(std::max(0.0, d.min)));
  const auto hi = static_cast<std::uint64_t>(std::floor(std::max(0.0, d.max)));
  double x = d.location;
  if (d.scale > 0) {
    auto eng = engine_for(cfg.seed, query_id, Stream::Size);
    // Rejection sampling; the fit keeps acceptance high for tabulated rows.
    for (int tries = 0; tries < 100000; ++tries) {
      x = d.location + d.scale * standard_normal(eng);
      if (x >= d.min && x <= d.max) break;
    }
  }
  auto size = static_cast<std::uint64_t>(std::llround(std::clamp(x, static_cast<double>(lo), static_cast<double>(hi))));
  if (model.max_tokens) size = std::min<std::uint64_t>(size, *model.max_tokens * kBytesPerToken);
  return size;
}

double draw_response_delay_ms(const MockBackendConfig& cfg, std::int64_t query_id) {
  if (!cfg.response_delay_distribution) return 0;
  auto eng = engine_for(cfg.seed, query_id, Stream::Delay);
  const auto& d = *cfg.response_delay_distribution;
  return std::max(0.0, d.mean_ms + d.jitter_ms * (2 * unit_uniform(eng) - 1));
}

std::string mock_llm_respond(std::int64_t query_id, std::string_view /*prompt*/, const MockBackendConfig& cfg,
                             const ModelProfile& model) {
  const std::uint64_t target = std::max(draw_response_size(cfg, model, query_id), envelope_bytes(query_id));
  const std::uint64_t text_len = target - envelope_bytes(query_id);
  std::string text;
  text.reserve(text_len + 16);
  auto eng = engine_for(cfg.seed, query_id, Stream::Text);
  while (text.size() < text_len) {
    if (!text.empty()) text += ' ';
    text += kWords[eng() % kWords.size()];
  }
  text.resize(text_len);
  if (!text.empty() && text.back() == ' ') text.back() = '.';
  return nlohmann::json{{"answer", text}, {"id", query_id}}.dump();
}

}  // namespace llmtraffic::mock
