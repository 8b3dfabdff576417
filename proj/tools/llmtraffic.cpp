// Command-line entry point: run, analyze, summarize, forecast, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "llmtraffic/analysis.hpp"
#include "llmtraffic/error.hpp"
#include "llmtraffic/flow.hpp"
#include "llmtraffic/forecast.hpp"
#include "llmtraffic/harness.hpp"
#include "llmtraffic/profiles.hpp"
#include "llmtraffic/stats.hpp"

using namespace llmtraffic;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitMismatch = 3;
constexpr int kExitCaptureUnavailable = 4;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::InvalidArgument:
    case ErrorKind::FileUnreadable:
    case ErrorKind::InsufficientRecords:
      return kExitConfig;
    case ErrorKind::CountMismatch:
    case ErrorKind::MalformedRecord:
    case ErrorKind::UnknownMagic:
    case ErrorKind::TruncatedHeader:
    case ErrorKind::TooFewSamples:
      return kExitMismatch;
    case ErrorKind::CaptureUnavailable:
      return kExitCaptureUnavailable;
    case ErrorKind::ConnectionRefused:
      return kExitFailure;
  }
  return kExitFailure;
}

// One JSON object per line on stderr.
int report_error(std::string_view kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"exit_code", code}, {"message", message}}}}.dump() << std::endl;
  return code;
}

int report_error(const Error& ex) { return report_error(to_string(ex.kind()), ex.what(), exit_code_for(ex.kind())); }

void warn(const std::string& message) { std::cerr << json{{"warning", message}}.dump() << std::endl; }

struct Globals {
  std::string config_path;
  std::string out = "out";
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string format = "markdown";
  json config = json::object();
};

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::Config, "config " + path + ": " + ex.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::Config, "config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "out" && key != "seed" && key != "format" && key != "run" && key != "analyze" && key != "forecast") {
      throw Error(ErrorKind::Config, "unknown config key '" + key + "'");
    }
  }
  return j;
}

template <typename T>
T section_value(const json& cfg, std::string_view section, std::string_view key, T fallback) {
  const auto s = cfg.find(section);
  if (s == cfg.end() || !s->is_object()) return fallback;
  const auto it = s->find(key);
  if (it == s->end()) return fallback;
  try {
    return it->template get<T>();
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::Config, fmt::format("config {}.{}: {}", section, key, ex.what()));
  }
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::FileUnreadable, "cannot write " + path.string());
  out << text;
}

std::string extension(stats::ReportFormat f) {
  switch (f) {
    case stats::ReportFormat::Csv: return "csv";
    case stats::ReportFormat::Json: return "json";
    case stats::ReportFormat::Markdown: return "md";
  }
  return "txt";
}

// ---- run ----

struct RunOptions {
  bool mock = false;
  bool live = false;
  std::size_t prompts = 0;
  std::string dataset;
  std::vector<std::string> capture;
  std::string model;
  bool tls = false;
  std::string run_id;
  std::string url;
  std::string credential_env;
  std::string listen_address;
  std::uint16_t listen_port = 0;
  double timeout_s = 0;
  bool no_measurement = false;
};

int cmd_run(const Globals& g, const RunOptions& o, const CLI::App& sub) {
  harness::RunConfig cfg;
  if (g.config.contains("run")) harness::apply_run_config(g.config["run"], cfg);
  auto given = [&](const char* name) { return sub.count(name) > 0; };
  if (o.live) cfg.upstream = harness::UpstreamKind::Live;
  if (o.mock) cfg.upstream = harness::UpstreamKind::Mock;
  if (given("--prompts")) cfg.prompt_count = o.prompts;
  if (given("--dataset")) cfg.dataset_path = o.dataset;
  if (given("--capture")) {
    cfg.capture_points = {};
    for (const auto& c : o.capture) {
      if (c == "local") cfg.capture_points.local = true;
      else if (c == "external") cfg.capture_points.external = true;
      else if (c != "none") throw Error(ErrorKind::Config, "unknown capture point " + c);
    }
  }
  if (given("--model")) cfg.model_profile_name = o.model;
  if (given("--tls")) cfg.tls = true;
  if (given("--run-id")) cfg.run_id = o.run_id;
  if (given("--url")) cfg.live.url = o.url;
  if (given("--credential-env")) cfg.live.credential_env = o.credential_env;
  if (given("--listen-address")) cfg.listen_address = o.listen_address;
  if (given("--listen-port")) cfg.listen_port = o.listen_port;
  if (given("--timeout")) cfg.upstream_timeout_s = o.timeout_s;
  if (given("--no-measurement")) cfg.measurement_mode = false;
  if (g.seed_given) cfg.seed = g.seed;
  cfg.out_dir = g.out;

  const auto art = harness::run_experiment(cfg);
  for (const auto& w : art.warnings) warn(w);
  std::cout << "run_id: " << art.run_id << "\n";
  std::cout << "directory: " << art.directory.string() << "\n";
  std::cout << "query_log: " << art.query_log.string() << " (" << read_query_log(art.query_log).size()
            << " entries)\n";
  if (art.local_capture) std::cout << "local_capture: " << art.local_capture->string() << "\n";
  if (art.external_capture) std::cout << "external_capture: " << art.external_capture->string() << "\n";
  std::cout << "manifest: " << art.manifest.string() << "\n";
  if (art.capture_unavailable) {
    return report_error("CaptureUnavailable", "run finished log-only; see warnings", kExitCaptureUnavailable);
  }
  return kExitOk;
}

// ---- analyze ----

struct AnalyzeOptions {
  std::string run_dir;
  std::string log;
  std::string local;
  std::string external;
  std::uint16_t local_port = 0;
  std::uint16_t external_port = 0;
};

int cmd_analyze(const Globals& g, AnalyzeOptions o, const CLI::App& sub) {
  const auto& c = g.config;
  if (!sub.count("--run")) o.run_dir = section_value<std::string>(c, "analyze", "run", o.run_dir);
  if (!sub.count("--log")) o.log = section_value<std::string>(c, "analyze", "log", o.log);
  if (!sub.count("--local")) o.local = section_value<std::string>(c, "analyze", "local", o.local);
  if (!sub.count("--external")) o.external = section_value<std::string>(c, "analyze", "external", o.external);
  if (!sub.count("--local-port")) o.local_port = section_value<std::uint16_t>(c, "analyze", "local_port", o.local_port);
  if (!sub.count("--external-port")) {
    o.external_port = section_value<std::uint16_t>(c, "analyze", "external_port", o.external_port);
  }
  if (!o.run_dir.empty()) {
    const fs::path dir = o.run_dir;
    if (o.log.empty()) o.log = (dir / "querylog.jsonl").string();
    if (o.local.empty() && fs::exists(dir / "local.pcap")) o.local = (dir / "local.pcap").string();
    if (o.external.empty() && fs::exists(dir / "external.pcap")) o.external = (dir / "external.pcap").string();
  }
  if (o.log.empty()) throw Error(ErrorKind::Config, "analyze needs --run or --log");
  if (o.local.empty() && o.external.empty()) throw Error(ErrorKind::Config, "analyze needs at least one capture");
  const auto format = stats::parse_report_format(g.format);

  std::vector<analysis::CaptureInput> inputs;
  auto port = [](std::uint16_t p) { return p ? std::optional<std::uint16_t>(p) : std::nullopt; };
  if (!o.local.empty()) inputs.push_back({flow::CapturePoint::Local, o.local, port(o.local_port)});
  if (!o.external.empty()) inputs.push_back({flow::CapturePoint::External, o.external, port(o.external_port)});
  const auto log = read_query_log(o.log);
  const auto result = analysis::analyze(inputs, log);

  const fs::path out = g.out;
  for (const auto& p : result.points) {
    std::ostringstream csv;
    flow::write_streams_csv(csv, p.streams);
    write_file(out / fmt::format("streams_{}.csv", flow::to_string(p.point)), csv.str());
    const auto& k = p.conservation;
    std::cout << fmt::format("conservation {}: {} stream + {} unassigned = {} of {} frame bytes: {}\n",
                             flow::to_string(p.point), k.stream_bytes, k.unassigned_bytes,
                             k.stream_bytes + k.unassigned_bytes, k.all_frame_bytes, k.holds() ? "ok" : "FAILED");
    std::cout << fmt::format("streams {}: {} ({} selected, {} SYN)\n", flow::to_string(p.point), p.streams.size(),
                             p.selected.size(), p.syn_count);
    if (p.truncated) warn(p.path.string() + " ends in a truncated record");
  }
  std::ostringstream csv;
  flow::write_exchanges_csv(csv, result.match.exchanges);
  write_file(out / "exchanges.csv", csv.str());
  std::cout << "exchanges: " << result.match.exchanges.size() << " of " << log.size() << " queries\n";
  for (const auto& p : result.points) {
    const auto table = stats::summarize_exchanges(result.match.exchanges, p.point);
    if (table.rows.empty()) continue;
    const auto text = stats::emit_report(table, format);
    write_file(out / fmt::format("summary_{}.{}", flow::to_string(p.point), extension(format)), text);
    if (format == stats::ReportFormat::Markdown) std::cout << "\n## " << flow::to_string(p.point) << "\n\n";
    std::cout << text;
  }
  if (!result.conservation_holds()) {
    return report_error("CountMismatch", "byte conservation failed", kExitMismatch);
  }
  if (result.match.count_mismatch()) {
    for (const auto& d : result.match.diagnostics) std::cerr << json{{"orphan", d}}.dump() << "\n";
    return report_error("CountMismatch",
                        fmt::format("{} orphan(s): {}", result.match.orphans.size(), result.match.diagnostics.front()),
                        kExitMismatch);
  }
  return kExitOk;
}

// ---- summarize ----

struct SummarizeOptions {
  std::string exchanges;
  std::string point = "both";
  bool distribution = false;
};

int cmd_summarize(const Globals& g, const SummarizeOptions& o) {
  std::ifstream in(o.exchanges);
  if (!in) throw Error(ErrorKind::FileUnreadable, "cannot open " + o.exchanges);
  const auto exchanges = flow::read_exchanges_csv(in);
  const auto format = stats::parse_report_format(g.format);
  std::vector<flow::CapturePoint> points;
  if (o.point != "external") points.push_back(flow::CapturePoint::Local);
  if (o.point != "local") points.push_back(flow::CapturePoint::External);
  std::vector<stats::DistributionInput> dist;
  for (const auto point : points) {
    const auto table = stats::summarize_exchanges(exchanges, point);
    if (table.rows.empty()) continue;
    if (format == stats::ReportFormat::Markdown) std::cout << "## " << flow::to_string(point) << "\n\n";
    std::cout << stats::emit_report(table, format);
    if (o.distribution) {
      std::map<std::string, std::size_t> slot;
      for (const auto& x : exchanges) {
        const auto idx = point == flow::CapturePoint::Local ? x.local_stream_index : x.external_stream_index;
        if (!idx) continue;
        auto [it, fresh] = slot.try_emplace(x.model_profile_name, dist.size());
        if (fresh) dist.push_back({x.model_profile_name, point, {}});
        dist[it->second].samples.push_back(
            static_cast<double>(point == flow::CapturePoint::Local ? x.local_total_bytes : x.external_total_bytes));
      }
    }
  }
  if (o.distribution) {
    const auto path = fs::path(g.out) / "distribution.json";
    write_file(path, stats::distribution_json(stats::export_distribution(dist)));
    std::cout << "distribution: " << path.string() << "\n";
  }
  return kExitOk;
}

// ---- forecast ----

struct ForecastOptions {
  bool paper_defaults = false;
  std::string scenarios;
  std::uint64_t users = 0;
  std::string bytes;
  std::uint64_t queries = 0;
  std::string share;
  double growth_rate = 0;
  std::string growth_period = "month";
  std::size_t horizon = 12;
};

int cmd_forecast(const Globals& g, ForecastOptions o, const CLI::App& sub) {
  const auto& c = g.config;
  if (!sub.count("--paper-defaults")) o.paper_defaults = section_value<bool>(c, "forecast", "paper_defaults", false);
  if (!sub.count("--scenarios")) o.scenarios = section_value<std::string>(c, "forecast", "scenarios", "");
  if (!sub.count("--share-of-internet")) o.share = section_value<std::string>(c, "forecast", "share_of_internet", "");
  const auto format = stats::parse_report_format(g.format);

  std::vector<forecast::ForecastScenario> scenarios;
  if (o.paper_defaults) scenarios = forecast::paper_default_scenarios();
  if (!o.scenarios.empty()) {
    auto extra = forecast::load_scenarios(o.scenarios);
    scenarios.insert(scenarios.end(), extra.begin(), extra.end());
  }
  if (sub.count("--users") || sub.count("--bytes") || sub.count("--queries")) {
    if (!(sub.count("--users") && sub.count("--bytes") && sub.count("--queries"))) {
      throw Error(ErrorKind::Config, "a custom scenario needs --users, --bytes and --queries");
    }
    const auto bytes = forecast::parse_si_bytes(o.bytes);
    if (bytes > std::numeric_limits<std::uint64_t>::max()) throw Error(ErrorKind::Config, "--bytes too large");
    scenarios.push_back({"custom", o.users, static_cast<std::uint64_t>(bytes), o.queries});
  }
  if (scenarios.empty()) {
    throw Error(ErrorKind::Config, "forecast needs --paper-defaults, --scenarios or --users/--bytes/--queries");
  }
  std::optional<forecast::ByteCount> internet;
  if (!o.share.empty()) internet = forecast::parse_si_bytes(o.share);
  const auto rows = forecast::build_forecast(scenarios, internet);
  switch (format) {
    case stats::ReportFormat::Markdown: std::cout << forecast::forecast_markdown(rows); break;
    case stats::ReportFormat::Json: std::cout << forecast::forecast_json(rows); break;
    case stats::ReportFormat::Csv: std::cout << forecast::forecast_csv(rows); break;
  }
  if (sub.count("--growth-rate")) {
    forecast::GrowthAssumption growth{forecast::GrowthQuantity::QueriesPerDay, o.growth_rate,
                                      o.growth_period == "year" ? forecast::GrowthPeriod::Year
                                                                : forecast::GrowthPeriod::Month};
    std::cout << fmt::format("\nmonthly traffic at {:g}% growth per {}:\n", 100 * o.growth_rate, o.growth_period);
    for (const auto& r : rows) {
      const auto series = forecast::project_growth(static_cast<double>(r.monthly.bytes), growth, o.horizon);
      std::cout << r.scenario.label << ":";
      for (const double v : series) std::cout << fmt::format(" {:.4g}", v);
      std::cout << "\n";
    }
  }
  return kExitOk;
}

// ---- report ----

int cmd_report(const Globals& g) {
  const auto format = stats::parse_report_format(g.format);
  json doc = json::object();
  for (const auto point : {flow::CapturePoint::Local, flow::CapturePoint::External}) {
    const auto table = reference_summary_table(point);
    std::vector<stats::TrafficSummary> summaries;
    for (const auto& r : table.rows) summaries.push_back(r.summary);
    const auto grand = stats::cross_model_mean(summaries);
    // The published 7,593 +/- 369 figure summarizes the external table.
    const bool external = point == flow::CapturePoint::External;
    const bool diverges = external && stats::grand_sd_diverges(grand);
    const std::string name(flow::to_string(point));
    json gj = {{"grand_avg", grand.grand_avg},
               {"grand_sd", grand.grand_sd},
               {"grand_sd_convention", stats::kGrandSdConvention},
               {"population_sd", grand.population_sd},
               {"mean_within_sd", grand.mean_within_sd},
               {"grand_sd_diverges", diverges},
               {"model_count", grand.model_count}};
    if (external) gj["published_grand_sd"] = stats::kPublishedGrandSd;
    switch (format) {
      case stats::ReportFormat::Json:
        doc[name] = {{"table", json::parse(stats::emit_report(table, format))}, {"grand_mean", gj}};
        break;
      case stats::ReportFormat::Csv:
        std::cout << "# " << name << "\n" << stats::emit_report(table, format);
        std::cout << fmt::format("grand_avg,grand_sd,population_sd,mean_within_sd,published_grand_sd,diverges\n"
                                 "{:.2f},{:.2f},{:.2f},{:.2f},{},{}\n\n",
                                 grand.grand_avg, grand.grand_sd, grand.population_sd, grand.mean_within_sd,
                                 external ? fmt::format("{:.0f}", stats::kPublishedGrandSd) : "", diverges);
        break;
      case stats::ReportFormat::Markdown:
        std::cout << "## " << (point == flow::CapturePoint::Local ? "Local traffic between agents"
                                                                   : "External traffic to the LLM")
                  << "\n\n"
                  << stats::emit_report(table, format);
        std::cout << fmt::format(
            "\nCross-model mean over {} models: {:.2f} bytes (sd {:.2f}, {}; population sd {:.2f}; "
            "mean per-model sd {:.2f}).\n",
            grand.model_count, grand.grand_avg, grand.grand_sd, stats::kGrandSdConvention, grand.population_sd,
            grand.mean_within_sd);
        if (diverges) {
          std::cout << fmt::format("DIVERGENCE: published grand sd is {:.0f}, computed {:.2f}.\n",
                                   stats::kPublishedGrandSd, grand.grand_sd);
        }
        std::cout << "\n";
        break;
    }
  }
  if (format == stats::ReportFormat::Json) std::cout << doc.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measure, summarize and forecast LLM query traffic"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--seed", g.seed, "seed for the mock backend and synthetic prompts")->capture_default_str();
  app.add_option("--format", g.format, "report format")
      ->check(CLI::IsMember({"csv", "json", "markdown"}))
      ->capture_default_str();

  RunOptions ro;
  auto* run = app.add_subcommand("run", "run the two-agent experiment");
  auto* mock_flag = run->add_flag("--mock", ro.mock, "use the deterministic mock backend (default)");
  run->add_flag("--live", ro.live, "forward to the live endpoint from the config")->excludes(mock_flag);
  run->add_option("--prompts", ro.prompts, "number of prompts")->check(CLI::PositiveNumber);
  run->add_option("--dataset", ro.dataset, "GSM8K-style JSON lines; synthetic prompts when omitted");
  run->add_option("--capture", ro.capture, "capture points: local,external or none")->delimiter(',');
  run->add_option("--model", ro.model, "model profile name");
  run->add_flag("--tls", ro.tls, "serve the mock upstream over TLS");
  run->add_option("--run-id", ro.run_id, "artifact directory name under --out");
  run->add_option("--url", ro.url, "live endpoint URL");
  run->add_option("--credential-env", ro.credential_env, "environment variable holding the live credential");
  run->add_option("--listen-address", ro.listen_address, "responding agent address");
  run->add_option("--listen-port", ro.listen_port, "responding agent port, 0 for any");
  run->add_option("--timeout", ro.timeout_s, "upstream deadline in seconds");
  run->add_flag("--no-measurement", ro.no_measurement, "allow keep-alive and concurrent pacing from the config");

  AnalyzeOptions ao;
  auto* analyze = app.add_subcommand("analyze", "join captures to the query log");
  analyze->add_option("--run", ao.run_dir, "run directory from `run`");
  analyze->add_option("--log", ao.log, "query log (JSON lines)");
  analyze->add_option("--local", ao.local, "local-point capture");
  analyze->add_option("--external", ao.external, "external-point capture");
  analyze->add_option("--local-port", ao.local_port, "keep local streams touching this port");
  analyze->add_option("--external-port", ao.external_port, "keep external streams touching this port");

  SummarizeOptions so;
  auto* summarize = app.add_subcommand("summarize", "summary tables from an exchanges CSV");
  summarize->add_option("--exchanges", so.exchanges, "exchanges CSV from `analyze`")->required();
  summarize->add_option("--point", so.point, "capture point")
      ->check(CLI::IsMember({"local", "external", "both"}))
      ->capture_default_str();
  summarize->add_flag("--distribution", so.distribution, "also write boxplot data to <out>/distribution.json");

  ForecastOptions fo;
  auto* fc = app.add_subcommand("forecast", "traffic estimates per scenario");
  fc->add_flag("--paper-defaults", fo.paper_defaults, "the short, medium and long term scenarios");
  fc->add_option("--scenarios", fo.scenarios, "JSON scenario file")->check(CLI::ExistingFile);
  fc->add_option("--users", fo.users, "custom scenario: users");
  fc->add_option("--bytes", fo.bytes, "custom scenario: bytes per exchange, e.g. 7.5kB");
  fc->add_option("--queries", fo.queries, "custom scenario: queries per user per day");
  fc->add_option("--share-of-internet", fo.share, "monthly Internet total, e.g. 400EB");
  fc->add_option("--growth-rate", fo.growth_rate, "compound growth per period, e.g. 0.2");
  fc->add_option("--growth-period", fo.growth_period, "growth period")
      ->check(CLI::IsMember({"month", "year"}))
      ->capture_default_str();
  fc->add_option("--horizon", fo.horizon, "periods to project")->capture_default_str();

  auto* report = app.add_subcommand("report", "reference tables and the cross-model mean");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("ConfigError", e.what(), kExitConfig);
  }

  try {
    g.seed_given = app.count("--seed") > 0;
    if (!g.config_path.empty()) {
      g.config = load_config(g.config_path);
      if (!app.count("--out") && g.config.contains("out")) g.out = g.config["out"].get<std::string>();
      if (!app.count("--seed") && g.config.contains("seed")) {
        g.seed = g.config["seed"].get<std::uint64_t>();
        g.seed_given = true;
      }
      if (!app.count("--format") && g.config.contains("format")) g.format = g.config["format"].get<std::string>();
    }
    if (*run) return cmd_run(g, ro, *run);
    if (*analyze) return cmd_analyze(g, ao, *analyze);
    if (*summarize) return cmd_summarize(g, so);
    if (*fc) return cmd_forecast(g, fo, *fc);
    if (*report) return cmd_report(g);
  } catch (const Error& ex) {
    return report_error(ex);
  } catch (const json::exception& ex) {
    return report_error("ConfigError", ex.what(), kExitConfig);
  } catch (const std::exception& ex) {
    return report_error("Failure", ex.what(), kExitFailure);
  }
  return kExitFailure;
}
