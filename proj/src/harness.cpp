#include "llmtraffic/harness.hpp"

#include <httplib.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/x509v3.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "llmtraffic/error.hpp"
#include "llmtraffic/profiles.hpp"

namespace llmtraffic::harness {

namespace {

using json = nlohmann::json;

double wall_clock_now() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

Error config_error(const std::string& what) { return Error(ErrorKind::Config, what); }

struct ParsedUrl {
  std::string scheme;
  std::string host;
  std::uint16_t port = 0;
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  static const std::regex re(R"(^(https?)://(\[[^\]]+\]|[^/:\[\]]+)(?::(\d+))?(/.*)?$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw config_error("live endpoint url is not http(s)://host[:port]/path: " + url);
  ParsedUrl out;
  out.scheme = m[1].str();
  std::transform(out.scheme.begin(), out.scheme.end(), out.scheme.begin(), ::tolower);
  out.host = m[2].str();
  if (out.host.front() == '[') out.host = out.host.substr(1, out.host.size() - 2);
  const unsigned long port = m[3].matched ? std::stoul(m[3].str()) : (out.scheme == "https" ? 443 : 80);
  if (port == 0 || port > 65535) throw config_error("live endpoint port out of range: " + url);
  out.port = static_cast<std::uint16_t>(port);
  out.path = m[4].matched ? m[4].str() : "/";
  return out;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

json fill_template(const json& tpl, std::int64_t id, const std::string& question, const std::string& model) {
  if (tpl.is_string()) {
    const auto& s = tpl.get_ref<const std::string&>();
    if (s == "{id}") return id;
    return replace_all(replace_all(s, "{question}", question), "{model}", model);
  }
  if (tpl.is_array() || tpl.is_object()) {
    json out = tpl;
    for (auto it = out.begin(); it != out.end(); ++it) *it = fill_template(*it, id, question, model);
    return out;
  }
  return tpl;
}

const char* policy_name(ConnectionPolicy p) { return p == ConnectionPolicy::ClosePerQuery ? "close-per-query" : "keep-alive"; }
const char* pacing_name(Pacing p) { return p == Pacing::Sequential ? "sequential" : "concurrent"; }

json distribution_json(const mock::SizeDistribution& d) {
  return {{"mean", d.mean}, {"sd", d.sd}, {"min", d.min}, {"max", d.max}};
}

mock::SizeDistribution distribution_from(const json& j) {
  try {
    return mock::SizeDistribution::fit(j.at("mean").get<double>(), j.at("sd").get<double>(),
                                       j.at("min").get<double>(), j.at("max").get<double>());
  } catch (const Error& ex) {
    throw config_error(ex.what());
  }
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw config_error(fmt::format("{} must be a JSON object", where));
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw config_error(fmt::format("unknown key '{}' in {}", key, where));
    }
  }
}

struct ServerThread {
  std::unique_ptr<httplib::Server> server;
  std::thread thread;
  std::uint16_t port = 0;

  void bind_and_listen(const std::string& address, std::uint16_t wanted, std::string_view what) {
    server->set_keep_alive_max_count(1000);
    if (wanted == 0) {
      const int p = server->bind_to_any_port(address);
      if (p <= 0) throw config_error(fmt::format("{}: cannot bind {}", what, address));
      port = static_cast<std::uint16_t>(p);
    } else {
      if (!server->bind_to_port(address, wanted)) {
        throw config_error(fmt::format("{}: cannot bind {}:{}", what, address, wanted));
      }
      port = wanted;
    }
    thread = std::thread([s = server.get()] { s->listen_after_bind(); });
    server->wait_until_ready();
  }

  void stop() {
    if (!thread.joinable()) return;
    server->stop();
    thread.join();
  }
};

void reply_json_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

std::string default_route_interface() {
  std::ifstream in("/proc/net/route");
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string iface, dest;
    fields >> iface >> dest;
    if (dest == "00000000") return iface;
  }
  return {};
}

}  // namespace

RunConfig RunConfig::normalized() const {
  RunConfig out = *this;
  if (out.measurement_mode) {
    out.connection_policy = ConnectionPolicy::ClosePerQuery;
    out.pacing = Pacing::Sequential;
  }
  return out;
}

void RunConfig::validate() const {
  if (prompt_count < 1) throw config_error("prompt_count must be at least 1");
  if (concurrency < 1) throw config_error("concurrency must be at least 1");
  if (!(upstream_timeout_s > 0)) throw config_error("upstream_timeout_s must be > 0");
  if (listen_address.empty()) throw config_error("listen_address is empty");
  if (measurement_mode && (connection_policy != ConnectionPolicy::ClosePerQuery || pacing != Pacing::Sequential)) {
    throw config_error("measurement mode requires close-per-query and sequential pacing");
  }
  try {
    find_model(model_profile_name);
    mock_config().validate();
  } catch (const Error& ex) {
    throw config_error(ex.what());
  }
  static const std::regex id_re("[A-Za-z0-9._-]+");
  const auto id = effective_run_id();
  if (!std::regex_match(id, id_re) || id == "." || id == "..") {
    throw config_error("run id may only hold letters, digits, '.', '_' and '-': " + id);
  }
  if (upstream == UpstreamKind::Live) {
    if (live.credential_env.empty()) throw config_error("live credential_env is empty");
    live_credential(live);
    parse_url(live.url);
  }
}

std::string RunConfig::effective_run_id() const {
  if (!run_id.empty()) return run_id;
  return fmt::format("{}-{}-n{}-s{}", upstream == UpstreamKind::Mock ? "mock" : "live", model_profile_name,
                     prompt_count, seed);
}

mock::MockBackendConfig RunConfig::mock_config() const {
  mock::MockBackendConfig out = mock ? *mock : mock::MockBackendConfig::calibrated(seed);
  out.seed = seed;
  out.transport = tls ? mock::UpstreamTransport::Tls : mock::UpstreamTransport::Plain;
  return out;
}

void apply_run_config(const json& j, RunConfig& cfg) {
  check_keys(j,
             {"dataset", "prompt_count", "upstream", "live", "model", "measurement_mode", "connection_policy", "pacing",
              "concurrency", "capture", "listen_address", "listen_port", "upstream_port", "seed", "mock", "tls",
              "upstream_timeout_s", "run_id"},
             "run config");
  try {
    if (j.contains("dataset")) cfg.dataset_path = j["dataset"].get<std::string>();
    if (j.contains("prompt_count")) cfg.prompt_count = j["prompt_count"].get<std::size_t>();
    if (j.contains("upstream")) {
      const auto u = j["upstream"].get<std::string>();
      if (u != "mock" && u != "live") throw config_error("upstream must be \"mock\" or \"live\"");
      cfg.upstream = u == "mock" ? UpstreamKind::Mock : UpstreamKind::Live;
    }
    if (j.contains("live")) {
      const auto& l = j["live"];
      check_keys(l, {"url", "headers", "credential_env", "request_template", "answer_pointer", "external_interface"},
                 "live");
      if (l.contains("url")) cfg.live.url = l["url"].get<std::string>();
      if (l.contains("headers")) cfg.live.headers = l["headers"].get<std::map<std::string, std::string>>();
      if (l.contains("credential_env")) cfg.live.credential_env = l["credential_env"].get<std::string>();
      if (l.contains("request_template")) cfg.live.request_template = l["request_template"];
      if (l.contains("answer_pointer")) cfg.live.answer_pointer = l["answer_pointer"].get<std::string>();
      if (l.contains("external_interface")) cfg.live.external_interface = l["external_interface"].get<std::string>();
    }
    if (j.contains("model")) cfg.model_profile_name = j["model"].get<std::string>();
    if (j.contains("measurement_mode")) cfg.measurement_mode = j["measurement_mode"].get<bool>();
    if (j.contains("connection_policy")) {
      const auto p = j["connection_policy"].get<std::string>();
      if (p != "close-per-query" && p != "keep-alive") throw config_error("unknown connection_policy " + p);
      cfg.connection_policy = p == "keep-alive" ? ConnectionPolicy::KeepAlive : ConnectionPolicy::ClosePerQuery;
    }
    if (j.contains("pacing")) {
      const auto p = j["pacing"].get<std::string>();
      if (p != "sequential" && p != "concurrent") throw config_error("unknown pacing " + p);
      cfg.pacing = p == "concurrent" ? Pacing::Concurrent : Pacing::Sequential;
    }
    if (j.contains("concurrency")) cfg.concurrency = j["concurrency"].get<std::size_t>();
    if (j.contains("capture")) {
      const auto& c = j["capture"];
      if (c.is_array()) {
        cfg.capture_points = {};
        for (const auto& p : c) {
          const auto name = p.get<std::string>();
          if (name == "local") cfg.capture_points.local = true;
          else if (name == "external") cfg.capture_points.external = true;
          else throw config_error("unknown capture point " + name);
        }
      } else {
        check_keys(c, {"local", "external"}, "capture");
        cfg.capture_points.local = c.value("local", cfg.capture_points.local);
        cfg.capture_points.external = c.value("external", cfg.capture_points.external);
      }
    }
    if (j.contains("listen_address")) cfg.listen_address = j["listen_address"].get<std::string>();
    if (j.contains("listen_port")) cfg.listen_port = j["listen_port"].get<std::uint16_t>();
    if (j.contains("upstream_port")) cfg.upstream_port = j["upstream_port"].get<std::uint16_t>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("tls")) cfg.tls = j["tls"].get<bool>();
    if (j.contains("upstream_timeout_s")) cfg.upstream_timeout_s = j["upstream_timeout_s"].get<double>();
    if (j.contains("run_id")) cfg.run_id = j["run_id"].get<std::string>();
    if (j.contains("mock")) {
      const auto& m = j["mock"];
      check_keys(m, {"response_size_distribution", "per_model", "response_delay_distribution", "calibrated"}, "mock");
      mock::MockBackendConfig mc = m.value("calibrated", true) ? mock::MockBackendConfig::calibrated(cfg.seed)
                                                                : mock::MockBackendConfig{};
      if (m.contains("response_size_distribution")) {
        mc.response_size_distribution = distribution_from(m["response_size_distribution"]);
      }
      if (m.contains("per_model")) {
        for (const auto& [name, d] : m["per_model"].items()) mc.per_model[name] = distribution_from(d);
      }
      if (m.contains("response_delay_distribution")) {
        const auto& d = m["response_delay_distribution"];
        mc.response_delay_distribution = mock::DelayDistribution{d.value("mean_ms", 0.0), d.value("jitter_ms", 0.0)};
      }
      cfg.mock = std::move(mc);
    }
  } catch (const json::exception& ex) {
    throw config_error(std::string("run config: ") + ex.what());
  }
}

json run_config_json(const RunConfig& cfg) {
  const auto mc = cfg.mock_config();
  json per_model = json::object();
  for (const auto& [name, d] : mc.per_model) per_model[name] = distribution_json(d);
  json mock_j = {{"response_size_distribution", distribution_json(mc.response_size_distribution)},
                 {"per_model", per_model}};
  if (mc.response_delay_distribution) {
    mock_j["response_delay_distribution"] = {{"mean_ms", mc.response_delay_distribution->mean_ms},
                                             {"jitter_ms", mc.response_delay_distribution->jitter_ms}};
  }
  json j = {
      {"dataset", cfg.dataset_path.string()},
      {"prompt_count", cfg.prompt_count},
      {"upstream", cfg.upstream == UpstreamKind::Mock ? "mock" : "live"},
      {"model", cfg.model_profile_name},
      {"measurement_mode", cfg.measurement_mode},
      {"connection_policy", policy_name(cfg.connection_policy)},
      {"pacing", pacing_name(cfg.pacing)},
      {"concurrency", cfg.concurrency},
      {"capture", {{"local", cfg.capture_points.local}, {"external", cfg.capture_points.external}}},
      {"listen_address", cfg.listen_address},
      {"listen_port", cfg.listen_port},
      {"upstream_port", cfg.upstream_port},
      {"seed", cfg.seed},
      {"tls", cfg.tls},
      {"upstream_timeout_s", cfg.upstream_timeout_s},
      {"run_id", cfg.effective_run_id()},
      {"mock", mock_j},
  };
  if (cfg.upstream == UpstreamKind::Live) {
    // Header templates only; the credential itself never reaches disk.
    j["live"] = {{"url", cfg.live.url},
                 {"headers", cfg.live.headers},
                 {"credential_env", cfg.live.credential_env},
                 {"request_template", cfg.live.request_template},
                 {"answer_pointer", cfg.live.answer_pointer},
                 {"external_interface", cfg.live.external_interface}};
  }
  return j;
}

std::string live_credential(const LiveEndpoint& live) {
  const char* value = std::getenv(live.credential_env.c_str());
  if (value == nullptr || *value == '\0') {
    throw config_error(fmt::format("credential environment variable {} is not set", live.credential_env));
  }
  return value;
}

TlsMaterial generate_self_signed() {
  EVP_PKEY* key = EVP_EC_gen("P-256");
  X509* cert = X509_new();
  if (key == nullptr || cert == nullptr) throw Error(ErrorKind::Config, "cannot allocate TLS key material");
  X509_set_version(cert, 2);
  ASN1_INTEGER_set(X509_get_serialNumber(cert), 1);
  X509_gmtime_adj(X509_getm_notBefore(cert), -60);
  X509_gmtime_adj(X509_getm_notAfter(cert), 7 * 24 * 3600);
  X509_set_pubkey(cert, key);
  X509_NAME* name = X509_get_subject_name(cert);
  X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC, reinterpret_cast<const unsigned char*>("localhost"), -1, -1, 0);
  X509_set_issuer_name(cert, name);
  X509V3_CTX ctx;
  X509V3_set_ctx_nodb(&ctx);
  X509V3_set_ctx(&ctx, cert, cert, nullptr, nullptr, 0);
  X509_EXTENSION* san = X509V3_EXT_conf_nid(nullptr, &ctx, NID_subject_alt_name, "IP:127.0.0.1,DNS:localhost");
  X509_add_ext(cert, san, -1);
  X509_EXTENSION_free(san);
  X509_sign(cert, key, EVP_sha256());

  auto to_pem = [](auto&& write) {
    BIO* bio = BIO_new(BIO_s_mem());
    write(bio);
    char* data = nullptr;
    const long len = BIO_get_mem_data(bio, &data);
    std::string out(data, static_cast<std::size_t>(len));
    BIO_free(bio);
    return out;
  };
  TlsMaterial out;
  out.certificate_pem = to_pem([&](BIO* b) { PEM_write_bio_X509(b, cert); });
  out.private_key_pem = to_pem([&](BIO* b) { PEM_write_bio_PrivateKey(b, key, nullptr, nullptr, 0, nullptr, nullptr); });
  X509_free(cert);
  EVP_PKEY_free(key);
  return out;
}

struct MockUpstream::Impl {
  ServerThread st;
};

MockUpstream::MockUpstream(mock::MockBackendConfig cfg, std::string default_model, const std::string& address,
                           std::uint16_t port, std::optional<TlsMaterial> tls)
    : impl_(std::make_unique<Impl>()) {
  cfg.validate();
  if (tls) {
    BIO* cb = BIO_new_mem_buf(tls->certificate_pem.data(), static_cast<int>(tls->certificate_pem.size()));
    BIO* kb = BIO_new_mem_buf(tls->private_key_pem.data(), static_cast<int>(tls->private_key_pem.size()));
    X509* cert = PEM_read_bio_X509(cb, nullptr, nullptr, nullptr);
    EVP_PKEY* key = PEM_read_bio_PrivateKey(kb, nullptr, nullptr, nullptr);
    BIO_free(cb);
    BIO_free(kb);
    auto server = std::make_unique<httplib::SSLServer>(cert, key);
    X509_free(cert);
    EVP_PKEY_free(key);
    if (!server->is_valid()) throw config_error("mock upstream: TLS context rejected the certificate");
    impl_->st.server = std::move(server);
  } else {
    impl_->st.server = std::make_unique<httplib::Server>();
  }
  impl_->st.server->Post("/v1/generate", [cfg = std::move(cfg), default_model = std::move(default_model)](
                                              const httplib::Request& req, httplib::Response& res) {
    std::int64_t id = 0;
    std::string question;
    std::string model_name = default_model;
    try {
      const auto j = json::parse(req.body);
      id = j.at("id").get<std::int64_t>();
      question = j.value("question", "");
      model_name = j.value("model", default_model);
    } catch (const json::exception& ex) {
      return reply_json_error(res, 400, ex.what());
    }
    const ModelProfile* model = nullptr;
    try {
      model = &find_model(model_name);
    } catch (const Error& ex) {
      return reply_json_error(res, 400, ex.what());
    }
    const double delay = mock::draw_response_delay_ms(cfg, id);
    if (delay > 0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay));
    res.set_content(mock::mock_llm_respond(id, question, cfg, *model), "application/json");
  });
  impl_->st.bind_and_listen(address, port, "mock upstream");
}

MockUpstream::~MockUpstream() { stop(); }
std::uint16_t MockUpstream::port() const { return impl_->st.port; }
void MockUpstream::stop() { impl_->st.stop(); }

UpstreamTarget live_target(const RunConfig& cfg) {
  const auto url = parse_url(cfg.live.url);
  const auto credential = live_credential(cfg.live);
  UpstreamTarget t;
  t.scheme = url.scheme;
  t.host = url.host;
  t.port = url.port;
  t.path = url.path;
  for (const auto& [name, value] : cfg.live.headers) t.headers[name] = replace_all(value, "{credential}", credential);
  t.request_template = cfg.live.request_template;
  t.answer_pointer = cfg.live.answer_pointer;
  t.model = cfg.model_profile_name;
  t.timeout_s = cfg.upstream_timeout_s;
  t.keep_alive = cfg.connection_policy == ConnectionPolicy::KeepAlive;
  return t;
}

struct RespondingAgent::Impl {
  UpstreamTarget target;
  ServerThread st;
  std::mutex pool_mutex;
  std::vector<std::unique_ptr<httplib::Client>> idle;

  std::unique_ptr<httplib::Client> acquire() {
    if (target.keep_alive) {
      std::lock_guard lock(pool_mutex);
      if (!idle.empty()) {
        auto c = std::move(idle.back());
        idle.pop_back();
        return c;
      }
    }
    const std::string host = target.host.find(':') != std::string::npos ? "[" + target.host + "]" : target.host;
    auto c = std::make_unique<httplib::Client>(fmt::format("{}://{}:{}", target.scheme, host, target.port));
    if (target.ca_pem) c->load_ca_cert_store(target.ca_pem->data(), target.ca_pem->size());
    const auto timeout = std::chrono::duration<double>(target.timeout_s);
    c->set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    c->set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    c->set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    c->set_keep_alive(target.keep_alive);
    return c;
  }

  void release(std::unique_ptr<httplib::Client> c) {
    if (!target.keep_alive) return;
    std::lock_guard lock(pool_mutex);
    idle.push_back(std::move(c));
  }

  void handle(const httplib::Request& req, httplib::Response& res) {
    std::int64_t id = 0;
    std::string question;
    try {
      const auto j = json::parse(req.body);
      id = j.at("id").get<std::int64_t>();
      question = j.at("question").get<std::string>();
    } catch (const json::exception& ex) {
      return reply_json_error(res, 400, ex.what());
    }
    if (question.empty()) return reply_json_error(res, 400, "empty question");

    const auto body = fill_template(target.request_template, id, question, target.model).dump();
    httplib::Headers headers(target.headers.begin(), target.headers.end());
    auto client = acquire();
    const auto started = std::chrono::steady_clock::now();
    auto up = client->Post(target.path, headers, body, "application/json");
    if (!up) {
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      const auto err = up.error();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             ((err == httplib::Error::Read || err == httplib::Error::Write) &&
                              elapsed >= 0.9 * target.timeout_s);
      return reply_json_error(res, timed_out ? 504 : 502,
                              fmt::format("{}: {}", timed_out ? "UpstreamTimeout" : "UpstreamUnreachable",
                                          httplib::to_string(err)));
    }
    const int status = up->status;
    std::string content_type = up->get_header_value("Content-Type");
    std::string reply = std::move(up->body);
    release(std::move(client));
    if (target.answer_pointer.empty() || status < 200 || status >= 300) {
      res.status = status;
      res.set_content(std::move(reply), content_type.empty() ? "application/json" : content_type);
      return;
    }
    try {
      const auto j = json::parse(reply);
      const auto& a = j.at(json::json_pointer(target.answer_pointer));
      res.status = status;
      res.set_content(json{{"answer", a.is_string() ? a.get<std::string>() : a.dump()}, {"id", id}}.dump(),
                      "application/json");
    } catch (const json::exception& ex) {
      reply_json_error(res, 502, std::string("upstream reply without answer: ") + ex.what());
    }
  }
};

RespondingAgent::RespondingAgent(UpstreamTarget target, const std::string& address, std::uint16_t port)
    : impl_(std::make_unique<Impl>()) {
  impl_->target = std::move(target);
  impl_->st.server = std::make_unique<httplib::Server>();
  impl_->st.server->Post("/query", [impl = impl_.get()](const httplib::Request& req, httplib::Response& res) {
    impl->handle(req, res);
  });
  impl_->st.bind_and_listen(address, port, "responding agent");
}

RespondingAgent::~RespondingAgent() { stop(); }
std::uint16_t RespondingAgent::port() const { return impl_->st.port; }
void RespondingAgent::stop() { impl_->st.stop(); }

namespace {

std::unique_ptr<httplib::Client> agent_client(const RunConfig& cfg, const AgentAddress& agent) {
  auto c = std::make_unique<httplib::Client>(agent.host, agent.port);
  const auto timeout = std::chrono::microseconds(static_cast<std::int64_t>((cfg.upstream_timeout_s + 5) * 1e6));
  c->set_connection_timeout(std::chrono::seconds(5));
  c->set_read_timeout(timeout);
  c->set_write_timeout(timeout);
  c->set_keep_alive(cfg.connection_policy == ConnectionPolicy::KeepAlive);
  return c;
}

QueryLogEntry send_prompt(httplib::Client& client, const RunConfig& cfg, const PromptRecord& p) {
  QueryLogEntry e;
  e.query_id = p.id;
  e.model_profile_name = cfg.model_profile_name;
  e.question = p.question;
  const auto body = json{{"id", p.id}, {"question", p.question}}.dump();
  e.request_body_bytes = body.size();
  e.send_timestamp = wall_clock_now();
  auto res = client.Post("/query", body, "application/json");
  e.recv_timestamp = wall_clock_now();
  if (!res) {
    e.error = res.error() == httplib::Error::Connection ? "ConnectionRefused: " + httplib::to_string(res.error())
                                                        : httplib::to_string(res.error());
    return e;
  }
  e.upstream_status = res->status;
  e.response_body_bytes = res->body.size();
  try {
    const auto j = json::parse(res->body);
    if (j.contains("answer") && j["answer"].is_string()) e.answer = j["answer"].get<std::string>();
    if (j.contains("error") && j["error"].is_string()) e.error = j["error"].get<std::string>();
  } catch (const json::exception&) {
    e.error = "response body is not JSON";
  }
  return e;
}

bool refused(const QueryLogEntry& e) { return e.error && e.error->rfind("ConnectionRefused", 0) == 0; }

}  // namespace

QueryLog querying_agent_run(const RunConfig& raw_cfg, const AgentAddress& agent,
                            const std::vector<PromptRecord>& prompts, const LogSink& sink) {
  for (const auto& p : prompts) p.validate();
  const RunConfig cfg = raw_cfg.normalized();
  QueryLog log;
  log.reserve(prompts.size());
  std::mutex mutex;
  auto record = [&](QueryLogEntry e) {
    std::lock_guard lock(mutex);
    if (sink) sink(e);
    log.push_back(std::move(e));
  };

  if (cfg.pacing == Pacing::Sequential) {
    std::unique_ptr<httplib::Client> client;
    for (const auto& p : prompts) {
      if (!client || cfg.connection_policy == ConnectionPolicy::ClosePerQuery) client = agent_client(cfg, agent);
      auto e = send_prompt(*client, cfg, p);
      const bool stop = refused(e);
      const std::string why = e.error.value_or("");
      record(std::move(e));
      if (stop) throw Error(ErrorKind::ConnectionRefused, fmt::format("agent {}:{}: {}", agent.host, agent.port, why));
    }
    return log;
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::string abort_reason;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < std::min(cfg.concurrency, prompts.size()); ++w) {
    workers.emplace_back([&] {
      std::unique_ptr<httplib::Client> client;
      for (std::size_t i; !abort && (i = next++) < prompts.size();) {
        if (!client || cfg.connection_policy == ConnectionPolicy::ClosePerQuery) client = agent_client(cfg, agent);
        auto e = send_prompt(*client, cfg, prompts[i]);
        if (refused(e) && !abort.exchange(true)) {
          std::lock_guard lock(mutex);
          abort_reason = *e.error;
        }
        record(std::move(e));
      }
    });
  }
  for (auto& t : workers) t.join();
  std::stable_sort(log.begin(), log.end(),
                   [](const QueryLogEntry& a, const QueryLogEntry& b) { return a.send_timestamp < b.send_timestamp; });
  if (abort) throw Error(ErrorKind::ConnectionRefused, fmt::format("agent {}:{}: {}", agent.host, agent.port, abort_reason));
  return log;
}

RunArtifacts run_experiment(const RunConfig& raw_cfg) {
  const RunConfig cfg = raw_cfg.normalized();
  cfg.validate();
  std::optional<UpstreamTarget> live;
  if (cfg.upstream == UpstreamKind::Live) live = live_target(cfg);

  RunArtifacts art;
  art.run_id = cfg.effective_run_id();
  art.directory = cfg.out_dir / art.run_id;
  std::filesystem::create_directories(art.directory);
  art.query_log = art.directory / "querylog.jsonl";
  art.manifest = art.directory / "run.json";

  std::vector<PromptRecord> prompts;
  if (cfg.dataset_path.empty()) {
    prompts = synthetic_prompts(cfg.prompt_count, cfg.seed);
    art.prompts = art.directory / "prompts.jsonl";
    write_prompts(prompts, *art.prompts);
  } else {
    prompts = load_prompts(cfg.dataset_path, cfg.prompt_count);
  }

  // The local capture also sees the external point when the upstream is the
  // loopback mock; a live upstream needs its own interface.
  std::unique_ptr<InterfaceCapture> loopback;
  std::unique_ptr<InterfaceCapture> outside;
  const bool want_loopback = cfg.capture_points.local || (cfg.capture_points.external && !live);
  try {
    if (want_loopback) loopback = std::make_unique<InterfaceCapture>("lo");
    if (cfg.capture_points.external && live) {
      const auto iface = cfg.live.external_interface.empty() ? default_route_interface() : cfg.live.external_interface;
      if (iface.empty()) throw Error(ErrorKind::CaptureUnavailable, "no default route interface for the external point");
      outside = std::make_unique<InterfaceCapture>(iface);
    }
  } catch (const Error& ex) {
    if (ex.kind() != ErrorKind::CaptureUnavailable) throw;
    loopback.reset();
    outside.reset();
    art.capture_unavailable = true;
    art.warnings.push_back(std::string("capture unavailable, continuing log-only: ") + ex.what());
  }
  if (loopback) loopback->start();
  if (outside) outside->start();

  const double started_at = wall_clock_now();
  std::unique_ptr<MockUpstream> upstream;
  UpstreamTarget target;
  if (live) {
    target = *live;
  } else {
    std::optional<TlsMaterial> tls;
    if (cfg.tls) tls = generate_self_signed();
    upstream = std::make_unique<MockUpstream>(cfg.mock_config(), cfg.model_profile_name, cfg.listen_address,
                                              cfg.upstream_port, tls);
    target.scheme = cfg.tls ? "https" : "http";
    target.host = cfg.listen_address;
    target.port = upstream->port();
    target.model = cfg.model_profile_name;
    target.timeout_s = cfg.upstream_timeout_s;
    target.keep_alive = cfg.connection_policy == ConnectionPolicy::KeepAlive;
    if (tls) target.ca_pem = tls->certificate_pem;
    art.upstream_port = upstream->port();
  }
  auto agent = std::make_unique<RespondingAgent>(target, cfg.listen_address, cfg.listen_port);
  art.agent_port = agent->port();

  std::optional<Error> failure;
  std::size_t entries = 0;
  {
    QueryLogWriter writer(art.query_log);
    try {
      querying_agent_run(cfg, {cfg.listen_address, art.agent_port}, prompts, [&](const QueryLogEntry& e) {
        writer.append(e);
        ++entries;
      });
    } catch (const Error& ex) {
      failure = ex;
    }
  }
  agent->stop();
  if (upstream) upstream->stop();
  const double finished_at = wall_clock_now();

  json captures = json::object();
  if (loopback || outside) {
    // Let the last teardown segments reach the packet socket.
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    if (loopback) loopback->stop();
    if (outside) outside->stop();
    auto save = [&](const InterfaceCapture& source, std::set<std::uint16_t> ports, const char* name) {
      const auto file = source.filtered(ports);
      const auto path = art.directory / name;
      pcap::write_capture(file, path);
      const auto st = source.stats();
      captures[name] = {{"interface", source.interface_name()}, {"frames", file.records.size()}};
      if (st.kernel_drops > 0) {
        art.warnings.push_back(fmt::format("{}: kernel dropped {} frames", source.interface_name(), st.kernel_drops));
      }
      return path;
    };
    if (cfg.capture_points.local && loopback) art.local_capture = save(*loopback, {art.agent_port}, "local.pcap");
    if (cfg.capture_points.external) {
      if (live && outside) art.external_capture = save(*outside, {target.port}, "external.pcap");
      if (!live && loopback) art.external_capture = save(*loopback, {art.upstream_port}, "external.pcap");
    }
  }

  json artifacts = {{"query_log", art.query_log.filename().string()}};
  if (art.prompts) artifacts["prompts"] = art.prompts->filename().string();
  if (art.local_capture) artifacts["local_capture"] = art.local_capture->filename().string();
  if (art.external_capture) artifacts["external_capture"] = art.external_capture->filename().string();
  json manifest = {
      {"run_id", art.run_id},
      {"config", run_config_json(cfg)},
      {"artifacts", artifacts},
      {"log_entries", entries},
      {"capture_unavailable", art.capture_unavailable},
      {"warnings", art.warnings},
      {"volatile",
       {{"started_at", started_at},
        {"finished_at", finished_at},
        {"agent_port", art.agent_port},
        {"upstream_port", art.upstream_port},
        {"captures", captures}}},
  };
  if (failure) manifest["error"] = {{"kind", to_string(failure->kind())}, {"message", failure->what()}};
  std::ofstream(art.manifest) << manifest.dump(2) << '\n';
  if (failure) throw *failure;
  return art;
}

}  // namespace llmtraffic::harness
