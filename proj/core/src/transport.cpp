#include "dep/transport.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <ctime>
#include <fstream>

#include "dep/codec.hpp"

namespace dep {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(WireDirection d) noexcept {
  return d == WireDirection::client_to_server ? "client->server" : "server->client";
}

// WireLog

WireLog::WireLog() = default;

WireLog::WireLog(const fs::path& sink) {
  if (sink.has_parent_path()) fs::create_directories(sink.parent_path());
  sink_ = std::make_unique<std::ofstream>(sink, std::ios::binary | std::ios::app);
  if (!*sink_) throw Error(StatusCode::internal_error, "cannot open wire capture file " + sink.string());
}

WireLog::~WireLog() = default;

void WireLog::append(WireDirection direction, std::string bytes) {
  std::lock_guard lk(mu_);
  entries_.push_back(WireEntry{direction, std::move(bytes), std::chrono::system_clock::now()});
  if (sink_) {
    *sink_ << dump_compact(entry_json(entries_.back())) << '\n';
    sink_->flush();
  }
}

std::vector<WireEntry> WireLog::entries() const {
  std::lock_guard lk(mu_);
  return entries_;
}

std::size_t WireLog::size() const {
  std::lock_guard lk(mu_);
  return entries_.size();
}

json WireLog::entry_json(const WireEntry& e) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(e.at.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[40];
  const std::size_t n = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  std::snprintf(buf + n, sizeof buf - n, ".%03dZ", static_cast<int>(ms % 1000));
  return json{{"direction", std::string(to_string(e.direction))}, {"timestamp", buf}, {"bytes", e.bytes}};
}

void WireLog::write_ndjson(std::ostream& out) const {
  for (const auto& e : entries()) out << dump_compact(entry_json(e)) << '\n';
}

// Rendering and URL helpers

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

const std::string* find_header(const HeaderMap& headers, std::string_view name) {
  for (const auto& [k, v] : headers) {
    if (iequals(k, name)) return &v;
  }
  return nullptr;
}

std::string_view status_text(int status) {
  if (auto code = to_status_code(status)) return status_reason(*code);
  return "Unknown";
}

}  // namespace

std::string render_request(const WireRequest& r) {
  std::string out = r.method + " " + r.target + " HTTP/1.1\r\n";
  for (const auto& [k, v] : r.headers) {
    out += k + ": " + (iequals(k, "Authorization") ? std::string("Bearer <redacted>") : v) + "\r\n";
  }
  out += "\r\n";
  out += r.body;
  return out;
}

std::string render_response(const WireResponse& r) {
  std::string out = "HTTP/1.1 " + std::to_string(r.status) + " " + std::string(status_text(r.status)) + "\r\n";
  for (const auto& [k, v] : r.headers) out += k + ": " + v + "\r\n";
  out += "\r\n";
  out += r.body;
  return out;
}

std::string percent_encode(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0x0f]);
    }
  }
  return out;
}

std::string percent_decode(std::string_view s) {
  auto hex = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size() && hex(s[i + 1]) >= 0 && hex(s[i + 2]) >= 0) {
      out.push_back(static_cast<char>(hex(s[i + 1]) * 16 + hex(s[i + 2])));
      i += 2;
    } else if (s[i] == '+') {
      out.push_back(' ');
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

// Router

namespace {

struct Target {
  std::vector<std::string> segments;
  std::map<std::string, std::string> query;
};

Target parse_target(std::string_view target) {
  Target t;
  const auto q = target.find('?');
  std::string_view path = target.substr(0, q);
  std::size_t start = 0;
  while (start <= path.size()) {
    auto slash = path.find('/', start);
    if (slash == std::string_view::npos) slash = path.size();
    if (slash > start) t.segments.push_back(percent_decode(path.substr(start, slash - start)));
    start = slash + 1;
  }
  if (q != std::string_view::npos) {
    std::string_view qs = target.substr(q + 1);
    std::size_t pos = 0;
    while (pos <= qs.size()) {
      auto amp = qs.find('&', pos);
      if (amp == std::string_view::npos) amp = qs.size();
      std::string_view kv = qs.substr(pos, amp - pos);
      if (!kv.empty()) {
        auto eq = kv.find('=');
        t.query[percent_decode(kv.substr(0, eq))] =
            eq == std::string_view::npos ? std::string() : percent_decode(kv.substr(eq + 1));
      }
      pos = amp + 1;
    }
  }
  return t;
}

std::uint64_t query_uint(const Target& t, const std::string& key, std::uint64_t fallback) {
  auto it = t.query.find(key);
  if (it == t.query.end() || it->second.empty()) return fallback;
  std::uint64_t v = 0;
  const char* first = it->second.data();
  const char* last = first + it->second.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw Error(StatusCode::bad_request, key + " must be a non-negative integer", key);
  }
  return v;
}

EvaluationId path_evaluation_id(const std::string& text) {
  auto id = EvaluationId::parse(text);
  if (!id) throw Error(StatusCode::not_found, "evaluation " + text + " not found");
  return *id;
}

WireResponse json_response(int status, std::string body) {
  WireResponse r;
  r.status = status;
  r.headers["Content-Type"] = "application/json";
  r.headers[std::string(kProtocolHeader)] = std::string(kProtocolVersion);
  r.body = std::move(body);
  return r;
}

WireResponse error_response(StatusCode status, const std::string& message, const std::string& path) {
  ErrorBody body;
  body.status = status;
  body.message = message;
  body.path = path;
  return json_response(static_cast<int>(status), encode_message(body));
}

}  // namespace

Router::Router(std::shared_ptr<BenchmarkService> service, std::optional<std::string> token)
    : service_(std::move(service)), token_(std::move(token)) {}

WireResponse Router::handle(const WireRequest& request) const {
  try {
    if (token_) {
      const std::string* auth = find_header(request.headers, "Authorization");
      if (!auth || *auth != "Bearer " + *token_) {
        return error_response(StatusCode::unauthorized, "missing or invalid bearer token", "");
      }
    }
    if (const std::string* proto = find_header(request.headers, kProtocolHeader); proto && *proto != kProtocolVersion) {
      return error_response(StatusCode::bad_request, "unsupported protocol '" + *proto + "'",
                            std::string(kProtocolHeader));
    }
    return route(request);
  } catch (const Error& e) {
    return error_response(e.status(), e.what(), e.path());
  } catch (const std::exception& e) {
    return error_response(StatusCode::internal_error, e.what(), "");
  }
}

WireResponse Router::route(const WireRequest& request) const {
  const Target t = parse_target(request.target);
  const auto& s = t.segments;
  const bool get = request.method == "GET";
  const bool post = request.method == "POST";
  if (s.size() >= 2 && s[0] == "v1") {
    if (s[1] == "datasets") {
      if (get && s.size() == 2) return json_response(200, encode_message(service_->list_datasets()));
      if (get && s.size() == 4 && s[3] == "samples") {
        auto version = t.query.count("version") ? t.query.at("version") : std::string();
        const auto offset = query_uint(t, "offset", 0);
        const auto limit = query_uint(t, "limit", kDefaultSampleLimit);
        return json_response(200, encode_message(service_->fetch_samples(s[2], version, offset, limit)));
      }
    } else if (s[1] == "evaluations") {
      if (post && s.size() == 2) {
        auto open = decode_message<OpenEvaluation>(request.body);
        return json_response(200, encode_message(service_->open_evaluation(open)));
      }
      if (post && s.size() == 4 && s[3] == "submissions") {
        const EvaluationId eid = path_evaluation_id(s[2]);
        auto submission = decode_message<Submission>(request.body);
        if (submission.evaluation_id != eid) {
          throw Error(StatusCode::bad_request, "evaluation_id does not match the request path", "evaluation_id");
        }
        return json_response(200, encode_message(service_->submit(submission)));
      }
      if (get && s.size() == 4 && s[3] == "report") {
        return json_response(200, encode_message(service_->report(path_evaluation_id(s[2]))));
      }
    }
  }
  throw Error(StatusCode::not_found, "no route for " + request.method + " " + request.target);
}

LocalCarrier::LocalCarrier(std::shared_ptr<BenchmarkService> service) : router_(std::move(service), std::nullopt) {}

WireResponse LocalCarrier::exchange(const WireRequest& request) { return router_.handle(request); }

// ServerBinding

ServerBinding ServerBinding::local(fs::path dir) {
  ServerBinding b;
  b.kind = Kind::local;
  b.directory = std::move(dir);
  return b;
}

ServerBinding ServerBinding::remote(std::string url, std::optional<std::string> token) {
  ServerBinding b;
  b.kind = Kind::remote;
  b.base_url = std::move(url);
  b.token = std::move(token);
  return b;
}

void ServerBinding::validate() const {
  if (kind == Kind::local) {
    if (directory.empty()) throw Error(StatusCode::unprocessable, "local binding needs a directory", "directory");
    if (!base_url.empty() || token) {
      throw Error(StatusCode::unprocessable, "local binding cannot carry a URL or token", "url");
    }
  } else {
    if (base_url.empty()) throw Error(StatusCode::unprocessable, "remote binding needs a base URL", "url");
    if (base_url.rfind("http://", 0) != 0) {
      throw Error(StatusCode::unprocessable, "remote base URL must start with http://", "url");
    }
    if (!directory.empty()) throw Error(StatusCode::unprocessable, "remote binding cannot carry a directory", "directory");
  }
}

json ServerBinding::to_json() const {
  if (kind == Kind::local) return json{{"kind", "local"}, {"directory", directory.string()}};
  return json{{"kind", "remote"}, {"url", base_url}};
}

ServerBinding ServerBinding::from_json(const json& j, const std::string& path) {
  auto str = [&](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
      throw Error(StatusCode::unprocessable, std::string("missing string field '") + key + "'", path + "." + key);
    }
    return it->get<std::string>();
  };
  if (!j.is_object()) throw Error(StatusCode::unprocessable, "expected an object", path);
  const std::string kind = str("kind");
  ServerBinding b;
  if (kind == "local") {
    b = local(str("directory"));
  } else if (kind == "remote") {
    b = remote(str("url"));
  } else {
    throw Error(StatusCode::unprocessable, "unknown binding kind '" + kind + "'", path + ".kind");
  }
  return b;
}

// BenchmarkEndpoint

BenchmarkEndpoint::BenchmarkEndpoint(ServerBinding binding, std::unique_ptr<Carrier> carrier,
                                     std::shared_ptr<WireLog> log)
    : binding_(std::move(binding)), carrier_(std::move(carrier)), log_(std::move(log)) {}

std::uint64_t BenchmarkEndpoint::exchange_count() const noexcept {
  std::lock_guard lk(mu_);
  return exchanges_;
}

std::string BenchmarkEndpoint::call(const std::string& method, const std::string& target, std::string body) {
  WireRequest req;
  req.method = method;
  req.target = target;
  req.headers[std::string(kProtocolHeader)] = std::string(kProtocolVersion);
  req.headers["Accept"] = "application/json";
  if (method == "POST") req.headers["Content-Type"] = "application/json";
  if (binding_.token) req.headers["Authorization"] = "Bearer " + *binding_.token;
  req.body = std::move(body);

  if (log_) log_->append(WireDirection::client_to_server, render_request(req));
  WireResponse resp = carrier_->exchange(req);
  if (log_) log_->append(WireDirection::server_to_client, render_response(resp));
  {
    std::lock_guard lk(mu_);
    ++exchanges_;
  }

  if (resp.status == 200) return std::move(resp.body);
  auto known = to_status_code(resp.status);
  StatusCode status = known ? *known : (resp.status >= 500 ? StatusCode::unavailable : StatusCode::bad_request);
  std::string message = "server replied " + std::to_string(resp.status);
  std::string path;
  try {
    ErrorBody err = decode_message<ErrorBody>(resp.body);
    message = err.message;
    path = err.path;
  } catch (const std::exception&) {
  }
  throw Error(status, message, path);
}

DatasetList BenchmarkEndpoint::list_datasets() { return decode_message<DatasetList>(call("GET", "/v1/datasets", {})); }

SamplePage BenchmarkEndpoint::fetch_samples(const std::string& dataset_id, const std::string& version,
                                            std::uint64_t offset, std::uint64_t limit) {
  std::string target = "/v1/datasets/" + percent_encode(dataset_id) + "/samples?offset=" + std::to_string(offset) +
                       "&limit=" + std::to_string(limit);
  if (!version.empty()) target += "&version=" + percent_encode(version);
  return decode_message<SamplePage>(call("GET", target, {}));
}

OpenEvaluation BenchmarkEndpoint::open_evaluation(const OpenEvaluation& request) {
  return decode_message<OpenEvaluation>(call("POST", "/v1/evaluations", encode_message(request)));
}

SubmissionAck BenchmarkEndpoint::submit(const Submission& submission) {
  const std::string target = "/v1/evaluations/" + submission.evaluation_id.str() + "/submissions";
  return decode_message<SubmissionAck>(call("POST", target, encode_message(submission)));
}

EvaluationReport BenchmarkEndpoint::report(const EvaluationId& id) {
  return decode_message<EvaluationReport>(call("GET", "/v1/evaluations/" + id.str() + "/report", {}));
}

std::unique_ptr<BenchmarkEndpoint> bind_endpoint(const ServerBinding& binding, std::shared_ptr<WireLog> log,
                                                 ServiceOptions options) {
  binding.validate();
  if (binding.kind == ServerBinding::Kind::local) {
    std::shared_ptr<BenchmarkService> service = BenchmarkService::from_directories({binding.directory}, options);
    if (service->dataset_count() == 0) {
      throw Error(StatusCode::not_found, "no benchmark package under " + binding.directory.string(), "directory");
    }
    return std::make_unique<BenchmarkEndpoint>(binding, std::make_unique<LocalCarrier>(std::move(service)),
                                               std::move(log));
  }
  auto endpoint = std::make_unique<BenchmarkEndpoint>(binding, std::make_unique<HttpCarrier>(binding.base_url),
                                                      std::move(log));
  endpoint->list_datasets();
  return endpoint;
}

std::unique_ptr<BenchmarkEndpoint> bind_service(std::shared_ptr<BenchmarkService> service,
                                                std::shared_ptr<WireLog> log) {
  return std::make_unique<BenchmarkEndpoint>(ServerBinding::local("<in-process>"),
                                             std::make_unique<LocalCarrier>(std::move(service)), std::move(log));
}

}  // namespace dep
