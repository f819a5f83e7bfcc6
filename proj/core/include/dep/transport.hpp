#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dep/protocol.hpp"
#include "dep/service.hpp"

namespace dep {

inline constexpr std::string_view kProtocolHeader = "X-DEP-Protocol";
inline constexpr std::uint64_t kDefaultSampleLimit = 64;

// Wire capture.

enum class WireDirection { client_to_server, server_to_client };

std::string_view to_string(WireDirection d) noexcept;

struct WireEntry {
  WireDirection direction;
  std::string bytes;
  std::chrono::system_clock::time_point at;
};

// Append-only and thread-safe. With a sink file attached, each entry is also
// written through as one JSON line as it is appended.
class WireLog {
 public:
  WireLog();
  /// Appends to `sink`, so one file can collect several sessions.
  explicit WireLog(const std::filesystem::path& sink);
  ~WireLog();

  void append(WireDirection direction, std::string bytes);
  std::vector<WireEntry> entries() const;
  std::size_t size() const;

  static nlohmann::json entry_json(const WireEntry& e);
  void write_ndjson(std::ostream& out) const;

 private:
  mutable std::mutex mu_;
  std::vector<WireEntry> entries_;
  std::unique_ptr<std::ofstream> sink_;
};

// Message-level exchange, shared by both carriers.

using HeaderMap = std::map<std::string, std::string>;

struct WireRequest {
  std::string method;
  std::string target;  // path plus optional query string
  HeaderMap headers;
  std::string body;
};

struct WireResponse {
  int status = 200;
  HeaderMap headers;
  std::string body;
};

/// HTTP/1.1-style rendering used for capture.
std::string render_request(const WireRequest& r);
std::string render_response(const WireResponse& r);

std::string percent_encode(std::string_view s);
std::string percent_decode(std::string_view s);

// Maps the protocol routes onto a BenchmarkService:
//
//   GET  /v1/datasets
//   GET  /v1/datasets/{id}/samples?offset&limit&version
//   POST /v1/evaluations
//   POST /v1/evaluations/{eid}/submissions
//   GET  /v1/evaluations/{eid}/report
//
// Every failure becomes an ErrorBody with the matching status.
class Router {
 public:
  Router(std::shared_ptr<BenchmarkService> service, std::optional<std::string> token);

  WireResponse handle(const WireRequest& request) const;

  BenchmarkService& service() const noexcept { return *service_; }

 private:
  WireResponse route(const WireRequest& request) const;

  std::shared_ptr<BenchmarkService> service_;
  std::optional<std::string> token_;
};

class Carrier {
 public:
  virtual ~Carrier() = default;
  virtual WireResponse exchange(const WireRequest& request) = 0;
};

class LocalCarrier final : public Carrier {
 public:
  explicit LocalCarrier(std::shared_ptr<BenchmarkService> service);
  WireResponse exchange(const WireRequest& request) override;

 private:
  Router router_;
};

class HttpCarrier final : public Carrier {
 public:
  explicit HttpCarrier(std::string base_url, std::chrono::milliseconds timeout = std::chrono::seconds(30));
  WireResponse exchange(const WireRequest& request) override;

 private:
  std::string origin_;
  std::string prefix_;
  std::chrono::milliseconds timeout_;
};

// Binding descriptors.

struct ServerBinding {
  enum class Kind { local, remote };

  Kind kind = Kind::local;
  std::filesystem::path directory;   // local
  std::string base_url;              // remote
  std::optional<std::string> token;  // remote

  static ServerBinding local(std::filesystem::path dir);
  static ServerBinding remote(std::string url, std::optional<std::string> token = std::nullopt);

  /// Exactly one locator populated, matching the kind; throws Error(unprocessable).
  void validate() const;

  /// The token is never serialized.
  nlohmann::json to_json() const;
  static ServerBinding from_json(const nlohmann::json& j, const std::string& path = "binding");

  bool operator==(const ServerBinding&) const = default;
};

// Client handle exposing the same operation set whichever carrier sits
// underneath. Non-200 replies are rethrown as Error with the server's status.
class BenchmarkEndpoint {
 public:
  BenchmarkEndpoint(ServerBinding binding, std::unique_ptr<Carrier> carrier, std::shared_ptr<WireLog> log = nullptr);

  DatasetList list_datasets();
  SamplePage fetch_samples(const std::string& dataset_id, const std::string& version, std::uint64_t offset,
                           std::uint64_t limit = kDefaultSampleLimit);
  OpenEvaluation open_evaluation(const OpenEvaluation& request);
  SubmissionAck submit(const Submission& submission);
  EvaluationReport report(const EvaluationId& id);

  const ServerBinding& binding() const noexcept { return binding_; }
  std::uint64_t exchange_count() const noexcept;

 private:
  std::string call(const std::string& method, const std::string& target, std::string body);

  ServerBinding binding_;
  std::unique_ptr<Carrier> carrier_;
  std::shared_ptr<WireLog> log_;
  mutable std::mutex mu_;
  std::uint64_t exchanges_ = 0;
};

/// Local: loads the directory as a package or a parent of packages. Remote:
/// probes the listing route; an unreachable server is Error(unavailable).
std::unique_ptr<BenchmarkEndpoint> bind_endpoint(const ServerBinding& binding, std::shared_ptr<WireLog> log = nullptr,
                                                 ServiceOptions options = {});

/// Binds to an already running in-process service.
std::unique_ptr<BenchmarkEndpoint> bind_service(std::shared_ptr<BenchmarkService> service,
                                                std::shared_ptr<WireLog> log = nullptr);

// HTTP front end for a BenchmarkService.
class HttpService {
 public:
  HttpService(std::shared_ptr<BenchmarkService> service, std::optional<std::string> token,
              std::shared_ptr<WireLog> log = nullptr);
  ~HttpService();

  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Starts listening in a background thread. Port 0 picks a free port.
  /// Returns the bound port; a port in use is Error(unavailable).
  int start(const std::string& host, int port);
  void stop();
  /// Blocks until stop() is called from elsewhere.
  void wait();

  int port() const noexcept { return port_; }
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string host_;
  int port_ = 0;
};

}  // namespace dep
