#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "dep/transport.hpp"

namespace dep {

HttpCarrier::HttpCarrier(std::string base_url, std::chrono::milliseconds timeout) : timeout_(timeout) {
  while (!base_url.empty() && base_url.back() == '/') base_url.pop_back();
  const auto scheme_end = base_url.find("://");
  const auto path_start = base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  origin_ = base_url.substr(0, path_start);
  if (path_start != std::string::npos) prefix_ = base_url.substr(path_start);
}

WireResponse HttpCarrier::exchange(const WireRequest& request) {
  httplib::Client client(origin_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  client.set_keep_alive(false);

  httplib::Headers headers;
  std::string content_type = "application/json";
  for (const auto& [k, v] : request.headers) {
    if (k == "Content-Type") {
      content_type = v;
      continue;
    }
    headers.emplace(k, v);
  }
  const std::string target = prefix_ + request.target;
  httplib::Result res = request.method == "POST" ? client.Post(target, headers, request.body, content_type)
                                                 : client.Get(target, headers);
  if (!res) {
    throw Error(StatusCode::unavailable, "cannot reach " + origin_ + ": " + httplib::to_string(res.error()));
  }
  WireResponse out;
  out.status = res->status;
  for (const auto& [k, v] : res->headers) out.headers[k] = v;
  out.body = res->body;
  return out;
}

struct HttpService::Impl {
  Impl(std::shared_ptr<BenchmarkService> service, std::optional<std::string> token, std::shared_ptr<WireLog> wire)
      : router(std::move(service), std::move(token)), log(std::move(wire)) {}

  void handle(const httplib::Request& req, httplib::Response& res) {
    WireRequest wr;
    wr.method = req.method;
    wr.target = req.target;
    for (const auto& [k, v] : req.headers) wr.headers[k] = v;
    wr.body = req.body;
    if (log) log->append(WireDirection::client_to_server, render_request(wr));
    WireResponse out = router.handle(wr);
    if (log) log->append(WireDirection::server_to_client, render_response(out));
    res.status = out.status;
    std::string content_type = "application/json";
    for (const auto& [k, v] : out.headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        res.set_header(k, v);
      }
    }
    res.set_content(std::move(out.body), content_type);
  }

  Router router;
  std::shared_ptr<WireLog> log;
  httplib::Server server;
  std::thread listener;
};

HttpService::HttpService(std::shared_ptr<BenchmarkService> service, std::optional<std::string> token,
                         std::shared_ptr<WireLog> log)
    : impl_(std::make_unique<Impl>(std::move(service), std::move(token), std::move(log))) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) { impl_->handle(req, res); };
  impl_->server.Get(".*", handler);
  impl_->server.Post(".*", handler);
}

HttpService::~HttpService() { stop(); }

int HttpService::start(const std::string& host, int port) {
  if (impl_->listener.joinable()) throw Error(StatusCode::conflict, "service already started");
  host_ = host;
  // httplib defaults to SO_REUSEPORT, which lets a second server share a busy port.
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
    if (port_ < 0) throw Error(StatusCode::unavailable, "cannot listen on " + host + ":0");
  } else {
    if (!impl_->server.bind_to_port(host, port)) {
      throw Error(StatusCode::unavailable, "cannot listen on " + host + ":" + std::to_string(port));
    }
    port_ = port;
  }
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  spdlog::info("serving on {}", base_url());
  return port_;
}

void HttpService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
}

void HttpService::wait() {
  while (impl_->server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
}

std::string HttpService::base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

}  // namespace dep
