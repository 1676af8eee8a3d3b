#pragma once

// HTTP + WebSocket front end for the play sessions:
//   /play     WebSocket, one session per connection
//   /healthz  200 "ok"
//   /...      static files from the web root (index.html for "/")
// Blocking I/O with one thread per connection.

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <list>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "mzi/server/protocol.hpp"

namespace mzi::server {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

struct ServerConfig {
  SessionConfig sessions;
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
  std::filesystem::path web_root;
  std::filesystem::path records;  // JSONL of completed episodes; empty disables
};

inline std::string mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".wasm") return "application/wasm";
  return "application/octet-stream";
}

class Server {
 public:
  explicit Server(ServerConfig cfg)
      : cfg_(std::move(cfg)), registry_(cfg_.sessions, make_sink()), acceptor_(ioc_) {}

  ~Server() { stop(); }

  SessionRegistry& registry() { return registry_; }

  // Binds and starts accepting in the background; returns the bound port.
  unsigned short start() {
    const tcp::endpoint ep(net::ip::make_address(cfg_.address), cfg_.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
    sweep_thread_ = std::thread([this] { sweep_loop(); });
    return port_;
  }

  unsigned short port() const { return port_; }

  void wait() {
    if (accept_thread_.joinable()) accept_thread_.join();
  }

  void stop() {
    if (!running_.exchange(false)) return;
    {
      std::lock_guard lock(stop_mutex_);
      stop_cv_.notify_all();
    }
    beast::error_code ec;
    acceptor_.cancel(ec);
    acceptor_.close(ec);
    // Wake a blocked accept by connecting to ourselves.
    try {
      net::io_context ioc;
      tcp::socket s(ioc);
      s.connect(tcp::endpoint(net::ip::make_address(cfg_.address), port_), ec);
    } catch (...) {
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    if (sweep_thread_.joinable()) sweep_thread_.join();
    std::list<Worker> workers;
    {
      std::lock_guard lock(workers_mutex_);
      for (auto& w : workers_) w.socket->shutdown(tcp::socket::shutdown_both, ec);
      workers.swap(workers_);
    }
    for (auto& w : workers)
      if (w.thread.joinable()) w.thread.join();
  }

 private:
  struct Worker {
    std::shared_ptr<tcp::socket> socket;
    std::shared_ptr<std::atomic<bool>> finished;
    std::thread thread;
  };

  RecordSink make_sink() {
    if (cfg_.records.empty()) return {};
    records_ = std::make_shared<std::ofstream>(cfg_.records, std::ios::app);
    if (!*records_) throw std::runtime_error("cannot open records file " + cfg_.records.string());
    return [out = records_](const EpisodeRecord& rec) {
      write_jsonl(*out, rec);
      out->flush();
    };
  }

  void accept_loop() {
    while (running_) {
      auto socket = std::make_shared<tcp::socket>(ioc_);
      beast::error_code ec;
      acceptor_.accept(*socket, ec);
      if (!running_) break;
      if (ec) continue;
      auto finished = std::make_shared<std::atomic<bool>>(false);
      std::lock_guard lock(workers_mutex_);
      reap_workers();
      workers_.push_back({socket, finished, std::thread([this, socket, finished] {
                            serve_connection(*socket);
                            *finished = true;
                          })});
    }
  }

  void reap_workers() {
    for (auto it = workers_.begin(); it != workers_.end();) {
      if (*it->finished) {
        it->thread.join();
        it = workers_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void sweep_loop() {
    const auto period = std::clamp<std::chrono::milliseconds>(
        std::chrono::duration_cast<std::chrono::milliseconds>(cfg_.sessions.idle_timeout) / 4,
        std::chrono::milliseconds(50), std::chrono::milliseconds(5000));
    std::unique_lock lock(stop_mutex_);
    while (running_) {
      stop_cv_.wait_for(lock, period);
      if (running_) registry_.expire_idle();
    }
  }

  void serve_connection(tcp::socket& socket) {
    beast::error_code ec;
    beast::flat_buffer buffer;
    http::request<http::string_body> req;
    http::read(socket, buffer, req, ec);
    if (ec) return;

    const std::string target(req.target());
    if (websocket::is_upgrade(req)) {
      if (target != "/play") {
        send(socket, req, http::status::not_found, "text/plain", "unknown websocket endpoint\n");
        return;
      }
      serve_play(socket, std::move(req));
      return;
    }
    if (req.method() != http::verb::get && req.method() != http::verb::head) {
      send(socket, req, http::status::method_not_allowed, "text/plain", "method not allowed\n");
      return;
    }
    if (target == "/healthz") {
      send(socket, req, http::status::ok, "text/plain", "ok\n");
      return;
    }
    serve_static(socket, req, target);
  }

  void serve_play(tcp::socket& socket, http::request<http::string_body> req) {
    websocket::stream<tcp::socket&> ws(socket);
    beast::error_code ec;
    ws.accept(req, ec);
    if (ec) return;
    ws.text(true);
    Connection conn(registry_);
    beast::flat_buffer buffer;
    while (!conn.closed()) {
      buffer.clear();
      ws.read(buffer, ec);
      if (ec) break;
      for (const auto& reply : conn.handle(beast::buffers_to_string(buffer.data()))) {
        ws.write(net::buffer(reply.dump()), ec);
        if (ec) return;
      }
    }
    if (ws.is_open()) ws.close(websocket::close_code::normal, ec);
  }

  void serve_static(tcp::socket& socket, const http::request<http::string_body>& req, std::string target) {
    if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
    if (target.empty() || target.back() == '/') target += "index.html";
    const std::filesystem::path rel = std::filesystem::path(target).relative_path().lexically_normal();
    if (cfg_.web_root.empty() || rel.empty() || *rel.begin() == "..") {
      send(socket, req, http::status::not_found, "text/plain", "not found\n");
      return;
    }
    std::ifstream in(cfg_.web_root / rel, std::ios::binary);
    if (!in || std::filesystem::is_directory(cfg_.web_root / rel)) {
      send(socket, req, http::status::not_found, "text/plain", "not found\n");
      return;
    }
    std::ostringstream body;
    body << in.rdbuf();
    send(socket, req, http::status::ok, mime_type(rel), body.str());
  }

  static void send(tcp::socket& socket, const http::request<http::string_body>& req, http::status status,
                   const std::string& type, std::string body) {
    http::response<http::string_body> res{status, req.version()};
    res.set(http::field::content_type, type);
    res.keep_alive(false);
    if (req.method() != http::verb::head) res.body() = std::move(body);
    res.prepare_payload();
    beast::error_code ec;
    http::write(socket, res, ec);
    socket.shutdown(tcp::socket::shutdown_send, ec);
  }

  ServerConfig cfg_;
  std::shared_ptr<std::ofstream> records_;
  SessionRegistry registry_;
  net::io_context ioc_;
  tcp::acceptor acceptor_;
  std::atomic<bool> running_{false};
  unsigned short port_ = 0;
  std::thread accept_thread_, sweep_thread_;
  std::mutex stop_mutex_;
  std::condition_variable stop_cv_;
  std::mutex workers_mutex_;
  std::list<Worker> workers_;
};

}  // namespace mzi::server
