#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "respond/memory.hpp"
#include "respond/session.hpp"
#include "respond/sim.hpp"

// HTTP + WebSocket front end for sessions, profiles and memory.
namespace respond::service {

inline constexpr std::string_view kVersion = "0.1.0";

class BindError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> memory_path;  // loaded at start, persisted at shutdown
  sim::SimConfig defaults;
  std::function<Backends()> backends;  // per session; defaults to the mock
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and starts accepting; throws BindError when the port is taken.
  void start();
  unsigned short port() const { return bound_port_; }
  /// Stops sessions, closes connections and persists memory.
  void stop();

  /// Transport-independent request handling; the HTTP layer is a thin adapter.
  Response route(const std::string& method, const std::string& target, const std::string& body);

  std::shared_ptr<session::Session> find_session(const std::string& id) const;
  MemoryStore& memory() { return *memory_; }

 private:
  struct Connection;
  void accept_loop();
  void serve_connection(std::shared_ptr<Connection> conn);
  void stream_session(std::shared_ptr<Connection> conn, const std::string& session_id, const void* request);

  ServiceConfig config_;
  std::shared_ptr<MemoryStore> memory_;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<session::Session>> sessions_;
  int next_session_ = 1;

  struct Net;
  std::unique_ptr<Net> net_;
  unsigned short bound_port_ = 0;
  std::atomic<bool> stopping_{false};
  bool stopped_ = false;
  std::thread acceptor_;
  std::mutex conns_mutex_;
  std::list<std::shared_ptr<Connection>> conns_;
};

}  // namespace respond::service
