#include "respond/service.hpp"

#include <sys/socket.h>

#include <condition_variable>
#include <deque>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "respond/json_io.hpp"

namespace respond::service {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

struct Service::Net {
  asio::io_context io;
  tcp::acceptor acceptor{io};
};

struct Service::Connection {
  explicit Connection(tcp::socket s) : socket(std::move(s)) {}
  tcp::socket socket;
  std::thread thread;
  std::atomic<bool> done{false};
  // WebSocket fan-out queue.
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<std::string> outbox;
  bool closing = false;

  void kick() {
    {
      std::lock_guard lock(mutex);
      closing = true;
    }
    cv.notify_all();
    ::shutdown(socket.native_handle(), SHUT_RDWR);
  }
};

namespace {

Response error(int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  return {status, extra};
}

std::vector<std::string> path_parts(const std::string& target) {
  std::string path = target.substr(0, target.find('?'));
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= path.size()) {
    std::size_t end = path.find('/', start);
    if (end == std::string::npos) end = path.size();
    if (end > start) parts.push_back(path.substr(start, end - start));
    start = end + 1;
  }
  return parts;
}

json rule_json(const SubPattern& s) {
  return {{"id", s.id},
          {"direction", zone_name(s.style.direction)},
          {"upper_bound", s.style.upper_bound},
          {"preferred", to_token(s.style.preferred)},
          {"confidence", s.confidence},
          {"provenance", provenance_name(s.provenance)}};
}

json stats_json(const MemoryStats& s) {
  return {{"l1_count", s.l1_count},       {"l2_count", s.l2_count}, {"mirror_count", s.mirror_count},
          {"style_count", s.style_count}, {"l1_hits", s.l1_hits},   {"l2_hits", s.l2_hits}};
}

}  // namespace

Service::Service(ServiceConfig config) : config_(std::move(config)), net_(std::make_unique<Net>()) {
  if (!config_.backends) config_.backends = [] { return Backends::mock(); };
  if (config_.memory_path && std::filesystem::exists(*config_.memory_path)) {
    memory_ = std::make_shared<MemoryStore>(MemoryStore::load(*config_.memory_path));
  } else {
    memory_ = std::make_shared<MemoryStore>();
  }
}

Service::~Service() { stop(); }

std::shared_ptr<session::Session> Service::find_session(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

Response Service::route(const std::string& method, const std::string& target, const std::string& body) {
  const auto parts = path_parts(target);
  auto parse_body = [&body]() -> json {
    if (body.empty()) return json::object();
    return json::parse(body);
  };
  try {
    if (parts.size() == 1 && parts[0] == "healthz") {
      if (method != "GET") return error(405, "method not allowed");
      return {200, {{"status", "ok"}, {"version", kVersion}}};
    }

    if (parts.size() == 2 && parts[0] == "memory" && parts[1] == "stats") {
      if (method != "GET") return error(405, "method not allowed");
      return {200, stats_json(memory_->stats())};
    }

    if (!parts.empty() && parts[0] == "profiles") {
      if (parts.size() == 1) {
        if (method != "GET") return error(405, "method not allowed");
        return {200, {{"profiles", memory_->profiles()}}};
      }
      if (parts.size() != 2) return error(404, "not found");
      const std::string& name = parts[1];
      if (method == "PUT") {
        const json j = parse_body();
        if (!j.contains("rules") || !j["rules"].is_array()) return error(400, "body needs a \"rules\" array");
        std::vector<StyleRule> rules;
        for (const auto& r : j["rules"]) {
          StyleRule rule;
          auto zone = zone_from_name(r.at("direction").get<std::string>());
          auto action = action_from_token(r.at("preferred").get<std::string>());
          if (!zone) return error(400, "unknown direction");
          if (!action) return error(400, "unknown preferred action");
          rule.direction = *zone;
          rule.preferred = *action;
          rule.upper_bound = r.at("upper_bound").get<double>();
          if (!(rule.upper_bound > 0.0 && rule.upper_bound < 1.0)) return error(400, "upper_bound must be in (0, 1)");
          rules.push_back(rule);
        }
        memory_->replace_styles(name, rules);
      } else if (method != "GET") {
        return error(405, "method not allowed");
      }
      json rules = json::array();
      for (const auto& s : memory_->styles(name)) rules.push_back(rule_json(s));
      return {200, {{"name", name}, {"rules", rules}}};
    }

    if (!parts.empty() && parts[0] == "sessions") {
      if (parts.size() == 1) {
        if (method == "GET") {
          json list = json::array();
          std::lock_guard lock(sessions_mutex_);
          for (const auto& [id, s] : sessions_) list.push_back(s->state());
          return {200, {{"sessions", list}}};
        }
        if (method != "POST") return error(405, "method not allowed");
        session::SessionConfig sc;
        try {
          sc = session::session_config_from_json(parse_body(), config_.defaults);
        } catch (const json::exception& e) {
          return error(400, e.what());
        } catch (const std::exception& e) {
          return error(400, e.what());
        }
        std::shared_ptr<session::Session> s;
        {
          std::lock_guard lock(sessions_mutex_);
          if (stopping_) return error(503, "service is shutting down");
          const std::string id = "s" + std::to_string(next_session_++);
          s = std::make_shared<session::Session>(id, sc, memory_, config_.backends());
          sessions_.emplace(id, s);
        }
        s->start();
        return {201, {{"id", s->id()}, {"state", s->state()}}};
      }
      auto s = find_session(parts[1]);
      if (!s) return error(404, "no session " + parts[1]);
      if (parts.size() == 2) {
        if (method == "DELETE") {
          s->stop();
          return {200, s->state()};
        }
        if (method != "GET") return error(405, "method not allowed");
        return {200, s->state()};
      }
      if (parts.size() != 3) return error(404, "not found");
      if (parts[2] == "state") {
        if (method != "GET") return error(405, "method not allowed");
        return {200, s->state()};
      }
      if (parts[2] == "feedback" || parts[2] == "resume") {
        if (method != "POST") return error(405, "method not allowed");
        session::FeedbackOutcome out;
        if (parts[2] == "resume") {
          out = s->resume();
        } else {
          const json j = parse_body();
          if (!j.contains("action") || !j["action"].is_string()) return error(400, "body needs an \"action\" string");
          auto action = action_from_token(j["action"].get<std::string>());
          if (!action) {
            auto st = s->state();
            json allowed = st["pending_proposal"].is_null() ? json::array() : st["pending_proposal"]["allowed"];
            if (st["status"] != "paused") return error(409, "session is not paused", {{"state", st}});
            return error(422, "unknown action", {{"allowed", allowed}});
          }
          out = s->feedback(*action);
        }
        switch (out.kind) {
          case session::FeedbackOutcome::Kind::NotPaused:
            return error(409, "session is not paused", {{"state", s->state()}});
          case session::FeedbackOutcome::Kind::NotAllowed:
            return error(422, "action not in the allowed set", {{"allowed", actions_to_json(out.allowed)}});
          default:
            break;
        }
        return {200,
                {{"executed", to_token(out.executed)}, {"style", out.style ? rule_json(*out.style) : json(nullptr)}}};
      }
      return error(404, "not found");
    }
    return error(404, "not found");
  } catch (const json::exception& e) {
    return error(400, std::string("bad request: ") + e.what());
  }
}

// ---- network ------------------------------------------------------------------

void Service::start() {
  beast::error_code ec;
  const auto address = asio::ip::make_address(config_.host, ec);
  if (ec) throw BindError("bad host " + config_.host + ": " + ec.message());
  tcp::endpoint ep(address, config_.port);
  auto& acc = net_->acceptor;
  acc.open(ep.protocol(), ec);
  if (!ec) acc.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) acc.bind(ep, ec);
  if (!ec) acc.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw BindError("cannot listen on " + config_.host + ":" + std::to_string(config_.port) + ": " + ec.message());
  bound_port_ = acc.local_endpoint().port();
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Service::accept_loop() {
  while (!stopping_) {
    beast::error_code ec;
    tcp::socket socket(net_->io);
    net_->acceptor.accept(socket, ec);
    if (ec || stopping_) break;
    auto conn = std::make_shared<Connection>(std::move(socket));
    std::lock_guard lock(conns_mutex_);
    // Reap finished connections.
    for (auto it = conns_.begin(); it != conns_.end();) {
      if ((*it)->done) {
        if ((*it)->thread.joinable()) (*it)->thread.join();
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
    conns_.push_back(conn);
    conn->thread = std::thread([this, conn] {
      serve_connection(conn);
      conn->done = true;
    });
  }
}

void Service::serve_connection(std::shared_ptr<Connection> conn) {
  beast::flat_buffer buffer;
  beast::error_code ec;
  while (!stopping_) {
    http::request<http::string_body> req;
    http::read(conn->socket, buffer, req, ec);
    if (ec) break;
    const std::string target(req.target());
    const auto parts = path_parts(target);
    if (websocket::is_upgrade(req)) {
      if (parts.size() == 3 && parts[0] == "sessions" && parts[2] == "stream") {
        stream_session(conn, parts[1], &req);
      }
      break;
    }
    const Response r = route(std::string(req.method_string()), target, req.body());
    http::response<http::string_body> res{static_cast<http::status>(r.status), req.version()};
    res.set(http::field::server, "respond/" + std::string(kVersion));
    res.set(http::field::content_type, "application/json");
    res.keep_alive(req.keep_alive());
    res.body() = r.body.dump();
    res.prepare_payload();
    http::write(conn->socket, res, ec);
    if (ec || !req.keep_alive()) break;
  }
  conn->socket.shutdown(tcp::socket::shutdown_both, ec);
}

void Service::stream_session(std::shared_ptr<Connection> conn, const std::string& session_id, const void* request) {
  const auto& req = *static_cast<const http::request<http::string_body>*>(request);
  auto s = find_session(session_id);
  websocket::stream<tcp::socket&> ws(conn->socket);
  beast::error_code ec;
  if (!s) {
    // Refuse the upgrade with a plain 404.
    http::response<http::string_body> res{http::status::not_found, req.version()};
    res.set(http::field::content_type, "application/json");
    res.body() = json{{"error", "no session " + session_id}}.dump();
    res.prepare_payload();
    http::write(conn->socket, res, ec);
    return;
  }
  ws.accept(req, ec);
  if (ec) return;
  ws.text(true);

  bool ended = false;
  const int token = s->subscribe([conn](const json& ev) {
    {
      std::lock_guard lock(conn->mutex);
      conn->outbox.push_back(ev.dump());
    }
    conn->cv.notify_all();
  });
  // A snapshot first, so late subscribers see a paused proposal.
  json snapshot = s->state();
  snapshot["type"] = "state";
  ws.write(asio::buffer(snapshot.dump()), ec);
  if (snapshot["status"] == "finished") ended = true;

  while (!ec && !ended) {
    std::string msg;
    {
      std::unique_lock lock(conn->mutex);
      conn->cv.wait(lock, [&] { return !conn->outbox.empty() || conn->closing || stopping_; });
      if (conn->outbox.empty()) break;
      msg = std::move(conn->outbox.front());
      conn->outbox.pop_front();
    }
    ws.write(asio::buffer(msg), ec);
    if (msg.find("\"type\":\"end\"") != std::string::npos) ended = true;
  }
  s->unsubscribe(token);
  if (!ec) ws.close(websocket::close_code::normal, ec);
}

void Service::stop() {
  if (stopped_) return;
  stopped_ = true;
  stopping_ = true;
  ::shutdown(net_->acceptor.native_handle(), SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  beast::error_code ec;
  net_->acceptor.close(ec);

  std::vector<std::shared_ptr<session::Session>> sessions;
  {
    std::lock_guard lock(sessions_mutex_);
    for (auto& [id, s] : sessions_) sessions.push_back(s);
  }
  for (auto& s : sessions) s->stop();

  std::list<std::shared_ptr<Connection>> conns;
  {
    std::lock_guard lock(conns_mutex_);
    conns.swap(conns_);
  }
  for (auto& c : conns) c->kick();
  for (auto& c : conns) {
    if (c->thread.joinable()) c->thread.join();
  }
  if (config_.memory_path) memory_->persist(*config_.memory_path);
}

}  // namespace respond::service
