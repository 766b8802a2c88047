#include <chrono>
#include <thread>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "doctest.h"
#include "httplib.h"
#include "respond/service.hpp"
#include "support.hpp"

using namespace respond;
using namespace respond::service;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

ServiceConfig local_config() {
  ServiceConfig c;
  c.port = 0;
  c.defaults.decision_steps = 8;
  c.defaults.density = 1.5;
  return c;
}

// Polls the state endpoint until `pred` holds or the deadline passes.
template <class Pred>
json poll_state(Service& svc, const std::string& id, Pred pred, std::chrono::milliseconds limit = 10s) {
  const auto deadline = std::chrono::steady_clock::now() + limit;
  json st;
  do {
    st = svc.route("GET", "/sessions/" + id + "/state", "").body;
    if (pred(st)) return st;
    std::this_thread::sleep_for(5ms);
  } while (std::chrono::steady_clock::now() < deadline);
  return st;
}

}  // namespace

TEST_CASE("health, 404 and 405") {
  Service svc(local_config());
  auto r = svc.route("GET", "/healthz", "");
  CHECK(r.status == 200);
  CHECK(r.body["status"] == "ok");
  CHECK(svc.route("POST", "/healthz", "").status == 405);
  CHECK(svc.route("GET", "/nowhere", "").status == 404);
  CHECK(svc.route("GET", "/sessions/s99", "").status == 404);
  CHECK(svc.route("PATCH", "/sessions", "").status == 405);
  CHECK(svc.route("POST", "/sessions", "{not json").status == 400);
  CHECK(svc.route("POST", "/sessions", R"({"mode":"chaos"})").status == 400);
  CHECK(svc.route("GET", "/memory/stats", "").body["l1_count"] == 0);
}

TEST_CASE("profiles round-trip") {
  Service svc(local_config());
  auto r = svc.route("PUT", "/profiles/sporty",
                     R"({"rules":[{"direction":"front","upper_bound":0.6,"preferred":"FASTER"}]})");
  CHECK(r.status == 200);
  REQUIRE(r.body["rules"].size() == 1);
  CHECK(r.body["rules"][0]["direction"] == "front");
  CHECK(r.body["rules"][0]["preferred"] == "FASTER");
  r = svc.route("GET", "/profiles/sporty", "");
  CHECK(r.body["rules"][0]["upper_bound"].get<double>() == doctest::Approx(0.6));
  CHECK(svc.route("GET", "/profiles", "").body["profiles"] == json::array({"sporty"}));
  CHECK(svc.route("PUT", "/profiles/x", R"({"rules":[{"direction":"up","upper_bound":0.5,"preferred":"IDLE"}]})")
            .status == 400);
  CHECK(svc.route("PUT", "/profiles/x", R"({"rules":[{"direction":"front","upper_bound":1.5,"preferred":"IDLE"}]})")
            .status == 400);
  CHECK(svc.route("DELETE", "/profiles/sporty", "").status == 405);
  CHECK(svc.route("GET", "/profiles/nobody", "").body["rules"].empty());
}

TEST_CASE("personalization session over routes") {
  Service svc(local_config());
  auto r = svc.route("POST", "/sessions", R"({"mode":"personalization","profile":"sporty","config":{"ego_lane":0}})");
  REQUIRE(r.status == 201);
  const std::string id = r.body["id"];
  json st = poll_state(svc, id, [](const json& s) { return s["status"] != "running"; });
  REQUIRE(st["status"] == "paused");
  const json proposal = st["pending_proposal"];
  CHECK(proposal["rl"].get<double>() < 0.75);
  CHECK(proposal["pattern"].size() == 5);

  r = svc.route("POST", "/sessions/" + id + "/feedback", R"({"action":"TELEPORT"})");
  CHECK(r.status == 422);
  CHECK(r.body["allowed"] == proposal["allowed"]);
  r = svc.route("POST", "/sessions/" + id + "/feedback", R"({"action":"LANE_RIGHT"})");
  CHECK(r.status == 422);
  CHECK(svc.route("POST", "/sessions/" + id + "/feedback", R"({"nope":1})").status == 400);

  const bool diverge = proposal["proposed"] != "SLOWER";
  r = svc.route("POST", "/sessions/" + id + "/feedback", R"({"action":"SLOWER"})");
  CHECK(r.status == 200);
  CHECK(r.body["executed"] == "SLOWER");
  CHECK(r.body["style"].is_null() == !diverge);
  if (diverge) {
    CHECK(svc.route("GET", "/profiles/sporty", "").body["rules"].size() == 1);
  }
  CHECK(svc.route("POST", "/sessions/" + id + "/feedback", R"({"action":"SLOWER"})").status == 409);

  while ((st = poll_state(svc, id, [](const json& s) { return s["status"] != "running"; }))["status"] == "paused") {
    CHECK(svc.route("POST", "/sessions/" + id + "/resume", "").status == 200);
  }
  CHECK(st["status"] == "finished");
  CHECK(st["summary"].is_object());
  r = svc.route("POST", "/sessions/" + id + "/resume", "");
  CHECK(r.status == 409);
  CHECK(r.body["state"]["status"] == "finished");
  CHECK(svc.route("GET", "/sessions", "").body["sessions"].size() == 1);
}

TEST_CASE("http and websocket transport") {
  const auto dir = testsupport::scratch_dir("service");
  ServiceConfig cfg = local_config();
  cfg.memory_path = dir / "memory.jsonl";
  cfg.defaults.decision_steps = 5;
  Service svc(cfg);
  svc.start();
  REQUIRE(svc.port() != 0);

  httplib::Client cli("127.0.0.1", svc.port());
  auto health = cli.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(health->get_header_value("Content-Type") == "application/json");
  CHECK(cli.Get("/nope")->status == 404);

  auto created = cli.Post("/sessions", R"({"step_delay_ms":30})", "application/json");
  REQUIRE(created);
  REQUIRE(created->status == 201);
  const std::string id = json::parse(created->body)["id"];

  namespace beast = boost::beast;
  boost::asio::io_context io;
  boost::asio::ip::tcp::resolver resolver(io);
  beast::websocket::stream<boost::asio::ip::tcp::socket> ws(io);
  boost::asio::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(svc.port())));
  ws.handshake("127.0.0.1", "/sessions/" + id + "/stream");
  std::vector<json> events;
  beast::error_code ec;
  for (;;) {
    beast::flat_buffer buf;
    ws.read(buf, ec);
    if (ec) break;
    events.push_back(json::parse(beast::buffers_to_string(buf.data())));
    if (events.back()["type"] == "end") break;
  }
  REQUIRE(events.size() >= 2);
  CHECK(events.front()["type"] == "state");
  CHECK(events.back()["type"] == "end");
  int steps = 0;
  for (const auto& e : events) {
    if (e["type"] != "step") continue;
    ++steps;
    CHECK(e["paused"] == false);
    CHECK(e["pattern"].size() == 5);
    CHECK(e.contains("risks"));
    CHECK(e.contains("allowed"));
  }
  CHECK(steps > 0);

  // unknown session: the upgrade is refused
  beast::websocket::stream<boost::asio::ip::tcp::socket> bad(io);
  boost::asio::connect(bad.next_layer(), resolver.resolve("127.0.0.1", std::to_string(svc.port())));
  bad.handshake("127.0.0.1", "/sessions/zzz/stream", ec);
  CHECK(ec);

  // a second service on the same port cannot bind
  ServiceConfig clash = local_config();
  clash.port = svc.port();
  Service other(clash);
  CHECK_THROWS_AS(other.start(), BindError);

  svc.stop();
  CHECK(std::filesystem::exists(*cfg.memory_path));
  CHECK_NOTHROW(MemoryStore::load(*cfg.memory_path));
}
