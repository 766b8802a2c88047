#include "respond/llm.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <thread>

namespace respond {

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

void append_risks(std::string& out, const DirectionalRisks& r) {
  out += "Risk values (0 = none, 1 = critical):\n";
  for (Zone z : kAllZones) {
    out += "RV ";
    out += zone_name(z);
    out += ": " + fixed2(r[z]) + "\n";
  }
}

std::string pattern_block(const RiskPattern& p) {
  return "Risk pattern (rows rear to front; columns left lane | ego lane | right lane; "
         "0 safe, 1 attention, 2 danger, 3 critical):\n" +
         render_text(p);
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> words(std::string_view raw) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : raw) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      cur.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::optional<double> read_number_after(std::string_view text, std::string_view label) {
  auto pos = text.find(label);
  if (pos == std::string_view::npos) return std::nullopt;
  std::string tail(text.substr(pos + label.size(), 32));
  char* end = nullptr;
  double v = std::strtod(tail.c_str(), &end);
  if (end == tail.c_str()) return std::nullopt;
  return v;
}

// Center-column level of the given grid row in a rendered prompt pattern, 0 if absent.
int pattern_center(std::string_view text, int row) {
  auto pos = text.find("critical):\n");
  if (pos == std::string_view::npos) return 0;
  pos += 11 + static_cast<std::size_t>(row) * 4 + 1;
  if (pos >= text.size() || !std::isdigit(static_cast<unsigned char>(text[pos]))) return 0;
  return text[pos] - '0';
}

// Reflection double: braking is the correction unless the ego was already
// braking, in which case it escapes to a clear adjacent lane (left first).
Action mock_revision(std::string_view text) {
  auto pos = text.find("Executed action: ");
  if (pos == std::string_view::npos) return Action::Slower;
  auto end = text.find('\n', pos);
  const auto executed = action_from_token(text.substr(pos + 17, end - pos - 17));
  if (executed != Action::Slower) return Action::Slower;
  const int lane = static_cast<int>(read_number_after(text, "Ego lane: ").value_or(0.0));
  const auto of = text.find(" of ", text.find("Ego lane: "));
  const int lanes = of == std::string_view::npos ? 1 : static_cast<int>(read_number_after(text.substr(of), " of ").value_or(1.0));
  const double left = std::max(read_number_after(text, "RV left_front: ").value_or(1.0),
                               read_number_after(text, "RV left_rear: ").value_or(1.0));
  const double right = std::max(read_number_after(text, "RV right_front: ").value_or(1.0),
                                read_number_after(text, "RV right_rear: ").value_or(1.0));
  if (lane + 1 < lanes && left < 0.34 && left <= right) return Action::LaneLeft;
  if (lane > 0 && right < 0.34) return Action::LaneRight;
  if (lane + 1 < lanes && left < 0.34) return Action::LaneLeft;
  return Action::Slower;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

PromptBundle build_decision_prompt(const DecisionContext& ctx, ActionSet allowed, bool include_risk_values,
                                   const PromptHints& hints) {
  if (allowed.empty()) throw ContractError("decision prompt needs a non-empty allowed set");
  PromptBundle b;
  b.purpose = PromptPurpose::Decision;
  b.temperature = 0.0;
  b.allowed = allowed;
  b.version = std::string(kDecisionPromptVersion);
  b.system_text =
      "You are the tactical decision module of an automated vehicle on a multi-lane highway. "
      "Every second you choose one discrete meta-action. Avoid collisions first; otherwise keep a speed "
      "comparable to the surrounding traffic.";

  std::string& u = b.user_text;
  u = "[" + b.version + "]\n";
  u += pattern_block(ctx.pattern);
  u += "Ego speed: " + fixed2(ctx.scene.ego.vx) + " m/s\n";
  u += "Ego lane: " + std::to_string(ctx.scene.ego.lane_index) + " of " + std::to_string(ctx.scene.road.lane_count) +
       " (0 = rightmost)\n";
  u += "Mean surrounding speed: " + fixed2(mean_surrounding_speed(ctx.scene)) + " m/s\n";
  if (include_risk_values) append_risks(u, ctx.risks);
  if (hints.intent) u += "Strategic intent from memory: " + std::string(intent_name(*hints.intent)) + "\n";
  for (const auto& n : hints.notes) u += "Note: " + n + "\n";
  u += "Allowed actions: " + allowed.to_string() + "\n";
  u += "Reply with exactly one of the allowed action tokens.\n";
  return b;
}

PromptBundle build_reflection_prompt(const CrashRecord& crash) {
  PromptBundle b;
  b.purpose = PromptPurpose::Reflection;
  b.temperature = 0.3;
  b.allowed = ActionSet::all();
  b.version = std::string(kReflectionPromptVersion);
  b.system_text =
      "You analyse highway collisions of an automated vehicle and propose the action that should have been "
      "taken at the last decision step before impact.";

  const auto& pre = crash.pre_frame;
  const auto& post = crash.post_frame;
  std::string& u = b.user_text;
  u = "[" + b.version + "]\n";
  u += "Episode " + crash.episode_id + ", decision step " + std::to_string(crash.step_index) + "\n";
  u += "== Pre-collision frame (t = " + fixed2(pre.scene.timestamp) + " s) ==\n";
  u += pattern_block(pre.pattern);
  append_risks(u, pre.risks);
  u += "Ego speed: " + fixed2(pre.scene.ego.vx) + " m/s\n";
  u += "Ego lane: " + std::to_string(pre.scene.ego.lane_index) + " of " + std::to_string(pre.scene.road.lane_count) +
       " (0 = rightmost)\n";
  u += "Executed action: " + std::string(to_token(crash.executed_action)) + "\n";
  u += "== Post-collision frame (t = " + fixed2(post.scene.timestamp) + " s) ==\n";
  u += pattern_block(post.pattern);
  append_risks(u, post.risks);
  const auto& c = crash.collider;
  u += "Collision object: vehicle " + std::to_string(c.id) + ", dx " + fixed2(c.x - post.scene.ego.x) + " m, dy " +
       fixed2(c.y - post.scene.ego.y) + " m, speed " + fixed2(c.vx) + " m/s, lateral speed " + fixed2(c.vy) +
       " m/s, lane " + std::to_string(c.lane_index) + "\n";
  u += "Answer in exactly this layout:\n```\nCAUSE: <one sentence>\nREVISED_ACTION: <one of " +
       ActionSet::all().to_string() + ">\n```\n";
  return b;
}

ParsedAction parse_action(std::string_view raw, ActionSet allowed) {
  if (allowed.empty()) throw ContractError("parse_action needs a non-empty allowed set");
  std::set<Action> found;
  for (const auto& w : words(raw)) {
    auto a = action_from_token(w);
    if (a && allowed.contains(*a)) found.insert(*a);
  }
  if (found.size() == 1) return {*found.begin(), {}};
  if (found.empty()) return {std::nullopt, "no allowed action token in reply"};
  return {std::nullopt, "reply names several allowed actions"};
}

ParsedReflection parse_reflection(std::string_view raw) {
  ParsedReflection out;
  std::istringstream in{std::string(raw)};
  std::string line;
  bool have_action_line = false;
  while (std::getline(in, line)) {
    auto start = line.find_first_not_of(" \t`");
    if (start == std::string::npos) continue;
    std::string_view body = std::string_view(line).substr(start);
    const std::string head = upper(body.substr(0, std::min<std::size_t>(body.size(), 16)));
    if (head.rfind("CAUSE:", 0) == 0) {
      auto text = body.substr(6);
      auto s = text.find_first_not_of(' ');
      out.cause = s == std::string_view::npos ? "" : std::string(text.substr(s));
    } else if (head.rfind("REVISED_ACTION:", 0) == 0) {
      have_action_line = true;
      auto w = words(body.substr(15));
      if (!w.empty()) out.revised = action_from_token(w.front());
    }
  }
  if (!have_action_line) {
    out.error = "missing REVISED_ACTION line";
  } else if (!out.revised) {
    out.error = "REVISED_ACTION does not name a known action";
  }
  return out;
}

// ---- mock ---------------------------------------------------------------

std::string mock_complete(const PromptBundle& bundle, std::uint64_t seed, bool adversarial) {
  const std::uint64_t h = fnv1a(bundle.user_text, fnv1a(std::to_string(seed)));
  if (bundle.purpose == PromptPurpose::Reflection) {
    if (adversarial) return "CAUSE: unclear.\nREVISED_ACTION: TELEPORT\n";
    static constexpr const char* kCauses[] = {
        "The ego vehicle closed the gap to the conflicting vehicle faster than it could react.",
        "Insufficient spacing was kept for the speed difference to the conflicting vehicle.",
        "The executed maneuver left no margin against the conflicting vehicle."};
    return std::string("```\nCAUSE: ") + kCauses[h % 3] + "\nREVISED_ACTION: " +
           std::string(to_token(mock_revision(bundle.user_text))) + "\n```\n";
  }

  if (adversarial) {
    for (Action a : kAllActions) {
      if (!bundle.allowed.contains(a)) return "Decision: " + std::string(to_token(a)) + ".";
    }
    return "Decision: maintain whatever feels right.";
  }

  const std::string& text = bundle.user_text;
  const double front = read_number_after(text, "RV front: ").value_or(0.0);
  const double ego_speed = read_number_after(text, "Ego speed: ").value_or(0.0);
  const double mean_speed = read_number_after(text, "Mean surrounding speed: ").value_or(ego_speed);

  const int closing = std::max(pattern_center(text, 2), pattern_center(text, 3));

  std::vector<Action> preference;
  if (front >= 0.75) {
    preference = {Action::Slower, Action::Idle, Action::LaneLeft, Action::LaneRight, Action::Faster};
  } else if (front >= 0.34 || closing >= 1) {
    // Blocked ahead: overtake, left first. Side risk is not weighed.
    preference = {Action::LaneLeft, Action::LaneRight, Action::Slower, Action::Idle, Action::Faster};
  } else if (ego_speed < mean_speed + 2.5) {
    preference = {Action::Faster, Action::Idle, Action::LaneLeft, Action::LaneRight, Action::Slower};
  } else {
    preference = {Action::Idle, Action::Faster, Action::LaneLeft, Action::LaneRight, Action::Slower};
  }
  Action choice = Action::Slower;
  for (Action a : preference) {
    if (bundle.allowed.contains(a)) {
      choice = a;
      break;
    }
  }
  static constexpr const char* kTemplates[] = {"Decision: {}. This keeps progress while respecting the risk grid.",
                                               "I choose {} given the current risk values.",
                                               "{} - best trade-off between speed and safety here."};
  std::string t = kTemplates[(h >> 8) % 3];
  t.replace(t.find("{}"), 2, to_token(choice));
  return t;
}

std::string MockBackend::complete(const PromptBundle& bundle) {
  ++calls_;
  return mock_complete(bundle, seed_, adversarial_);
}

Backends Backends::mock(std::uint64_t seed, bool adversarial) {
  return {std::make_shared<MockBackend>(seed, adversarial), std::make_shared<MockBackend>(seed, adversarial)};
}

// ---- live HTTP backend -----------------------------------------------------

HttpBackendConfig HttpBackendConfig::from_env(PromptPurpose role, HttpBackendConfig defaults) {
  HttpBackendConfig c = std::move(defaults);
  if (role == PromptPurpose::Reflection && c.model == "gpt-4o-mini") c.model = "gpt-4o";
  if (const char* v = std::getenv("RESPOND_LLM_BASE_URL")) c.base_url = v;
  if (const char* v = std::getenv("OPENAI_API_KEY")) c.api_key = v;
  if (const char* v = std::getenv("RESPOND_LLM_API_KEY")) c.api_key = v;
  if (const char* v = std::getenv("RESPOND_LLM_TIMEOUT_S")) c.timeout_s = std::atof(v);
  const char* model_var =
      role == PromptPurpose::Decision ? "RESPOND_LLM_DECISION_MODEL" : "RESPOND_LLM_REFLECTION_MODEL";
  if (const char* v = std::getenv(model_var)) c.model = v;
  if (const char* v = std::getenv("RESPOND_LLM_VERBOSE")) c.verbose = std::string(v) == "1";
  return c;
}

HttpBackendConfig HttpBackendConfig::from_env(PromptPurpose role) { return from_env(role, HttpBackendConfig{}); }

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {}

std::string HttpBackend::request_body(const PromptBundle& bundle) const {
  nlohmann::json body{{"model", config_.model},
                      {"temperature", bundle.temperature},
                      {"messages",
                       nlohmann::json::array({{{"role", "system"}, {"content", bundle.system_text}},
                                              {{"role", "user"}, {"content", bundle.user_text}}})}};
  return body.dump();
}

std::string HttpBackend::extract_content(std::string_view response_body) {
  auto j = nlohmann::json::parse(response_body, nullptr, false);
  if (j.is_discarded()) throw BackendError("completion response is not JSON");
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const std::exception&) {
    throw BackendError("completion response lacks choices[0].message.content");
  }
}

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto path_start = url.find('/', host_start);
  SplitUrl s;
  s.origin = path_start == std::string::npos ? url : url.substr(0, path_start);
  s.prefix = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!s.prefix.empty() && s.prefix.back() == '/') s.prefix.pop_back();
  return s;
}

}  // namespace

std::string HttpBackend::complete(const PromptBundle& bundle) {
  const SplitUrl url = split_url(config_.base_url);
  const std::string path = url.prefix + "/chat/completions";
  const std::string body = request_body(bundle);
  if (config_.verbose) {
    std::cerr << "[llm] POST " << url.origin << path << " authorization: Bearer <redacted>\n" << body << "\n";
  }

  std::string last_error = "no attempt made";
  int delay_ms = config_.backoff_initial_ms;
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      delay_ms *= 2;
    }
    httplib::Client client(url.origin);
    const auto timeout = std::chrono::duration<double>(config_.timeout_s);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (config_.verbose) std::cerr << "[llm] status " << res->status << "\n" << res->body << "\n";
    if (res->status == 429 || res->status >= 500) {
      last_error = "server returned status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) throw BackendError("completion request rejected with status " + std::to_string(res->status));
    return extract_content(res->body);
  }
  throw BackendError("completion failed after " + std::to_string(config_.retries + 1) + " attempts: " + last_error);
}

}  // namespace respond
