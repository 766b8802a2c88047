#include "respond/session.hpp"

#include <cmath>

#include "respond/json_io.hpp"
#include "respond/reflection.hpp"

namespace respond::session {

using nlohmann::json;

std::string_view mode_name(Mode m) { return m == Mode::Personalization ? "personalization" : "autonomous"; }

std::optional<Mode> mode_from_name(std::string_view name) {
  if (name == "autonomous") return Mode::Autonomous;
  if (name == "personalization") return Mode::Personalization;
  return std::nullopt;
}

std::string_view status_name(Status s) {
  switch (s) {
    case Status::Paused:
      return "paused";
    case Status::Finished:
      return "finished";
    default:
      return "running";
  }
}

json feedback_json(const FeedbackRecord& fb) {
  return {{"session_id", fb.session_id},
          {"step", fb.step},
          {"proposed", to_token(fb.proposed)},
          {"chosen", to_token(fb.chosen)},
          {"risks", fb.risks},
          {"sub_pattern", fb.sub_pattern ? json(*fb.sub_pattern) : json(nullptr)}};
}

double style_bound(double rv) {
  const double k = std::floor(std::max(rv, 0.0) * 10.0);
  return (k + 1.0) / 10.0;
}

std::optional<SubPattern> abstract_feedback(const FeedbackRecord& fb, const std::string& profile, double tau) {
  if (fb.chosen == fb.proposed) return std::nullopt;
  if (risk_level(fb.risks) >= tau) return std::nullopt;
  Zone dominant = Zone::Front;
  for (Zone z : kAllZones) {
    if (fb.risks[z] > fb.risks[dominant]) dominant = z;
  }
  const double bound = style_bound(fb.risks[dominant]);
  if (bound >= 1.0) return std::nullopt;
  return make_style(profile, StyleRule{dominant, bound, fb.chosen}, 1.0, Provenance::HumanFeedback);
}

json proposal_json(const Proposal& p) {
  return {{"step", p.step},
          {"pattern", pattern_to_json(p.pattern)},
          {"pattern_text", render_text(p.pattern)},
          {"risks", p.risks},
          {"rl", p.risk_level},
          {"regime", regime_name(p.regime)},
          {"proposed", to_token(p.proposed)},
          {"source", source_name(p.source)},
          {"allowed", actions_to_json(p.allowed)}};
}

std::optional<Proposal> gate(const DecisionContext& ctx, const Decision& decision, const MemoryStore& memory,
                             int step, double tau) {
  if (decision.risk_level >= tau) return std::nullopt;
  Proposal p;
  p.step = step;
  p.pattern = ctx.pattern;
  p.risks = ctx.risks;
  p.risk_level = decision.risk_level;
  p.regime = decision.regime;
  p.proposed = decision.action;
  p.source = decision.source;
  p.allowed = mask_lateral(feasible_actions(ctx.scene), ctx.risks, ctx.pattern,
                           ctx.flags.disable_l2 ? nullptr : &memory);
  p.allowed.insert(decision.action);
  return p;
}

sim::StepHook personalization_hook(MemoryStore& memory, std::string profile, std::string session_id,
                                   Reviewer reviewer, std::vector<FeedbackRecord>* feedback_log, double tau) {
  return [&memory, profile = std::move(profile), session_id = std::move(session_id), reviewer = std::move(reviewer),
          feedback_log, tau](const DecisionContext& ctx, const Decision& decision, sim::StepLog& log) -> Action {
    const auto proposal = gate(ctx, decision, memory, log.step, tau);
    if (!proposal) return decision.action;
    log.paused = true;
    const auto chosen = reviewer(*proposal);
    if (!chosen || !proposal->allowed.contains(*chosen)) return decision.action;
    FeedbackRecord fb{session_id, log.step, decision.action, *chosen, ctx.risks, std::nullopt};
    if (auto style = abstract_feedback(fb, profile, tau)) {
      const auto ids = memory.insert_l2(*style);
      if (!ids.empty()) fb.sub_pattern = ids.front();
    }
    if (feedback_log) feedback_log->push_back(fb);
    return *chosen;
  };
}

SessionConfig session_config_from_json(const json& j, const sim::SimConfig& defaults) {
  if (!j.is_object()) throw std::invalid_argument("session request must be a JSON object");
  SessionConfig c;
  c.sim = defaults;
  for (const auto& [key, value] : j.items()) {
    if (key == "mode") {
      auto m = mode_from_name(value.get<std::string>());
      if (!m) throw std::invalid_argument("mode must be \"autonomous\" or \"personalization\"");
      c.mode = *m;
    } else if (key == "profile") {
      c.profile = value.get<std::string>();
      if (c.profile.empty()) throw std::invalid_argument("profile must be non-empty");
    } else if (key == "config") {
      sim::from_json(value, c.sim);
    } else if (key == "feedback_timeout_s") {
      const double s = value.get<double>();
      if (!(s > 0)) throw std::invalid_argument("feedback_timeout_s must be positive");
      c.feedback_timeout = std::chrono::milliseconds(static_cast<long long>(s * 1000.0));
    } else if (key == "step_delay_ms") {
      c.step_delay = std::chrono::milliseconds(value.get<long long>());
    } else {
      throw std::invalid_argument("unknown key \"" + key + "\"");
    }
  }
  c.sim.validate();
  return c;
}

// ---- Session ----------------------------------------------------------------------

Session::Session(std::string id, SessionConfig config, std::shared_ptr<MemoryStore> memory, Backends backends)
    : id_(std::move(id)), config_(std::move(config)), memory_(std::move(memory)), backends_(std::move(backends)) {}

Session::~Session() { stop(); }

void Session::start() { worker_ = std::thread([this] { run(); }); }

void Session::stop() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

bool Session::wait_finished(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  return cv_.wait_for(lock, timeout, [this] { return ended_; });
}

bool Session::wait_paused(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mutex_);
  cv_.wait_for(lock, timeout, [this] { return status_ == Status::Paused || ended_; });
  return status_ == Status::Paused;
}

Status Session::status() const {
  std::lock_guard lock(mutex_);
  return status_;
}

json Session::state() const {
  std::lock_guard lock(mutex_);
  json j{{"session_id", id_},
         {"mode", mode_name(config_.mode)},
         {"profile", config_.profile},
         {"status", status_name(status_)},
         {"step", step_},
         {"paused_at_step", pending_ ? json(pending_->step) : json(nullptr)},
         {"pending_proposal", pending_ ? proposal_json(*pending_) : json(nullptr)},
         {"feedback_count", feedback_count_}};
  j["summary"] = summary_ ? *summary_ : json(nullptr);
  return j;
}

FeedbackOutcome Session::feedback(Action chosen) {
  FeedbackOutcome out;
  {
    std::lock_guard lock(mutex_);
    if (status_ != Status::Paused || !pending_ || answer_) {
      out.kind = FeedbackOutcome::Kind::NotPaused;
      return out;
    }
    out.allowed = pending_->allowed;
    if (!pending_->allowed.contains(chosen)) {
      out.kind = FeedbackOutcome::Kind::NotAllowed;
      return out;
    }
    FeedbackRecord fb{id_, pending_->step, pending_->proposed, chosen, pending_->risks, std::nullopt};
    out.style = abstract_feedback(fb, config_.profile);
    if (out.style) {
      const auto ids = memory_->insert_l2(*out.style);
      if (!ids.empty()) {
        fb.sub_pattern = ids.front();
        out.style->id = ids.front();
      }
    }
    feedback_log_.push_back(fb);
    ++feedback_count_;
    answer_ = chosen;
    // Leave the paused state now so a second answer or a state read cannot see the stale proposal.
    status_ = Status::Running;
    pending_.reset();
    out.executed = chosen;
  }
  cv_.notify_all();
  return out;
}

FeedbackOutcome Session::resume() {
  Action proposed;
  {
    std::lock_guard lock(mutex_);
    if (status_ != Status::Paused || !pending_ || answer_) {
      FeedbackOutcome out;
      out.kind = FeedbackOutcome::Kind::NotPaused;
      return out;
    }
    proposed = pending_->proposed;
  }
  return feedback(proposed);
}

int Session::subscribe(Listener listener) {
  std::lock_guard lock(listeners_mutex_);
  const int token = next_token_++;
  listeners_.emplace(token, std::move(listener));
  return token;
}

void Session::unsubscribe(int token) {
  std::lock_guard lock(listeners_mutex_);
  listeners_.erase(token);
}

void Session::publish(const json& event) {
  std::lock_guard lock(listeners_mutex_);
  for (auto& [token, fn] : listeners_) fn(event);
}

std::optional<Action> Session::review(const Proposal& p) {
  std::unique_lock lock(mutex_);
  pending_ = p;
  answer_.reset();
  status_ = Status::Paused;
  cv_.notify_all();
  cv_.wait_for(lock, config_.feedback_timeout, [this] { return answer_.has_value() || stop_; });
  std::optional<Action> chosen = answer_;
  pending_.reset();
  answer_.reset();
  status_ = Status::Running;
  return chosen;
}

void Session::run() {
  sim::RespondAgent agent(*memory_, *backends_.decision, config_.sim.decision);
  sim::EpisodeOptions opts;
  opts.episode_id = id_;
  opts.profile = config_.profile;
  opts.cancelled = [this] {
    std::lock_guard lock(mutex_);
    return stop_;
  };
  opts.hook = [this](const DecisionContext& ctx, const Decision& decision, sim::StepLog& log) -> Action {
    {
      std::lock_guard lock(mutex_);
      step_ = log.step;
    }
    Action executed = decision.action;
    if (config_.mode == Mode::Personalization) {
      if (auto p = gate(ctx, decision, *memory_, log.step, config_.sim.decision.tau)) {
        log.paused = true;
        json ev = proposal_json(*p);
        ev["type"] = "proposal";
        ev["paused"] = true;
        publish(ev);
        if (auto chosen = review(*p)) executed = *chosen;
      }
    }
    publish({{"type", "step"},
             {"step", log.step},
             {"pattern", pattern_to_json(ctx.pattern)},
             {"risks", ctx.risks},
             {"rl", decision.risk_level},
             {"regime", regime_name(decision.regime)},
             {"proposed", to_token(decision.action)},
             {"source", source_name(decision.source)},
             {"allowed", actions_to_json(decision.allowed)},
             {"paused", log.paused},
             {"executed", to_token(executed)}});
    if (config_.step_delay.count() > 0) {
      std::unique_lock lock(mutex_);
      cv_.wait_for(lock, config_.step_delay, [this] { return stop_; });
    }
    return executed;
  };

  json summary;
  try {
    const sim::EpisodeResult result = sim::run_episode(config_.sim, agent, opts);
    summary = {{"completed_steps", result.completed_steps},
               {"collided", result.collided},
               {"cancelled", result.cancelled},
               {"avg_speed", result.avg_speed},
               {"llm_call_total", result.llm_call_total}};
    if (result.crash) {
      const ReflectionOutcome r = reflect(*result.crash, *backends_.reflection, *memory_);
      summary["reflection"] = json::parse(audit_json(*result.crash, r));
    }
  } catch (const std::exception& e) {
    summary = {{"error", e.what()}};
  }
  {
    std::lock_guard lock(mutex_);
    status_ = Status::Finished;
    pending_.reset();
    summary_ = summary;
  }
  publish({{"type", "end"}, {"summary", summary}});
  {
    std::lock_guard lock(mutex_);
    ended_ = true;
  }
  cv_.notify_all();
}

}  // namespace respond::session
