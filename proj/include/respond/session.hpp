#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "respond/decision.hpp"
#include "respond/memory.hpp"
#include "respond/sim.hpp"

// Human-in-the-loop personalization and the session state machine behind the
// HTTP/WS service.
namespace respond::session {

enum class Mode { Autonomous, Personalization };
std::string_view mode_name(Mode m);
std::optional<Mode> mode_from_name(std::string_view name);

struct FeedbackRecord {
  std::string session_id;
  int step = 0;
  Action proposed = Action::Idle;
  Action chosen = Action::Idle;
  DirectionalRisks risks;
  std::optional<EntryId> sub_pattern;
};

nlohmann::json feedback_json(const FeedbackRecord& fb);

/// Style bound for an observed risk value: the next 0.1 above it, at least 0.1.
double style_bound(double rv);

/// STYLE(argmax zone of the six risks, style_bound(that risk), chosen) under
/// `profile`, or nothing when chosen == proposed, RL >= tau, or the bound
/// would reach 1 (such a rule could never fail to match).
std::optional<SubPattern> abstract_feedback(const FeedbackRecord& fb, const std::string& profile, double tau = 0.75);

/// Published when a low-risk step pauses for human review.
struct Proposal {
  int step = 0;
  RiskPattern pattern;
  DirectionalRisks risks;
  double risk_level = 0.0;
  Regime regime = Regime::LowRisk;
  Action proposed = Action::Idle;
  DecisionSource source = DecisionSource::DefaultLLM;
  ActionSet allowed;  // feasible and laterally masked; what feedback may choose from
};

nlohmann::json proposal_json(const Proposal& p);

/// The proposal for a step, or nothing when RL >= tau (the decision runs
/// without review).
std::optional<Proposal> gate(const DecisionContext& ctx, const Decision& decision, const MemoryStore& memory,
                             int step, double tau = 0.75);

/// Synchronous reviewer: returns the chosen action, or nothing on timeout.
using Reviewer = std::function<std::optional<Action>(const Proposal&)>;

/// Step hook implementing the personalization gate: steps at RL >= tau run
/// the decision untouched; lower-risk steps go to `reviewer`, divergent
/// choices become STYLE records under `profile` and execute.
sim::StepHook personalization_hook(MemoryStore& memory, std::string profile, std::string session_id,
                                   Reviewer reviewer, std::vector<FeedbackRecord>* feedback_log,
                                   double tau = 0.75);

// ---- threaded sessions ----------------------------------------------------------

enum class Status { Running, Paused, Finished };
std::string_view status_name(Status s);

struct SessionConfig {
  Mode mode = Mode::Autonomous;
  std::string profile = "default";
  sim::SimConfig sim;
  std::chrono::milliseconds feedback_timeout{30000};
  std::chrono::milliseconds step_delay{0};  // pacing for live viewers
};

/// Parses {mode, profile, config, feedback_timeout_s, step_delay_ms}.
SessionConfig session_config_from_json(const nlohmann::json& j, const sim::SimConfig& defaults);

struct FeedbackOutcome {
  enum class Kind { Accepted, NotPaused, NotAllowed } kind = Kind::Accepted;
  Action executed = Action::Idle;
  std::optional<SubPattern> style;
  ActionSet allowed;
};

/// One session drives one episode on its own thread. The state machine is
/// running -> paused(proposal) -> running, ending in finished.
class Session {
 public:
  using Listener = std::function<void(const nlohmann::json& event)>;

  Session(std::string id, SessionConfig config, std::shared_ptr<MemoryStore> memory, Backends backends);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  void start();
  /// Cancels the episode and joins the worker.
  void stop();
  /// Blocks until the episode ends or the timeout expires; true when finished.
  bool wait_finished(std::chrono::milliseconds timeout);
  /// Blocks until the session pauses (or finishes); true when paused.
  bool wait_paused(std::chrono::milliseconds timeout);

  const std::string& id() const { return id_; }
  nlohmann::json state() const;
  Status status() const;

  FeedbackOutcome feedback(Action chosen);
  /// Approves the pending proposal (chosen = proposed, nothing written).
  FeedbackOutcome resume();

  int subscribe(Listener listener);
  void unsubscribe(int token);

 private:
  std::optional<Action> review(const Proposal& p);
  void publish(const nlohmann::json& event);
  void run();

  std::string id_;
  SessionConfig config_;
  std::shared_ptr<MemoryStore> memory_;
  Backends backends_;

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  Status status_ = Status::Running;
  int step_ = 0;
  std::optional<Proposal> pending_;
  std::optional<Action> answer_;
  bool stop_ = false;
  bool ended_ = false;  // finished and the end event published
  int feedback_count_ = 0;
  std::vector<FeedbackRecord> feedback_log_;
  std::optional<nlohmann::json> summary_;

  std::mutex listeners_mutex_;
  std::map<int, Listener> listeners_;
  int next_token_ = 1;

  std::thread worker_;
};

}  // namespace respond::session
