#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "respond/context.hpp"
#include "respond/memory.hpp"
#include "respond/types.hpp"

namespace respond {

enum class PromptPurpose : std::uint8_t { Decision, Reflection };

inline constexpr std::string_view kDecisionPromptVersion = "respond-decision/1";
inline constexpr std::string_view kReflectionPromptVersion = "respond-reflection/1";

struct PromptBundle {
  std::string system_text;
  std::string user_text;
  ActionSet allowed;
  PromptPurpose purpose = PromptPurpose::Decision;
  double temperature = 0.0;
  std::string version;
};

/// Extra guidance appended to a decision prompt (e.g. a matched strategy).
struct PromptHints {
  std::optional<Intent> intent;
  std::vector<std::string> notes;
};

PromptBundle build_decision_prompt(const DecisionContext& ctx, ActionSet allowed, bool include_risk_values,
                                   const PromptHints& hints = {});
PromptBundle build_reflection_prompt(const CrashRecord& crash);

/// Parse result; `action` is empty on failure and `error` says why.
struct ParsedAction {
  std::optional<Action> action;
  std::string error;
  explicit operator bool() const { return action.has_value(); }
};

/// Exactly one distinct allowed token (case-insensitive, whole word) must appear.
ParsedAction parse_action(std::string_view raw, ActionSet allowed);

struct ParsedReflection {
  std::string cause;
  std::optional<Action> revised;
  std::string error;
};

/// Reads the CAUSE: and REVISED_ACTION: lines of a reflection reply.
ParsedReflection parse_reflection(std::string_view raw);

/// Transport-level failure of a completion backend.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  /// Raw reply text; throws BackendError on transport failure.
  virtual std::string complete(const PromptBundle& bundle) = 0;
  virtual bool deterministic() const = 0;
  virtual std::string name() const = 0;
};

/// Deterministic double: pure function of (bundle, seed, adversarial).
std::string mock_complete(const PromptBundle& bundle, std::uint64_t seed, bool adversarial = false);

class MockBackend final : public CompletionBackend {
 public:
  explicit MockBackend(std::uint64_t seed = 0, bool adversarial = false) : seed_(seed), adversarial_(adversarial) {}
  std::string complete(const PromptBundle& bundle) override;
  bool deterministic() const override { return true; }
  std::string name() const override { return adversarial_ ? "mock-adversarial" : "mock"; }
  std::uint64_t calls() const { return calls_.load(); }

 private:
  std::uint64_t seed_;
  bool adversarial_;
  std::atomic<std::uint64_t> calls_{0};
};

/// Backend driven by a caller-supplied function; used for scripted tests.
class FunctionBackend final : public CompletionBackend {
 public:
  explicit FunctionBackend(std::function<std::string(const PromptBundle&)> fn) : fn_(std::move(fn)) {}
  std::string complete(const PromptBundle& bundle) override { return fn_(bundle); }
  bool deterministic() const override { return true; }
  std::string name() const override { return "function"; }

 private:
  std::function<std::string(const PromptBundle&)> fn_;
};

struct HttpBackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4o-mini";
  std::string api_key;
  double timeout_s = 20.0;
  int retries = 2;
  int backoff_initial_ms = 250;
  bool verbose = false;

  /// Reads RESPOND_LLM_BASE_URL, RESPOND_LLM_API_KEY (or OPENAI_API_KEY),
  /// RESPOND_LLM_TIMEOUT_S and RESPOND_LLM_{DECISION,REFLECTION}_MODEL.
  static HttpBackendConfig from_env(PromptPurpose role, HttpBackendConfig defaults);
  static HttpBackendConfig from_env(PromptPurpose role);
};

/// OpenAI-compatible chat-completion client.
class HttpBackend final : public CompletionBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  std::string complete(const PromptBundle& bundle) override;
  bool deterministic() const override { return false; }
  std::string name() const override { return "http:" + config_.model; }

  std::string request_body(const PromptBundle& bundle) const;
  static std::string extract_content(std::string_view response_body);

 private:
  HttpBackendConfig config_;
};

/// Decision and reflection roles are served by separate handles.
struct Backends {
  std::shared_ptr<CompletionBackend> decision;
  std::shared_ptr<CompletionBackend> reflection;

  static Backends mock(std::uint64_t seed = 0, bool adversarial = false);
};

}  // namespace respond
