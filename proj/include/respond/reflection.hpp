#pragma once

#include <string>
#include <vector>

#include "respond/context.hpp"
#include "respond/llm.hpp"
#include "respond/memory.hpp"

namespace respond {

enum class FailureMode : std::uint8_t { LateralDirect, LLMCausal };

std::string_view failure_mode_name(FailureMode m);

struct ReflectionOutcome {
  FailureMode mode = FailureMode::LLMCausal;
  std::string cause;
  Action revised_action = Action::Slower;
  std::vector<EntryId> l1_written;
  std::vector<EntryId> l2_written;
  bool mirrored = false;
  bool fallback = false;  // rule correction used because the reflection reply was unusable
  std::vector<std::string> warnings;
};

/// LateralDirect iff a lane change was executed and the collider sat in the
/// target-side column of the pre-collision frame.
FailureMode classify_failure(const CrashRecord& crash);

ReflectionOutcome reflect_lateral(const CrashRecord& crash, MemoryStore& memory);
ReflectionOutcome reflect_llm(const CrashRecord& crash, CompletionBackend& llm, MemoryStore& memory);

/// Writes FRONT/REAR strategies when the action class (keep lane vs change
/// lane) flipped and the matching pre-collision risk is >= 0.75.
std::vector<EntryId> strategic_abstraction(const CrashRecord& crash, Action revised_action, MemoryStore& memory);

/// Classifies and dispatches to the matching reflection path.
ReflectionOutcome reflect(const CrashRecord& crash, CompletionBackend& llm, MemoryStore& memory);

/// One JSON object describing a reflection, for the audit log.
std::string audit_json(const CrashRecord& crash, const ReflectionOutcome& outcome);

/// JSON (de)serialization of crash records for reflect-replay.
std::string crash_to_json(const CrashRecord& crash);
CrashRecord crash_from_json(std::string_view json);

}  // namespace respond
