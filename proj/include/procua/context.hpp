#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "procua/action.hpp"
#include "procua/synthweb.hpp"

namespace procua {

struct HistoryEntry {
  std::string thought;
  Action action;

  friend bool operator==(const HistoryEntry&, const HistoryEntry&) = default;
};

/// What the agent sees at step n: instruction, all previous thought-action
/// pairs and only the most recent observation.
struct StateContext {
  std::string instruction;
  std::vector<HistoryEntry> history;
  Observation observation;
  std::uint64_t fingerprint = 0;

  std::size_t step_index() const { return history.size() + 1; }

  friend bool operator==(const StateContext&, const StateContext&) = default;
};

std::uint64_t context_fingerprint(const std::string& instruction,
                                  const std::vector<HistoryEntry>& history,
                                  const Observation& observation);

StateContext make_context(std::string instruction, std::vector<HistoryEntry> history,
                          Observation observation);

/// Templated thought for an action. Thoughts carry no probability mass.
std::string thought_for(const Action& action);

/// Replays a context's history from reset; returns the live state it came from.
/// Throws Error(kPrecondition) if the replay does not reproduce the observation.
EnvState reconstruct_state(const Task& task, const StateContext& ctx,
                           int max_steps = kDefaultMaxSteps);

}  // namespace procua
