#include "procua/context.hpp"

#include "json.hpp"
#include "procua/error.hpp"
#include "procua/random.hpp"

namespace procua {

std::uint64_t context_fingerprint(const std::string& instruction,
                                  const std::vector<HistoryEntry>& history,
                                  const Observation& observation) {
  std::uint64_t h = fnv1a64(instruction);
  h = fnv1a64("\x1f", h);
  for (const auto& entry : history) {
    h = fnv1a64(serialize_output({entry.thought, entry.action}), h);
    h = fnv1a64("\x1e", h);
  }
  h = fnv1a64("\x1f", h);
  return fnv1a64(encode_observation(observation), h);
}

StateContext make_context(std::string instruction, std::vector<HistoryEntry> history,
                          Observation observation) {
  StateContext ctx{std::move(instruction), std::move(history), std::move(observation), 0};
  ctx.fingerprint = context_fingerprint(ctx.instruction, ctx.history, ctx.observation);
  return ctx;
}

std::string thought_for(const Action& a) {
  switch (a.action_type) {
    case ActionType::left_click:
    case ActionType::double_click:
      return "The '" + a.description + "' element looks relevant, so I will click it.";
    case ActionType::type_text:
      return "I will type '" + a.value.value_or("") + "'.";
    case ActionType::finished:
      return "The page shows the answer: " + a.value.value_or("") + ".";
    case ActionType::goback:
      return "This page does not help; I will go back.";
    case ActionType::wait:
      return "I will wait for the page to settle.";
    default:
      return "I will " + std::string(wire_name(a.action_type)) + ".";
  }
}

EnvState reconstruct_state(const Task& task, const StateContext& ctx, int max_steps) {
  EnvState s = initial_state(task, max_steps);
  for (const auto& entry : ctx.history) apply_action(task, s, entry.action);
  Observation obs = observe(task, s);
  Observation expected = ctx.observation;
  expected.annotation_marker.reset();
  if (!(obs == expected))
    fail(ErrorCode::kPrecondition, "context does not replay on task " + task.task_id);
  return s;
}

}  // namespace procua
