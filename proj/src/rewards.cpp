#include "procua/rewards.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <map>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "procua/error.hpp"
#include "procua/log.hpp"
#include "procua/random.hpp"

namespace procua {

namespace {

std::vector<std::string> whitespace_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += static_cast<char>(std::tolower(c));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

double word_f1(std::string_view pred, std::string_view ref) {
  const auto p = whitespace_tokens(pred);
  const auto r = whitespace_tokens(ref);
  if (p.empty() && r.empty()) return 1.0;
  if (p.empty() || r.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : r) ++counts[t];
  int common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(r.size());
  return 2.0 * precision * recall / (precision + recall);
}

bool in_bbox(const Point& point, const Rect& box) { return box.contains(point); }

double combine_rule_reward(int r_fmt, int r_type, int r_value, int r_ground, double w_fmt) {
  const int r_acc = r_type * r_value * r_ground;
  return w_fmt * r_fmt + (1.0 - w_fmt) * r_acc;
}

RuleRewardBreakdown rule_reward(std::string_view raw_output, const Action& golden,
                                const Rect& golden_bbox, double w_fmt) {
  RuleRewardBreakdown b;
  const auto parsed = parse_output(raw_output);
  if (!parsed) return b;
  const Action& a = parsed.value().answer;
  b.r_fmt = 1;
  b.r_type = a.action_type == golden.action_type ? 1 : 0;
  if (requires_value(golden.action_type))
    b.r_value = word_f1(a.value.value_or(""), golden.value.value_or("")) > 0.5 ? 1 : 0;
  else
    b.r_value = 1;
  if (requires_point(golden.action_type))
    b.r_ground = a.point_2d && in_bbox(*a.point_2d, golden_bbox) ? 1 : 0;
  else
    b.r_ground = 1;
  b.r_acc = b.r_type * b.r_value * b.r_ground;
  b.total = combine_rule_reward(b.r_fmt, b.r_type, b.r_value, b.r_ground, w_fmt);
  return b;
}

// ---------------------------------------------------------------------------
// Oracle PRM

const char* to_string(Strictness s) {
  return s == Strictness::lenient ? "lenient" : "conservative";
}

std::optional<Strictness> strictness_from_string(std::string_view s) {
  if (s == "lenient") return Strictness::lenient;
  if (s == "conservative") return Strictness::conservative;
  return std::nullopt;
}

namespace {

PRMVerdict grade_one(const Task& task, const EnvState& state, int d0,
                     const std::optional<EnvState>& best_next, const StateContext& ctx,
                     std::span<const Action> history, const Action& candidate,
                     const PRMOracleConfig& cfg) {
  const bool repeat = repeats_history(task, history, state, candidate);
  EnvState next = state;
  apply_action(task, next, candidate);
  const int d1 = distance_to_goal(task, next);
  const bool finished_correct = candidate.action_type == ActionType::finished && d1 == 0;

  bool verdict = false;
  std::string why;
  if (cfg.strictness == Strictness::conservative) {
    verdict = !repeat && best_next && next == *best_next;
    why = verdict ? "takes the preferred shortest-path step" : "not the preferred shortest-path step";
  } else {
    verdict = (!repeat && d1 < kUnreachable && d1 <= d0) || finished_correct;
    why = verdict ? "does not move away from the goal" : "moves away from the goal or repeats";
  }
  if (repeat && !finished_correct) why = "repeats a previous step";

  if (cfg.noise_rate > 0) {
    Rng rng(derive_seed(cfg.seed, ctx.fingerprint, fnv1a64(serialize_action(candidate))));
    if (uniform01(rng) < cfg.noise_rate) {
      verdict = !verdict;
      why += " (flipped)";
    }
  }
  std::ostringstream os;
  os << why << "; distance " << (d0 >= kUnreachable ? -1 : d0) << " -> "
     << (d1 >= kUnreachable ? -1 : d1);
  return {verdict, os.str()};
}

void check_config(const PRMOracleConfig& cfg) {
  if (!(cfg.noise_rate >= 0 && cfg.noise_rate < 0.5))
    fail(ErrorCode::kInvalidParams, "noise_rate must be in [0, 0.5)");
}

}  // namespace

std::vector<PRMVerdict> oracle_prm_group(const Task& task, const StateContext& ctx,
                                         std::span<const Action> candidates,
                                         const PRMOracleConfig& cfg) {
  check_config(cfg);
  EnvState state = reconstruct_state(task, ctx, kUnreachable);
  const int d0 = distance_to_goal(task, state);
  std::vector<Action> history;
  history.reserve(ctx.history.size());
  for (const auto& h : ctx.history) history.push_back(h.action);
  std::optional<EnvState> best_next;
  if (cfg.strictness == Strictness::conservative) {
    if (auto best = canonical_best_action(task, state, history)) {
      best_next = state;
      apply_action(task, *best_next, *best);
    }
  }
  std::vector<PRMVerdict> out;
  out.reserve(candidates.size());
  for (const Action& c : candidates) out.push_back(grade_one(task, state, d0, best_next, ctx, history, c, cfg));
  return out;
}

PRMVerdict oracle_prm(const Task& task, const StateContext& ctx, const Action& candidate,
                      const PRMOracleConfig& cfg) {
  return oracle_prm_group(task, ctx, std::span<const Action>(&candidate, 1), cfg).front();
}

// ---------------------------------------------------------------------------
// Prompt

namespace {

constexpr std::string_view kPromptTemplate =
    R"PROMPT(You are an expert evaluator grading a Computer-Use Agent. Your role is to evaluate whether the agent's proposed next action is the strictly correct and necessary step to advance the given task.

You are provided with:

1. The overarching task instruction.

2. The history of actions taken so far.

3. The CURRENT screenshot (the state immediately BEFORE the proposed action), annotated to show the proposed target of the action.

4. The proposed Thought and Action Code.

The screenshot is an annotated visualization of the proposed action, not a raw screenshot:

- Red marks, arrows, or points indicate where the proposed action is targeting.

- Small index labels and overlay text are part of the annotation.

- Use these annotations to judge whether the proposed action is correctly grounded on the UI.

- Do not confuse the annotation itself with a native page element.

<task_instruction>
{instruction}
</task_instruction>

<history_actions>
{history_actions}
</history_actions>

<proposed_action>
Step {step_index}: {action_code}
</proposed_action>

Evaluation Criteria
You must evaluate the proposed action and output a binary decision: is the action CORRECT or INCORRECT?

An action is INCORRECT if it exhibits ANY of the following flaws:

- Grounding Failure: The code targets the wrong coordinates, a non-existent element, or the wrong input field based on the provided screenshot.

- Hallucination: The agent assumes a state that is not visually present.

- Inefficiency/Redundancy: The action needlessly repeats a past step from the history, performs useless scrolling, or wastes a step without advancing the task.

- Logical Progression Failure: The action executes successfully but does not move the agent closer to the final goal.

An action is CORRECT ONLY if it is visually grounded, mathematically accurate, and actively advances the task toward completion.

Output Format
Provide a rigorous step-by-step reflection. You must perform a "mental rollout" to predict the consequences of the action before determining if it facilitates task completion. Think about other alternatives that might result in better outcome than the proposed action, and if there exists such alternative with strictly better outcome, make the action as incorrect. Then, output a strictly valid JSON block.

<analysis_process>

1. [Current State Assessment]: What is currently visible on the screen? What is the immediate blocker to completing the task?

2. [Target Verification]: Does the proposed code correctly and accurately target the intended UI element in the screenshot?

3. [Mental Rollout]: If this exact code is executed, what will happen? (e.g., "A dropdown menu will appear," "The page will scroll down," "The text 'shoes' will be typed").

4. [Task Alignment]: Does this predicted outcome meaningfully and efficiently advance the task? Or is it a redundant/wasteful action given the history?

5. [Final Verdict]: Conclude whether the step is Correct or Incorrect.

</analysis_process>

```json

{

  "is_correct": boolean,

  "reflection": "A 1-2 sentence summary of why the action was marked correct or incorrect."

}
```
)PROMPT";

}  // namespace

std::string_view prm_prompt_template() { return kPromptTemplate; }

PRMRequest build_prm_request(const StateContext& ctx, const std::string& thought,
                             const Action& candidate, const Observation& observation) {
  PRMRequest req;
  req.annotated = observation;
  req.annotated.annotation_marker = candidate.point_2d;

  std::ostringstream history;
  if (ctx.history.empty()) history << "None";
  for (std::size_t i = 0; i < ctx.history.size(); ++i)
    history << (i ? "\n" : "") << "Step " << i + 1 << ": " << action_code(ctx.history[i].action);

  // Placeholder values are substituted in a single pass so that user text
  // containing "{...}" is never re-expanded.
  const std::string code = "Thought: " + thought + "\nAction: " + action_code(candidate);
  const std::pair<std::string_view, std::string> fills[] = {
      {"{instruction}", ctx.instruction},
      {"{history_actions}", history.str()},
      {"{step_index}", std::to_string(ctx.step_index())},
      {"{action_code}", code},
  };
  std::string out;
  std::string_view rest = kPromptTemplate;
  while (!rest.empty()) {
    std::size_t best = std::string_view::npos;
    const std::pair<std::string_view, std::string>* which = nullptr;
    for (const auto& f : fills) {
      const auto pos = rest.find(f.first);
      if (pos < best) {
        best = pos;
        which = &f;
      }
    }
    if (!which) {
      out += rest;
      break;
    }
    out += rest.substr(0, best);
    out += which->second;
    rest.remove_prefix(best + which->first.size());
  }

  const std::string marker = "</proposed_action>\n";
  const auto at = out.find(marker);
  std::string block = "\n<current_screenshot>\n" + encode_observation(req.annotated) +
                      "\n</current_screenshot>\n";
  out.insert(at + marker.size(), block);
  req.prompt = std::move(out);
  return req;
}

PRMVerdict parse_prm_response(std::string_view text) {
  using nlohmann::json;
  // Try each '{' as the start of a balanced object; fenced blocks come first
  // naturally since the search is left to right.
  for (std::size_t start = text.find('{'); start != std::string_view::npos;
       start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false, escaped = false;
    std::size_t end = std::string_view::npos;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        end = i;
        break;
      }
    }
    if (end == std::string_view::npos) break;
    const auto block = text.substr(start, end - start + 1);
    json j = json::parse(block.begin(), block.end(), nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    auto ic = j.find("is_correct");
    auto rf = j.find("reflection");
    if (ic == j.end() || !ic->is_boolean() || rf == j.end() || !rf->is_string()) continue;
    PRMVerdict v{ic->get<bool>(), rf->get<std::string>()};
    if (v.reflection.empty()) fail(ErrorCode::kMalformedResponse, "empty reflection");
    return v;
  }
  fail(ErrorCode::kMalformedResponse, "no JSON block with is_correct/reflection");
}

// ---------------------------------------------------------------------------
// HTTP client

ExternalPrmClient::ExternalPrmClient(ExternalPrmConfig cfg) : cfg_(std::move(cfg)) {
  const auto scheme = cfg_.endpoint.find("://");
  if (scheme == std::string::npos) fail(ErrorCode::kConfig, "prm endpoint must be a URL: " + cfg_.endpoint);
  const auto slash = cfg_.endpoint.find('/', scheme + 3);
  scheme_host_port_ = cfg_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : cfg_.endpoint.substr(slash);
  if (cfg_.max_in_flight < 1) cfg_.max_in_flight = 1;
}

std::optional<PRMVerdict> ExternalPrmClient::grade(const PRMRequest& request) const {
  for (int attempt = 0; attempt < 2; ++attempt) {
    httplib::Client cli(scheme_host_port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());
    auto res = cli.Post(path_, request.prompt, "text/plain; charset=utf-8");
    if (!res) {
      log_warning("prm request failed: " + httplib::to_string(res.error()));
      continue;
    }
    if (res->status != 200) {
      log_warning("prm request returned HTTP " + std::to_string(res->status));
      continue;
    }
    try {
      return parse_prm_response(res->body);
    } catch (const Error& e) {
      log_warning(std::string("prm response rejected: ") + e.what());
    }
  }
  log_warning("prm grading skipped after retry; reward 0");
  return std::nullopt;
}

std::vector<std::optional<PRMVerdict>> ExternalPrmClient::grade_all(
    std::span<const PRMRequest> requests) const {
  std::vector<std::optional<PRMVerdict>> out(requests.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) out[i] = grade(requests[i]);
  };
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg_.max_in_flight), requests.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

// ---------------------------------------------------------------------------
// Graders

std::vector<double> OracleGrader::grade(const Task& task, const StateContext& ctx,
                                        std::span<const CandidateSample> candidates) const {
  std::vector<Action> actions;
  actions.reserve(candidates.size());
  for (const auto& c : candidates) actions.push_back(c.action);
  std::vector<double> rewards;
  rewards.reserve(candidates.size());
  try {
    for (const auto& v : oracle_prm_group(task, ctx, actions, cfg_)) rewards.push_back(v.is_correct ? 1.0 : 0.0);
  } catch (const Error& e) {
    log_warning(std::string("oracle grading failed: ") + e.what());
    rewards.assign(candidates.size(), 0.0);
  }
  return rewards;
}

std::vector<double> ExternalGrader::grade(const Task&, const StateContext& ctx,
                                          std::span<const CandidateSample> candidates) const {
  std::vector<PRMRequest> requests;
  requests.reserve(candidates.size());
  for (const auto& c : candidates)
    requests.push_back(build_prm_request(ctx, c.thought, c.action, ctx.observation));
  std::vector<double> rewards;
  for (const auto& v : client_.grade_all(requests)) rewards.push_back(v && v->is_correct ? 1.0 : 0.0);
  return rewards;
}

}  // namespace procua
