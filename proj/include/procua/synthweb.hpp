#pragma once

// Deterministic synthetic web sites and tasks. Pages are symbolic element
// lists laid out on a 1280x720 viewport; actions are dispatched by half-open
// bounding-box hit testing.

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "procua/action.hpp"

namespace procua {

struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  /// Half-open containment: x0 <= x < x1 and y0 <= y < y1.
  bool contains(const Point& p) const {
    return p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1;
  }
  Point center() const { return {static_cast<double>((x0 + x1) / 2), static_cast<double>((y0 + y1) / 2)}; }
  bool overlaps(const Rect& o) const { return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1; }

  friend bool operator==(const Rect&, const Rect&) = default;
};

enum class ElementKind { link, button, textfield, text, back_anchor };

const char* to_string(ElementKind kind);
std::optional<ElementKind> element_kind_from_string(std::string_view s);

inline bool is_interactable(ElementKind k) { return k != ElementKind::text; }

/// A search button routes to a page when the watched field holds `query`.
struct QueryRoute {
  std::string query;
  std::string target_page;

  friend bool operator==(const QueryRoute&, const QueryRoute&) = default;
};

struct Element {
  std::string element_id;
  ElementKind kind = ElementKind::text;
  std::string label;
  Rect bbox;
  std::optional<std::string> target_page;  // link, back_anchor, plain button
  std::optional<std::string> content;      // text elements
  std::string query_field;                 // search button: watched field id
  std::vector<QueryRoute> routes;          // search button routes

  friend bool operator==(const Element&, const Element&) = default;
};

struct Page {
  std::string page_id;
  std::vector<Element> elements;

  friend bool operator==(const Page&, const Page&) = default;
};

struct Site {
  std::vector<Page> pages;
  std::string start_page;
  /// Strings offered for typing whenever a field is focused.
  std::vector<std::string> suggestions;

  int page_index(std::string_view page_id) const;  // -1 if unknown
  const Page& page(int index) const { return pages.at(static_cast<std::size_t>(index)); }

  friend bool operator==(const Site&, const Site&) = default;
};

struct SiteParams {
  int n_pages = 7;
  int branching = 3;
  double stuck_rate = 0.2;     // fraction of leaf pages turned into loops
  double unlisted_rate = 0.25; // fraction of items reachable only by search
};

/// Throws Error(kInvalidParams) unless n_pages in [2, 40], branching in [1, 8].
Site generate_site(std::uint64_t seed, const SiteParams& params);
inline Site generate_site(std::uint64_t seed, int n_pages, int branching) {
  return generate_site(seed, SiteParams{n_pages, branching});
}

/// Checks element geometry, id uniqueness, target resolution and
/// connectivity. Returns an empty string when valid, else the first problem.
std::string validate_site(const Site& site);

/// Normalization used for answer matching and search routing.
std::string normalize_text(std::string_view s);

struct Goal {
  std::string answer;
  std::string answer_page;

  friend bool operator==(const Goal&, const Goal&) = default;
};

struct GoldenStep {
  std::uint64_t fingerprint = 0;
  Action action;

  friend bool operator==(const GoldenStep&, const GoldenStep&) = default;
};

class DistanceTable;

struct Task {
  std::string task_id;
  std::string instruction;
  Site site;
  Goal goal;
  std::vector<GoldenStep> golden;
  /// Forward-distance table; rebuilt by prepare_task, never serialized.
  std::shared_ptr<const DistanceTable> distances;

  bool operator==(const Task& o) const {
    return task_id == o.task_id && instruction == o.instruction && site == o.site &&
           goal == o.goal && golden == o.golden;
  }
};

/// Goal predicate: the answer matches and was reported from the answer page
/// (the last visited page).
bool goal_satisfied(const Task& task, std::string_view answer,
                    std::span<const std::string> visited_pages);

struct VisibleElement {
  std::string element_id;
  ElementKind kind = ElementKind::text;
  std::string label;
  Rect bbox;
  std::string content;  // text content, or current field contents
  bool focused = false;

  friend bool operator==(const VisibleElement&, const VisibleElement&) = default;
};

struct Observation {
  std::string page_id;
  std::vector<VisibleElement> elements;
  /// Typing suggestions; non-empty only while a field is focused.
  std::vector<std::string> suggestions;
  std::optional<Point> annotation_marker;

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Stable JSON text of an observation (field order fixed).
std::string encode_observation(const Observation& obs);
Observation decode_observation(std::string_view json_text);

inline constexpr int kDefaultMaxSteps = 20;

struct EnvState {
  int page = 0;
  int focus = -1;                              // element index on current page
  std::map<std::string, std::string> fields;   // element_id -> contents
  std::vector<int> back_stack;
  std::vector<int> visited;                    // pages in arrival order
  int steps = 0;
  int max_steps = kDefaultMaxSteps;
  bool terminal = false;
  std::optional<std::string> final_answer;     // set iff finished

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct StepResult {
  EnvState state;
  Observation observation;
  bool terminal = false;
};

EnvState initial_state(const Task& task, int max_steps = kDefaultMaxSteps);
Observation observe(const Task& task, const EnvState& state);
std::pair<EnvState, Observation> reset(const Task& task, int max_steps = kDefaultMaxSteps);

/// Throws TerminalStateStep / StepBudgetExhausted. Reaching the step cap
/// marks the state terminal (absorbing) without a final answer.
StepResult step(const Task& task, const EnvState& state, const Action& action);

/// Process-wide count of step() calls. Lets callers assert that a stage
/// never touched the live environment.
std::uint64_t env_step_calls();

/// Applies an action in place without building an observation.
void apply_action(const Task& task, EnvState& state, const Action& action);

/// Canonical candidates visible in an observation: one left_click per
/// interactable element (bbox center), one type per suggestion while a field
/// is focused, one finished per distinct visible text content, goback, wait.
std::vector<Action> candidates_from_observation(const Observation& obs);

/// Candidates for a live state. Precondition: state not terminal.
std::vector<Action> enumerate_candidates(const Task& task, const EnvState& state);

inline constexpr int kUnreachable = std::numeric_limits<int>::max() / 4;

/// Exact shortest number of actions from `state` to a successful finish
/// (kUnreachable when impossible). Ignores the step budget.
int distance_to_goal(const Task& task, const EnvState& state);

/// Action identity used for redundancy checks.
bool same_action(const Action& a, const Action& b);

/// True when `candidate` was already issued from a state with the same page,
/// focus and field contents as `current`, i.e. repeating it cannot achieve
/// anything new. `history` is the action sequence from reset to `current`.
bool repeats_history(const Task& task, std::span<const Action> history, const EnvState& current,
                     const Action& candidate);

/// First candidate in enumeration order that lowers the distance by one and
/// is not a repeat in the sense of repeats_history. The golden trajectory follows it.
std::optional<Action> canonical_best_action(const Task& task, const EnvState& state,
                                            std::span<const Action> history);

/// Builds the distance table. Idempotent; required before stepping BFS users.
void prepare_task(Task& task);

struct TaskSuiteParams {
  std::uint64_t seed = 1;
  int count = 64;
  SiteParams site;
};

/// Deterministic suite; every task is prepared and carries a golden path.
std::vector<Task> generate_tasks(const TaskSuiteParams& params);
Task generate_task(std::uint64_t seed, int index, const SiteParams& site);

std::optional<Action> golden_action(const Task& task, std::uint64_t context_fingerprint);

/// Replays the golden actions; true when the goal holds at the end.
bool golden_replays(const Task& task);

// Task-suite file: header line then one JSON task per line.
void write_task_suite(const std::string& path, const std::vector<Task>& tasks,
                      const TaskSuiteParams& params);
std::vector<Task> read_task_suite(const std::string& path, TaskSuiteParams* params = nullptr);

}  // namespace procua
