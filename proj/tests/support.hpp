#pragma once

// Shared fixtures and independent oracles for the test binaries.

#include <deque>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "procua/context.hpp"
#include "procua/random.hpp"
#include "procua/synthweb.hpp"
#include "procua/trajectory.hpp"

namespace procua::test {

inline Element text_el(std::string id, std::string label, Rect box, std::string content) {
  Element e;
  e.element_id = std::move(id);
  e.kind = ElementKind::text;
  e.label = std::move(label);
  e.bbox = box;
  e.content = std::move(content);
  return e;
}

inline Element link_el(std::string id, ElementKind kind, std::string label, Rect box, std::string target) {
  Element e;
  e.element_id = std::move(id);
  e.kind = kind;
  e.label = std::move(label);
  e.bbox = box;
  e.target_page = std::move(target);
  return e;
}

/// Three pages: home (search + one category link), a category page listing
/// the item, and the item page holding the answer "$42".
///
///   home --Shoes--> shoes --Red shoes--> item
///   home --search "red shoes"--> item
inline Site fixture_site() {
  Site site;
  site.start_page = "home";
  site.suggestions = {"red shoes", "blue hat"};

  Page home{"home", {}};
  home.elements.push_back(text_el("title", "title", {60, 20, 480, 64}, "Welcome to the store"));
  Element field;
  field.element_id = "q";
  field.kind = ElementKind::textfield;
  field.label = "Search products";
  field.bbox = {60, 84, 480, 128};
  home.elements.push_back(field);
  Element search;
  search.element_id = "go";
  search.kind = ElementKind::button;
  search.label = "Search";
  search.bbox = {60, 148, 480, 192};
  search.query_field = "q";
  search.routes = {{"red shoes", "item"}};
  home.elements.push_back(search);
  home.elements.push_back(link_el("l1", ElementKind::link, "Shoes", {60, 212, 480, 256}, "shoes"));

  Page shoes{"shoes", {}};
  shoes.elements.push_back(text_el("title", "title", {60, 20, 480, 64}, "Shoes"));
  shoes.elements.push_back(link_el("l1", ElementKind::link, "Red shoes", {60, 84, 480, 128}, "item"));
  shoes.elements.push_back(link_el("back", ElementKind::back_anchor, "Back", {60, 148, 480, 192}, "home"));

  Page item{"item", {}};
  item.elements.push_back(text_el("title", "title", {60, 20, 480, 64}, "Red shoes"));
  item.elements.push_back(text_el("price", "price", {60, 84, 480, 128}, "$42"));
  item.elements.push_back(text_el("rating", "rating", {60, 148, 480, 192}, "4.5 stars"));
  item.elements.push_back(link_el("back", ElementKind::back_anchor, "Back", {60, 212, 480, 256}, "shoes"));

  site.pages = {home, shoes, item};
  return site;
}

/// Builds golden steps by following canonical_best_action from reset.
inline void fill_golden(Task& task) {
  task.golden.clear();
  EnvState s = initial_state(task);
  Observation obs = observe(task, s);
  std::vector<HistoryEntry> history;
  std::vector<Action> actions;
  while (!s.terminal) {
    auto best = canonical_best_action(task, s, actions);
    if (!best) break;
    task.golden.push_back({context_fingerprint(task.instruction, history, obs), *best});
    history.push_back({thought_for(*best), *best});
    actions.push_back(*best);
    apply_action(task, s, *best);
    obs = observe(task, s);
  }
}

inline Task fixture_task() {
  Task t;
  t.task_id = "fixture-1";
  t.instruction = "Find the price of the red shoes in Shoes.";
  t.site = fixture_site();
  t.goal = {"$42", "item"};
  prepare_task(t);
  fill_golden(t);
  return t;
}

inline Action click_at(double x, double y, std::string desc = {}) {
  Action a;
  a.action_type = ActionType::left_click;
  a.description = std::move(desc);
  a.point_2d = Point{x, y};
  return a;
}

inline Action simple(ActionType t, std::optional<std::string> value = std::nullopt) {
  Action a;
  a.action_type = t;
  a.value = std::move(value);
  return a;
}

// ---------------------------------------------------------------------------
// Brute-force shortest path over the complete environment state (page, focus,
// field contents and the whole back stack). Shares nothing with the
// decomposed distance table except the transition function itself.

inline std::string full_key(const EnvState& s) {
  std::ostringstream os;
  os << s.page << '|' << s.focus << '|';
  for (const auto& [k, v] : s.fields) os << k << '=' << v << ';';
  os << '|';
  for (int p : s.back_stack) os << p << ',';
  return os.str();
}

/// Minimal number of candidate actions from `start` to a successful finish,
/// or -1 if none within `max_depth`.
inline int brute_force_distance(const Task& task, EnvState start, int max_depth = 14) {
  start.steps = 0;
  start.max_steps = 1 << 20;
  if (start.terminal) {
    if (!start.final_answer) return -1;
    std::vector<std::string> visited;
    for (int p : start.visited) visited.push_back(task.site.page(p).page_id);
    return goal_satisfied(task, *start.final_answer, visited) ? 0 : -1;
  }
  std::deque<std::pair<EnvState, int>> queue;
  std::set<std::string> seen{full_key(start)};
  queue.emplace_back(start, 0);
  while (!queue.empty()) {
    auto [s, d] = std::move(queue.front());
    queue.pop_front();
    if (d >= max_depth) continue;
    for (const Action& a : enumerate_candidates(task, s)) {
      EnvState n = s;
      apply_action(task, n, a);
      if (n.terminal) {
        if (!n.final_answer) continue;
        std::vector<std::string> visited;
        for (int p : n.visited) visited.push_back(task.site.page(p).page_id);
        if (goal_satisfied(task, *n.final_answer, visited)) return d + 1;
        continue;
      }
      // Visited pages only matter through the current page, which is in the key.
      if (seen.insert(full_key(n)).second) queue.emplace_back(std::move(n), d + 1);
    }
  }
  return -1;
}

/// A random non-terminal state reached by a uniform random walk, together
/// with the action history that produced it.
struct WalkState {
  EnvState state;
  std::vector<Action> history;
};

inline WalkState random_walk(const Task& task, Rng& rng, int max_len) {
  WalkState w{initial_state(task, 1 << 20), {}};
  const int len = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_len) + 1));
  for (int i = 0; i < len; ++i) {
    auto cands = enumerate_candidates(task, w.state);
    std::vector<Action> non_final;
    for (auto& c : cands)
      if (c.action_type != ActionType::finished) non_final.push_back(c);
    const Action a = non_final[uniform_index(rng, non_final.size())];
    apply_action(task, w.state, a);
    w.history.push_back(a);
  }
  return w;
}

/// Context of a walk state, built the way the pipeline builds it.
inline StateContext context_of(const Task& task, const WalkState& w) {
  std::vector<HistoryEntry> history;
  for (const auto& a : w.history) history.push_back({thought_for(a), a});
  return make_context(task.instruction, history, observe(task, w.state));
}

/// Executes `actions` from reset (stopping at termination) and records the
/// trajectory the way the rollout loop does.
inline TrajectoryRecord record_of(const Task& task, const std::vector<Action>& actions,
                                  int max_steps = kDefaultMaxSteps, std::string id = "t") {
  TrajectoryRecord rec;
  rec.trajectory_id = std::move(id);
  rec.task_id = task.task_id;
  auto [s, o] = reset(task, max_steps);
  std::vector<HistoryEntry> h;
  for (const auto& a : actions) {
    if (s.terminal) break;
    auto ctx = make_context(task.instruction, h, o);
    auto r = step(task, s, a);
    rec.steps.push_back({ctx, {thought_for(a), a}, r.observation});
    h.push_back({thought_for(a), a});
    s = r.state;
    o = r.observation;
  }
  rec.finished = s.final_answer.has_value();
  rec.success = rec.finished && is_success(task, rec);
  return rec;
}

inline std::vector<Action> golden_actions(const Task& task) {
  std::vector<Action> out;
  for (const auto& g : task.golden) out.push_back(g.action);
  return out;
}

// ---------------------------------------------------------------------------
// Random schema-valid outputs for round-trip properties.

inline std::string random_text(Rng& rng, std::size_t max_len, bool allow_tags) {
  static const std::vector<std::string> atoms = {
      "a", "b", "z", "Q", "0", "9", " ", "  ", "\n", "\t", "\"", "\\", "/", "{", "}", "[", "]", ",",
      ":", "<", ">", "&", "none", "null", "\xc3\xa9", "\xe2\x82\xac", "\xf0\x9f\x99\x82", "\x01"};
  static const std::vector<std::string> tags = {"<answer>", "</answer>", "<think>"};
  std::string out;
  const std::size_t n = uniform_index(rng, max_len + 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (allow_tags && uniform_index(rng, 20) == 0)
      out += tags[uniform_index(rng, tags.size())];
    else
      out += atoms[uniform_index(rng, atoms.size())];
  }
  return out;
}

inline double random_coord(Rng& rng, int limit) {
  if (uniform_index(rng, 2) == 0) return static_cast<double>(uniform_index(rng, static_cast<std::uint64_t>(limit)));
  return uniform01(rng) * limit;
}

inline StructuredOutput random_output(Rng& rng) {
  static const char* dirs[] = {"up", "down", "left", "right"};
  StructuredOutput out;
  out.think = random_text(rng, 40, true);
  Action& a = out.answer;
  a.action_type = kAllActionTypes[uniform_index(rng, kAllActionTypes.size())];
  a.description = random_text(rng, 20, true);
  const bool point = requires_point(a.action_type) ||
                     (allows_point(a.action_type) && uniform_index(rng, 2) == 0);
  if (point) a.point_2d = Point{random_coord(rng, kViewportWidth), random_coord(rng, kViewportHeight)};
  if (requires_end_point(a.action_type))
    a.point_2d_end = Point{random_coord(rng, kViewportWidth), random_coord(rng, kViewportHeight)};
  if (a.action_type == ActionType::scroll)
    a.value = dirs[uniform_index(rng, 4)];
  else if (requires_value(a.action_type))
    a.value = random_text(rng, 30, true);
  // The literal "none" reads back as absent, by design.
  if (a.description == "none") a.description.clear();
  if (a.value == "none") a.value = "none.";
  return out;
}

}  // namespace procua::test
