#include "procua/synthweb.hpp"

#include <algorithm>
#include <atomic>
#include <array>
#include <cctype>
#include <deque>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "procua/context.hpp"
#include "procua/error.hpp"
#include "procua/random.hpp"

namespace procua {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::array<const char*, 24> kCategories = {
    "electronics", "garden",  "books",   "music",     "sports",  "toys",
    "kitchen",     "travel",  "fashion", "health",    "office",  "pets",
    "automotive",  "beauty",  "grocery", "outdoor",   "furniture", "jewelry",
    "crafts",      "baby",    "lighting", "tools",    "games",   "bedding"};

constexpr std::array<const char*, 16> kAdjectives = {
    "red",     "blue",    "green",   "black",    "white", "silver", "golden", "wooden",
    "compact", "classic", "modern",  "vintage",  "portable", "deluxe", "mini", "smart"};

constexpr std::array<const char*, 20> kNouns = {
    "lamp",  "kettle", "chair",  "speaker", "backpack", "watch", "blender",
    "jacket", "camera", "guitar", "puzzle", "sofa",     "helmet", "mug",
    "drill", "tent",   "scarf",  "pillow",  "router",   "bottle"};

constexpr std::array<const char*, 4> kDealLabels = {"Hot deals", "Flash sale", "Clearance offers",
                                                    "Weekly specials"};

constexpr std::array<const char*, 3> kAttributes = {"price", "rating", "stock"};

constexpr int kRowHeight = 44;
constexpr int kRowPitch = 64;
constexpr int kRowTop = 20;
constexpr int kColumnWidth = 420;

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

enum class Role { home, category, item, stuck };

struct PageBuilder {
  Page page;
  int x0 = 0;

  Element& add(ElementKind kind, std::string label) {
    const int row = static_cast<int>(page.elements.size());
    Element e;
    e.element_id = page.page_id + ".e" + std::to_string(row);
    e.kind = kind;
    e.label = std::move(label);
    e.bbox = Rect{x0, kRowTop + row * kRowPitch, x0 + kColumnWidth,
                  kRowTop + row * kRowPitch + kRowHeight};
    page.elements.push_back(std::move(e));
    return page.elements.back();
  }
};

int hit_test(const Page& page, const Point& p) {
  for (std::size_t i = 0; i < page.elements.size(); ++i)
    if (page.elements[i].bbox.contains(p)) return static_cast<int>(i);
  return -1;
}

void navigate(EnvState& s, int target) {
  s.back_stack.push_back(s.page);
  s.page = target;
  s.focus = -1;
  s.visited.push_back(target);
}

void click(const Task& task, EnvState& s, const Point& p) {
  const Page& page = task.site.page(s.page);
  const int hit = hit_test(page, p);
  if (hit < 0) return;
  const Element& e = page.elements[static_cast<std::size_t>(hit)];
  switch (e.kind) {
    case ElementKind::text:
      return;
    case ElementKind::textfield:
      s.focus = hit;
      return;
    case ElementKind::button:
      if (!e.routes.empty()) {
        auto it = s.fields.find(e.query_field);
        const std::string query = it == s.fields.end() ? "" : normalize_text(it->second);
        for (const auto& r : e.routes) {
          if (normalize_text(r.query) == query) {
            navigate(s, task.site.page_index(r.target_page));
            return;
          }
        }
        return;
      }
      [[fallthrough]];
    case ElementKind::link:
    case ElementKind::back_anchor:
      if (e.target_page) navigate(s, task.site.page_index(*e.target_page));
      return;
  }
}

}  // namespace

const char* to_string(ElementKind kind) {
  switch (kind) {
    case ElementKind::link: return "link";
    case ElementKind::button: return "button";
    case ElementKind::textfield: return "textfield";
    case ElementKind::text: return "text";
    case ElementKind::back_anchor: return "back_anchor";
  }
  return "text";
}

std::optional<ElementKind> element_kind_from_string(std::string_view s) {
  for (ElementKind k : {ElementKind::link, ElementKind::button, ElementKind::textfield,
                        ElementKind::text, ElementKind::back_anchor})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

int Site::page_index(std::string_view page_id) const {
  for (std::size_t i = 0; i < pages.size(); ++i)
    if (pages[i].page_id == page_id) return static_cast<int>(i);
  return -1;
}

std::string normalize_text(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation

Site generate_site(std::uint64_t seed, const SiteParams& params) {
  if (params.n_pages < 2 || params.n_pages > 40)
    fail(ErrorCode::kInvalidParams, "n_pages must be in [2, 40]");
  if (params.branching < 1 || params.branching > 8)
    fail(ErrorCode::kInvalidParams, "branching must be in [1, 8]");
  if (!(params.stuck_rate >= 0 && params.stuck_rate < 1) ||
      !(params.unlisted_rate >= 0 && params.unlisted_rate < 1))
    fail(ErrorCode::kInvalidParams, "rates must be in [0, 1)");

  Rng rng(derive_seed(seed, 0x5173ULL));
  const int n = params.n_pages;

  // Random tree rooted at page 0 with bounded fan-out.
  std::vector<int> parent(n, -1);
  std::vector<std::vector<int>> children(n);
  for (int k = 1; k < n; ++k) {
    std::vector<int> eligible;
    for (int j = 0; j < k; ++j)
      if (static_cast<int>(children[j].size()) < params.branching) eligible.push_back(j);
    const int p = eligible[uniform_index(rng, eligible.size())];
    parent[k] = p;
    children[p].push_back(k);
  }

  std::vector<Role> role(n, Role::category);
  role[0] = Role::home;
  std::vector<int> leaves;
  for (int k = 1; k < n; ++k)
    if (children[k].empty()) leaves.push_back(k);
  int items_left = static_cast<int>(leaves.size());
  for (int k : leaves) {
    if (items_left > 1 && uniform01(rng) < params.stuck_rate) {
      role[k] = Role::stuck;
      --items_left;
    } else {
      role[k] = Role::item;
    }
  }

  // Names.
  std::vector<std::string> label(n);
  std::vector<int> cat_order(kCategories.size());
  for (std::size_t i = 0; i < cat_order.size(); ++i) cat_order[i] = static_cast<int>(i);
  procua::shuffle(cat_order.begin(), cat_order.end(), rng);
  std::vector<int> combo(kAdjectives.size() * kNouns.size());
  for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = static_cast<int>(i);
  procua::shuffle(combo.begin(), combo.end(), rng);
  int next_cat = 0, next_item = 0;
  for (int k = 1; k < n; ++k) {
    switch (role[k]) {
      case Role::category: {
        const int c = next_cat++;
        label[k] = kCategories[cat_order[c % cat_order.size()]];
        if (c >= static_cast<int>(cat_order.size()))
          label[k] += " " + std::to_string(c / cat_order.size() + 1);
        break;
      }
      case Role::item: {
        const int c = combo[next_item++];
        label[k] = std::string(kAdjectives[c / kNouns.size()]) + " " + kNouns[c % kNouns.size()];
        break;
      }
      case Role::stuck:
        label[k] = kDealLabels[uniform_index(rng, kDealLabels.size())];
        break;
      case Role::home:
        break;
    }
  }

  std::vector<bool> unlisted(n, false);
  for (int k = 1; k < n; ++k)
    if (role[k] == Role::item && uniform01(rng) < params.unlisted_rate) unlisted[k] = true;

  auto page_id = [](int k) { return "p" + std::to_string(k); };

  Site site;
  site.start_page = page_id(0);
  for (int k = 1; k < n; ++k)
    if (role[k] == Role::item) site.suggestions.push_back(label[k]);

  for (int k = 0; k < n; ++k) {
    PageBuilder b;
    b.page.page_id = page_id(k);
    b.x0 = 60 + static_cast<int>(uniform_index(rng, 25)) * 20;

    auto add_child_links = [&] {
      for (int c : children[k]) {
        if (unlisted[c]) continue;
        Element& e = b.add(ElementKind::link, role[c] == Role::item ? capitalize(label[c])
                                              : role[c] == Role::stuck ? label[c]
                                                                       : capitalize(label[c]));
        e.target_page = page_id(c);
      }
    };

    switch (role[k]) {
      case Role::home: {
        b.add(ElementKind::text, "title").content = "Welcome to the store";
        const std::string field_id = b.add(ElementKind::textfield, "Search products").element_id;
        Element& go = b.add(ElementKind::button, "Search");
        go.query_field = field_id;
        for (int c = 1; c < n; ++c)
          if (role[c] == Role::item) go.routes.push_back({label[c], page_id(c)});
        add_child_links();
        break;
      }
      case Role::category:
        b.add(ElementKind::text, "title").content = capitalize(label[k]);
        add_child_links();
        b.add(ElementKind::back_anchor, "Back").target_page = page_id(parent[k]);
        break;
      case Role::item: {
        b.add(ElementKind::text, "title").content = capitalize(label[k]);
        b.add(ElementKind::text, "price").content =
            "$" + std::to_string(5 + uniform_index(rng, 496));
        b.add(ElementKind::text, "rating").content =
            std::to_string(1 + uniform_index(rng, 4)) + "." + std::to_string(uniform_index(rng, 10)) +
            " stars";
        b.add(ElementKind::text, "stock").content =
            std::to_string(1 + uniform_index(rng, 99)) + " in stock";
        b.add(ElementKind::back_anchor, "Back").target_page = page_id(parent[k]);
        break;
      }
      case Role::stuck:
        b.add(ElementKind::text, "title").content = "Deals of the day";
        b.add(ElementKind::link, "More deals").target_page = page_id(k);
        b.add(ElementKind::link, "Refresh").target_page = page_id(k);
        break;
    }
    site.pages.push_back(std::move(b.page));
  }
  return site;
}

std::string validate_site(const Site& site) {
  if (site.pages.empty()) return "no pages";
  const int start = site.page_index(site.start_page);
  if (start < 0) return "start page missing";
  bool has_field = false;
  for (std::size_t i = 0; i < site.pages.size(); ++i) {
    const Page& p = site.pages[i];
    if (site.page_index(p.page_id) != static_cast<int>(i)) return "duplicate page id " + p.page_id;
    for (std::size_t a = 0; a < p.elements.size(); ++a) {
      const Element& e = p.elements[a];
      const Rect& r = e.bbox;
      if (!(0 <= r.x0 && r.x0 < r.x1 && r.x1 <= kViewportWidth && 0 <= r.y0 && r.y0 < r.y1 &&
            r.y1 <= kViewportHeight))
        return "bbox out of viewport: " + e.element_id;
      if (e.kind == ElementKind::textfield) has_field = true;
      if (e.target_page && site.page_index(*e.target_page) < 0)
        return "unresolved target: " + e.element_id;
      for (const auto& route : e.routes)
        if (site.page_index(route.target_page) < 0) return "unresolved route: " + e.element_id;
      for (std::size_t b = a + 1; b < p.elements.size(); ++b) {
        if (p.elements[b].element_id == e.element_id) return "duplicate element id " + e.element_id;
        if (p.elements[b].bbox.overlaps(r)) return "overlapping boxes on " + p.page_id;
      }
    }
  }
  if (!has_field) return "no textfield";
  std::vector<bool> seen(site.pages.size(), false);
  std::deque<int> queue{start};
  seen[static_cast<std::size_t>(start)] = true;
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    for (const Element& e : site.page(cur).elements) {
      std::vector<std::string> targets;
      if (e.target_page) targets.push_back(*e.target_page);
      for (const auto& route : e.routes) targets.push_back(route.target_page);
      for (const auto& t : targets) {
        const int ti = site.page_index(t);
        if (!seen[static_cast<std::size_t>(ti)]) {
          seen[static_cast<std::size_t>(ti)] = true;
          queue.push_back(ti);
        }
      }
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) return "page unreachable: " + site.pages[i].page_id;
  return {};
}

bool goal_satisfied(const Task& task, std::string_view answer,
                    std::span<const std::string> visited_pages) {
  if (normalize_text(answer) != normalize_text(task.goal.answer)) return false;
  // The answer must be reported from the page that shows it.
  return !visited_pages.empty() && visited_pages.back() == task.goal.answer_page;
}

// ---------------------------------------------------------------------------
// Dynamics

EnvState initial_state(const Task& task, int max_steps) {
  EnvState s;
  s.page = task.site.page_index(task.site.start_page);
  s.visited.push_back(s.page);
  s.max_steps = max_steps;
  return s;
}

Observation observe(const Task& task, const EnvState& state) {
  const Page& page = task.site.page(state.page);
  Observation obs;
  obs.page_id = page.page_id;
  obs.elements.reserve(page.elements.size());
  for (std::size_t i = 0; i < page.elements.size(); ++i) {
    const Element& e = page.elements[i];
    VisibleElement v{e.element_id, e.kind, e.label, e.bbox, {}, state.focus == static_cast<int>(i)};
    if (e.kind == ElementKind::text) {
      v.content = e.content.value_or("");
    } else if (e.kind == ElementKind::textfield) {
      auto it = state.fields.find(e.element_id);
      if (it != state.fields.end()) v.content = it->second;
    }
    obs.elements.push_back(std::move(v));
  }
  if (state.focus >= 0) obs.suggestions = task.site.suggestions;
  return obs;
}

std::pair<EnvState, Observation> reset(const Task& task, int max_steps) {
  EnvState s = initial_state(task, max_steps);
  Observation o = observe(task, s);
  return {std::move(s), std::move(o)};
}

void apply_action(const Task& task, EnvState& s, const Action& a) {
  if (s.steps >= s.max_steps) fail(ErrorCode::kStepBudgetExhausted, "step cap reached");
  if (s.terminal) fail(ErrorCode::kTerminalStateStep, "episode already terminal");
  ++s.steps;
  switch (a.action_type) {
    case ActionType::left_click:
    case ActionType::double_click:
      if (a.point_2d) click(task, s, *a.point_2d);
      break;
    case ActionType::type_text: {
      if (a.point_2d) {
        const Page& page = task.site.page(s.page);
        const int hit = hit_test(page, *a.point_2d);
        if (hit >= 0 && page.elements[static_cast<std::size_t>(hit)].kind == ElementKind::textfield)
          s.focus = hit;
      }
      if (s.focus >= 0 && a.value) {
        const Element& e = task.site.page(s.page).elements[static_cast<std::size_t>(s.focus)];
        s.fields[e.element_id] = *a.value;
      }
      break;
    }
    case ActionType::goback:
      if (!s.back_stack.empty()) {
        s.page = s.back_stack.back();
        s.back_stack.pop_back();
        s.focus = -1;
        s.visited.push_back(s.page);
      }
      break;
    case ActionType::finished:
      s.terminal = true;
      s.final_answer = a.value.value_or("");
      break;
    default:
      break;  // right_click, mouse_move, drag, scroll, hotkey, wait
  }
  if (s.steps >= s.max_steps) s.terminal = true;
}

namespace {
std::atomic<std::uint64_t> g_step_calls{0};
}

std::uint64_t env_step_calls() { return g_step_calls.load(); }

StepResult step(const Task& task, const EnvState& state, const Action& action) {
  g_step_calls.fetch_add(1, std::memory_order_relaxed);
  StepResult r{state, {}, false};
  apply_action(task, r.state, action);
  r.observation = observe(task, r.state);
  r.terminal = r.state.terminal;
  return r;
}

std::vector<Action> candidates_from_observation(const Observation& obs) {
  std::vector<Action> out;
  const VisibleElement* focused = nullptr;
  for (const auto& e : obs.elements) {
    if (e.focused) focused = &e;
    if (!is_interactable(e.kind)) continue;
    Action a;
    a.action_type = ActionType::left_click;
    a.description = e.label;
    a.point_2d = e.bbox.center();
    out.push_back(std::move(a));
  }
  if (focused) {
    for (const auto& s : obs.suggestions) {
      Action a;
      a.action_type = ActionType::type_text;
      a.description = "type into " + focused->label;
      a.value = s;
      out.push_back(std::move(a));
    }
  }
  std::vector<std::string> seen;
  for (const auto& e : obs.elements) {
    if (e.kind != ElementKind::text || e.content.empty()) continue;
    if (std::find(seen.begin(), seen.end(), e.content) != seen.end()) continue;
    seen.push_back(e.content);
    Action a;
    a.action_type = ActionType::finished;
    a.description = "answer with " + e.label;
    a.value = e.content;
    out.push_back(std::move(a));
  }
  Action back;
  back.action_type = ActionType::goback;
  back.description = "go back";
  out.push_back(std::move(back));
  Action wait;
  wait.action_type = ActionType::wait;
  wait.description = "wait";
  out.push_back(std::move(wait));
  return out;
}

std::vector<Action> enumerate_candidates(const Task& task, const EnvState& state) {
  if (state.terminal) fail(ErrorCode::kPrecondition, "enumerate_candidates on terminal state");
  return candidates_from_observation(observe(task, state));
}

bool same_action(const Action& a, const Action& b) { return a == b; }

bool repeats_history(const Task& task, std::span<const Action> history, const EnvState& current,
                     const Action& candidate) {
  if (std::none_of(history.begin(), history.end(),
                   [&](const Action& h) { return same_action(h, candidate); }))
    return false;
  EnvState s = initial_state(task, kUnreachable);
  for (const Action& h : history) {
    if (same_action(h, candidate) && s.page == current.page && s.focus == current.focus &&
        s.fields == current.fields)
      return true;
    apply_action(task, s, h);
  }
  return false;
}

// ---------------------------------------------------------------------------
// Distances

// Forward distances over abstract states (page, focus, per-field route).
// Back-stack effects are folded in by distance_to_goal: a shortest path never
// navigates forward and then back, so it is some number of gobacks followed
// by forward moves only.
class DistanceTable {
 public:
  explicit DistanceTable(const Task& task);

  int forward(const EnvState& s) const {
    auto it = dist_.find(key(s.page, s.focus, s.fields));
    return it == dist_.end() ? kUnreachable : it->second;
  }
  int forward_at(int page, const std::map<std::string, std::string>& fields) const {
    auto it = dist_.find(key(page, -1, fields));
    return it == dist_.end() ? kUnreachable : it->second;
  }

 private:
  struct Field {
    std::string element_id;
    std::vector<std::string> queries;  // normalized
  };

  std::uint64_t key(int page, int focus, const std::map<std::string, std::string>& fields) const {
    std::uint64_t k = static_cast<std::uint64_t>(page);
    k = k * 256 + static_cast<std::uint64_t>(focus + 1);
    for (const Field& f : fields_) {
      int route = -1;
      auto it = fields.find(f.element_id);
      if (it != fields.end()) {
        const std::string q = normalize_text(it->second);
        for (std::size_t r = 0; r < f.queries.size(); ++r)
          if (f.queries[r] == q) route = static_cast<int>(r);
      }
      k = k * 64 + static_cast<std::uint64_t>(route + 1);
    }
    return k;
  }

  std::vector<Field> fields_;
  std::unordered_map<std::uint64_t, int> dist_;
};

DistanceTable::DistanceTable(const Task& task) {
  const Site& site = task.site;
  // Field slots and the queries that route them.
  for (const Page& p : site.pages) {
    for (const Element& e : p.elements) {
      if (e.kind != ElementKind::textfield) continue;
      Field f{e.element_id, {}};
      for (const Page& q : site.pages)
        for (const Element& b : q.elements)
          if (b.query_field == e.element_id)
            for (const auto& r : b.routes) f.queries.push_back(normalize_text(r.query));
      fields_.push_back(std::move(f));
    }
  }
  if (fields_.size() > 6) fail(ErrorCode::kInvalidParams, "too many text fields");

  // Enumerate every abstract state.
  std::vector<EnvState> states;
  for (int page = 0; page < static_cast<int>(site.pages.size()); ++page) {
    std::vector<int> focuses{-1};
    const auto& els = site.page(page).elements;
    for (std::size_t i = 0; i < els.size(); ++i)
      if (els[i].kind == ElementKind::textfield) focuses.push_back(static_cast<int>(i));
    for (int focus : focuses) {
      std::vector<int> routes(fields_.size(), -1);
      while (true) {
        EnvState s;
        s.page = page;
        s.focus = focus;
        s.max_steps = kUnreachable;
        s.visited = {page};
        for (std::size_t f = 0; f < fields_.size(); ++f)
          if (routes[f] >= 0) s.fields[fields_[f].element_id] = fields_[f].queries[static_cast<std::size_t>(routes[f])];
        states.push_back(std::move(s));
        std::size_t f = 0;
        for (; f < fields_.size(); ++f) {
          if (++routes[f] < static_cast<int>(fields_[f].queries.size())) break;
          routes[f] = -1;
        }
        if (f == fields_.size()) break;
      }
    }
  }

  constexpr std::uint64_t kGoal = ~0ULL;
  std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> reverse;
  std::vector<std::string> visited_ids;
  for (const EnvState& s : states) {
    const std::uint64_t from = key(s.page, s.focus, s.fields);
    for (const Action& a : enumerate_candidates(task, s)) {
      if (a.action_type == ActionType::goback) continue;
      EnvState next = s;
      apply_action(task, next, a);
      if (next.terminal) {
        if (!next.final_answer) continue;
        visited_ids = {site.page(s.page).page_id};
        if (goal_satisfied(task, *next.final_answer, visited_ids)) reverse[kGoal].push_back(from);
        continue;
      }
      const std::uint64_t to = key(next.page, next.focus, next.fields);
      if (to != from) reverse[to].push_back(from);
    }
  }

  std::deque<std::pair<std::uint64_t, int>> queue{{kGoal, 0}};
  std::unordered_map<std::uint64_t, int> seen{{kGoal, 0}};
  while (!queue.empty()) {
    auto [node, d] = queue.front();
    queue.pop_front();
    auto it = reverse.find(node);
    if (it == reverse.end()) continue;
    for (std::uint64_t prev : it->second) {
      if (seen.emplace(prev, d + 1).second) queue.emplace_back(prev, d + 1);
    }
  }
  seen.erase(kGoal);
  dist_ = std::move(seen);
}

void prepare_task(Task& task) {
  task.distances = std::make_shared<const DistanceTable>(task);
}

int distance_to_goal(const Task& task, const EnvState& s) {
  if (!task.distances) fail(ErrorCode::kPrecondition, "task not prepared");
  if (s.terminal) {
    if (!s.final_answer) return kUnreachable;
    std::vector<std::string> visited;
    for (int p : s.visited) visited.push_back(task.site.page(p).page_id);
    return goal_satisfied(task, *s.final_answer, visited) ? 0 : kUnreachable;
  }
  int best = task.distances->forward(s);
  const int depth = static_cast<int>(s.back_stack.size());
  for (int j = 1; j <= depth; ++j) {
    const int page = s.back_stack[static_cast<std::size_t>(depth - j)];
    const int d = task.distances->forward_at(page, s.fields);
    if (d < kUnreachable) best = std::min(best, j + d);
  }
  return best;
}

std::optional<Action> canonical_best_action(const Task& task, const EnvState& state,
                                            std::span<const Action> history) {
  if (state.terminal) return std::nullopt;
  const int d0 = distance_to_goal(task, state);
  if (d0 >= kUnreachable || d0 == 0) return std::nullopt;
  for (const Action& a : enumerate_candidates(task, state)) {
    if (repeats_history(task, history, state, a)) continue;
    EnvState next = state;
    next.max_steps = kUnreachable;
    apply_action(task, next, a);
    if (distance_to_goal(task, next) == d0 - 1) return a;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Tasks

Task generate_task(std::uint64_t seed, int index, const SiteParams& params) {
  const std::uint64_t task_seed = derive_seed(seed, 0x7a5cULL, static_cast<std::uint64_t>(index));
  Task task;
  task.task_id = "t" + std::to_string(seed) + "-" + std::to_string(index);
  task.site = generate_site(task_seed, params);
  Rng rng(derive_seed(task_seed, 0x901dULL));

  const Site& site = task.site;
  std::vector<int> items;
  for (int k = 0; k < static_cast<int>(site.pages.size()); ++k)
    if (site.page(k).elements.size() == 5 && site.page(k).elements[1].label == "price")
      items.push_back(k);
  const int item = items[uniform_index(rng, items.size())];
  const Page& item_page = site.page(item);
  const std::size_t attr = uniform_index(rng, kAttributes.size());
  const Element& answer_el = item_page.elements[1 + attr];
  const std::string item_name = normalize_text(item_page.elements[0].content.value_or(""));

  // Ancestor chain via parent back anchors.
  std::vector<std::string> path;
  bool listed = false;
  {
    const int start = site.page_index(site.start_page);
    int cur = item;
    while (true) {
      const Page& p = site.page(cur);
      const int parent = site.page_index(*p.elements.back().target_page);
      bool linked = false;
      for (const Element& e : site.page(parent).elements)
        if (e.kind == ElementKind::link && e.target_page == p.page_id) linked = true;
      if (cur == item) listed = linked;
      if (parent == start) break;
      path.push_back(normalize_text(site.page(parent).elements[0].content.value_or("")));
      cur = parent;
    }
    std::reverse(path.begin(), path.end());
  }

  std::ostringstream instr;
  if (listed) {
    instr << "Find the " << kAttributes[attr] << " of the " << item_name;
    if (!path.empty()) {
      instr << " in ";
      for (std::size_t i = 0; i < path.size(); ++i) instr << (i ? " > " : "") << path[i];
    }
    instr << '.';
  } else {
    instr << "Search for the " << item_name << " and report its " << kAttributes[attr] << '.';
  }
  task.instruction = instr.str();
  task.goal = Goal{answer_el.content.value_or(""), item_page.page_id};
  prepare_task(task);

  // Golden path: follow the canonical optimal action from reset.
  EnvState s = initial_state(task, kDefaultMaxSteps);
  Observation obs = observe(task, s);
  std::vector<HistoryEntry> history;
  std::vector<Action> actions;
  while (!s.terminal) {
    auto best = canonical_best_action(task, s, actions);
    if (!best) fail(ErrorCode::kInvalidParams, "task " + task.task_id + " has no golden path");
    task.golden.push_back({context_fingerprint(task.instruction, history, obs), *best});
    history.push_back({thought_for(*best), *best});
    actions.push_back(*best);
    auto r = step(task, s, *best);
    s = std::move(r.state);
    obs = std::move(r.observation);
  }
  return task;
}

std::vector<Task> generate_tasks(const TaskSuiteParams& params) {
  if (params.count < 1) fail(ErrorCode::kInvalidParams, "count must be >= 1");
  std::vector<Task> tasks;
  tasks.reserve(static_cast<std::size_t>(params.count));
  for (int i = 0; i < params.count; ++i) tasks.push_back(generate_task(params.seed, i, params.site));
  return tasks;
}

std::optional<Action> golden_action(const Task& task, std::uint64_t fingerprint) {
  for (const auto& g : task.golden)
    if (g.fingerprint == fingerprint) return g.action;
  return std::nullopt;
}

bool golden_replays(const Task& task) {
  if (task.golden.empty() || task.golden.size() > static_cast<std::size_t>(kDefaultMaxSteps))
    return false;
  EnvState s = initial_state(task, kDefaultMaxSteps);
  for (const auto& g : task.golden) {
    if (s.terminal) return false;
    apply_action(task, s, g.action);
  }
  if (!s.final_answer) return false;
  std::vector<std::string> visited;
  for (int p : s.visited) visited.push_back(task.site.page(p).page_id);
  return goal_satisfied(task, *s.final_answer, visited);
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

ordered_json rect_json(const Rect& r) { return {r.x0, r.y0, r.x1, r.y1}; }

Rect rect_from(const json& j) {
  return Rect{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

ElementKind kind_from(const json& j) {
  auto k = element_kind_from_string(j.get<std::string>());
  if (!k) throw std::runtime_error("unknown element kind");
  return *k;
}

ordered_json site_json(const Site& site) {
  ordered_json pages = ordered_json::array();
  for (const Page& p : site.pages) {
    ordered_json els = ordered_json::array();
    for (const Element& e : p.elements) {
      ordered_json j;
      j["id"] = e.element_id;
      j["kind"] = to_string(e.kind);
      j["label"] = e.label;
      j["bbox"] = rect_json(e.bbox);
      if (e.target_page) j["target"] = *e.target_page;
      if (e.content) j["content"] = *e.content;
      if (!e.routes.empty()) {
        j["query_field"] = e.query_field;
        ordered_json routes = ordered_json::array();
        for (const auto& r : e.routes) routes.push_back({r.query, r.target_page});
        j["routes"] = routes;
      }
      els.push_back(std::move(j));
    }
    pages.push_back({{"id", p.page_id}, {"elements", els}});
  }
  return {{"start", site.start_page}, {"suggestions", site.suggestions}, {"pages", pages}};
}

Site site_from(const json& j) {
  Site site;
  site.start_page = j.at("start").get<std::string>();
  site.suggestions = j.at("suggestions").get<std::vector<std::string>>();
  for (const auto& pj : j.at("pages")) {
    Page p;
    p.page_id = pj.at("id").get<std::string>();
    for (const auto& ej : pj.at("elements")) {
      Element e;
      e.element_id = ej.at("id").get<std::string>();
      e.kind = kind_from(ej.at("kind"));
      e.label = ej.at("label").get<std::string>();
      e.bbox = rect_from(ej.at("bbox"));
      if (ej.contains("target")) e.target_page = ej["target"].get<std::string>();
      if (ej.contains("content")) e.content = ej["content"].get<std::string>();
      if (ej.contains("routes")) {
        e.query_field = ej.at("query_field").get<std::string>();
        for (const auto& r : ej["routes"])
          e.routes.push_back({r.at(0).get<std::string>(), r.at(1).get<std::string>()});
      }
      p.elements.push_back(std::move(e));
    }
    site.pages.push_back(std::move(p));
  }
  return site;
}

constexpr std::string_view kSuiteMagic = "procua-tasks";
constexpr int kSuiteVersion = 1;

}  // namespace

std::string encode_observation(const Observation& obs) {
  ordered_json els = ordered_json::array();
  for (const auto& e : obs.elements) {
    els.push_back({{"id", e.element_id},
                   {"kind", to_string(e.kind)},
                   {"label", e.label},
                   {"bbox", rect_json(e.bbox)},
                   {"content", e.content},
                   {"focused", e.focused}});
  }
  ordered_json j;
  j["page"] = obs.page_id;
  j["elements"] = std::move(els);
  j["suggestions"] = obs.suggestions;
  if (obs.annotation_marker) j["marker"] = {obs.annotation_marker->x, obs.annotation_marker->y};
  return j.dump(-1, ' ', false, ordered_json::error_handler_t::replace);
}

Observation decode_observation(std::string_view text) {
  const json j = json::parse(text);
  Observation obs;
  obs.page_id = j.at("page").get<std::string>();
  for (const auto& ej : j.at("elements")) {
    VisibleElement e;
    e.element_id = ej.at("id").get<std::string>();
    e.kind = kind_from(ej.at("kind"));
    e.label = ej.at("label").get<std::string>();
    e.bbox = rect_from(ej.at("bbox"));
    e.content = ej.at("content").get<std::string>();
    e.focused = ej.at("focused").get<bool>();
    obs.elements.push_back(std::move(e));
  }
  obs.suggestions = j.at("suggestions").get<std::vector<std::string>>();
  if (j.contains("marker"))
    obs.annotation_marker = Point{j["marker"].at(0).get<double>(), j["marker"].at(1).get<double>()};
  return obs;
}

void write_task_suite(const std::string& path, const std::vector<Task>& tasks,
                      const TaskSuiteParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path);
  out << kSuiteMagic << " v" << kSuiteVersion << " seed=" << params.seed
      << " count=" << tasks.size() << " pages=" << params.site.n_pages
      << " branching=" << params.site.branching << " stuck_rate=" << params.site.stuck_rate
      << " unlisted_rate=" << params.site.unlisted_rate << '\n';
  for (const Task& t : tasks) {
    ordered_json golden = ordered_json::array();
    for (const auto& g : t.golden)
      golden.push_back({{"fingerprint", g.fingerprint},
                        {"step", serialize_output({thought_for(g.action), g.action})}});
    ordered_json j;
    j["id"] = t.task_id;
    j["instruction"] = t.instruction;
    j["goal"] = {{"answer", t.goal.answer}, {"page", t.goal.answer_page}};
    j["site"] = site_json(t.site);
    j["golden"] = std::move(golden);
    out << j.dump(-1, ' ', false, ordered_json::error_handler_t::replace) << '\n';
  }
  if (!out) fail(ErrorCode::kIo, "write failed: " + path);
}

std::vector<Task> read_task_suite(const std::string& path, TaskSuiteParams* params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kCorruptRecord, path + ":1 empty file");
  std::istringstream header(line);
  std::string magic, version;
  header >> magic >> version;
  if (magic != kSuiteMagic) fail(ErrorCode::kCorruptRecord, path + ":1 not a task suite");
  if (version != "v" + std::to_string(kSuiteVersion))
    fail(ErrorCode::kVersionMismatch, path + ": suite version " + version);
  TaskSuiteParams p;
  for (std::string kv; header >> kv;) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
    if (k == "seed") p.seed = std::stoull(v);
    else if (k == "count") p.count = std::stoi(v);
    else if (k == "pages") p.site.n_pages = std::stoi(v);
    else if (k == "branching") p.site.branching = std::stoi(v);
    else if (k == "stuck_rate") p.site.stuck_rate = std::stod(v);
    else if (k == "unlisted_rate") p.site.unlisted_rate = std::stod(v);
  }
  std::vector<Task> tasks;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Task t;
      t.task_id = j.at("id").get<std::string>();
      t.instruction = j.at("instruction").get<std::string>();
      t.goal = Goal{j.at("goal").at("answer").get<std::string>(),
                    j.at("goal").at("page").get<std::string>()};
      t.site = site_from(j.at("site"));
      for (const auto& g : j.at("golden")) {
        auto parsed = parse_output(g.at("step").get<std::string>());
        if (!parsed) throw std::runtime_error(parsed.error().detail);
        t.golden.push_back({g.at("fingerprint").get<std::uint64_t>(), parsed.value().answer});
      }
      if (auto problem = validate_site(t.site); !problem.empty())
        throw std::runtime_error(problem);
      prepare_task(t);
      tasks.push_back(std::move(t));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      fail(ErrorCode::kCorruptRecord, path + ":" + std::to_string(line_no) + " " + e.what());
    }
  }
  if (params) *params = p;
  return tasks;
}

}  // namespace procua
