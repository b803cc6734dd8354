#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "procua/error.hpp"
#include "support.hpp"

using namespace procua;

TEST_CASE("generate_site is deterministic and seed-sensitive") {
  const Site a = generate_site(7, 5, 2);
  const Site b = generate_site(7, 5, 2);
  const Site c = generate_site(8, 5, 2);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(validate_site(a).empty());
  CHECK(validate_site(c).empty());
}

TEST_CASE("generate_site rejects bad parameters") {
  CHECK_THROWS_AS(generate_site(1, 1, 2), Error);
  try {
    generate_site(1, 1, 2);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidParams);
  }
  CHECK_THROWS_AS(generate_site(1, 5, 0), Error);
}

TEST_CASE("generated sites: geometry and a textfield") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    const Site s = generate_site(seed, SiteParams{});
    CHECK_MESSAGE(validate_site(s).empty(), validate_site(s));
    bool field = false;
    for (const auto& p : s.pages)
      for (const auto& e : p.elements) {
        field |= e.kind == ElementKind::textfield;
        CHECK(0 <= e.bbox.x0);
        CHECK(e.bbox.x0 < e.bbox.x1);
        CHECK(e.bbox.x1 <= kViewportWidth);
        CHECK(0 <= e.bbox.y0);
        CHECK(e.bbox.y0 < e.bbox.y1);
        CHECK(e.bbox.y1 <= kViewportHeight);
      }
    CHECK(field);
  }
}

TEST_CASE("fixture site validates") { CHECK(validate_site(test::fixture_site()).empty()); }

TEST_CASE("reset") {
  const Task t = test::fixture_task();
  auto [s1, o1] = reset(t);
  auto [s2, o2] = reset(t);
  CHECK(o1.page_id == t.site.start_page);
  CHECK(o1 == o2);
  CHECK(s1.steps == 0);
  // The start observation lists the category link that leads toward the answer.
  bool has_link = false;
  for (const auto& e : o1.elements) has_link |= e.kind == ElementKind::link && e.label == "Shoes";
  CHECK(has_link);
}

TEST_CASE("step: link click navigates, miss is a no-op, finished terminates") {
  const Task t = test::fixture_task();
  auto [s, o] = reset(t);
  // "Shoes" link spans (60,212)-(480,256).
  auto r = step(t, s, test::click_at(270, 234));
  CHECK(r.observation.page_id == "shoes");
  CHECK(r.state.steps == 1);

  auto miss = step(t, s, test::click_at(0, 0));
  CHECK(miss.observation.page_id == "home");
  CHECK(miss.state.steps == 1);
  CHECK_FALSE(miss.terminal);

  auto fin = step(t, s, test::simple(ActionType::finished, "42"));
  CHECK(fin.terminal);
  CHECK(fin.state.final_answer == std::optional<std::string>("42"));
  CHECK_THROWS_AS(step(t, fin.state, test::simple(ActionType::wait)), Error);
}

TEST_CASE("step: hit testing is half-open") {
  const Task t = test::fixture_task();
  auto [s, o] = reset(t);
  CHECK(step(t, s, test::click_at(60, 212)).observation.page_id == "shoes");   // lower edges inclusive
  CHECK(step(t, s, test::click_at(479.5, 255.9)).observation.page_id == "shoes");
  CHECK(step(t, s, test::click_at(480, 234)).observation.page_id == "home");   // upper x exclusive
  CHECK(step(t, s, test::click_at(270, 256)).observation.page_id == "home");   // upper y exclusive
}

TEST_CASE("step: search routes on typed query") {
  const Task t = test::fixture_task();
  auto [s, o] = reset(t);
  Action type_at = test::simple(ActionType::type_text, "Red Shoes");
  type_at.point_2d = Point{100, 100};
  auto r = step(t, s, type_at);
  CHECK(r.observation.page_id == "home");
  auto go = step(t, r.state, test::click_at(100, 170));
  CHECK(go.observation.page_id == "item");

  auto wrong = step(t, step(t, s, test::click_at(100, 100)).state, test::simple(ActionType::type_text, "blue hat"));
  CHECK(step(t, wrong.state, test::click_at(100, 170)).observation.page_id == "home");
}

TEST_CASE("step: budget and terminal errors") {
  const Task t = test::fixture_task();
  EnvState s = initial_state(t, 2);
  s = step(t, s, test::simple(ActionType::wait)).state;
  auto last = step(t, s, test::simple(ActionType::wait));
  CHECK(last.terminal);
  CHECK_FALSE(last.state.final_answer);
  try {
    step(t, last.state, test::simple(ActionType::wait));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kStepBudgetExhausted);
  }
  EnvState done = step(t, initial_state(t), test::simple(ActionType::finished, "x")).state;
  try {
    step(t, done, test::simple(ActionType::wait));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTerminalStateStep);
  }
}

TEST_CASE("enumerate_candidates: counts and order") {
  const Task t = test::fixture_task();
  EnvState s = initial_state(t);
  // On the shoes page: two interactable elements (link, back anchor) + goback + wait
  // + one finished per visible text.
  s = step(t, s, test::click_at(270, 234)).state;
  const auto c = enumerate_candidates(t, s);
  int clicks = 0, fins = 0, back = 0, wait = 0;
  for (const auto& a : c) {
    clicks += a.action_type == ActionType::left_click;
    fins += a.action_type == ActionType::finished;
    back += a.action_type == ActionType::goback;
    wait += a.action_type == ActionType::wait;
  }
  CHECK(clicks == 2);
  CHECK(fins == 1);
  CHECK(back == 1);
  CHECK(wait == 1);
  CHECK(c.size() == 5);
  CHECK(c == enumerate_candidates(t, s));

  // Focusing the field adds one type candidate per suggestion.
  EnvState f = step(t, initial_state(t), test::click_at(100, 100)).state;
  int types = 0;
  for (const auto& a : enumerate_candidates(t, f)) types += a.action_type == ActionType::type_text;
  CHECK(types == 2);

  CHECK_THROWS_AS(enumerate_candidates(t, step(t, s, test::simple(ActionType::finished, "x")).state), Error);
}

TEST_CASE("is_success semantics") {
  const Task t = test::fixture_task();
  REQUIRE(golden_replays(t));
  // Golden: link, link, finished("$42").
  CHECK(t.golden.size() == 3);

  auto run = [&](const std::vector<Action>& actions, int cap) { return test::record_of(t, actions, cap); };
  const auto golden = test::golden_actions(t);
  CHECK(is_success(t, run(golden, 20)));

  std::vector<Action> idle(25, test::simple(ActionType::wait));
  auto capped = run(idle, 20);
  CHECK(capped.steps.size() == 20);
  CHECK_FALSE(capped.finished);
  CHECK_FALSE(is_success(t, capped));

  auto wrong = golden;
  wrong.back() = test::simple(ActionType::finished, "$41");
  auto w = run(wrong, 20);
  CHECK(w.finished);
  CHECK_FALSE(is_success(t, w));

  // Right answer from the wrong page does not count.
  auto early = run({test::simple(ActionType::finished, "$42")}, 20);
  CHECK(early.finished);
  CHECK_FALSE(is_success(t, early));
}

TEST_CASE("golden_action lookup") {
  const Task t = test::fixture_task();
  CHECK(golden_action(t, t.golden[0].fingerprint) == std::optional<Action>(t.golden[0].action));
  CHECK_FALSE(golden_action(t, 12345));

  // A search-only task's golden path carries the typed query.
  const auto tasks = generate_tasks({5, 40, {}});
  bool found = false;
  for (const auto& task : tasks)
    for (const auto& g : task.golden)
      if (g.action.action_type == ActionType::type_text) {
        found = true;
        CHECK(g.action.value);
        CHECK(task.instruction.find(*g.action.value) != std::string::npos);
      }
  CHECK(found);
}

TEST_CASE("every generated task replays its golden path within 20 steps") {
  const auto tasks = generate_tasks({3, 100, {}});
  for (const auto& t : tasks) {
    CHECK(golden_replays(t));
    CHECK(t.golden.size() <= 20);
  }
  CHECK_THROWS_AS(generate_tasks({3, 0, {}}), Error);
}

TEST_CASE("distance table agrees with brute-force BFS on random states") {
  Rng rng(99);
  const auto tasks = generate_tasks({21, 12, {}});
  std::vector<Task> all(tasks.begin(), tasks.end());
  all.push_back(test::fixture_task());
  int compared = 0;
  for (const auto& t : all) {
    for (int k = 0; k < 25; ++k) {
      const auto w = test::random_walk(t, rng, 8);
      const int fast = distance_to_goal(t, w.state);
      const int slow = test::brute_force_distance(t, w.state, 16);
      if (slow < 0)
        CHECK(fast >= kUnreachable);
      else
        CHECK(fast == slow);
      ++compared;
    }
  }
  CHECK(compared == 13 * 25);
}

TEST_CASE("repeats_history is state-aware") {
  const Task t = test::fixture_task();
  const Action search = test::click_at(270, 170);
  const Action focus = test::click_at(270, 106);
  const Action type = test::simple(ActionType::type_text, "red shoes");
  EnvState s = initial_state(t, 100);
  std::vector<Action> h;
  apply_action(t, s, search);
  h.push_back(search);
  // The empty submit left the screen unchanged, so issuing it again is redundant.
  CHECK(repeats_history(t, h, s, search));
  for (const auto& a : {focus, type}) {
    apply_action(t, s, a);
    h.push_back(a);
  }
  // After typing, the same click does something new.
  CHECK_FALSE(repeats_history(t, h, s, search));
  CHECK(repeats_history(t, h, s, type) == false);  // type was issued with an empty field
}

TEST_CASE("task suite file round-trip") {
  const auto path = (std::filesystem::temp_directory_path() / "procua_suite_test.tasks").string();
  TaskSuiteParams p{9, 6, {}};
  const auto tasks = generate_tasks(p);
  write_task_suite(path, tasks, p);
  TaskSuiteParams back;
  const auto loaded = read_task_suite(path, &back);
  CHECK(loaded == tasks);
  CHECK(back.seed == 9);
  CHECK(back.count == 6);
  for (const auto& t : loaded) CHECK(golden_replays(t));
  std::remove(path.c_str());
}

TEST_CASE("observation codec round-trip") {
  const Task t = test::fixture_task();
  Observation o = observe(t, step(t, initial_state(t), test::click_at(100, 100)).state);
  o.annotation_marker = Point{3.5, 4};
  CHECK(decode_observation(encode_observation(o)) == o);
}
