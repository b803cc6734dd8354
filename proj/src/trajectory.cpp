#include "procua/trajectory.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "procua/error.hpp"

namespace procua {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::string_view kStateMagic = "procua-dstate";

std::optional<GoldenReference> golden_of(const TrajectoryStep& step) {
  const Action& a = step.executed.answer;
  GoldenReference ref{a, Rect{}};
  if (a.point_2d) {
    for (const auto& e : step.context.observation.elements) {
      if (e.bbox.contains(*a.point_2d)) {
        ref.bbox = e.bbox;
        break;
      }
    }
  }
  return ref;
}

template <typename Keep>
StateDataset gather(std::span<const TrajectoryRecord> trajectories, int iteration,
                    std::string filter, bool with_golden, Keep keep) {
  StateDataset d;
  d.iteration = iteration;
  d.filter = std::move(filter);
  for (const auto& t : trajectories) {
    if (!keep(t)) continue;
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      DatasetEntry e{t.task_id, t.trajectory_id, static_cast<int>(i + 1), t.steps[i].context,
                     std::nullopt};
      if (with_golden) e.golden = golden_of(t.steps[i]);
      d.entries.push_back(std::move(e));
    }
  }
  return d;
}

ordered_json entry_json(const DatasetEntry& e) {
  ordered_json history = ordered_json::array();
  for (const auto& h : e.context.history) history.push_back(serialize_output({h.thought, h.action}));
  ordered_json j;
  j["task"] = e.task_id;
  j["trajectory"] = e.trajectory_id;
  j["step"] = e.step_index;
  j["fingerprint"] = e.context.fingerprint;
  j["instruction"] = e.context.instruction;
  j["history"] = std::move(history);
  j["observation"] = ordered_json::parse(encode_observation(e.context.observation));
  if (e.golden) {
    const Rect& b = e.golden->bbox;
    j["golden"] = {{"step", serialize_output({thought_for(e.golden->action), e.golden->action})},
                   {"bbox", {b.x0, b.y0, b.x1, b.y1}}};
  }
  return j;
}

Action parse_step_action(const std::string& text, std::string* thought) {
  auto parsed = parse_output(text);
  if (!parsed) throw std::runtime_error(std::string("bad step: ") + parsed.error().detail);
  if (thought) *thought = parsed.value().think;
  return parsed.value().answer;
}

DatasetEntry entry_from(const json& j) {
  DatasetEntry e;
  e.task_id = j.at("task").get<std::string>();
  e.trajectory_id = j.at("trajectory").get<std::string>();
  e.step_index = j.at("step").get<int>();
  std::vector<HistoryEntry> history;
  for (const auto& h : j.at("history")) {
    HistoryEntry entry;
    entry.action = parse_step_action(h.get<std::string>(), &entry.thought);
    history.push_back(std::move(entry));
  }
  e.context = make_context(j.at("instruction").get<std::string>(), std::move(history),
                           decode_observation(j.at("observation").dump()));
  if (e.context.fingerprint != j.at("fingerprint").get<std::uint64_t>())
    throw std::runtime_error("fingerprint mismatch");
  if (j.contains("golden")) {
    const auto& g = j["golden"];
    const auto& b = g.at("bbox");
    e.golden = GoldenReference{parse_step_action(g.at("step").get<std::string>(), nullptr),
                               Rect{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                                    b.at(3).get<int>()}};
  }
  return e;
}

}  // namespace

bool is_success(const Task& task, const TrajectoryRecord& t) {
  if (t.steps.empty()) return false;
  const Action& last = t.steps.back().executed.answer;
  if (last.action_type != ActionType::finished) return false;
  std::vector<std::string> visited;
  for (const auto& s : t.steps) visited.push_back(s.context.observation.page_id);
  return goal_satisfied(task, last.value.value_or(""), visited);
}

StateDataset collect_all(std::span<const TrajectoryRecord> trajectories, int iteration) {
  return gather(trajectories, iteration, "none", false, [](const auto&) { return true; });
}

StateDataset filter_finished(std::span<const TrajectoryRecord> trajectories, int iteration) {
  return gather(trajectories, iteration, "finished", false,
                [](const TrajectoryRecord& t) { return t.finished; });
}

StateDataset filter_successful(std::span<const TrajectoryRecord> trajectories, int iteration) {
  return gather(trajectories, iteration, "successful", true,
                [](const TrajectoryRecord& t) { return t.success; });
}

void persist(const StateDataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path);
  out << kStateMagic << " v" << kStateFileVersion << " iteration=" << d.iteration
      << " filter=" << d.filter << '\n';
  for (const auto& e : d.entries)
    out << entry_json(e).dump(-1, ' ', false, ordered_json::error_handler_t::replace) << '\n';
  out.flush();
  if (!out) fail(ErrorCode::kIo, "write failed: " + path);
}

StateDataset load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kCorruptRecord, path + ":1 missing header");
  std::istringstream header(line);
  std::string magic, version;
  header >> magic >> version;
  if (magic != kStateMagic) fail(ErrorCode::kCorruptRecord, path + ":1 bad header");
  if (version != "v" + std::to_string(kStateFileVersion))
    fail(ErrorCode::kVersionMismatch, path + ": dataset version " + version);
  StateDataset d;
  for (std::string kv; header >> kv;) {
    if (kv.rfind("iteration=", 0) == 0) d.iteration = std::stoi(kv.substr(10));
    else if (kv.rfind("filter=", 0) == 0) d.filter = kv.substr(7);
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const bool terminated = !in.eof();
    try {
      if (!terminated) throw std::runtime_error("record not newline-terminated");
      d.entries.push_back(entry_from(json::parse(line)));
    } catch (const std::exception& e) {
      fail(ErrorCode::kCorruptRecord, path + ":" + std::to_string(line_no) + " " + e.what());
    }
  }
  return d;
}

void persist_trajectories(std::span<const TrajectoryRecord> trajectories, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path);
  out << "procua-trajectories v1 count=" << trajectories.size() << '\n';
  for (const auto& t : trajectories) {
    ordered_json steps = ordered_json::array();
    for (const auto& s : t.steps)
      steps.push_back({{"fingerprint", s.context.fingerprint},
                       {"page", s.context.observation.page_id},
                       {"executed", serialize_output(s.executed)},
                       {"next_page", s.next.page_id}});
    ordered_json j;
    j["trajectory"] = t.trajectory_id;
    j["task"] = t.task_id;
    j["finished"] = t.finished;
    j["success"] = t.success;
    j["temperature"] = t.rollout_temperature;
    j["policy_version"] = t.policy_version;
    j["steps"] = std::move(steps);
    out << j.dump(-1, ' ', false, ordered_json::error_handler_t::replace) << '\n';
  }
  if (!out) fail(ErrorCode::kIo, "write failed: " + path);
}

}  // namespace procua
