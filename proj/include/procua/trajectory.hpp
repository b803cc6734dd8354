#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "procua/context.hpp"

namespace procua {

struct TrajectoryStep {
  StateContext context;
  StructuredOutput executed;
  Observation next;

  friend bool operator==(const TrajectoryStep&, const TrajectoryStep&) = default;
};

struct TrajectoryRecord {
  std::string trajectory_id;
  std::string task_id;
  std::vector<TrajectoryStep> steps;
  bool finished = false;  // ended by a finished action within budget
  bool success = false;   // finished and the goal holds
  double rollout_temperature = 1.0;
  int policy_version = 0;

  friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

/// True iff the trajectory ended with finished and the task goal holds.
bool is_success(const Task& task, const TrajectoryRecord& trajectory);

struct GoldenReference {
  Action action;
  Rect bbox;  // element under the executed point; empty for ungrounded actions

  friend bool operator==(const GoldenReference&, const GoldenReference&) = default;
};

struct DatasetEntry {
  std::string task_id;
  std::string trajectory_id;
  int step_index = 0;  // 1-based
  StateContext context;
  std::optional<GoldenReference> golden;

  friend bool operator==(const DatasetEntry&, const DatasetEntry&) = default;
};

struct StateDataset {
  int iteration = 0;
  std::string filter = "none";
  std::vector<DatasetEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  friend bool operator==(const StateDataset&, const StateDataset&) = default;
};

/// Every step context of every trajectory (the unfiltered state dataset).
StateDataset collect_all(std::span<const TrajectoryRecord> trajectories, int iteration = 0);

/// Step contexts of finished trajectories, successful or not, in order.
StateDataset filter_finished(std::span<const TrajectoryRecord> trajectories, int iteration = 0);

/// Step contexts of successful trajectories, each carrying its executed
/// action (and the bbox it hit) as the golden reference.
StateDataset filter_successful(std::span<const TrajectoryRecord> trajectories, int iteration = 0);

inline constexpr int kStateFileVersion = 1;

/// Line-delimited file: `procua-dstate v1 iteration=<k> filter=<name>` then
/// one JSON record per step context.
void persist(const StateDataset& dataset, const std::string& path);
StateDataset load(const std::string& path);

// Trajectory log, same layout with a `procua-trajectories v1` header.
void persist_trajectories(std::span<const TrajectoryRecord> trajectories, const std::string& path);

}  // namespace procua
