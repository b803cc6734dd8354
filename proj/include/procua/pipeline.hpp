#pragma once

// The two-stage iterative loop. Stage 1 rolls the current policy out in the
// environment and records every step context; stage 2 trains on those
// contexts without ever stepping the environment again.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "procua/grpo.hpp"
#include "procua/rewards.hpp"
#include "procua/trajectory.hpp"

namespace procua {

enum class Method { pro_cua, rule_step_rl, fbc };

const char* to_string(Method m);
std::optional<Method> method_from_string(std::string_view s);

struct ExperimentConfig {
  Method method = Method::pro_cua;
  int iterations = 10;
  int tasks_per_iteration = 256;
  int max_steps = 20;
  int eval_max_steps = 30;
  double rollout_temperature = 1.0;

  GRPOConfig grpo;
  int groups_per_update = 1;
  int rl_epochs = 1;
  int fbc_epochs = 2;
  int fbc_batch_size = 8;
  double fbc_learning_rate = 0.5;
  double format_weight = kDefaultFormatWeight;

  PRMOracleConfig prm;
  std::string prm_endpoint;  // empty: use the oracle

  // Suites. The training pool and the eval suite come from distinct seeds.
  std::uint64_t train_seed = 1;
  int train_tasks = 64;
  std::uint64_t eval_seed = 2;
  int eval_tasks = 64;
  SiteParams site;

  std::uint64_t rollout_seed = 3;
  std::uint64_t optimizer_seed = 4;

  int ma_window = 100;
  int workers = 1;

  /// Throws InvalidParams on out-of-range values.
  void validate() const;
};

struct IterationReport {
  int iteration = 0;  // 1-based
  int trajectories = 0;
  int finished = 0;
  int successful = 0;
  // Step contexts passing each filter on this iteration's shared rollout.
  int finished_steps = 0;
  int successful_steps = 0;
  int deployable_steps = 0;  // under the method's own filter
  int graded_groups = 0;
  int updates = 0;
  double mean_step_reward = 0;
  std::vector<double> reward_ma;  // one point per graded group
  int fbc_skipped = 0;
  double eval_success_rate = 0;
  double wall_seconds = 0;  // manifest only; kept out of the metrics stream
};

struct ExperimentResult {
  double base_eval_success_rate = 0;
  std::vector<IterationReport> reports;
  PolicyParams policy;
};

struct StageMetrics {
  int updates = 0;
  std::vector<double> group_rewards;  // mean reward of each graded group, in order
  std::size_t skipped = 0;
};

/// Writes one JSON object per line. Reports IoError if the stream fails.
class MetricsSink {
 public:
  explicit MetricsSink(std::ostream* out) : out_(out) {}
  void update(int iteration, int update, double loss, double mean_reward, double kl_value);
  void iteration(const IterationReport& r, std::string_view method);
  void summary(const ExperimentResult& result, std::string_view method);

 private:
  void write(const std::string& line);
  std::ostream* out_;
};

struct RolloutOptions {
  int max_steps = kDefaultMaxSteps;
  double temperature = 1.0;
  bool greedy = false;
  int workers = 1;
};

/// One trajectory of `policy` on `task`. Environment errors end the
/// trajectory early (unfinished) and are logged.
TrajectoryRecord rollout(const PolicyParams& policy, const Task& task, const RolloutOptions& opt,
                         Rng& rng, std::string trajectory_id);

/// Rolls out every task once. Task i uses a seed derived from (seed, i);
/// results come back in task order regardless of the worker count.
std::vector<TrajectoryRecord> collect_stage1(const PolicyParams& policy,
                                             std::span<const Task* const> tasks,
                                             const RolloutOptions& opt, std::uint64_t seed,
                                             const std::string& id_prefix = "traj");

/// Greedy success rate over a suite.
double evaluate(const PolicyParams& policy, std::span<const Task> tasks, int max_steps = 30,
                int workers = 1);

using EntryGrader = std::function<std::vector<double>(
    const DatasetEntry& entry, const Task& task, std::span<const CandidateSample> candidates)>;

/// Samples and grades one group per dataset entry (in parallel, per-entry
/// seeds) and then runs the configured GRPO epochs sequentially. Graders see
/// the task but the environment is never stepped.
PolicyParams stage2_grpo(const PolicyParams& policy, const StateDataset& data,
                         std::span<const Task> tasks, const EntryGrader& grade,
                         const ExperimentConfig& cfg, std::uint64_t seed, int iteration,
                         StageMetrics* metrics, MetricsSink* sink,
                         std::vector<CandidateGroup>* groups_out = nullptr);

PolicyParams stage2_pro_cua(const PolicyParams& policy, const StateDataset& dstate,
                            std::span<const Task> tasks, const StepGrader& grader,
                            const ExperimentConfig& cfg, std::uint64_t seed, int iteration,
                            StageMetrics* metrics = nullptr, MetricsSink* sink = nullptr);

PolicyParams stage2_rule(const PolicyParams& policy, const StateDataset& dsucc,
                         std::span<const Task> tasks, const ExperimentConfig& cfg,
                         std::uint64_t seed, int iteration, StageMetrics* metrics = nullptr,
                         MetricsSink* sink = nullptr);

/// Behavior cloning on executed actions of successful trajectories.
PolicyParams stage2_fbc(const PolicyParams& policy, const StateDataset& dsucc,
                        const ExperimentConfig& cfg, std::uint64_t seed,
                        StageMetrics* metrics = nullptr);

struct ArtifactOptions {
  std::string dataset_dir;  // empty: do not persist D_state files
  std::vector<std::string>* written = nullptr;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::span<const Task> train,
                                std::span<const Task> eval, MetricsSink* sink = nullptr,
                                const ArtifactOptions& artifacts = {});

/// Generates both suites from the config seeds and runs.
ExperimentResult run_experiment(const ExperimentConfig& cfg, MetricsSink* sink = nullptr,
                                const ArtifactOptions& artifacts = {});

}  // namespace procua
