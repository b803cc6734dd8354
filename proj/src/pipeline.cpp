#include "procua/pipeline.hpp"

#include <chrono>
#include <deque>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>
#include <atomic>

#include "json.hpp"
#include "procua/error.hpp"
#include "procua/log.hpp"

namespace procua {

using ordered_json = nlohmann::ordered_json;

const char* to_string(Method m) {
  switch (m) {
    case Method::pro_cua: return "pro_cua";
    case Method::rule_step_rl: return "rule_step_rl";
    case Method::fbc: return "fbc";
  }
  return "unknown";
}

std::optional<Method> method_from_string(std::string_view s) {
  for (Method m : {Method::pro_cua, Method::rule_step_rl, Method::fbc})
    if (s == to_string(m)) return m;
  return std::nullopt;
}

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) fail(ErrorCode::kInvalidParams, what);
  };
  need(iterations >= 1, "iterations must be >= 1");
  need(tasks_per_iteration >= 1, "tasks_per_iteration must be >= 1");
  need(max_steps >= 1, "max_steps must be >= 1");
  need(eval_max_steps >= 1, "eval_max_steps must be >= 1");
  need(rollout_temperature > 0, "rollout_temperature must be > 0");
  need(groups_per_update >= 1, "groups_per_update must be >= 1");
  need(rl_epochs >= 1 && fbc_epochs >= 1, "epochs must be >= 1");
  need(fbc_batch_size >= 1, "fbc_batch_size must be >= 1");
  need(fbc_learning_rate > 0, "fbc_learning_rate must be > 0");
  need(format_weight >= 0 && format_weight <= 1, "format_weight must be in [0, 1]");
  need(prm.noise_rate >= 0 && prm.noise_rate < 0.5, "prm_noise must be in [0, 0.5)");
  need(train_tasks >= 1 && eval_tasks >= 1, "suite sizes must be >= 1");
  need(train_seed != eval_seed, "train_seed and eval_seed must differ (disjoint suites)");
  need(ma_window >= 1, "ma_window must be >= 1");
  need(workers >= 1, "workers must be >= 1");
  grpo.validate();
}

// ---------------------------------------------------------------------------

namespace {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
/// is rethrown after every worker has stopped.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t nthreads = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (nthreads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < nthreads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::map<std::string, const Task*> index_tasks(std::span<const Task> tasks) {
  std::map<std::string, const Task*> out;
  for (const auto& t : tasks) out.emplace(t.task_id, &t);
  return out;
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

void MetricsSink::write(const std::string& line) {
  if (!out_) return;
  *out_ << line << '\n';
  if (!*out_) fail(ErrorCode::kIo, "metrics stream write failed");
}

void MetricsSink::update(int iteration, int update, double loss, double mean_reward, double kl_value) {
  ordered_json j;
  j["record"] = "update";
  j["iteration"] = iteration;
  j["update"] = update;
  j["loss"] = loss;
  j["mean_reward"] = mean_reward;
  j["kl"] = kl_value;
  write(j.dump());
}

void MetricsSink::iteration(const IterationReport& r, std::string_view method) {
  ordered_json j;
  j["record"] = "iteration";
  j["method"] = method;
  j["iteration"] = r.iteration;
  j["trajectories"] = r.trajectories;
  j["finished"] = r.finished;
  j["successful"] = r.successful;
  j["finished_steps"] = r.finished_steps;
  j["successful_steps"] = r.successful_steps;
  j["deployable_steps"] = r.deployable_steps;
  j["graded_groups"] = r.graded_groups;
  j["updates"] = r.updates;
  j["fbc_skipped"] = r.fbc_skipped;
  j["mean_step_reward"] = r.mean_step_reward;
  j["eval_success_rate"] = r.eval_success_rate;
  j["reward_ma"] = r.reward_ma;
  write(j.dump());
}

void MetricsSink::summary(const ExperimentResult& result, std::string_view method) {
  ordered_json j;
  j["record"] = "summary";
  j["method"] = method;
  j["base_eval_success_rate"] = result.base_eval_success_rate;
  j["final_eval_success_rate"] =
      result.reports.empty() ? result.base_eval_success_rate : result.reports.back().eval_success_rate;
  j["policy_version"] = result.policy.version;
  write(j.dump());
}

// ---------------------------------------------------------------------------
// Stage 1

TrajectoryRecord rollout(const PolicyParams& policy, const Task& task, const RolloutOptions& opt,
                         Rng& rng, std::string trajectory_id) {
  TrajectoryRecord rec;
  rec.trajectory_id = std::move(trajectory_id);
  rec.task_id = task.task_id;
  rec.rollout_temperature = opt.greedy ? 0.0 : opt.temperature;
  rec.policy_version = policy.version;
  try {
    auto [state, obs] = reset(task, opt.max_steps);
    std::vector<HistoryEntry> history;
    while (!state.terminal) {
      StateContext ctx = make_context(task.instruction, history, obs);
      const CandidateSet cands = make_candidate_set(ctx);
      const std::size_t j =
          opt.greedy ? greedy_index(policy, cands) : sample_index(policy, cands, opt.temperature, rng);
      const Action& action = cands.actions[j];
      StructuredOutput out{thought_for(action), action};
      StepResult next = step(task, state, action);
      history.push_back({out.think, out.answer});
      rec.steps.push_back({std::move(ctx), std::move(out), next.observation});
      state = std::move(next.state);
      obs = std::move(next.observation);
    }
    rec.finished = state.final_answer.has_value();
    rec.success = rec.finished && is_success(task, rec);
  } catch (const Error& e) {
    log_warning("trajectory " + rec.trajectory_id + " aborted: " + e.what());
    rec.finished = false;
    rec.success = false;
  }
  return rec;
}

std::vector<TrajectoryRecord> collect_stage1(const PolicyParams& policy,
                                             std::span<const Task* const> tasks,
                                             const RolloutOptions& opt, std::uint64_t seed,
                                             const std::string& id_prefix) {
  if (tasks.empty()) fail(ErrorCode::kInvalidParams, "stage 1 needs at least one task");
  std::vector<TrajectoryRecord> out(tasks.size());
  parallel_for(tasks.size(), opt.workers, [&](std::size_t i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    out[i] = rollout(policy, *tasks[i], opt, rng, id_prefix + "-" + std::to_string(i));
  });
  return out;
}

double evaluate(const PolicyParams& policy, std::span<const Task> tasks, int max_steps, int workers) {
  if (tasks.empty()) return 0.0;
  std::vector<char> ok(tasks.size(), 0);
  RolloutOptions opt{max_steps, 1.0, true, workers};
  parallel_for(tasks.size(), workers, [&](std::size_t i) {
    Rng rng(0);
    ok[i] = rollout(policy, tasks[i], opt, rng, "eval-" + std::to_string(i)).success ? 1 : 0;
  });
  std::size_t n = 0;
  for (char c : ok) n += c;
  return static_cast<double>(n) / static_cast<double>(tasks.size());
}

// ---------------------------------------------------------------------------
// Stage 2

PolicyParams stage2_grpo(const PolicyParams& policy, const StateDataset& data,
                         std::span<const Task> tasks, const EntryGrader& grade,
                         const ExperimentConfig& cfg, std::uint64_t seed, int iteration,
                         StageMetrics* metrics, MetricsSink* sink,
                         std::vector<CandidateGroup>* groups_out) {
  cfg.grpo.validate();
  if (data.empty()) {
    log_warning("iteration " + std::to_string(iteration) + ": empty state dataset, no updates");
    return policy;
  }
  const std::uint64_t env_calls = env_step_calls();
  const auto by_id = index_tasks(tasks);

  // Every group is sampled from the iteration-start parameters, which are
  // both the behavior policy (theta_old) and the KL reference.
  std::vector<CandidateGroup> groups(data.size());
  parallel_for(data.size(), cfg.workers, [&](std::size_t i) {
    const DatasetEntry& entry = data.entries[i];
    auto it = by_id.find(entry.task_id);
    if (it == by_id.end()) fail(ErrorCode::kPrecondition, "unknown task " + entry.task_id);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    CandidateSet cands = make_candidate_set(entry.context);
    auto samples = sample_group(policy, cands, cfg.rollout_temperature, cfg.grpo.group_size, rng);
    auto rewards = grade(entry, *it->second, samples);
    if (rewards.size() != samples.size())
      fail(ErrorCode::kPrecondition, "grader returned the wrong number of rewards");
    groups[i] = make_group(entry.context, std::move(cands), std::move(samples), std::move(rewards),
                           cfg.grpo.advantage_mode);
  });

  if (env_step_calls() != env_calls)
    fail(ErrorCode::kPrecondition, "stage 2 must not step the environment");

  const PolicyParams& theta_old = policy;
  const PolicyParams& theta_ref = policy;
  PolicyParams theta = policy;
  int updates = 0;
  const std::size_t batch = static_cast<std::size_t>(cfg.groups_per_update);
  for (int epoch = 0; epoch < cfg.rl_epochs; ++epoch) {
    for (std::size_t b = 0; b < groups.size(); b += batch) {
      std::span<const CandidateGroup> mb(groups.data() + b, std::min(batch, groups.size() - b));
      double reward = 0, kl_value = 0;
      for (const auto& g : mb) {
        reward += mean_of(g.rewards);
        kl_value += kl(theta, theta_ref, g.cands);
      }
      reward /= static_cast<double>(mb.size());
      kl_value /= static_cast<double>(mb.size());
      const double loss = grpo_loss(theta, theta_old, theta_ref, mb, cfg.grpo);
      const auto grad = grpo_grad(theta, theta_old, theta_ref, mb, cfg.grpo);
      theta = sgd_step(theta, grad, cfg.grpo.learning_rate);
      ++updates;
      if (sink) sink->update(iteration, updates, loss, reward, kl_value);
    }
  }

  if (metrics) {
    metrics->updates += updates;
    for (const auto& g : groups) metrics->group_rewards.push_back(mean_of(g.rewards));
  }
  if (groups_out) *groups_out = std::move(groups);
  return theta;
}

PolicyParams stage2_pro_cua(const PolicyParams& policy, const StateDataset& dstate,
                            std::span<const Task> tasks, const StepGrader& grader,
                            const ExperimentConfig& cfg, std::uint64_t seed, int iteration,
                            StageMetrics* metrics, MetricsSink* sink) {
  auto grade = [&](const DatasetEntry& e, const Task& task, std::span<const CandidateSample> c) {
    return grader.grade(task, e.context, c);
  };
  return stage2_grpo(policy, dstate, tasks, grade, cfg, seed, iteration, metrics, sink);
}

PolicyParams stage2_rule(const PolicyParams& policy, const StateDataset& dsucc,
                         std::span<const Task> tasks, const ExperimentConfig& cfg,
                         std::uint64_t seed, int iteration, StageMetrics* metrics,
                         MetricsSink* sink) {
  auto grade = [&](const DatasetEntry& e, const Task&, std::span<const CandidateSample> c) {
    if (!e.golden) fail(ErrorCode::kPrecondition, "rule reward needs a golden reference");
    std::vector<double> r;
    r.reserve(c.size());
    for (const auto& s : c) {
      // Grade the raw text so the format component is exercised.
      const std::string raw = serialize_output({s.thought, s.action});
      r.push_back(rule_reward(raw, e.golden->action, e.golden->bbox, cfg.format_weight).total);
    }
    return r;
  };
  return stage2_grpo(policy, dsucc, tasks, grade, cfg, seed, iteration, metrics, sink);
}

PolicyParams stage2_fbc(const PolicyParams& policy, const StateDataset& dsucc,
                        const ExperimentConfig& cfg, std::uint64_t seed, StageMetrics* metrics) {
  if (dsucc.empty()) {
    log_warning("fbc: empty dataset, policy unchanged");
    return policy;
  }
  const std::uint64_t env_calls = env_step_calls();
  std::vector<FbcExample> examples;
  examples.reserve(dsucc.size());
  std::size_t skipped = 0;
  for (const auto& e : dsucc.entries) {
    if (!e.golden) fail(ErrorCode::kPrecondition, "fbc needs executed actions");
    CandidateSet cands = make_candidate_set(e.context);
    if (!find_candidate(cands, e.golden->action)) {
      ++skipped;
      continue;
    }
    examples.push_back({std::move(cands), e.golden->action});
  }

  PolicyParams theta = policy;
  int updates = 0;
  std::vector<std::size_t> order(examples.size());
  std::vector<FbcExample> batch;
  for (int epoch = 0; epoch < cfg.fbc_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
    procua::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.fbc_batch_size)) {
      batch.clear();
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.fbc_batch_size));
      for (std::size_t k = b; k < end; ++k) batch.push_back(examples[order[k]]);
      theta = sgd_step(theta, fbc_grad(theta, batch), cfg.fbc_learning_rate);
      ++updates;
    }
  }
  if (env_step_calls() != env_calls)
    fail(ErrorCode::kPrecondition, "stage 2 must not step the environment");
  if (metrics) {
    metrics->updates += updates;
    metrics->skipped += skipped;
  }
  return theta;
}

// ---------------------------------------------------------------------------

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::span<const Task> train,
                                std::span<const Task> eval, MetricsSink* sink,
                                const ArtifactOptions& artifacts) {
  cfg.validate();
  if (train.empty() || eval.empty()) fail(ErrorCode::kInvalidParams, "empty task suite");
  {
    const auto ids = index_tasks(train);
    for (const auto& t : eval)
      if (ids.count(t.task_id)) fail(ErrorCode::kInvalidParams, "eval suite overlaps training pool");
  }
  if (!artifacts.dataset_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(artifacts.dataset_dir, ec);
    if (ec) fail(ErrorCode::kIo, "cannot create " + artifacts.dataset_dir + ": " + ec.message());
  }

  std::unique_ptr<StepGrader> grader;
  if (cfg.method == Method::pro_cua) {
    if (cfg.prm_endpoint.empty())
      grader = std::make_unique<OracleGrader>(cfg.prm);
    else
      grader = std::make_unique<ExternalGrader>(ExternalPrmConfig{cfg.prm_endpoint});
  }

  ExperimentResult result;
  result.policy = PolicyParams::zeros();
  result.base_eval_success_rate = evaluate(result.policy, eval, cfg.eval_max_steps, cfg.workers);
  std::deque<double> window;

  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto k = static_cast<std::uint64_t>(it);

    Rng pick(derive_seed(cfg.rollout_seed, k, 0x7a5cULL));
    std::vector<const Task*> chosen(static_cast<std::size_t>(cfg.tasks_per_iteration));
    for (auto& t : chosen) t = &train[uniform_index(pick, train.size())];

    RolloutOptions opt{cfg.max_steps, cfg.rollout_temperature, false, cfg.workers};
    const auto trajectories = collect_stage1(result.policy, chosen, opt, derive_seed(cfg.rollout_seed, k),
                                             "it" + std::to_string(it));
    const StateDataset finished = filter_finished(trajectories, it);
    const StateDataset successful = filter_successful(trajectories, it);

    IterationReport r;
    r.iteration = it;
    r.trajectories = static_cast<int>(trajectories.size());
    for (const auto& t : trajectories) {
      r.finished += t.finished ? 1 : 0;
      r.successful += t.success ? 1 : 0;
    }
    r.finished_steps = static_cast<int>(finished.size());
    r.successful_steps = static_cast<int>(successful.size());

    const StateDataset& used = cfg.method == Method::pro_cua ? finished : successful;
    r.deployable_steps = static_cast<int>(used.size());
    if (!artifacts.dataset_dir.empty()) {
      const auto path = (std::filesystem::path(artifacts.dataset_dir) /
                         ("dstate-iter" + std::to_string(it) + ".jsonl")).string();
      persist(used, path);
      if (artifacts.written) artifacts.written->push_back(path);
    }

    StageMetrics m;
    const std::uint64_t opt_seed = derive_seed(cfg.optimizer_seed, k);
    switch (cfg.method) {
      case Method::pro_cua:
        result.policy = stage2_pro_cua(result.policy, finished, train, *grader, cfg, opt_seed, it, &m, sink);
        break;
      case Method::rule_step_rl:
        result.policy = stage2_rule(result.policy, successful, train, cfg, opt_seed, it, &m, sink);
        break;
      case Method::fbc:
        result.policy = stage2_fbc(result.policy, successful, cfg, opt_seed, &m);
        break;
    }
    r.updates = m.updates;
    r.fbc_skipped = static_cast<int>(m.skipped);
    r.graded_groups = static_cast<int>(m.group_rewards.size());
    r.mean_step_reward = mean_of(m.group_rewards);
    for (double g : m.group_rewards) {
      window.push_back(g);
      if (window.size() > static_cast<std::size_t>(cfg.ma_window)) window.pop_front();
      double s = 0;
      for (double x : window) s += x;
      r.reward_ma.push_back(s / static_cast<double>(window.size()));
    }

    r.eval_success_rate = evaluate(result.policy, eval, cfg.eval_max_steps, cfg.workers);
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_info("iteration " + std::to_string(it) + ": eval " + std::to_string(r.eval_success_rate));
    if (sink) sink->iteration(r, to_string(cfg.method));
    result.reports.push_back(std::move(r));
  }
  if (sink) sink->summary(result, to_string(cfg.method));
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, MetricsSink* sink,
                                const ArtifactOptions& artifacts) {
  cfg.validate();
  const auto train = generate_tasks({cfg.train_seed, cfg.train_tasks, cfg.site});
  const auto eval = generate_tasks({cfg.eval_seed, cfg.eval_tasks, cfg.site});
  return run_experiment(cfg, train, eval, sink, artifacts);
}

}  // namespace procua
