// procua: generate task suites, train, evaluate and compare runs.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "procua/config.hpp"
#include "procua/error.hpp"
#include "procua/log.hpp"
#include "procua/pipeline.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace procua;

namespace {

constexpr const char* kToolVersion = "procua 1.0.0";

enum Exit : int {
  kOk = 0,
  kOther = 1,
  kConfigExit = 2,
  kIoExit = 3,
  kInvalidParamsExit = 4,
  kSuiteMismatchExit = 5,
  kUsageExit = 64,
};

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return kConfigExit;
    case ErrorCode::kIo:
    case ErrorCode::kCorruptRecord:
    case ErrorCode::kVersionMismatch: return kIoExit;
    case ErrorCode::kInvalidParams: return kInvalidParamsExit;
    case ErrorCode::kSuiteMismatch: return kSuiteMismatchExit;
    default: return kOther;
  }
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::kIo, "write failed: " + path.string());
}

ordered_json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path);
  ordered_json j = ordered_json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorCode::kCorruptRecord, path + ": not a manifest");
  return j;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::uint64_t seed = 1;
  int count = 64;
  SiteParams site;
  std::string out;
};

int cmd_gen_tasks(const GenArgs& a) {
  TaskSuiteParams p{a.seed, a.count, a.site};
  const auto tasks = generate_tasks(p);
  int search_only = 0;
  std::size_t golden_steps = 0;
  for (const auto& t : tasks) {
    if (!golden_replays(t)) fail(ErrorCode::kInvalidParams, "golden path of " + t.task_id + " does not replay");
    if (t.instruction.rfind("Search for", 0) == 0) ++search_only;
    golden_steps += t.golden.size();
  }
  write_task_suite(a.out, tasks, p);
  std::cout << "tasks=" << tasks.size() << " search_tasks=" << search_only
            << " browse_tasks=" << tasks.size() - static_cast<std::size_t>(search_only)
            << " golden_steps=" << golden_steps << " validated=" << tasks.size()
            << " fingerprint=" << hex(suite_fingerprint(tasks)) << " out=" << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  std::string method;
  std::vector<std::string> sets;
  int workers = 0;
  bool save_datasets = true;
};

int cmd_train(const TrainArgs& a) {
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(ErrorCode::kConfig, "override '" + s + "' is not key=value");
    overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!a.method.empty()) overrides.emplace_back("method", a.method);
  if (a.workers > 0) overrides.emplace_back("workers", std::to_string(a.workers));

  RunConfig cfg = load_config(a.config, overrides);
  if (cfg.experiment.prm_endpoint.empty())
    if (const char* env = std::getenv(kPrmEndpointEnv); env && *env) cfg.experiment.prm_endpoint = env;

  const auto started = std::chrono::steady_clock::now();
  const fs::path out(a.out);
  ensure_dir(out);
  const fs::path metrics_path = out / "metrics.jsonl";
  const fs::path checkpoint_path = out / "policy.ckpt";
  const fs::path manifest_path = out / "manifest.json";
  const fs::path dataset_dir = out / "datasets";
  if (a.save_datasets) ensure_dir(dataset_dir);

  auto [train, eval] = load_suites(cfg);
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) fail(ErrorCode::kIo, "cannot write " + metrics_path.string());
  MetricsSink sink(&metrics);
  std::vector<std::string> datasets;
  ArtifactOptions artifacts;
  if (a.save_datasets) {
    artifacts.dataset_dir = dataset_dir.string();
    artifacts.written = &datasets;
  }
  const auto result = run_experiment(cfg.experiment, train, eval, &sink, artifacts);
  metrics.close();
  if (!metrics) fail(ErrorCode::kIo, "cannot finish " + metrics_path.string());
  save_checkpoint(result.policy, checkpoint_path.string());

  ordered_json m;
  m["tool_version"] = kToolVersion;
  m["method"] = to_string(cfg.experiment.method);
  ordered_json snapshot;
  for (const auto& k : config_keys()) snapshot[k] = get_config_value(cfg, k);
  m["config"] = snapshot;
  ordered_json ov = ordered_json::array();
  for (const auto& [k, v] : overrides) ov.push_back({{"key", k}, {"value", v}});
  m["overrides"] = ov;
  m["train_suite"] = {{"tasks", train.size()}, {"fingerprint", hex(suite_fingerprint(train))}};
  m["eval_suite"] = {{"tasks", eval.size()}, {"fingerprint", hex(suite_fingerprint(eval))}};
  m["artifacts"] = {{"metrics", metrics_path.string()},
                    {"checkpoint", checkpoint_path.string()},
                    {"datasets", datasets},
                    {"manifest", manifest_path.string()}};
  m["base_eval_success_rate"] = result.base_eval_success_rate;
  ordered_json iters = ordered_json::array();
  double stage_seconds = 0;
  for (const auto& r : result.reports) {
    stage_seconds += r.wall_seconds;
    iters.push_back({{"iteration", r.iteration},
                     {"trajectories", r.trajectories},
                     {"finished", r.finished},
                     {"successful", r.successful},
                     {"finished_steps", r.finished_steps},
                     {"successful_steps", r.successful_steps},
                     {"deployable_steps", r.deployable_steps},
                     {"graded_groups", r.graded_groups},
                     {"mean_step_reward", r.mean_step_reward},
                     {"eval_success_rate", r.eval_success_rate},
                     {"wall_seconds", r.wall_seconds}});
  }
  m["iterations"] = iters;
  m["wall_clock"] = {
      {"iterations_seconds", stage_seconds},
      {"total_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()}};
  write_text(manifest_path, m.dump(2) + "\n");

  std::cout << "method=" << to_string(cfg.experiment.method) << " iterations=" << result.reports.size()
            << " base_eval=" << result.base_eval_success_rate << " final_eval="
            << (result.reports.empty() ? result.base_eval_success_rate : result.reports.back().eval_success_rate)
            << " manifest=" << manifest_path.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string suite;
  std::uint64_t seed = 2;
  int count = 64;
  int max_steps = 30;
  int workers = 1;
};

int cmd_eval(const EvalArgs& a) {
  const PolicyParams policy = a.checkpoint.empty() ? PolicyParams::zeros() : load_checkpoint(a.checkpoint);
  const auto tasks = a.suite.empty() ? generate_tasks({a.seed, a.count, {}}) : read_task_suite(a.suite);
  const double rate = evaluate(policy, tasks, a.max_steps, a.workers);
  std::cout << "tasks=" << tasks.size() << " success_rate=" << rate
            << " fingerprint=" << hex(suite_fingerprint(tasks)) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct CompareArgs {
  std::vector<std::string> manifests;
  std::string out;
  char delimiter = '\t';
};

std::vector<std::vector<double>> read_reward_ma(const std::string& metrics_path) {
  std::ifstream in(metrics_path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + metrics_path);
  std::vector<std::vector<double>> out;
  std::string line;
  while (std::getline(in, line)) {
    auto j = ordered_json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::kCorruptRecord, metrics_path + ": bad record");
    if (j.value("record", "") == "iteration") out.push_back(j.at("reward_ma").get<std::vector<double>>());
  }
  return out;
}

int cmd_compare(const CompareArgs& a) {
  if (a.manifests.size() < 2) fail(ErrorCode::kInvalidParams, "compare needs at least two manifests");
  std::vector<ordered_json> ms;
  std::vector<std::string> labels;
  std::map<std::string, int> label_count;
  for (const auto& p : a.manifests) {
    ms.push_back(read_json(p));
    std::string label = ms.back().at("method").get<std::string>();
    if (const int n = ++label_count[label]; n > 1) label += "#" + std::to_string(n);
    labels.push_back(label);
  }
  const auto suite = ms.front().at("eval_suite").at("fingerprint");
  for (std::size_t i = 1; i < ms.size(); ++i)
    if (ms[i].at("eval_suite").at("fingerprint") != suite)
      fail(ErrorCode::kSuiteMismatch, a.manifests[i] + " was evaluated on a different suite than " + a.manifests[0]);

  const fs::path out(a.out);
  ensure_dir(out);
  const std::string d(1, a.delimiter);
  std::size_t rows = 0;
  for (const auto& m : ms) rows = std::max(rows, m.at("iterations").size());

  auto table = [&](const std::string& name, const char* field, bool with_base) {
    std::ostringstream os;
    os << "iteration";
    for (const auto& l : labels) os << d << l;
    os << "\n";
    if (with_base) {
      os << 0;
      for (const auto& m : ms) os << d << m.at("base_eval_success_rate");
      os << "\n";
    }
    for (std::size_t r = 0; r < rows; ++r) {
      os << r + 1;
      for (const auto& m : ms) {
        os << d;
        const auto& it = m.at("iterations");
        if (r < it.size()) os << it[r].at(field);
      }
      os << "\n";
    }
    write_text(out / name, os.str());
  };
  table("success_rate.tsv", "eval_success_rate", true);
  table("deployable_steps.tsv", "deployable_steps", false);
  table("finished_steps.tsv", "finished_steps", false);
  table("successful_steps.tsv", "successful_steps", false);

  // Reward moving average: one row per graded group across the whole run.
  std::vector<std::vector<double>> series;
  std::size_t longest = 0;
  for (const auto& m : ms) {
    std::vector<double> flat;
    for (const auto& v : read_reward_ma(m.at("artifacts").at("metrics").get<std::string>()))
      flat.insert(flat.end(), v.begin(), v.end());
    longest = std::max(longest, flat.size());
    series.push_back(std::move(flat));
  }
  std::ostringstream os;
  os << "group";
  for (const auto& l : labels) os << d << l;
  os << "\n";
  for (std::size_t g = 0; g < longest; ++g) {
    os << g + 1;
    for (const auto& s : series) {
      os << d;
      if (g < s.size()) os << ordered_json(s[g]).dump();
    }
    os << "\n";
  }
  write_text(out / "reward_ma.tsv", os.str());
  std::cout << "runs=" << ms.size() << " iterations=" << rows << " out=" << out.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Step-level reinforcement learning for computer-use agents on a synthetic web environment"};
  app.require_subcommand(1);
  std::string log_level = "warning";
  app.add_option("--log-level", log_level, "debug, info, warning, error or off")
      ->check(CLI::IsMember({"debug", "info", "warning", "error", "off"}));

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-tasks", "Generate a validated task suite file");
  gen_cmd->add_option("--seed", gen.seed, "Suite seed");
  gen_cmd->add_option("--count", gen.count, "Number of tasks");
  gen_cmd->add_option("--pages", gen.site.n_pages, "Pages per site");
  gen_cmd->add_option("--branching", gen.site.branching, "Maximum links per page");
  gen_cmd->add_option("--stuck-rate", gen.site.stuck_rate, "Fraction of leaves that are dead ends");
  gen_cmd->add_option("--unlisted-rate", gen.site.unlisted_rate, "Fraction of items reachable only by search");
  gen_cmd->add_option("--out", gen.out, "Output file")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run an experiment and write its manifest");
  train_cmd->add_option("--config", train.config, "key=value config file")->required();
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--method", train.method, "Override the method");
  train_cmd->add_option("--set", train.sets, "Override any key (key=value), repeatable");
  train_cmd->add_option("--workers", train.workers, "Bound on the rollout worker pool");
  train_cmd->add_flag("!--no-datasets", train.save_datasets, "Do not write per-iteration state datasets");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Greedy success rate of a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Policy checkpoint (zero policy if omitted)");
  eval_cmd->add_option("--suite", ev.suite, "Task suite file");
  eval_cmd->add_option("--seed", ev.seed, "Suite seed when no file is given");
  eval_cmd->add_option("--count", ev.count, "Suite size when no file is given");
  eval_cmd->add_option("--max-steps", ev.max_steps, "Step cap per task");
  eval_cmd->add_option("--workers", ev.workers, "Worker threads");

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Tabulate two or more runs");
  cmp_cmd->add_option("manifests", cmp.manifests, "Run manifests")->required();
  cmp_cmd->add_option("--out", cmp.out, "Output directory")->required();
  cmp_cmd->add_option("--delimiter", cmp.delimiter, "Column delimiter");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageExit;
  }

  static const std::map<std::string, LogLevel> levels = {{"debug", LogLevel::debug},
                                                         {"info", LogLevel::info},
                                                         {"warning", LogLevel::warning},
                                                         {"error", LogLevel::error},
                                                         {"off", LogLevel::off}};
  set_log_level(levels.at(log_level));

  try {
    if (*gen_cmd) return cmd_gen_tasks(gen);
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(ev);
    if (*cmp_cmd) return cmd_compare(cmp);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
