#include "procua/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "procua/error.hpp"

namespace procua {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  fail(ErrorCode::kConfig, "key '" + key + "': cannot parse '" + value + "' as " + expected);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || value.empty())
    bad_value(key, value, std::is_floating_point_v<T> ? "a number" : "an integer");
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(out)) bad_value(key, value, "a finite number");
  return out;
}

template <class T>
std::string number_text(T v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field number_field(T ExperimentConfig::*member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) {
            c.experiment.*member = parse_number<T>(k, v);
          },
          [member](const RunConfig& c) { return number_text(c.experiment.*member); }};
}

template <class S, class T>
Field nested_field(S ExperimentConfig::*outer, T S::*member) {
  return {[outer, member](RunConfig& c, const std::string& k, const std::string& v) {
            (c.experiment.*outer).*member = parse_number<T>(k, v);
          },
          [outer, member](const RunConfig& c) { return number_text((c.experiment.*outer).*member); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  using E = ExperimentConfig;
  static const std::vector<std::pair<std::string, Field>> table = {
      {"method",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          auto m = method_from_string(v);
          if (!m) bad_value(k, v, "pro_cua, rule_step_rl or fbc");
          c.experiment.method = *m;
        },
        [](const RunConfig& c) { return std::string(to_string(c.experiment.method)); }}},
      {"iterations", number_field(&E::iterations)},
      {"tasks_per_iteration", number_field(&E::tasks_per_iteration)},
      {"max_steps", number_field(&E::max_steps)},
      {"eval_max_steps", number_field(&E::eval_max_steps)},
      {"rollout_temperature", number_field(&E::rollout_temperature)},
      {"group_size", nested_field(&E::grpo, &GRPOConfig::group_size)},
      {"clip_eps", nested_field(&E::grpo, &GRPOConfig::clip_eps)},
      {"kl_beta", nested_field(&E::grpo, &GRPOConfig::kl_beta)},
      {"learning_rate", nested_field(&E::grpo, &GRPOConfig::learning_rate)},
      {"advantage_mode",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          auto m = advantage_mode_from_string(v);
          if (!m) bad_value(k, v, "mean_std or mean_only");
          c.experiment.grpo.advantage_mode = *m;
        },
        [](const RunConfig& c) { return std::string(to_string(c.experiment.grpo.advantage_mode)); }}},
      {"groups_per_update", number_field(&E::groups_per_update)},
      {"rl_epochs", number_field(&E::rl_epochs)},
      {"fbc_epochs", number_field(&E::fbc_epochs)},
      {"fbc_batch_size", number_field(&E::fbc_batch_size)},
      {"fbc_learning_rate", number_field(&E::fbc_learning_rate)},
      {"format_weight", number_field(&E::format_weight)},
      {"prm_strictness",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          auto s = strictness_from_string(v);
          if (!s) bad_value(k, v, "lenient or conservative");
          c.experiment.prm.strictness = *s;
        },
        [](const RunConfig& c) { return std::string(to_string(c.experiment.prm.strictness)); }}},
      {"prm_noise", nested_field(&E::prm, &PRMOracleConfig::noise_rate)},
      {"prm_seed", nested_field(&E::prm, &PRMOracleConfig::seed)},
      {"prm_endpoint",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.experiment.prm_endpoint = v; },
        [](const RunConfig& c) { return c.experiment.prm_endpoint; }}},
      {"train_seed", number_field(&E::train_seed)},
      {"train_tasks", number_field(&E::train_tasks)},
      {"train_suite",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.train_suite = v; },
        [](const RunConfig& c) { return c.train_suite; }}},
      {"eval_seed", number_field(&E::eval_seed)},
      {"eval_tasks", number_field(&E::eval_tasks)},
      {"eval_suite",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.eval_suite = v; },
        [](const RunConfig& c) { return c.eval_suite; }}},
      {"site_pages", nested_field(&E::site, &SiteParams::n_pages)},
      {"site_branching", nested_field(&E::site, &SiteParams::branching)},
      {"site_stuck_rate", nested_field(&E::site, &SiteParams::stuck_rate)},
      {"site_unlisted_rate", nested_field(&E::site, &SiteParams::unlisted_rate)},
      {"rollout_seed", number_field(&E::rollout_seed)},
      {"optimizer_seed", number_field(&E::optimizer_seed)},
      {"ma_window", number_field(&E::ma_window)},
      {"workers", number_field(&E::workers)},
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return f;
  fail(ErrorCode::kConfig, "unknown key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.first);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, key, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  return field(key).get(cfg);
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::kConfig, origin + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (auto [it, fresh] = seen.emplace(key, lineno); !fresh)
      fail(ErrorCode::kConfig, "key '" + key + "' repeated at " + origin + ":" + std::to_string(lineno));
    set_config_value(cfg, key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

void validate_config(const RunConfig& cfg) {
  try {
    cfg.experiment.validate();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kInvalidParams) throw;
    fail(ErrorCode::kConfig, e.what());
  }
}

RunConfig load_config(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig cfg = parse_config(buf.str(), path);
  for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
  validate_config(cfg);
  return cfg;
}

std::string render_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + "=" + f.get(cfg) + "\n";
  return out;
}

std::pair<std::vector<Task>, std::vector<Task>> load_suites(const RunConfig& cfg) {
  const auto& e = cfg.experiment;
  auto train = cfg.train_suite.empty() ? generate_tasks({e.train_seed, e.train_tasks, e.site})
                                       : read_task_suite(cfg.train_suite);
  auto eval = cfg.eval_suite.empty() ? generate_tasks({e.eval_seed, e.eval_tasks, e.site})
                                     : read_task_suite(cfg.eval_suite);
  return {std::move(train), std::move(eval)};
}

std::uint64_t suite_fingerprint(std::span<const Task> tasks) {
  std::uint64_t h = fnv1a64("procua-suite");
  for (const auto& t : tasks) {
    h = fnv1a64(t.task_id, h);
    h = fnv1a64(t.instruction, h);
    h = fnv1a64(t.goal.answer, h);
    h = fnv1a64(t.goal.answer_page, h);
    for (const auto& g : t.golden) h = fnv1a64(serialize_action(g.action), h);
  }
  return h;
}

}  // namespace procua
