#include <filesystem>
#include <functional>
#include <fstream>

#include "doctest.h"
#include "procua/config.hpp"
#include "procua/error.hpp"

using namespace procua;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kPrecondition;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

std::string tmp(const std::string& name) { return (std::filesystem::temp_directory_path() / ("procua_cfg_" + name)).string(); }

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

}  // namespace

TEST_CASE("shipped default config matches the built-in defaults") {
  const auto cfg = load_config(std::string(PROCUA_SOURCE_DIR) + "/configs/default.conf");
  CHECK(render_config(cfg) == render_config(RunConfig{}));
  // Every key appears in the shipped file.
  std::ifstream in(std::string(PROCUA_SOURCE_DIR) + "/configs/default.conf");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const auto& k : config_keys()) CHECK_MESSAGE(text.find("\n" + k + " ") != std::string::npos, k);
}

TEST_CASE("parsing: comments, blanks, whitespace") {
  const auto c = parse_config("# header\n\n  iterations =  3   # trailing\nmethod=fbc\r\nprm_endpoint =\n");
  CHECK(c.experiment.iterations == 3);
  CHECK(c.experiment.method == Method::fbc);
  CHECK(c.experiment.prm_endpoint.empty());
  CHECK(c.experiment.tasks_per_iteration == 256);
}

TEST_CASE("parsing errors name the key") {
  CHECK(code_of([] { parse_config("iteratons = 3\n"); }) == ErrorCode::kConfig);
  CHECK(message_of([] { parse_config("iteratons = 3\n"); }).find("iteratons") != std::string::npos);
  CHECK(code_of([] { parse_config("iterations = three\n"); }) == ErrorCode::kConfig);
  CHECK(message_of([] { parse_config("iterations = three\n"); }).find("iterations") != std::string::npos);
  CHECK(code_of([] { parse_config("iterations = 3x\n"); }) == ErrorCode::kConfig);
  CHECK(code_of([] { parse_config("method = ppo\n"); }) == ErrorCode::kConfig);
  CHECK(code_of([] { parse_config("iterations = 3\niterations = 4\n"); }) == ErrorCode::kConfig);
  CHECK(code_of([] { parse_config("just words\n"); }) == ErrorCode::kConfig);
  CHECK(code_of([] { parse_config("clip_eps = nan\n"); }) == ErrorCode::kConfig);
}

TEST_CASE("validation maps range errors to ConfigError") {
  RunConfig c;
  CHECK_NOTHROW(validate_config(c));
  c.experiment.iterations = 0;
  CHECK(code_of([&] { validate_config(c); }) == ErrorCode::kConfig);
  c = RunConfig{};
  c.experiment.eval_seed = c.experiment.train_seed;
  CHECK(code_of([&] { validate_config(c); }) == ErrorCode::kConfig);
}

TEST_CASE("render/parse round-trip over every key") {
  RunConfig c;
  set_config_value(c, "method", "rule_step_rl");
  set_config_value(c, "iterations", "7");
  set_config_value(c, "rollout_temperature", "0.3");
  set_config_value(c, "clip_eps", "0.123456789012345");
  set_config_value(c, "kl_beta", "1e-7");
  set_config_value(c, "advantage_mode", "mean_only");
  set_config_value(c, "prm_strictness", "conservative");
  set_config_value(c, "prm_noise", "0.25");
  set_config_value(c, "prm_seed", "18446744073709551615");
  set_config_value(c, "prm_endpoint", "http://127.0.0.1:9/grade");
  set_config_value(c, "train_suite", "/tmp/a b.tasks");
  set_config_value(c, "site_stuck_rate", "0.1");
  set_config_value(c, "workers", "3");
  const auto text = render_config(c);
  const auto back = parse_config(text);
  CHECK(render_config(back) == text);
  for (const auto& k : config_keys()) CHECK_MESSAGE(get_config_value(back, k) == get_config_value(c, k), k);
  CHECK(back.experiment.grpo.clip_eps == 0.123456789012345);
  CHECK(back.experiment.prm.seed == 18446744073709551615ULL);
  CHECK(back.train_suite == "/tmp/a b.tasks");
  CHECK(code_of([&] { get_config_value(c, "nope"); }) == ErrorCode::kConfig);
}

TEST_CASE("load_config: overrides apply in order, then validation") {
  const auto path = tmp("over.conf");
  write_file(path, "iterations = 4\nmethod = fbc\n");
  const auto c = load_config(path, {{"iterations", "5"}, {"iterations", "6"}, {"method", "pro_cua"}});
  CHECK(c.experiment.iterations == 6);
  CHECK(c.experiment.method == Method::pro_cua);
  CHECK(code_of([&] { load_config(path, {{"bogus", "1"}}); }) == ErrorCode::kConfig);
  CHECK(code_of([&] { load_config(path, {{"iterations", "0"}}); }) == ErrorCode::kConfig);
  std::filesystem::remove(path);
  CHECK(code_of([&] { load_config(path); }) == ErrorCode::kIo);
}

TEST_CASE("suites: generated or loaded, fingerprinted by content") {
  RunConfig c;
  c.experiment.train_tasks = 6;
  c.experiment.eval_tasks = 5;
  const auto [train, eval] = load_suites(c);
  CHECK(train.size() == 6);
  CHECK(eval.size() == 5);
  CHECK(suite_fingerprint(train) != suite_fingerprint(eval));

  const auto path = tmp("suite.tasks");
  write_task_suite(path, train, {c.experiment.train_seed, 6, c.experiment.site});
  RunConfig from_file = c;
  from_file.train_suite = path;
  from_file.experiment.train_seed = 999;  // ignored when a file is given
  const auto [train2, eval2] = load_suites(from_file);
  CHECK(suite_fingerprint(train2) == suite_fingerprint(train));
  CHECK(suite_fingerprint(eval2) == suite_fingerprint(eval));

  auto changed = train;
  changed[0].instruction += "!";
  CHECK(suite_fingerprint(changed) != suite_fingerprint(train));
  std::filesystem::remove(path);
}
