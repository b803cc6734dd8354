#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "procua/context.hpp"
#include "procua/policy.hpp"

namespace procua {

inline constexpr double kDefaultFormatWeight = 0.1;

// ---------------------------------------------------------------------------
// Rule-based verifier against a golden reference action.

/// Word-level F1 over whitespace tokens with lowercase folding and multiset
/// overlap. Both empty -> 1, exactly one empty -> 0.
double word_f1(std::string_view pred, std::string_view ref);

/// Half-open: x0 <= x < x1 and y0 <= y < y1. Same test the environment uses
/// for click dispatch.
bool in_bbox(const Point& point, const Rect& box);

struct RuleRewardBreakdown {
  int r_fmt = 0;
  int r_type = 0;
  int r_value = 0;
  int r_ground = 0;
  int r_acc = 0;
  double total = 0.0;
};

/// total = w_fmt * r_fmt + (1 - w_fmt) * r_type * r_value * r_ground.
/// Unparseable output scores zero on every component.
RuleRewardBreakdown rule_reward(std::string_view raw_output, const Action& golden,
                                const Rect& golden_bbox, double w_fmt = kDefaultFormatWeight);

/// Same formula from already-known components (used by enumeration tests).
double combine_rule_reward(int r_fmt, int r_type, int r_value, int r_ground, double w_fmt);

// ---------------------------------------------------------------------------
// Process reward model verdicts.

struct PRMVerdict {
  bool is_correct = false;
  std::string reflection;
};

enum class Strictness { lenient, conservative };

const char* to_string(Strictness s);
std::optional<Strictness> strictness_from_string(std::string_view s);

struct PRMOracleConfig {
  Strictness strictness = Strictness::lenient;
  double noise_rate = 0.0;  // verdict flip probability, < 0.5
  std::uint64_t seed = 0;
};

/// Simulation oracle standing in for a learned PRM. Grades whether the
/// candidate functionally advances the task from the context's state, using
/// exact shortest-path distances. Deterministic per (seed, context, candidate).
PRMVerdict oracle_prm(const Task& task, const StateContext& ctx, const Action& candidate,
                      const PRMOracleConfig& cfg);

/// Grades several candidates of one context with a single state replay.
std::vector<PRMVerdict> oracle_prm_group(const Task& task, const StateContext& ctx,
                                         std::span<const Action> candidates,
                                         const PRMOracleConfig& cfg);

// ---------------------------------------------------------------------------
// External PRM wire protocol.

/// The grading prompt template with {instruction}, {history_actions},
/// {step_index} and {action_code} placeholders.
std::string_view prm_prompt_template();

struct PRMRequest {
  std::string prompt;        // fully rendered prompt text (the request body)
  Observation annotated;     // observation with annotation_marker set
};

/// Renders the grading prompt for one candidate. The observation travels as a
/// JSON block with the marker placed at the candidate's target point (drag:
/// start point only).
PRMRequest build_prm_request(const StateContext& ctx, const std::string& thought,
                             const Action& candidate, const Observation& observation);

/// Reads the first JSON block carrying is_correct and reflection.
/// Throws Error(kMalformedResponse).
PRMVerdict parse_prm_response(std::string_view text);

struct ExternalPrmConfig {
  std::string endpoint;  // http://host:port/path
  std::chrono::milliseconds timeout{30000};
  int max_in_flight = 4;
};

/// Environment variable consulted by the CLI for the endpoint.
inline constexpr const char* kPrmEndpointEnv = "PROCUA_PRM_ENDPOINT";

/// POSTs rendered prompts and parses verdicts. A request is retried once;
/// after that the verdict is reported missing (callers treat it as reward 0).
class ExternalPrmClient {
 public:
  explicit ExternalPrmClient(ExternalPrmConfig cfg);

  std::optional<PRMVerdict> grade(const PRMRequest& request) const;

  /// Grades independently with at most max_in_flight concurrent requests;
  /// results are returned in request order.
  std::vector<std::optional<PRMVerdict>> grade_all(std::span<const PRMRequest> requests) const;

  const ExternalPrmConfig& config() const { return cfg_; }

 private:
  ExternalPrmConfig cfg_;
  std::string scheme_host_port_;
  std::string path_;
};

// ---------------------------------------------------------------------------
// Step graders used by training.

class StepGrader {
 public:
  virtual ~StepGrader() = default;
  /// One binary reward per candidate; failures grade as 0.
  virtual std::vector<double> grade(const Task& task, const StateContext& ctx,
                                    std::span<const CandidateSample> candidates) const = 0;
};

class OracleGrader final : public StepGrader {
 public:
  explicit OracleGrader(PRMOracleConfig cfg) : cfg_(cfg) {}
  std::vector<double> grade(const Task& task, const StateContext& ctx,
                            std::span<const CandidateSample> candidates) const override;

 private:
  PRMOracleConfig cfg_;
};

class ExternalGrader final : public StepGrader {
 public:
  explicit ExternalGrader(ExternalPrmConfig cfg) : client_(std::move(cfg)) {}
  std::vector<double> grade(const Task& task, const StateContext& ctx,
                            std::span<const CandidateSample> candidates) const override;

 private:
  ExternalPrmClient client_;
};

}  // namespace procua
