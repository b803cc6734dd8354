#pragma once

// Group-relative policy optimization over the log-linear policy, plus the
// behavior-cloning loss used by the filtered baseline. All losses are to be
// minimized and all gradients are analytic.

#include <cstddef>
#include <span>
#include <vector>

#include "procua/policy.hpp"

namespace procua {

enum class AdvantageMode { mean_std, mean_only };

const char* to_string(AdvantageMode mode);
std::optional<AdvantageMode> advantage_mode_from_string(std::string_view s);

inline constexpr double kDegenerateStd = 1e-12;
inline constexpr double kRatioMin = 1e-6;
inline constexpr double kRatioMax = 1e6;

struct GRPOConfig {
  int group_size = 8;
  double clip_eps = 0.2;
  double kl_beta = 0.01;
  double learning_rate = 0.5;
  AdvantageMode advantage_mode = AdvantageMode::mean_std;

  /// Throws InvalidParams unless G >= 2, eps in (0, 1), beta >= 0, lr > 0.
  void validate() const;
};

/// One sampled group at a state. `cands` caches the state's candidate set so
/// losses can be re-evaluated without featurizing again.
struct CandidateGroup {
  StateContext state;
  CandidateSet cands;
  std::vector<CandidateSample> samples;
  std::vector<double> rewards;
  std::vector<double> advantages;

  std::size_t size() const { return samples.size(); }
};

/// Throws GroupTooSmall for fewer than two rewards, InvalidParams for
/// non-finite ones.
std::vector<double> compute_advantages(std::span<const double> rewards, AdvantageMode mode);

/// Builds a group and fills its advantages.
CandidateGroup make_group(StateContext state, CandidateSet cands,
                          std::vector<CandidateSample> samples, std::vector<double> rewards,
                          AdvantageMode mode);

/// -(1/G) sum_k min(rho_k A_k, clip(rho_k, 1-eps, 1+eps) A_k) + beta KL(pi_theta || pi_ref)
/// with rho_k = exp(logp_theta(a_k) - logp_old(a_k)) at temperature 1.
/// Throws DimensionMismatch.
double grpo_loss(const PolicyParams& theta, const PolicyParams& theta_old,
                 const PolicyParams& theta_ref, const CandidateGroup& group,
                 const GRPOConfig& cfg);

/// Mean of grpo_loss over groups.
double grpo_loss(const PolicyParams& theta, const PolicyParams& theta_old,
                 const PolicyParams& theta_ref, std::span<const CandidateGroup> groups,
                 const GRPOConfig& cfg);

/// Exact gradient of the mean loss. A candidate whose clipped term is the
/// active (strictly smaller) branch contributes nothing to the surrogate part.
std::vector<double> grpo_grad(const PolicyParams& theta, const PolicyParams& theta_old,
                              const PolicyParams& theta_ref,
                              std::span<const CandidateGroup> groups, const GRPOConfig& cfg);

/// theta - lr * grad, version + 1. Stateless.
PolicyParams sgd_step(const PolicyParams& theta, std::span<const double> grad, double lr);

struct FbcExample {
  CandidateSet cands;
  Action golden;
};

struct FbcEvaluation {
  double loss = 0;          // -(1/N) sum log pi(a*|x) over in-support examples
  std::size_t used = 0;
  std::size_t skipped = 0;  // golden action not among the candidates
};

FbcEvaluation fbc_loss(const PolicyParams& theta, std::span<const FbcExample> data);
std::vector<double> fbc_grad(const PolicyParams& theta, std::span<const FbcExample> data,
                             std::size_t* skipped = nullptr);

}  // namespace procua
