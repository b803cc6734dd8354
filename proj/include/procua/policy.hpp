#pragma once

// Log-linear policy over the enumerated candidate actions of a step context:
//   p(a_j | x) ∝ exp(<w, phi(x, a_j)> / T).
// Log-probabilities, scores and KL are exact; no sampling estimators.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "procua/context.hpp"
#include "procua/random.hpp"

namespace procua {

inline constexpr std::size_t kFeatureDim = 30;

struct PolicyParams {
  std::vector<double> weights;
  int version = 0;

  static PolicyParams zeros(std::size_t dim = kFeatureDim) { return {std::vector<double>(dim, 0.0), 0}; }
  std::size_t dim() const { return weights.size(); }

  friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

/// Candidate actions of one context with their feature rows (row-major).
struct CandidateSet {
  std::vector<Action> actions;
  std::vector<double> features;  // actions.size() x dim
  std::size_t dim = kFeatureDim;

  std::size_t size() const { return actions.size(); }
  const double* row(std::size_t j) const { return features.data() + j * dim; }
};

struct CandidateSample {
  std::string thought;
  Action action;
  std::size_t index = 0;  // position in the candidate set
  double logprob = 0;     // at the sampling temperature
  double logprob_t1 = 0;  // at temperature 1

  friend bool operator==(const CandidateSample&, const CandidateSample&) = default;
};

/// Fraction of `phrase` words present in `instruction` (lowercase alnum tokens).
double label_overlap(const std::string& phrase, const std::string& instruction);

/// Deterministic features of an action in a context. Uses only what the
/// agent sees: instruction, history and the current observation.
std::vector<double> featurize(const StateContext& ctx, const Action& action);

CandidateSet make_candidate_set(const StateContext& ctx);

std::vector<double> logits(const PolicyParams& params, const CandidateSet& cands);

/// Log-probabilities at a temperature; max-subtracted for stability.
/// Throws EmptyCandidates / InvalidParams (temperature <= 0).
std::vector<double> log_distribution(const PolicyParams& params, const CandidateSet& cands,
                                     double temperature = 1.0);
std::vector<double> distribution(const PolicyParams& params, const CandidateSet& cands,
                                 double temperature = 1.0);

/// G draws with replacement. Throws EmptyCandidates; requires G >= 2.
std::vector<CandidateSample> sample_group(const PolicyParams& params, const CandidateSet& cands,
                                          double temperature, int group_size, Rng& rng);

/// Draw a single candidate index.
std::size_t sample_index(const PolicyParams& params, const CandidateSet& cands,
                         double temperature, Rng& rng);

/// Most probable candidate; the first one on ties. Temperature-independent.
std::size_t greedy_index(const PolicyParams& params, const CandidateSet& cands);

std::optional<std::size_t> find_candidate(const CandidateSet& cands, const Action& action);

/// log p(a | x) at temperature 1. Throws CandidateNotInSupport.
double logprob(const PolicyParams& params, const CandidateSet& cands, const Action& action);

/// d/dw log p(a_j | x) = phi_j - sum_i p_i phi_i (temperature 1).
std::vector<double> grad_logprob(const PolicyParams& params, const CandidateSet& cands,
                                 std::size_t index);

/// Exact KL(p_params || p_ref) over the candidate support, temperature 1.
double kl(const PolicyParams& params, const PolicyParams& ref, const CandidateSet& cands);
std::vector<double> grad_kl(const PolicyParams& params, const PolicyParams& ref,
                            const CandidateSet& cands);

// Checkpoint: `procua-policy v1`, `version=<n> dim=<d>`, then the weights.
void save_checkpoint(const PolicyParams& params, const std::string& path);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace procua
