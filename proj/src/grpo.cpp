#include "procua/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "procua/error.hpp"
#include "procua/kernels.hpp"

namespace procua {

const char* to_string(AdvantageMode mode) {
  return mode == AdvantageMode::mean_std ? "mean_std" : "mean_only";
}

std::optional<AdvantageMode> advantage_mode_from_string(std::string_view s) {
  if (s == "mean_std") return AdvantageMode::mean_std;
  if (s == "mean_only") return AdvantageMode::mean_only;
  return std::nullopt;
}

void GRPOConfig::validate() const {
  if (group_size < 2) fail(ErrorCode::kInvalidParams, "group_size must be >= 2");
  if (!(clip_eps > 0 && clip_eps < 1)) fail(ErrorCode::kInvalidParams, "clip_eps must be in (0, 1)");
  if (!(kl_beta >= 0)) fail(ErrorCode::kInvalidParams, "kl_beta must be >= 0");
  if (!(learning_rate > 0)) fail(ErrorCode::kInvalidParams, "learning_rate must be > 0");
}

std::vector<double> compute_advantages(std::span<const double> rewards, AdvantageMode mode) {
  if (rewards.size() < 2) fail(ErrorCode::kGroupTooSmall, "a group needs at least two rewards");
  for (double r : rewards)
    if (!std::isfinite(r)) fail(ErrorCode::kInvalidParams, "non-finite reward");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  std::vector<double> adv(rewards.size());
  for (std::size_t k = 0; k < rewards.size(); ++k) adv[k] = rewards[k] - mean;
  if (mode == AdvantageMode::mean_only) return adv;
  double var = 0;
  for (double a : adv) var += a * a;
  const double sd = std::sqrt(var / n);
  if (sd < kDegenerateStd) return std::vector<double>(rewards.size(), 0.0);
  for (double& a : adv) a /= sd;
  return adv;
}

CandidateGroup make_group(StateContext state, CandidateSet cands,
                          std::vector<CandidateSample> samples, std::vector<double> rewards,
                          AdvantageMode mode) {
  if (samples.size() != rewards.size())
    fail(ErrorCode::kInvalidParams, "samples and rewards differ in length");
  CandidateGroup g{std::move(state), std::move(cands), std::move(samples), std::move(rewards), {}};
  g.advantages = compute_advantages(g.rewards, mode);
  return g;
}

namespace {

void check(const PolicyParams& theta, const PolicyParams& theta_old, const PolicyParams& theta_ref,
           const CandidateGroup& g) {
  if (theta.dim() != theta_old.dim() || theta.dim() != theta_ref.dim() || theta.dim() != g.cands.dim)
    fail(ErrorCode::kDimensionMismatch, "parameter snapshots and features must share dimension");
  if (g.samples.size() != g.advantages.size())
    fail(ErrorCode::kInvalidParams, "group advantages not computed");
  for (const auto& s : g.samples)
    if (s.index >= g.cands.size()) fail(ErrorCode::kCandidateNotInSupport, "sample index out of range");
}

struct Term {
  double value;     // min(rho A, clip(rho) A)
  double grad_coef; // d value / d logp_theta(a_k)
};

Term surrogate(double lp, double lp_old, double adv, double eps) {
  const double raw = std::exp(lp - lp_old);
  const double rho = std::clamp(raw, kRatioMin, kRatioMax);
  const double unclipped = rho * adv;
  const double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps) * adv;
  if (clipped < unclipped) return {clipped, 0.0};
  // The clamp on rho is flat outside its range, so no gradient flows there.
  const bool clamped = raw != rho;
  return {unclipped, clamped ? 0.0 : unclipped};
}

}  // namespace

double grpo_loss(const PolicyParams& theta, const PolicyParams& theta_old,
                 const PolicyParams& theta_ref, const CandidateGroup& g, const GRPOConfig& cfg) {
  check(theta, theta_old, theta_ref, g);
  const auto lp = log_distribution(theta, g.cands, 1.0);
  const auto lp_old = log_distribution(theta_old, g.cands, 1.0);
  double sum = 0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto j = g.samples[k].index;
    sum += surrogate(lp[j], lp_old[j], g.advantages[k], cfg.clip_eps).value;
  }
  double loss = -sum / static_cast<double>(g.size());
  if (cfg.kl_beta != 0) loss += cfg.kl_beta * kl(theta, theta_ref, g.cands);
  return loss;
}

double grpo_loss(const PolicyParams& theta, const PolicyParams& theta_old,
                 const PolicyParams& theta_ref, std::span<const CandidateGroup> groups,
                 const GRPOConfig& cfg) {
  if (groups.empty()) return 0.0;
  double total = 0;
  for (const auto& g : groups) total += grpo_loss(theta, theta_old, theta_ref, g, cfg);
  return total / static_cast<double>(groups.size());
}

std::vector<double> grpo_grad(const PolicyParams& theta, const PolicyParams& theta_old,
                              const PolicyParams& theta_ref, std::span<const CandidateGroup> groups,
                              const GRPOConfig& cfg) {
  const auto& K = kernels::active();
  std::vector<double> grad(theta.dim(), 0.0);
  if (groups.empty()) return grad;
  std::vector<double> mean_phi(theta.dim()), weighted(theta.dim());
  std::vector<double> coef;
  for (const auto& g : groups) {
    check(theta, theta_old, theta_ref, g);
    const auto lp = log_distribution(theta, g.cands, 1.0);
    const auto lp_old = log_distribution(theta_old, g.cands, 1.0);
    // Per-candidate weights c_j so the surrogate gradient is sum_j c_j (phi_j - E_p[phi]).
    coef.assign(g.cands.size(), 0.0);
    double coef_sum = 0;
    const double scale = -1.0 / static_cast<double>(g.size()) / static_cast<double>(groups.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
      const auto j = g.samples[k].index;
      const double c = scale * surrogate(lp[j], lp_old[j], g.advantages[k], cfg.clip_eps).grad_coef;
      coef[j] += c;
      coef_sum += c;
    }
    if (std::any_of(coef.begin(), coef.end(), [](double c) { return c != 0; })) {
      std::vector<double> p(lp.size());
      for (std::size_t j = 0; j < p.size(); ++j) p[j] = std::exp(lp[j]);
      K.gemv_t(g.cands.features.data(), g.cands.size(), g.cands.dim, p.data(), mean_phi.data());
      K.gemv_t(g.cands.features.data(), g.cands.size(), g.cands.dim, coef.data(), weighted.data());
      K.axpy(1.0, weighted.data(), grad.data(), grad.size());
      K.axpy(-coef_sum, mean_phi.data(), grad.data(), grad.size());
    }
    if (cfg.kl_beta != 0) {
      const auto gk = grad_kl(theta, theta_ref, g.cands);
      K.axpy(cfg.kl_beta / static_cast<double>(groups.size()), gk.data(), grad.data(), grad.size());
    }
  }
  return grad;
}

PolicyParams sgd_step(const PolicyParams& theta, std::span<const double> grad, double lr) {
  if (!(lr > 0)) fail(ErrorCode::kInvalidParams, "learning rate must be > 0");
  if (grad.size() != theta.dim()) fail(ErrorCode::kDimensionMismatch, "gradient dimension");
  PolicyParams out = theta;
  kernels::active().axpy(-lr, grad.data(), out.weights.data(), out.weights.size());
  ++out.version;
  return out;
}

FbcEvaluation fbc_loss(const PolicyParams& theta, std::span<const FbcExample> data) {
  FbcEvaluation ev;
  double sum = 0;
  for (const auto& ex : data) {
    const auto j = find_candidate(ex.cands, ex.golden);
    if (!j) {
      ++ev.skipped;
      continue;
    }
    sum += log_distribution(theta, ex.cands, 1.0)[*j];
    ++ev.used;
  }
  ev.loss = ev.used ? -sum / static_cast<double>(ev.used) : 0.0;
  return ev;
}

std::vector<double> fbc_grad(const PolicyParams& theta, std::span<const FbcExample> data,
                             std::size_t* skipped) {
  std::vector<double> grad(theta.dim(), 0.0);
  std::size_t used = 0, miss = 0;
  for (const auto& ex : data) {
    const auto j = find_candidate(ex.cands, ex.golden);
    if (!j) {
      ++miss;
      continue;
    }
    const auto g = grad_logprob(theta, ex.cands, *j);
    kernels::active().axpy(-1.0, g.data(), grad.data(), grad.size());
    ++used;
  }
  if (used)
    for (double& v : grad) v /= static_cast<double>(used);
  if (skipped) *skipped = miss;
  return grad;
}

}  // namespace procua
