#include "procua/policy.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "procua/error.hpp"
#include "procua/kernels.hpp"

namespace procua {

namespace {

// Feature layout.
constexpr std::size_t kTypeBase = 0;        // 11 action-type indicators
constexpr std::size_t kKindBase = 11;       // 5 clicked-element kinds
constexpr std::size_t kClickOverlap = 16;
constexpr std::size_t kAnswerOverlap = 17;
constexpr std::size_t kTypeOverlap = 18;
constexpr std::size_t kRevisit = 19;
constexpr std::size_t kRepeatLast = 20;
constexpr std::size_t kSubmitFilled = 21;
constexpr std::size_t kSubmitEmpty = 22;
constexpr std::size_t kRetype = 23;
constexpr std::size_t kFinishBucket = 24;   // 5 history-length buckets
constexpr std::size_t kBackAfterMiss = 29;
static_assert(kBackAfterMiss + 1 == kFeatureDim);

std::vector<std::string> tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double overlap_with(const std::string& phrase, const std::set<std::string>& vocab) {
  const auto words = tokens(phrase);
  if (words.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& w : words) hits += vocab.count(w);
  return static_cast<double>(hits) / static_cast<double>(words.size());
}

std::size_t history_bucket(std::size_t n) {
  if (n == 0) return 0;
  if (n <= 2) return 1;
  if (n <= 5) return 2;
  if (n <= 10) return 3;
  return 4;
}

const VisibleElement* element_at(const Observation& obs, const Point& p) {
  for (const auto& e : obs.elements)
    if (e.bbox.contains(p)) return &e;
  return nullptr;
}

void featurize_into(const StateContext& ctx, const std::set<std::string>& vocab,
                    const Action& a, double* phi) {
  std::fill(phi, phi + kFeatureDim, 0.0);
  phi[kTypeBase + static_cast<std::size_t>(a.action_type)] = 1.0;

  const Observation& obs = ctx.observation;
  const bool is_click =
      a.action_type == ActionType::left_click || a.action_type == ActionType::double_click;
  if (is_click && a.point_2d) {
    if (const VisibleElement* e = element_at(obs, *a.point_2d)) {
      phi[kKindBase + static_cast<std::size_t>(e->kind)] = 1.0;
      phi[kClickOverlap] = overlap_with(e->label, vocab);
      if (e->kind == ElementKind::button) {
        // A submit is only as good as the query it sends.
        bool filled = false;
        for (const auto& f : obs.elements) {
          if (f.kind != ElementKind::textfield || f.content.empty()) continue;
          filled = true;
          phi[kSubmitFilled] = std::max(phi[kSubmitFilled], overlap_with(f.content, vocab));
        }
        if (!filled) phi[kSubmitEmpty] = 1.0;
      }
    }
  }
  if (a.action_type == ActionType::finished && a.value) {
    for (const auto& e : obs.elements) {
      if (e.kind == ElementKind::text && e.content == *a.value) {
        phi[kAnswerOverlap] = overlap_with(e.label, vocab);
        break;
      }
    }
    phi[kFinishBucket + history_bucket(ctx.history.size())] = 1.0;
  }
  if (a.action_type == ActionType::type_text && a.value) {
    phi[kTypeOverlap] = overlap_with(*a.value, vocab);
    for (const auto& e : obs.elements)
      if (e.focused && e.content == *a.value) phi[kRetype] = 1.0;
  }
  // Redundancy cue: the same action since the last edit. Typing is the only
  // step that can make an identical click do something new on the same page.
  for (auto it = ctx.history.rbegin(); it != ctx.history.rend(); ++it) {
    if (same_action(it->action, a)) {
      phi[kRevisit] = 1.0;
      break;
    }
    if (it->action.action_type == ActionType::type_text) break;
  }
  if (!ctx.history.empty()) {
    const Action& last = ctx.history.back().action;
    if (same_action(last, a)) phi[kRepeatLast] = 1.0;
    if (a.action_type == ActionType::goback && last.action_type == ActionType::left_click)
      phi[kBackAfterMiss] = 1.0 - overlap_with(last.description, vocab);
  }
}

// Inverse-CDF draw from a normalized probability vector.
std::size_t draw(const std::vector<double>& p, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    acc += p[j];
    if (u < acc) return j;
  }
  // Rounding left u beyond the accumulated mass: take the last supported index.
  for (std::size_t j = p.size(); j-- > 0;)
    if (p[j] > 0) return j;
  return p.size() - 1;
}

std::set<std::string> vocab_of(const std::string& instruction) {
  auto t = tokens(instruction);
  return {t.begin(), t.end()};
}

void require_dims(const PolicyParams& params, const CandidateSet& cands) {
  if (cands.actions.empty()) fail(ErrorCode::kEmptyCandidates, "no candidate actions");
  if (params.dim() != cands.dim)
    fail(ErrorCode::kDimensionMismatch,
         "policy dim " + std::to_string(params.dim()) + " vs features " + std::to_string(cands.dim));
}

}  // namespace

double label_overlap(const std::string& phrase, const std::string& instruction) {
  return overlap_with(phrase, vocab_of(instruction));
}

std::vector<double> featurize(const StateContext& ctx, const Action& action) {
  std::vector<double> phi(kFeatureDim);
  featurize_into(ctx, vocab_of(ctx.instruction), action, phi.data());
  return phi;
}

CandidateSet make_candidate_set(const StateContext& ctx) {
  CandidateSet c;
  c.actions = candidates_from_observation(ctx.observation);
  c.features.resize(c.actions.size() * kFeatureDim);
  const auto vocab = vocab_of(ctx.instruction);
  for (std::size_t j = 0; j < c.actions.size(); ++j)
    featurize_into(ctx, vocab, c.actions[j], c.features.data() + j * kFeatureDim);
  return c;
}

std::vector<double> logits(const PolicyParams& params, const CandidateSet& cands) {
  require_dims(params, cands);
  std::vector<double> out(cands.size());
  kernels::active().gemv(cands.features.data(), cands.size(), cands.dim, params.weights.data(),
                         out.data());
  return out;
}

std::vector<double> log_distribution(const PolicyParams& params, const CandidateSet& cands,
                                     double temperature) {
  if (!(temperature > 0) || !std::isfinite(temperature))
    fail(ErrorCode::kInvalidParams, "temperature must be positive");
  std::vector<double> z = logits(params, cands);
  for (double& v : z) v /= temperature;
  const double m = kernels::active().max(z.data(), z.size());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  for (double& v : z) v -= lse;
  return z;
}

std::vector<double> distribution(const PolicyParams& params, const CandidateSet& cands,
                                 double temperature) {
  std::vector<double> p = log_distribution(params, cands, temperature);
  for (double& v : p) v = std::exp(v);
  return p;
}

std::size_t sample_index(const PolicyParams& params, const CandidateSet& cands,
                         double temperature, Rng& rng) {
  return draw(distribution(params, cands, temperature), rng);
}

std::vector<CandidateSample> sample_group(const PolicyParams& params, const CandidateSet& cands,
                                          double temperature, int group_size, Rng& rng) {
  if (group_size < 2) fail(ErrorCode::kInvalidParams, "group size must be >= 2");
  const auto logp_t = log_distribution(params, cands, temperature);
  const auto logp_1 = temperature == 1.0 ? logp_t : log_distribution(params, cands, 1.0);
  std::vector<CandidateSample> out;
  out.reserve(static_cast<std::size_t>(group_size));
  std::vector<double> p(logp_t.size());
  for (std::size_t j = 0; j < p.size(); ++j) p[j] = std::exp(logp_t[j]);
  for (int k = 0; k < group_size; ++k) {
    const std::size_t j = draw(p, rng);
    out.push_back({thought_for(cands.actions[j]), cands.actions[j], j, logp_t[j], logp_1[j]});
  }
  return out;
}

std::size_t greedy_index(const PolicyParams& params, const CandidateSet& cands) {
  const auto z = logits(params, cands);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

std::optional<std::size_t> find_candidate(const CandidateSet& cands, const Action& action) {
  for (std::size_t j = 0; j < cands.size(); ++j)
    if (same_action(cands.actions[j], action)) return j;
  return std::nullopt;
}

double logprob(const PolicyParams& params, const CandidateSet& cands, const Action& action) {
  const auto j = find_candidate(cands, action);
  if (!j) fail(ErrorCode::kCandidateNotInSupport, action_code(action));
  return log_distribution(params, cands, 1.0)[*j];
}

std::vector<double> grad_logprob(const PolicyParams& params, const CandidateSet& cands,
                                 std::size_t index) {
  if (index >= cands.size()) fail(ErrorCode::kCandidateNotInSupport, "index out of range");
  const auto p = distribution(params, cands, 1.0);
  std::vector<double> mean(cands.dim);
  kernels::active().gemv_t(cands.features.data(), cands.size(), cands.dim, p.data(), mean.data());
  std::vector<double> g(cands.row(index), cands.row(index) + cands.dim);
  kernels::active().axpy(-1.0, mean.data(), g.data(), g.size());
  return g;
}

double kl(const PolicyParams& params, const PolicyParams& ref, const CandidateSet& cands) {
  const auto lp = log_distribution(params, cands, 1.0);
  const auto lq = log_distribution(ref, cands, 1.0);
  double s = 0.0;
  for (std::size_t j = 0; j < lp.size(); ++j) {
    const double p = std::exp(lp[j]);
    if (p > 0) s += p * (lp[j] - lq[j]);
  }
  return std::max(0.0, s);
}

std::vector<double> grad_kl(const PolicyParams& params, const PolicyParams& ref,
                            const CandidateSet& cands) {
  // sum_j p_j (log p_j - log q_j) (phi_j - phi_bar)
  const auto lp = log_distribution(params, cands, 1.0);
  const auto lq = log_distribution(ref, cands, 1.0);
  const std::size_t n = cands.size();
  std::vector<double> p(n), w(n);
  for (std::size_t j = 0; j < n; ++j) p[j] = std::exp(lp[j]);
  double f_bar = 0.0;
  for (std::size_t j = 0; j < n; ++j) f_bar += p[j] * (lp[j] - lq[j]);
  for (std::size_t j = 0; j < n; ++j) w[j] = p[j] * ((lp[j] - lq[j]) - f_bar);
  std::vector<double> g(cands.dim);
  kernels::active().gemv_t(cands.features.data(), n, cands.dim, w.data(), g.data());
  return g;
}

void save_checkpoint(const PolicyParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path);
  out << "procua-policy v1\nversion=" << params.version << " dim=" << params.dim() << '\n';
  char buf[64];
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, params.weights[i]);
    out << (i ? " " : "") << std::string_view(buf, static_cast<std::size_t>(end - buf));
  }
  out << '\n';
  if (!out) fail(ErrorCode::kIo, "write failed: " + path);
}

PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path);
  std::string magic, meta, weights;
  std::getline(in, magic);
  std::getline(in, meta);
  std::getline(in, weights);
  if (magic.rfind("procua-policy ", 0) != 0) fail(ErrorCode::kCorruptRecord, path + ":1 bad header");
  if (magic != "procua-policy v1") fail(ErrorCode::kVersionMismatch, path + ": " + magic);
  PolicyParams p;
  std::size_t dim = 0;
  if (std::sscanf(meta.c_str(), "version=%d dim=%zu", &p.version, &dim) != 2)
    fail(ErrorCode::kCorruptRecord, path + ":2 bad metadata");
  const char* cur = weights.data();
  const char* end = weights.data() + weights.size();
  while (cur < end) {
    while (cur < end && *cur == ' ') ++cur;
    if (cur == end) break;
    double v = 0;
    auto [next, ec] = std::from_chars(cur, end, v);
    if (ec != std::errc() || !std::isfinite(v)) fail(ErrorCode::kCorruptRecord, path + ":3 bad weight");
    p.weights.push_back(v);
    cur = next;
  }
  if (p.weights.size() != dim) fail(ErrorCode::kCorruptRecord, path + ":3 weight count mismatch");
  return p;
}

}  // namespace procua
