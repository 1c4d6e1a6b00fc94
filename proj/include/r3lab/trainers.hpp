#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "r3lab/credit.hpp"
#include "r3lab/policy.hpp"
#include "r3lab/reflect.hpp"
#include "r3lab/rollout.hpp"

namespace r3lab::trainers {

using env::ConfigError;
using env::UsageError;

enum class Algorithm : int {
  grpo = 0,
  opmd = 1,
  gspo = 2,
  raft = 3,
  r3l = 4,
  reflect_grpo = 5,
};

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::grpo: return "grpo";
    case Algorithm::opmd: return "opmd";
    case Algorithm::gspo: return "gspo";
    case Algorithm::raft: return "raft";
    case Algorithm::r3l: return "r3l";
    case Algorithm::reflect_grpo: return "reflect_grpo";
  }
  return "?";
}

enum class NormalizeMode : int { all_tokens = 0, unmasked_tokens = 1 };
enum class ReplayMode : int { off = 0, recency = 1 };

struct TrainConfig {
  Algorithm algorithm = Algorithm::r3l;
  int group_size = 8;           // N, even
  double alpha = 3.0;           // amplification factor
  credit::AmplifyMaxMode amplify_max_mode = credit::AmplifyMaxMode::alpha;
  int sync_interval = 1;        // S
  double learning_rate = 0.2;   // eta
  double clip_epsilon = 0.2;    // GRPO
  double kl_beta = 0.01;        // GRPO / GSPO; OPMD and R3L use none
  double gspo_clip_low = 0.0003;
  double gspo_clip_high = 0.0004;
  double guidance_lambda = 0.5;
  rollout::GuidanceScope guidance_scope = rollout::GuidanceScope::all_remaining;
  rollout::RetryConditioning retry_conditioning =
      rollout::RetryConditioning::mixture;
  rollout::ReflectorMode reflector_mode = rollout::ReflectorMode::oracle;
  double reflector_accuracy = 1.0;  // rho for the noisy reflector
  double train_temperature = 1.0;
  double eval_temperature = 0.4;
  double reflect_temperature = 0.7;  // sampling temperature for learned-skill use
  NormalizeMode normalize = NormalizeMode::all_tokens;
  int max_iterations = 1000;
  ReplayMode replay = ReplayMode::recency;  // active only when S > 1
  double replay_weight = 0.9;
  int replay_capacity = 64;
  double sft_weight = 1.0;
  double reflector_lr = 0.5;
  bool use_adam = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Ablations (Table-2 style rows).
  bool ablate_positive = false;  // raw advantages, no amplification
  bool ablate_credit = false;    // all-ones masks
  bool ablate_reflect = false;   // plain base group, no retry machinery

  void validate() const {
    if (group_size < 2 || group_size % 2 != 0)
      throw ConfigError("train: group_size must be even and >= 2");
    if (sync_interval < 1) throw ConfigError("train: sync_interval must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (guidance_lambda < 0.0 || guidance_lambda > 1.0)
      throw ConfigError("train: guidance_lambda must be in [0, 1]");
  }
};

// Sparse gradient over the logit table. Accumulation happens in a fixed
// order (member, turn, token); the map keeps keys ordered for deterministic
// application and serialization.
struct Gradient {
  int vocab = 0;
  std::map<policy::ContextKey, std::vector<double>> by_key;

  explicit Gradient(int v = 0) : vocab(v) {}

  std::vector<double>& at(const policy::ContextKey& key) {
    auto it = by_key.find(key);
    if (it == by_key.end())
      it = by_key.emplace(key, std::vector<double>(vocab, 0.0)).first;
    return it->second;
  }

  // g[key] += scale * (onehot(token) - probs)
  void add_score(const policy::ContextKey& key, int token,
                 const std::vector<double>& probs, double scale) {
    auto& g = at(key);
    for (int v = 0; v < vocab; ++v) g[v] -= scale * probs[v];
    g[token] += scale;
  }

  void add(const Gradient& other) {
    for (const auto& [key, vec] : other.by_key) {
      auto& g = at(key);
      for (int v = 0; v < vocab; ++v) g[v] += vec[v];
    }
  }

  double l2_norm() const {
    double s = 0.0;
    for (const auto& [key, vec] : by_key)
      for (double v : vec) s += v * v;
    return std::sqrt(s);
  }
};

struct StepResult {
  double policy_loss = 0.0;   // minimized objective (surrogates negated)
  double sft_loss = 0.0;      // policy-side auxiliary SFT loss
  double ref_kl = 0.0;        // mean KL(learner || reference) over visited keys
  double clip_fraction = 0.0; // fraction of terms on the clipped branch
  double p_positive = 0.0;    // fraction of members with positive advantage
  double mean_pos_adv = 0.0;  // over amplified advantages
  double mean_neg_adv = 0.0;
  std::vector<double> raw_advantages;
  std::vector<double> advantages;  // the ones the gradient used
  Gradient grad;              // ascent direction: apply as theta += eta * grad

  explicit StepResult(int vocab = 0) : grad(vocab) {}
};

inline int token_count(const rollout::Trajectory& traj) {
  int n = 0;
  for (const auto& t : traj.turns) n += static_cast<int>(t.tokens.size());
  return n;
}

inline std::set<policy::ContextKey> visited_keys(const rollout::ExplorationGroup& g) {
  std::set<policy::ContextKey> keys;
  for (const auto& m : g.members)
    for (const auto& turn : m.turns)
      for (std::size_t p = 0; p < turn.tokens.size(); ++p)
        keys.insert(rollout::turn_key(turn, static_cast<int>(p)));
  return keys;
}

inline double mean_kl_over_keys(const policy::PolicyParams& p,
                                const policy::PolicyParams& q,
                                const std::set<policy::ContextKey>& keys) {
  if (keys.empty()) return 0.0;
  double s = 0.0;
  for (const auto& k : keys) s += policy::kl_at_key(p, q, k);
  return s / static_cast<double>(keys.size());
}

inline double mean_entropy_over_keys(const policy::PolicyParams& p,
                                     const std::set<policy::ContextKey>& keys) {
  if (keys.empty()) return 0.0;
  double s = 0.0;
  for (const auto& k : keys) s += policy::entropy(p, k);
  return s / static_cast<double>(keys.size());
}

// d KL(p || q) / d z_j = p_j * ((log p_j - log q_j) - KL), z the logits of p.
inline void add_kl_gradient(Gradient& grad, const policy::PolicyParams& p,
                            const policy::PolicyParams& q,
                            const policy::ContextKey& key, double scale) {
  auto pd = policy::token_distribution(p, key);
  auto qd = policy::token_distribution(q, key);
  double kl = 0.0;
  std::vector<double> logratio(pd.size(), 0.0);
  for (std::size_t i = 0; i < pd.size(); ++i) {
    logratio[i] = std::log(pd[i]) - std::log(qd[i]);
    kl += pd[i] * logratio[i];
  }
  auto& g = grad.at(key);
  for (std::size_t i = 0; i < pd.size(); ++i)
    g[i] += scale * pd[i] * (logratio[i] - kl);
}

// One clipped-surrogate term. `active` reports whether the clipped branch is
// the strict minimum (zero gradient through the ratio there).
struct ClippedTerm {
  double value = 0.0;
  bool clipped_active = false;
};

inline ClippedTerm clipped_term(double ratio, double advantage, double lo,
                                double hi) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, lo, hi) * advantage;
  ClippedTerm t;
  t.value = std::min(unclipped, clipped);
  t.clipped_active = clipped < unclipped;
  return t;
}

namespace detail {

inline void fill_advantage_stats(StepResult& r) {
  int pos = 0, neg = 0;
  double pos_sum = 0.0, neg_sum = 0.0;
  for (double a : r.advantages) {
    if (a > 0.0) {
      ++pos;
      pos_sum += a;
    } else if (a < 0.0) {
      ++neg;
      neg_sum += a;
    }
  }
  const int n = static_cast<int>(r.advantages.size());
  r.p_positive = n > 0 ? static_cast<double>(pos) / n : 0.0;
  r.mean_pos_adv = pos > 0 ? pos_sum / pos : 0.0;
  r.mean_neg_adv = neg > 0 ? neg_sum / neg : 0.0;
}

}  // namespace detail

// Token-level clipped surrogate with a KL(learner || reference) penalty.
inline StepResult grpo_step(const rollout::ExplorationGroup& group,
                            const policy::PolicySet& set,
                            const TrainConfig& cfg) {
  StepResult r(set.learner.vocab);
  r.raw_advantages = credit::group_advantages(group.rewards);
  r.advantages = r.raw_advantages;
  const int n = group.size();
  double surrogate = 0.0;
  long clipped = 0, terms = 0;
  for (int i = 0; i < n; ++i) {
    const auto& traj = group.members[i];
    const double adv = r.advantages[i];
    const double inv_len = 1.0 / token_count(traj);
    for (const auto& turn : traj.turns) {
      for (std::size_t p = 0; p < turn.tokens.size(); ++p) {
        const auto key = rollout::turn_key(turn, static_cast<int>(p));
        const int tok = turn.tokens[p];
        const double lp_new = policy::logprob(set.learner, key, tok);
        const double lp_old = policy::logprob(set.behavior, key, tok);
        const double ratio = std::exp(lp_new - lp_old);
        auto term = clipped_term(ratio, adv, 1.0 - cfg.clip_epsilon,
                                 1.0 + cfg.clip_epsilon);
        surrogate += term.value * inv_len / n;
        ++terms;
        if (term.clipped_active) {
          ++clipped;
        } else {
          auto probs = policy::token_distribution(set.learner, key);
          r.grad.add_score(key, tok, probs, adv * ratio * inv_len / n);
        }
      }
    }
  }
  r.clip_fraction = terms > 0 ? static_cast<double>(clipped) / terms : 0.0;
  auto keys = visited_keys(group);
  r.ref_kl = mean_kl_over_keys(set.learner, set.reference, keys);
  if (cfg.kl_beta != 0.0 && !keys.empty()) {
    const double scale = -cfg.kl_beta / static_cast<double>(keys.size());
    for (const auto& key : keys)
      add_kl_gradient(r.grad, set.learner, set.reference, key, scale);
  }
  r.policy_loss = -(surrogate - cfg.kl_beta * r.ref_kl);
  detail::fill_advantage_stats(r);
  return r;
}

// Group-relative REINFORCE: no ratios, no clipping, no KL.
inline StepResult opmd_step(const rollout::ExplorationGroup& group,
                            const policy::PolicySet& set,
                            const TrainConfig& cfg) {
  (void)cfg;
  StepResult r(set.learner.vocab);
  r.raw_advantages = credit::group_advantages(group.rewards);
  r.advantages = r.raw_advantages;
  const int n = group.size();
  double objective = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& traj = group.members[i];
    const double adv = r.advantages[i];
    const double inv_len = 1.0 / token_count(traj);
    for (const auto& turn : traj.turns) {
      for (std::size_t p = 0; p < turn.tokens.size(); ++p) {
        const auto key = rollout::turn_key(turn, static_cast<int>(p));
        const int tok = turn.tokens[p];
        objective += adv * policy::logprob(set.learner, key, tok) * inv_len / n;
        auto probs = policy::token_distribution(set.learner, key);
        r.grad.add_score(key, tok, probs, adv * inv_len / n);
      }
    }
  }
  r.policy_loss = -objective;
  detail::fill_advantage_stats(r);
  return r;
}

// Sequence-level ratios: r_seq = exp(mean token log-ratio), clipped with the
// asymmetric (low, high) range, applied per trajectory.
inline StepResult gspo_step(const rollout::ExplorationGroup& group,
                            const policy::PolicySet& set,
                            const TrainConfig& cfg) {
  StepResult r(set.learner.vocab);
  r.raw_advantages = credit::group_advantages(group.rewards);
  r.advantages = r.raw_advantages;
  const int n = group.size();
  double surrogate = 0.0;
  long clipped = 0;
  for (int i = 0; i < n; ++i) {
    const auto& traj = group.members[i];
    const double adv = r.advantages[i];
    const double inv_len = 1.0 / token_count(traj);
    const double seq_ratio =
        std::exp((rollout::trajectory_logprob(set.learner, traj) -
                  rollout::trajectory_logprob(set.behavior, traj)) *
                 inv_len);
    auto term = clipped_term(seq_ratio, adv, 1.0 - cfg.gspo_clip_low,
                             1.0 + cfg.gspo_clip_high);
    surrogate += term.value / n;
    if (term.clipped_active) {
      ++clipped;
      continue;
    }
    const double scale = adv * seq_ratio * inv_len / n;
    for (const auto& turn : traj.turns) {
      for (std::size_t p = 0; p < turn.tokens.size(); ++p) {
        const auto key = rollout::turn_key(turn, static_cast<int>(p));
        auto probs = policy::token_distribution(set.learner, key);
        r.grad.add_score(key, turn.tokens[p], probs, scale);
      }
    }
  }
  r.clip_fraction = n > 0 ? static_cast<double>(clipped) / n : 0.0;
  auto keys = visited_keys(group);
  r.ref_kl = mean_kl_over_keys(set.learner, set.reference, keys);
  if (cfg.kl_beta != 0.0 && !keys.empty()) {
    const double scale = -cfg.kl_beta / static_cast<double>(keys.size());
    for (const auto& key : keys)
      add_kl_gradient(r.grad, set.learner, set.reference, key, scale);
  }
  r.policy_loss = -(surrogate - cfg.kl_beta * r.ref_kl);
  detail::fill_advantage_stats(r);
  return r;
}

// Supervised fine-tuning on the single highest-reward trajectory (ties break
// to the lowest index), per-token averaged NLL.
inline StepResult raft_step(const rollout::ExplorationGroup& group,
                            const policy::PolicySet& set,
                            const TrainConfig& cfg) {
  (void)cfg;
  StepResult r(set.learner.vocab);
  int best = 0;
  for (int i = 1; i < group.size(); ++i)
    if (group.rewards[i] > group.rewards[best]) best = i;
  const auto& traj = group.members[best];
  const double inv_len = 1.0 / token_count(traj);
  double nll = 0.0;
  for (const auto& turn : traj.turns) {
    for (std::size_t p = 0; p < turn.tokens.size(); ++p) {
      const auto key = rollout::turn_key(turn, static_cast<int>(p));
      const int tok = turn.tokens[p];
      nll -= policy::logprob(set.learner, key, tok) * inv_len;
      auto probs = policy::token_distribution(set.learner, key);
      r.grad.add_score(key, tok, probs, inv_len);
    }
  }
  r.policy_loss = nll;
  return r;
}

// Policy-side auxiliary SFT: mean per-token NLL of verified retry suffixes
// under their guided keys. Reflector training lives in the reflect module.
inline StepResult sft_step(const rollout::MetaDatasets& meta,
                           const policy::PolicySet& set,
                           const TrainConfig& cfg) {
  StepResult r(set.learner.vocab);
  std::size_t count = 0;
  for (const auto& ex : meta.retry_examples) count += ex.tokens.size();
  if (count == 0) return r;
  const double scale = cfg.sft_weight / static_cast<double>(count);
  double nll = 0.0;
  for (const auto& ex : meta.retry_examples) {
    for (const auto& [key, tok] : ex.tokens) {
      nll -= policy::logprob(set.learner, key, tok);
      auto probs = policy::token_distribution(set.learner, key);
      r.grad.add_score(key, tok, probs, scale);
    }
  }
  r.sft_loss = cfg.sft_weight * nll / static_cast<double>(count);
  return r;
}

// The R3L objective: masked, amplified, ratio-free policy gradient plus the
// auxiliary SFT on verified corrections. No importance sampling, no KL.
inline StepResult r3l_step(const rollout::ExplorationGroup& group,
                           const rollout::MetaDatasets& meta,
                           const policy::PolicySet& set,
                           const TrainConfig& cfg) {
  StepResult r(set.learner.vocab);
  r.raw_advantages = credit::group_advantages(group.rewards);
  r.advantages = cfg.ablate_positive
                     ? r.raw_advantages
                     : credit::amplify(r.raw_advantages, group.rewards,
                                       cfg.alpha, cfg.amplify_max_mode);
  const int n = group.size();
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& traj = group.members[i];
    const auto& mask = group.masks[i];
    const double adv = r.advantages[i];
    int norm_tokens = token_count(traj);
    if (cfg.normalize == NormalizeMode::unmasked_tokens && !cfg.ablate_credit) {
      norm_tokens = 0;
      for (std::size_t k = 0; k < traj.turns.size(); ++k)
        if (mask.value(static_cast<int>(k)))
          norm_tokens += static_cast<int>(traj.turns[k].tokens.size());
      if (norm_tokens == 0) continue;  // fully masked trajectory
    }
    const double inv_len = 1.0 / norm_tokens;
    for (std::size_t k = 0; k < traj.turns.size(); ++k) {
      if (!cfg.ablate_credit && mask.value(static_cast<int>(k)) == 0) continue;
      const auto& turn = traj.turns[k];
      for (std::size_t p = 0; p < turn.tokens.size(); ++p) {
        const auto key = rollout::turn_key(turn, static_cast<int>(p));
        const int tok = turn.tokens[p];
        loss -= adv * policy::logprob(set.learner, key, tok) * inv_len / n;
        auto probs = policy::token_distribution(set.learner, key);
        r.grad.add_score(key, tok, probs, adv * inv_len / n);
      }
    }
  }
  r.policy_loss = loss;
  auto sft = sft_step(meta, set, cfg);
  r.sft_loss = sft.sft_loss;
  r.grad.add(sft.grad);
  auto keys = visited_keys(group);
  r.ref_kl = mean_kl_over_keys(set.learner, set.reference, keys);
  detail::fill_advantage_stats(r);
  return r;
}

// Plain-ascent (or Adam) parameter update: theta += eta * g.
struct Optimizer {
  bool adam = false;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  std::map<policy::ContextKey, std::vector<double>> m, v;

  void apply(policy::PolicySet& set, const Gradient& grad, double eta) {
    if (eta == 0.0) return;
    if (!adam) {
      for (const auto& [key, g] : grad.by_key) {
        auto& z = set.learner.logits_for(key);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += eta * g[i];
      }
      return;
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (const auto& [key, g] : grad.by_key) {
      auto& mk = m.try_emplace(key, std::vector<double>(g.size(), 0.0))
                     .first->second;
      auto& vk = v.try_emplace(key, std::vector<double>(g.size(), 0.0))
                     .first->second;
      auto& z = set.learner.logits_for(key);
      for (std::size_t i = 0; i < z.size(); ++i) {
        mk[i] = beta1 * mk[i] + (1.0 - beta1) * g[i];
        vk[i] = beta2 * vk[i] + (1.0 - beta2) * g[i] * g[i];
        z[i] += eta * (mk[i] / bc1) / (std::sqrt(vk[i] / bc2) + eps);
      }
    }
  }
};

inline void apply_update(policy::PolicySet& set, const Gradient& grad,
                         double eta) {
  Optimizer opt;
  opt.apply(set, grad, eta);
}

// Copies learner -> behavior when the (1-based) step index is a multiple of S.
inline bool maybe_sync(policy::PolicySet& set, long step, int sync_interval) {
  if (step % sync_interval != 0) return false;
  policy::sync_behavior(set);
  return true;
}

// Recency-weighted group buffer, replacing priority replay at toy scale.
// Active only when S > 1; sampling weight is w^age.
class ReplayBuffer {
 public:
  ReplayBuffer(int capacity, double weight)
      : capacity_(capacity), weight_(weight) {}

  void push(rollout::SynthesisResult item) {
    items_.push_back(std::move(item));
    if (static_cast<int>(items_.size()) > capacity_) items_.pop_front();
  }

  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }

  const rollout::SynthesisResult& sample(rng::Stream& stream) const {
    std::vector<double> w(items_.size());
    // Newest entry has age 0.
    for (std::size_t i = 0; i < items_.size(); ++i)
      w[i] = std::pow(weight_, static_cast<double>(items_.size() - 1 - i));
    return items_[static_cast<std::size_t>(stream.categorical(w))];
  }

 private:
  int capacity_;
  double weight_;
  std::deque<rollout::SynthesisResult> items_;
};

}  // namespace r3lab::trainers
