#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "r3lab/credit.hpp"
#include "r3lab/env.hpp"
#include "r3lab/policy.hpp"
#include "r3lab/rng.hpp"

namespace r3lab::theory {

using env::UsageError;

struct TheoryReport {
  double p = 0.0;                 // positive-advantage fraction
  double mean_pos_adv = 0.0;      // A-bar+
  double mean_neg_adv = 0.0;      // A-bar-
  double constructive_norm = 0.0; // ||C||
  double destructive_norm = 0.0;  // ||D||
  double alpha_min = 0.0;
  double var_ratio_empirical = 0.0;
  double var_ratio_bound = 0.0;
  double cov_fraction = 0.0;      // measured T_pivot / T analogue
};

// Fixed flat coordinate order over the unguided keys of an instance:
// ((turn * tokens_per_turn) + pos) * V + token.
struct CoordSpace {
  int num_turns = 0;
  int tokens_per_turn = 0;
  int vocab = 0;

  explicit CoordSpace(const env::Instance& inst)
      : num_turns(inst.num_turns()),
        tokens_per_turn(inst.tokens_per_turn()),
        vocab(inst.vocab()) {}

  int positions() const { return num_turns * tokens_per_turn; }
  int dim() const { return positions() * vocab; }
  int index(int turn, int pos, int token) const {
    return (turn * tokens_per_turn + pos) * vocab + token;
  }
  policy::ContextKey key(int turn, int pos) const {
    // LockChain observations expose the lock index as the state token.
    return policy::ContextKey{turn, turn, pos, policy::kNoGuidance};
  }
};

struct Decomposition {
  std::vector<double> constructive;  // C = sum over members with A_hat > 0
  std::vector<double> destructive;   // D = sum over members with A_hat < 0
  double p = 0.0;
  double mean_pos_adv = 0.0;
  double mean_neg_adv = 0.0;
  double mean_norm_pos = 0.0;  // mean per-member gradient norm of each class
  double mean_norm_neg = 0.0;
};

inline double l2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline Decomposition decompose_gradient(
    const std::vector<double>& advantages,
    const std::vector<std::vector<double>>& member_grads) {
  if (advantages.size() != member_grads.size())
    throw UsageError("decompose_gradient: size mismatch");
  const std::size_t dim = member_grads.empty() ? 0 : member_grads[0].size();
  Decomposition d;
  d.constructive.assign(dim, 0.0);
  d.destructive.assign(dim, 0.0);
  int pos = 0, neg = 0;
  double pos_sum = 0.0, neg_sum = 0.0, pos_norm = 0.0, neg_norm = 0.0;
  for (std::size_t i = 0; i < advantages.size(); ++i) {
    const double a = advantages[i];
    if (a > 0.0) {
      ++pos;
      pos_sum += a;
      pos_norm += l2(member_grads[i]);
      for (std::size_t j = 0; j < dim; ++j)
        d.constructive[j] += a * member_grads[i][j];
    } else if (a < 0.0) {
      ++neg;
      neg_sum += a;
      neg_norm += l2(member_grads[i]);
      for (std::size_t j = 0; j < dim; ++j)
        d.destructive[j] += a * member_grads[i][j];
    }
  }
  const auto n = static_cast<double>(advantages.size());
  d.p = n > 0 ? pos / n : 0.0;
  d.mean_pos_adv = pos > 0 ? pos_sum / pos : 0.0;
  d.mean_neg_adv = neg > 0 ? neg_sum / neg : 0.0;
  d.mean_norm_pos = pos > 0 ? pos_norm / pos : 0.0;
  d.mean_norm_neg = neg > 0 ? neg_norm / neg : 0.0;
  return d;
}

// alpha_min = (1 - p) |A-| / (p A+).
inline double alpha_min(double p, double mean_pos_adv, double mean_neg_adv) {
  if (!(p > 0.0) || !(p < 1.0))
    throw std::domain_error("alpha_min: p must lie strictly in (0, 1)");
  if (!(mean_pos_adv > 0.0))
    throw std::domain_error("alpha_min: mean positive advantage must be > 0");
  return (1.0 - p) * std::abs(mean_neg_adv) / (p * mean_pos_adv);
}

// Equal-norm one-step bandit construction: N members on distinct arms under
// a uniform policy, so every member gradient onehot - pi has the same norm.
struct DominanceSpec {
  int vocab = 8;
  int group_size = 8;
  double p = 0.25;           // fraction of positive-advantage members
  double adv_ratio = 1.0;    // |A-| / A+
};

struct DominanceGroup {
  std::vector<double> advantages;
  std::vector<std::vector<double>> member_grads;
};

inline DominanceGroup build_dominance_group(const DominanceSpec& spec) {
  if (spec.group_size > spec.vocab)
    throw UsageError("dominance: need distinct arms, group_size <= vocab");
  const int n_pos =
      static_cast<int>(std::lround(spec.p * spec.group_size));
  if (n_pos <= 0 || n_pos >= spec.group_size)
    throw UsageError("dominance: p must give a mixed group");
  DominanceGroup g;
  const double u = 1.0 / spec.vocab;
  for (int i = 0; i < spec.group_size; ++i) {
    g.advantages.push_back(i < n_pos ? 1.0 : -spec.adv_ratio);
    std::vector<double> grad(static_cast<std::size_t>(spec.vocab), -u);
    grad[static_cast<std::size_t>(i)] += 1.0;  // arm i, all distinct
    g.member_grads.push_back(std::move(grad));
  }
  return g;
}

// Sharp test of the dominance inequality alpha p A+ > (1-p) |A-| on the
// equal-norm construction: the class-mean member norms are identical, so the
// norm-weighted comparison reduces exactly to the scalar inequality.
inline bool dominance_check(const DominanceSpec& spec, double alpha) {
  auto g = build_dominance_group(spec);
  auto d = decompose_gradient(g.advantages, g.member_grads);
  const double lhs = alpha * d.p * d.mean_pos_adv * d.mean_norm_pos;
  const double rhs = (1.0 - d.p) * std::abs(d.mean_neg_adv) * d.mean_norm_neg;
  return lhs > rhs;
}

struct ExactGradient {
  double objective = 0.0;          // J(theta)
  std::vector<double> grad;        // dJ / d logits, CoordSpace order
};

inline double reward_of_correct_count(const env::Instance& inst, int correct) {
  const int k = inst.num_turns();
  if (inst.spec().reward_mode() == env::RewardMode::binary)
    return correct == k ? 1.0 : 0.0;
  return static_cast<double>(correct) / k;
}

// Enumerates every trajectory of an enumerable instance and evaluates
// J = sum P(tau) R(tau) and grad J = sum P(tau) R(tau) grad log P(tau)
// exactly. Refuses instances beyond 10^6 trajectories.
inline ExactGradient exact_policy_gradient(const env::Instance& inst,
                                           const policy::PolicyParams& params) {
  const CoordSpace space(inst);
  const double total = std::pow(static_cast<double>(space.vocab),
                                static_cast<double>(space.positions()));
  if (total > 1e6)
    throw UsageError("exact_policy_gradient: state space too large (" +
                     std::to_string(total) + " trajectories)");
  const auto count = static_cast<long>(total);
  // Per-position distributions, fixed across trajectories.
  std::vector<std::vector<double>> dists;
  for (int k = 0; k < space.num_turns; ++k)
    for (int p = 0; p < space.tokens_per_turn; ++p)
      dists.push_back(policy::token_distribution(params, space.key(k, p)));

  ExactGradient out;
  out.grad.assign(static_cast<std::size_t>(space.dim()), 0.0);
  std::vector<int> tokens(static_cast<std::size_t>(space.positions()), 0);
  for (long it = 0; it < count; ++it) {
    long rem = it;
    double prob = 1.0;
    for (int pos = 0; pos < space.positions(); ++pos) {
      tokens[pos] = static_cast<int>(rem % space.vocab);
      rem /= space.vocab;
      prob *= dists[pos][tokens[pos]];
    }
    int correct = 0;
    for (int k = 0; k < space.num_turns; ++k) {
      bool ok = true;
      for (int p = 0; p < space.tokens_per_turn; ++p)
        ok = ok &&
             tokens[k * space.tokens_per_turn + p] == inst.secret_token(k, p);
      if (ok) ++correct;
    }
    const double reward = reward_of_correct_count(inst, correct);
    if (reward == 0.0) continue;
    out.objective += prob * reward;
    const double w = prob * reward;
    for (int k = 0; k < space.num_turns; ++k) {
      for (int p = 0; p < space.tokens_per_turn; ++p) {
        const int pos = k * space.tokens_per_turn + p;
        for (int v = 0; v < space.vocab; ++v)
          out.grad[space.index(k, p, v)] -= w * dists[pos][v];
        out.grad[space.index(k, p, tokens[pos])] += w;
      }
    }
  }
  return out;
}

struct McGradient {
  std::vector<double> mean;
  std::vector<double> std_error;
  long samples = 0;
};

// Monte Carlo REINFORCE estimate of the same gradient: g = R sum (onehot - pi).
inline McGradient mc_policy_gradient(const env::Instance& inst,
                                     const policy::PolicyParams& params,
                                     long samples, rng::Stream& stream) {
  const CoordSpace space(inst);
  std::vector<std::vector<double>> dists;
  for (int k = 0; k < space.num_turns; ++k)
    for (int p = 0; p < space.tokens_per_turn; ++p)
      dists.push_back(policy::token_distribution(params, space.key(k, p)));
  std::vector<double> sum(static_cast<std::size_t>(space.dim()), 0.0);
  std::vector<double> sumsq(static_cast<std::size_t>(space.dim()), 0.0);
  std::vector<double> g(static_cast<std::size_t>(space.dim()), 0.0);
  std::vector<int> tokens(static_cast<std::size_t>(space.positions()), 0);
  for (long s = 0; s < samples; ++s) {
    int correct = 0;
    for (int k = 0; k < space.num_turns; ++k) {
      bool ok = true;
      for (int p = 0; p < space.tokens_per_turn; ++p) {
        const int pos = k * space.tokens_per_turn + p;
        tokens[pos] = stream.categorical(dists[pos]);
        ok = ok && tokens[pos] == inst.secret_token(k, p);
      }
      if (ok) ++correct;
    }
    const double reward = reward_of_correct_count(inst, correct);
    std::fill(g.begin(), g.end(), 0.0);
    if (reward != 0.0) {
      for (int k = 0; k < space.num_turns; ++k) {
        for (int p = 0; p < space.tokens_per_turn; ++p) {
          const int pos = k * space.tokens_per_turn + p;
          for (int v = 0; v < space.vocab; ++v)
            g[space.index(k, p, v)] -= reward * dists[pos][v];
          g[space.index(k, p, tokens[pos])] += reward;
        }
      }
    }
    for (int j = 0; j < space.dim(); ++j) {
      sum[j] += g[j];
      sumsq[j] += g[j] * g[j];
    }
  }
  McGradient out;
  out.samples = samples;
  out.mean.resize(sum.size());
  out.std_error.resize(sum.size());
  for (std::size_t j = 0; j < sum.size(); ++j) {
    out.mean[j] = sum[j] / static_cast<double>(samples);
    const double var =
        sumsq[j] / static_cast<double>(samples) - out.mean[j] * out.mean[j];
    out.std_error[j] = std::sqrt(std::max(var, 0.0) / static_cast<double>(samples));
  }
  return out;
}

struct VarianceRatio {
  double empirical = 0.0;
  double bound = 0.0;  // (T - T_pivot) / T
};

// Masked vs unmasked trace variance of the per-trajectory REINFORCE
// estimator under the homogeneity construction (uniform policy, identical
// per-turn structure). Both estimators are measured on the same samples.
inline VarianceRatio variance_ratio(const env::Instance& inst,
                                    const policy::PolicyParams& params,
                                    int k_pivot, long samples,
                                    rng::Stream& stream) {
  if (samples < 100) throw UsageError("variance_ratio: need at least 100 samples");
  if (k_pivot < 0 || k_pivot > inst.num_turns())
    throw UsageError("variance_ratio: pivot out of range");
  const CoordSpace space(inst);
  std::vector<std::vector<double>> dists;
  for (int k = 0; k < space.num_turns; ++k)
    for (int p = 0; p < space.tokens_per_turn; ++p)
      dists.push_back(policy::token_distribution(params, space.key(k, p)));
  std::vector<double> sum_full(space.dim(), 0.0), sq_full(space.dim(), 0.0);
  std::vector<double> sum_mask(space.dim(), 0.0), sq_mask(space.dim(), 0.0);
  std::vector<double> g(space.dim(), 0.0);
  std::vector<int> tokens(static_cast<std::size_t>(space.positions()), 0);
  for (long s = 0; s < samples; ++s) {
    int correct = 0;
    for (int k = 0; k < space.num_turns; ++k) {
      bool ok = true;
      for (int p = 0; p < space.tokens_per_turn; ++p) {
        const int pos = k * space.tokens_per_turn + p;
        tokens[pos] = stream.categorical(dists[pos]);
        ok = ok && tokens[pos] == inst.secret_token(k, p);
      }
      if (ok) ++correct;
    }
    const double reward = reward_of_correct_count(inst, correct);
    std::fill(g.begin(), g.end(), 0.0);
    if (reward != 0.0) {
      for (int k = 0; k < space.num_turns; ++k) {
        for (int p = 0; p < space.tokens_per_turn; ++p) {
          const int pos = k * space.tokens_per_turn + p;
          for (int v = 0; v < space.vocab; ++v)
            g[space.index(k, p, v)] -= reward * dists[pos][v];
          g[space.index(k, p, tokens[pos])] += reward;
        }
      }
    }
    for (int k = 0; k < space.num_turns; ++k) {
      for (int p = 0; p < space.tokens_per_turn; ++p) {
        for (int v = 0; v < space.vocab; ++v) {
          const int j = space.index(k, p, v);
          sum_full[j] += g[j];
          sq_full[j] += g[j] * g[j];
          if (k >= k_pivot) {
            sum_mask[j] += g[j];
            sq_mask[j] += g[j] * g[j];
          }
        }
      }
    }
  }
  auto trace_var = [samples](const std::vector<double>& sum,
                             const std::vector<double>& sq) {
    double t = 0.0;
    for (std::size_t j = 0; j < sum.size(); ++j) {
      const double mean = sum[j] / static_cast<double>(samples);
      t += sq[j] / static_cast<double>(samples) - mean * mean;
    }
    return t;
  };
  VarianceRatio out;
  const double full = trace_var(sum_full, sq_full);
  const double masked = trace_var(sum_mask, sq_mask);
  out.empirical = full > 0.0 ? masked / full : 0.0;
  const int t_total = space.positions();
  const int t_pivot = k_pivot * space.tokens_per_turn;
  out.bound = static_cast<double>(t_total - t_pivot) / t_total;
  return out;
}

// Paired base/retry gradient samples sharing the prefix turns [0, pivot).
// Per-turn scores are weighted by that turn's own correctness indicator (the
// localized-credit estimator), which realizes the iid per-step premise of the
// covariance analysis exactly.
struct PairedGradients {
  std::vector<std::vector<double>> base;
  std::vector<std::vector<double>> retry;
};

inline PairedGradients sample_paired_gradients(const env::Instance& inst,
                                               const policy::PolicyParams& params,
                                               int k_pivot, long samples,
                                               rng::Stream& stream) {
  const CoordSpace space(inst);
  std::vector<std::vector<double>> dists;
  for (int k = 0; k < space.num_turns; ++k)
    for (int p = 0; p < space.tokens_per_turn; ++p)
      dists.push_back(policy::token_distribution(params, space.key(k, p)));
  PairedGradients out;
  out.base.reserve(static_cast<std::size_t>(samples));
  out.retry.reserve(static_cast<std::size_t>(samples));
  auto sample_turn_block = [&](int k, std::vector<double>& g) {
    bool ok = true;
    for (int p = 0; p < space.tokens_per_turn; ++p) {
      const int pos = k * space.tokens_per_turn + p;
      const int tok = stream.categorical(dists[pos]);
      ok = ok && tok == inst.secret_token(k, p);
      for (int v = 0; v < space.vocab; ++v)
        g[space.index(k, p, v)] = -dists[pos][v];
      g[space.index(k, p, tok)] += 1.0;
    }
    if (!ok) {  // localized credit: zero weight for an incorrect turn
      for (int p = 0; p < space.tokens_per_turn; ++p)
        for (int v = 0; v < space.vocab; ++v)
          g[space.index(k, p, v)] = 0.0;
    }
  };
  for (long s = 0; s < samples; ++s) {
    std::vector<double> gb(space.dim(), 0.0), gr(space.dim(), 0.0);
    for (int k = 0; k < k_pivot; ++k) {
      sample_turn_block(k, gb);
      for (int p = 0; p < space.tokens_per_turn; ++p)
        for (int v = 0; v < space.vocab; ++v)
          gr[space.index(k, p, v)] = gb[space.index(k, p, v)];
    }
    for (int k = k_pivot; k < space.num_turns; ++k) {
      sample_turn_block(k, gb);
      sample_turn_block(k, gr);
    }
    out.base.push_back(std::move(gb));
    out.retry.push_back(std::move(gr));
  }
  return out;
}

struct CovarianceCheck {
  double measured_cov_fraction = 0.0;
  double predicted_cov_fraction = 0.0;   // T_pivot / T
  double measured_diff_fraction = 0.0;   // Var(retry - base) / Var
  double predicted_diff_fraction = 0.0;  // 2 (1 - T_pivot / T)
};

inline CovarianceCheck covariance_check(
    const std::vector<std::vector<double>>& base_grads,
    const std::vector<std::vector<double>>& retry_grads, int t_pivot, int t_total) {
  const auto m = static_cast<double>(base_grads.size());
  const std::size_t dim = base_grads.empty() ? 0 : base_grads[0].size();
  std::vector<double> sb(dim, 0.0), sr(dim, 0.0), sbb(dim, 0.0), srr(dim, 0.0),
      sbr(dim, 0.0), sd(dim, 0.0), sdd(dim, 0.0);
  for (std::size_t i = 0; i < base_grads.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double b = base_grads[i][j];
      const double r = retry_grads[i][j];
      sb[j] += b;
      sr[j] += r;
      sbb[j] += b * b;
      srr[j] += r * r;
      sbr[j] += b * r;
      sd[j] += r - b;
      sdd[j] += (r - b) * (r - b);
    }
  }
  double var_b = 0.0, var_r = 0.0, cov = 0.0, var_d = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double mb = sb[j] / m, mr = sr[j] / m, md = sd[j] / m;
    var_b += sbb[j] / m - mb * mb;
    var_r += srr[j] / m - mr * mr;
    cov += sbr[j] / m - mb * mr;
    var_d += sdd[j] / m - md * md;
  }
  const double pooled = 0.5 * (var_b + var_r);
  CovarianceCheck out;
  out.measured_cov_fraction = pooled > 0.0 ? cov / pooled : 0.0;
  out.predicted_cov_fraction = static_cast<double>(t_pivot) / t_total;
  out.measured_diff_fraction = pooled > 0.0 ? var_d / pooled : 0.0;
  out.predicted_diff_fraction = 2.0 * (1.0 - out.predicted_cov_fraction);
  return out;
}

// --- entropy collapse probe -------------------------------------------------

struct ProbeOptions {
  double alpha = 1.0;
  int steps = 200;
  int group_size = 8;
  double eta = 0.4;
  int favored_arms = 2;        // wrong arms holding the initial mass
  double favored_logit = 3.5;
  bool forced_negative_only = false;  // deterministic expected-update variant
  double forced_magnitude = 0.5;
};

struct ProbeTrace {
  std::vector<double> entropy;
  std::vector<double> expected_reward;  // pi(good arm), exact
  std::vector<double> p_positive;
  std::vector<double> lyapunov;  // -E[R]
};

// Runs REINFORCE-style updates with amplified group advantages on a bandit
// whose initial mass sits on wrong arms. Zero-variance groups carry no
// contrastive signal and are skipped; the probe studies the mixed-group
// asymmetry of Definition-1 style updates.
inline ProbeTrace entropy_collapse_probe(const env::HardBanditSpec& bandit,
                                         const ProbeOptions& opt,
                                         std::uint64_t seed) {
  env::EnvSpec spec;
  spec.family = env::Family::hard_bandit;
  spec.bandit = bandit;
  env::Instance inst(spec, seed);
  const int vocab = inst.vocab();
  const int good = inst.secret_token(0, 0);

  std::vector<double> z(static_cast<std::size_t>(vocab), 0.0);
  int placed = 0;
  for (int v = 0; v < vocab && placed < opt.favored_arms; ++v) {
    if (v == good) continue;
    z[v] = opt.favored_logit;
    ++placed;
  }

  auto stream = rng::derive(seed, "theory/probe");
  ProbeTrace trace;
  std::vector<int> arms(static_cast<std::size_t>(opt.group_size), 0);
  for (int step = 0; step < opt.steps; ++step) {
    auto pi = policy::softmax(z);
    trace.entropy.push_back(policy::entropy_of(pi));
    trace.expected_reward.push_back(pi[good]);
    trace.lyapunov.push_back(-pi[good]);

    if (opt.forced_negative_only) {
      // Expected destructive update with the good arm never sampled:
      // Delta z = -eta c (pi' - pi), pi' the renormalized wrong-arm mass.
      const double rest = 1.0 - pi[good];
      trace.p_positive.push_back(0.0);
      for (int v = 0; v < vocab; ++v) {
        const double restricted = v == good ? 0.0 : pi[v] / rest;
        z[v] -= opt.eta * opt.forced_magnitude * (restricted - pi[v]);
      }
      continue;
    }

    std::vector<double> rewards(static_cast<std::size_t>(opt.group_size));
    bool any_good = false;
    for (int i = 0; i < opt.group_size; ++i) {
      arms[i] = stream.categorical(pi);
      rewards[i] = arms[i] == good ? 1.0 : 0.0;
      any_good = any_good || arms[i] == good;
    }
    bool all_good = true;
    for (double rw : rewards) all_good = all_good && rw == 1.0;
    if (!any_good || all_good) {  // zero-variance group: skip
      trace.p_positive.push_back(0.0);
      continue;
    }
    auto raw = credit::group_advantages(rewards);
    auto amp = credit::amplify(raw, rewards, opt.alpha);
    int pos = 0;
    for (double a : amp)
      if (a > 0.0) ++pos;
    trace.p_positive.push_back(static_cast<double>(pos) / opt.group_size);
    std::vector<double> g(static_cast<std::size_t>(vocab), 0.0);
    for (int i = 0; i < opt.group_size; ++i) {
      for (int v = 0; v < vocab; ++v) g[v] -= amp[i] * pi[v];
      g[arms[i]] += amp[i];
    }
    for (int v = 0; v < vocab; ++v)
      z[v] += opt.eta * g[v] / opt.group_size;
  }
  return trace;
}

}  // namespace r3lab::theory
