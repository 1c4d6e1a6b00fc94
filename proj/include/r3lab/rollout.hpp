#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "r3lab/credit.hpp"
#include "r3lab/env.hpp"
#include "r3lab/policy.hpp"
#include "r3lab/reflect.hpp"
#include "r3lab/rng.hpp"

namespace r3lab::rollout {

using env::UsageError;

enum class TrajKind : int { base = 0, retry_raw = 1, distilled = 2 };

struct TrajTurn {
  env::Observation obs;
  env::TurnResponse tokens;
  env::Feedback feedback = env::Feedback::none;
  int guidance_tag = policy::kNoGuidance;  // set on guided retry turns only

  bool operator==(const TrajTurn&) const = default;
};

struct Trajectory {
  std::vector<TrajTurn> turns;
  double reward = 0.0;
  bool success = false;
  TrajKind kind = TrajKind::base;
  std::optional<int> pivot;
  int source_index = -1;  // distilled -> index of its base

  std::vector<env::Feedback> feedback_codes() const {
    std::vector<env::Feedback> f;
    f.reserve(turns.size());
    for (const auto& t : turns) f.push_back(t.feedback);
    return f;
  }
};

enum class Outcome : int { success = 0, success_but_inefficient = 1, failure = 2 };

struct Reflection {
  Outcome outcome = Outcome::failure;
  int pivot = 0;
  int guidance_tag = policy::kNoGuidance;
};

enum class ReflectorMode : int { oracle = 0, noisy = 1, learned = 2 };
enum class GuidanceScope : int { pivot_only = 0, all_remaining = 1 };
enum class RetryConditioning : int { mixture = 0, learned_offset = 1 };

// Scoring key of a stored turn token (tags stripped for base/distilled data).
inline policy::ContextKey turn_key(const TrajTurn& turn, int pos) {
  return policy::key_for(turn.obs, pos, turn.guidance_tag);
}

inline double trajectory_logprob(const policy::PolicyParams& params,
                                 const Trajectory& traj) {
  double lp = 0.0;
  for (const auto& turn : traj.turns)
    for (std::size_t p = 0; p < turn.tokens.size(); ++p)
      lp += policy::logprob(params, turn_key(turn, static_cast<int>(p)),
                            turn.tokens[p]);
  return lp;
}

inline Trajectory sample_episode(const env::Instance& inst,
                                 const policy::PolicyParams& params,
                                 double temperature, rng::Stream& stream) {
  Trajectory traj;
  env::Episode ep(inst);
  while (!ep.done()) {
    TrajTurn turn;
    turn.obs = ep.observation();
    turn.tokens = policy::sample_turn(params, policy::key_for(turn.obs, 0),
                                      inst.tokens_per_turn(), temperature,
                                      stream);
    turn.feedback = ep.step(turn.tokens);
    traj.turns.push_back(std::move(turn));
  }
  auto res = ep.result();
  traj.reward = res.reward;
  traj.success = res.success;
  return traj;
}

inline std::vector<Trajectory> sample_base(const env::Instance& inst,
                                           const policy::PolicyParams& behavior,
                                           int count, double temperature,
                                           std::uint64_t master,
                                           std::uint64_t iteration) {
  if (count < 1) throw UsageError("sample_base: count must be >= 1");
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    auto stream = rng::derive(master, "rollout/base", iteration,
                              static_cast<std::uint64_t>(i));
    out.push_back(sample_episode(inst, behavior, temperature, stream));
  }
  return out;
}

inline int oracle_pivot(const env::Instance& inst, const Trajectory& traj) {
  std::vector<env::TurnResponse> responses;
  responses.reserve(traj.turns.size());
  for (const auto& t : traj.turns) responses.push_back(t.tokens);
  return env::oracle_pivot_of_responses(inst, responses);
}

// Structured diagnosis of a complete trajectory. The outcome class always
// comes from the environment reward; the reflector mode controls where the
// pivot estimate comes from.
inline Reflection reflect(const env::Instance& inst, const Trajectory& traj,
                          ReflectorMode mode, double noise_accuracy,
                          const reflect::LearnedReflector* reflector,
                          rng::Stream& stream) {
  Reflection r;
  const int k = inst.num_turns();
  const int truth = oracle_pivot(inst, traj);
  if (traj.reward >= 1.0) {
    r.outcome = Outcome::success;
    r.pivot = k;
    return r;
  }
  r.outcome = Outcome::failure;
  switch (mode) {
    case ReflectorMode::oracle:
      r.pivot = truth;
      break;
    case ReflectorMode::noisy:
      if (stream.next_double() < noise_accuracy || k == 1) {
        r.pivot = truth;
      } else {
        // A uniformly random wrong turn index.
        int wrong = stream.next_below(k - 1);
        r.pivot = wrong >= truth ? wrong + 1 : wrong;
      }
      break;
    case ReflectorMode::learned: {
      if (!reflector) throw UsageError("reflect: learned mode needs a reflector");
      auto probs = reflect::predict_pivot(*reflector, traj.feedback_codes());
      // The trajectory failed, so restrict to real turn candidates.
      int best = 0;
      for (int i = 1; i < k; ++i)
        if (probs[i] > probs[best]) best = i;
      r.pivot = best;
      break;
    }
  }
  r.guidance_tag = r.pivot;
  return r;
}

struct RetryOptions {
  double lambda = 0.5;
  GuidanceScope scope = GuidanceScope::pivot_only;
  RetryConditioning conditioning = RetryConditioning::mixture;
  const reflect::GuidanceOffset* offset = nullptr;
  double temperature = 1.0;
};

// Replays the base prefix [0, pivot) verbatim into a fresh episode, then
// samples the suffix; the guided turns mix the behavior policy with the
// oracle correction (or apply the learned offset). Replayed turns are not
// counted as sampled environment turns.
inline Trajectory retry(const env::Instance& inst,
                        const policy::PolicyParams& behavior,
                        const Trajectory& base, const Reflection& reflection,
                        const RetryOptions& opt, rng::Stream& stream,
                        long* sampled_turns = nullptr) {
  if (reflection.outcome == Outcome::success)
    throw UsageError("retry: caller must skip successful trajectories");
  const int k = inst.num_turns();
  const int pivot = reflection.pivot;
  Trajectory traj;
  traj.kind = TrajKind::retry_raw;
  traj.pivot = pivot;
  env::Episode ep(inst);
  for (int i = 0; i < pivot; ++i) {
    TrajTurn turn = base.turns[static_cast<std::size_t>(i)];
    ep.step(turn.tokens);  // deterministic env: feedback matches the base
    traj.turns.push_back(std::move(turn));
  }
  for (int i = pivot; i < k; ++i) {
    const bool guided =
        i == pivot || opt.scope == GuidanceScope::all_remaining;
    TrajTurn turn;
    turn.obs = ep.observation();
    if (guided) {
      turn.guidance_tag = i;
      auto corrections = env::oracle_correction(inst, i);
      for (int p = 0; p < inst.tokens_per_turn(); ++p) {
        auto key = policy::key_for(turn.obs, p, i);
        std::vector<double> dist;
        if (opt.conditioning == RetryConditioning::learned_offset && opt.offset)
          dist = reflect::offset_distribution(behavior, *opt.offset, key,
                                              opt.temperature);
        else
          dist = policy::guided_distribution(behavior, key, corrections[p],
                                             opt.lambda, opt.temperature);
        turn.tokens.push_back(policy::sample_token(dist, stream));
      }
    } else {
      turn.tokens = policy::sample_turn(behavior, policy::key_for(turn.obs, 0),
                                        inst.tokens_per_turn(), opt.temperature,
                                        stream);
    }
    turn.feedback = ep.step(turn.tokens);
    traj.turns.push_back(std::move(turn));
    if (sampled_turns) ++*sampled_turns;
  }
  auto res = ep.result();
  traj.reward = res.reward;
  traj.success = res.success;
  return traj;
}

// Original prefix + corrected suffix, with every guidance tag stripped so the
// stored context keys are the ones used at inference.
inline Trajectory distill(const Trajectory& base, const Trajectory& retry_traj) {
  if (!retry_traj.pivot)
    throw std::logic_error("distill: retry trajectory has no pivot");
  const int pivot = *retry_traj.pivot;
  for (int i = 0; i < pivot; ++i)
    if (retry_traj.turns[i].tokens != base.turns[i].tokens)
      throw std::logic_error("distill: prefix mismatch between base and retry");
  Trajectory out;
  out.kind = TrajKind::distilled;
  out.pivot = pivot;
  out.reward = retry_traj.reward;
  out.success = retry_traj.success;
  out.turns.reserve(base.turns.size());
  for (int i = 0; i < static_cast<int>(base.turns.size()); ++i) {
    TrajTurn turn = i < pivot ? base.turns[i] : retry_traj.turns[i];
    turn.guidance_tag = policy::kNoGuidance;
    out.turns.push_back(std::move(turn));
  }
  return out;
}

struct ExplorationGroup {
  // members[0..n/2) are bases, members[n/2..n) the paired distilled
  // trajectories (member i pairs with member i + n/2).
  std::vector<Trajectory> members;
  std::vector<credit::PivotMask> masks;  // one per member; pairs share a mask
  std::vector<double> rewards;

  int size() const { return static_cast<int>(members.size()); }
  int pairs() const { return size() / 2; }
};

struct MetaDatasets {
  std::vector<reflect::ReflectExample> reflect_examples;
  std::vector<reflect::RetryExample> retry_examples;

  bool empty() const { return reflect_examples.empty() && retry_examples.empty(); }
};

struct PairRecord {
  double base_reward = 0.0;
  double retry_reward = 0.0;
  int pivot = 0;          // reflected pivot; K for self-paired successes
  int oracle_pivot = 0;   // ground-truth pivot for accuracy tracking
  bool retried = false;   // false for self-paired successful bases
};

struct SynthesisResult {
  ExplorationGroup group;
  MetaDatasets meta;
  std::vector<PairRecord> pairs;
  long env_turns = 0;  // sampled turns consumed (replays excluded)
};

struct SynthesisOptions {
  int group_size = 8;  // N, even
  double train_temperature = 1.0;
  ReflectorMode reflector_mode = ReflectorMode::oracle;
  double reflector_accuracy = 1.0;  // rho for the noisy mode
  RetryOptions retry;
  bool collect_meta = true;
};

inline ExplorationGroup build_group(std::vector<Trajectory> bases,
                                    std::vector<Trajectory> distilled,
                                    const std::vector<int>& pivots,
                                    int num_turns) {
  if (bases.size() != distilled.size() || bases.size() != pivots.size())
    throw std::logic_error("build_group: size mismatch");
  ExplorationGroup g;
  const std::size_t half = bases.size();
  g.members.reserve(2 * half);
  for (std::size_t i = 0; i < half; ++i) {
    bases[i].source_index = static_cast<int>(i);
    g.members.push_back(std::move(bases[i]));
  }
  for (std::size_t i = 0; i < half; ++i) {
    distilled[i].source_index = static_cast<int>(i);
    g.members.push_back(std::move(distilled[i]));
  }
  g.masks.reserve(2 * half);
  for (int round = 0; round < 2; ++round)
    for (std::size_t i = 0; i < half; ++i)
      g.masks.push_back(credit::pivot_mask(pivots[i], num_turns));
  g.rewards.reserve(2 * half);
  for (const auto& m : g.members) g.rewards.push_back(m.reward);
  return g;
}

// Auxiliary imitation data from verified corrections: only pairs whose retry
// strictly improved on the base contribute. Retry entries without a
// surviving retry trajectory (self-paired successes) are skipped.
inline MetaDatasets collect_meta(const std::vector<Trajectory>& bases,
                                 const std::vector<std::optional<Trajectory>>& retries,
                                 const std::vector<Reflection>& reflections) {
  if (bases.size() != retries.size() || bases.size() != reflections.size())
    throw std::logic_error("collect_meta: size mismatch");
  MetaDatasets meta;
  for (std::size_t i = 0; i < bases.size(); ++i) {
    if (!retries[i]) continue;
    const Trajectory& rt = *retries[i];
    if (!(rt.reward > bases[i].reward)) continue;
    const Reflection& r = reflections[i];
    reflect::ReflectExample re;
    re.feedback = bases[i].feedback_codes();
    re.pivot_label = r.pivot;
    meta.reflect_examples.push_back(std::move(re));
    reflect::RetryExample ex;
    for (int t = r.pivot; t < static_cast<int>(rt.turns.size()); ++t) {
      const auto& turn = rt.turns[static_cast<std::size_t>(t)];
      for (std::size_t p = 0; p < turn.tokens.size(); ++p) {
        // D_retry keeps the guidance in the input: tag every suffix key
        // with the pivot's tag even where sampling ran unguided.
        int tag = turn.guidance_tag != policy::kNoGuidance ? turn.guidance_tag
                                                           : r.guidance_tag;
        ex.tokens.emplace_back(
            policy::key_for(turn.obs, static_cast<int>(p), tag),
            turn.tokens[p]);
      }
    }
    meta.retry_examples.push_back(std::move(ex));
  }
  return meta;
}

// Phase 1 of the training loop: N/2 bases, reflect, retry, distill, pair.
// Fully successful bases are self-paired (identical copy, pivot = K,
// all-ones mask) so the group size stays N.
inline SynthesisResult synthesize(const env::Instance& inst,
                                  const policy::PolicyParams& behavior,
                                  const SynthesisOptions& opt,
                                  const reflect::LearnedReflector* reflector,
                                  std::uint64_t master, std::uint64_t iteration) {
  if (opt.group_size < 2 || opt.group_size % 2 != 0)
    throw UsageError("synthesize: group size must be even and >= 2");
  const int half = opt.group_size / 2;
  const int k = inst.num_turns();
  SynthesisResult out;
  auto bases = sample_base(inst, behavior, half, opt.train_temperature, master,
                           iteration);
  out.env_turns += static_cast<long>(half) * k;

  std::vector<Trajectory> distilled;
  std::vector<std::optional<Trajectory>> retries;
  std::vector<Reflection> reflections;
  std::vector<int> pivots;
  distilled.reserve(static_cast<std::size_t>(half));
  for (int i = 0; i < half; ++i) {
    auto reflect_stream = rng::derive(master, "rollout/reflect", iteration,
                                      static_cast<std::uint64_t>(i));
    Reflection r = reflect(inst, bases[i], opt.reflector_mode,
                           opt.reflector_accuracy, reflector, reflect_stream);
    PairRecord pr;
    pr.base_reward = bases[i].reward;
    pr.pivot = r.pivot;
    pr.oracle_pivot = oracle_pivot(inst, bases[i]);
    if (r.outcome == Outcome::success) {
      Trajectory copy = bases[i];
      copy.kind = TrajKind::distilled;
      copy.pivot = k;
      pr.retry_reward = copy.reward;
      distilled.push_back(std::move(copy));
      retries.emplace_back(std::nullopt);
      pivots.push_back(k);
    } else {
      auto retry_stream = rng::derive(master, "rollout/retry", iteration,
                                      static_cast<std::uint64_t>(i));
      Trajectory rt = retry(inst, behavior, bases[i], r, opt.retry,
                            retry_stream, &out.env_turns);
      pr.retried = true;
      pr.retry_reward = rt.reward;
      distilled.push_back(distill(bases[i], rt));
      retries.emplace_back(std::move(rt));
      pivots.push_back(r.pivot);
    }
    reflections.push_back(r);
    out.pairs.push_back(pr);
  }
  if (opt.collect_meta) out.meta = collect_meta(bases, retries, reflections);
  out.group = build_group(std::move(bases), std::move(distilled), pivots, k);
  return out;
}

// Debug dump: one line per trajectory with kind, pivot, reward, turn tokens
// and feedback codes.
inline std::string dump_trajectory(const Trajectory& traj) {
  std::string out = "traj kind=";
  switch (traj.kind) {
    case TrajKind::base: out += "base"; break;
    case TrajKind::retry_raw: out += "retry_raw"; break;
    case TrajKind::distilled: out += "distilled"; break;
  }
  out += " pivot=";
  out += traj.pivot ? std::to_string(*traj.pivot) : "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", traj.reward);
  out += " reward=";
  out += buf;
  out += " tokens=";
  for (std::size_t k = 0; k < traj.turns.size(); ++k) {
    if (k) out += '|';
    const auto& tokens = traj.turns[k].tokens;
    for (std::size_t p = 0; p < tokens.size(); ++p) {
      if (p) out += ',';
      out += std::to_string(tokens[p]);
    }
  }
  out += " feedback=";
  for (std::size_t k = 0; k < traj.turns.size(); ++k) {
    if (k) out += ',';
    out += env::feedback_name(traj.turns[k].feedback);
  }
  return out;
}

// A plain group of N base samples with all-ones masks, for baselines that do
// not use the reflect-then-retry machinery.
inline SynthesisResult plain_group(const env::Instance& inst,
                                   const policy::PolicyParams& behavior,
                                   int group_size, double temperature,
                                   std::uint64_t master, std::uint64_t iteration) {
  SynthesisResult out;
  const int k = inst.num_turns();
  auto bases = sample_base(inst, behavior, group_size, temperature, master,
                           iteration);
  out.env_turns = static_cast<long>(group_size) * k;
  out.group.members = std::move(bases);
  for (int i = 0; i < group_size; ++i)
    out.group.masks.push_back(credit::pivot_mask(0, k));
  for (const auto& m : out.group.members)
    out.group.rewards.push_back(m.reward);
  return out;
}

}  // namespace r3lab::rollout
