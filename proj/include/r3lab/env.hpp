#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "r3lab/rng.hpp"

namespace r3lab::env {

// Synthetic multi-turn environments with structured per-turn feedback and a
// terminal scalar reward in [0, 1], plus exact oracles for failure
// localization (first deviating turn) and correction (the right tokens).

enum class Feedback : int { none = 0, lock_ok = 1, lock_wrong = 2 };

inline const char* feedback_name(Feedback f) {
  switch (f) {
    case Feedback::none: return "NONE";
    case Feedback::lock_ok: return "LOCK_OK";
    case Feedback::lock_wrong: return "LOCK_WRONG";
  }
  return "?";
}

enum class Family : int { lock_chain = 0, hard_bandit = 1 };
enum class RewardMode : int { binary = 0, fraction = 1 };

struct Observation {
  int env_id = 0;         // family tag
  int turn_index = 0;
  int state_token = 0;    // visible state; the lock index for LockChain
  Feedback feedback_code = Feedback::none;

  bool operator==(const Observation&) const = default;
};

using TurnResponse = std::vector<int>;  // tokens in [0, V)

struct EpisodeResult {
  double reward = 0.0;
  bool success = false;
  std::vector<Feedback> per_turn_feedback;
  int steps_used = 0;
};

struct LockChainSpec {
  int num_locks = 2;        // K; episode length is fixed at K turns
  int vocab = 3;            // V
  int tokens_per_turn = 1;  // T_k, constant across turns, in [1, 4]
  RewardMode reward_mode = RewardMode::binary;
};

struct HardBanditSpec {
  int vocab = 64;     // number of arms
  int good_arm = -1;  // -1: derived from the instance seed at reset
};

struct EnvSpec {
  Family family = Family::lock_chain;
  LockChainSpec lock;
  HardBanditSpec bandit;

  int num_turns() const {
    return family == Family::lock_chain ? lock.num_locks : 1;
  }
  int vocab() const {
    return family == Family::lock_chain ? lock.vocab : bandit.vocab;
  }
  int tokens_per_turn() const {
    return family == Family::lock_chain ? lock.tokens_per_turn : 1;
  }
  RewardMode reward_mode() const {
    return family == Family::lock_chain ? lock.reward_mode : RewardMode::binary;
  }
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

inline void validate(const EnvSpec& spec) {
  if (spec.family == Family::lock_chain) {
    const auto& l = spec.lock;
    if (l.num_locks < 1) throw ConfigError("lock_chain: num_locks must be >= 1");
    if (l.vocab < 2) throw ConfigError("lock_chain: vocab must be >= 2");
    if (l.tokens_per_turn < 1 || l.tokens_per_turn > 4)
      throw ConfigError("lock_chain: tokens_per_turn must be in [1, 4]");
  } else {
    if (spec.bandit.vocab < 2) throw ConfigError("hard_bandit: vocab must be >= 2");
    if (spec.bandit.good_arm >= spec.bandit.vocab)
      throw ConfigError("hard_bandit: good_arm out of range");
  }
}

inline std::uint64_t spec_hash(const EnvSpec& spec) {
  std::uint64_t h = rng::fnv1a("env-spec");
  auto mix = [&h](std::uint64_t v) { h = rng::splitmix64(h ^ v); };
  mix(static_cast<std::uint64_t>(spec.family));
  if (spec.family == Family::lock_chain) {
    mix(static_cast<std::uint64_t>(spec.lock.num_locks));
    mix(static_cast<std::uint64_t>(spec.lock.vocab));
    mix(static_cast<std::uint64_t>(spec.lock.tokens_per_turn));
    mix(static_cast<std::uint64_t>(spec.lock.reward_mode));
  } else {
    mix(static_cast<std::uint64_t>(spec.bandit.vocab));
    mix(static_cast<std::uint64_t>(spec.bandit.good_arm + 1));
  }
  return h;
}

// An environment instance: the spec plus the secret resolved from
// (spec hash, instance_seed). Immutable; episodes hold a pointer to it.
class Instance {
 public:
  Instance(const EnvSpec& spec, std::uint64_t instance_seed)
      : spec_(spec), seed_(instance_seed) {
    validate(spec);
    const int k = spec.num_turns();
    const int tpt = spec.tokens_per_turn();
    secret_.resize(static_cast<std::size_t>(k) * tpt);
    if (spec.family == Family::hard_bandit && spec.bandit.good_arm >= 0) {
      secret_[0] = spec.bandit.good_arm;
    } else {
      auto s = rng::Stream(rng::splitmix64(spec_hash(spec) ^
                                           rng::splitmix64(instance_seed)));
      for (auto& t : secret_) t = s.next_below(spec.vocab());
    }
  }

  const EnvSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  int num_turns() const { return spec_.num_turns(); }
  int vocab() const { return spec_.vocab(); }
  int tokens_per_turn() const { return spec_.tokens_per_turn(); }

  // Correct token for (turn, position-in-turn).
  int secret_token(int turn, int pos) const {
    return secret_[static_cast<std::size_t>(turn) * tokens_per_turn() + pos];
  }
  const std::vector<int>& secret() const { return secret_; }

  TurnResponse correct_response(int turn) const {
    TurnResponse r(static_cast<std::size_t>(tokens_per_turn()));
    for (int p = 0; p < tokens_per_turn(); ++p) r[p] = secret_token(turn, p);
    return r;
  }

 private:
  EnvSpec spec_;
  std::uint64_t seed_;
  std::vector<int> secret_;
};

// One episode. Episodes always run exactly K turns (a wrong lock does not
// terminate the chain early, so pivots and suffix lengths stay well-defined).
class Episode {
 public:
  explicit Episode(const Instance& inst) : inst_(&inst) {}

  Observation observation() const {
    Observation o;
    o.env_id = static_cast<int>(inst_->spec().family);
    o.turn_index = turn_;
    o.state_token = inst_->spec().family == Family::lock_chain ? turn_ : 0;
    o.feedback_code = turn_ == 0 ? Feedback::none : feedback_.back();
    return o;
  }

  bool done() const { return turn_ >= inst_->num_turns(); }
  int turn() const { return turn_; }

  Feedback step(const TurnResponse& response) {
    if (done()) throw UsageError("step after episode termination");
    if (static_cast<int>(response.size()) != inst_->tokens_per_turn())
      throw UsageError("response length != tokens_per_turn");
    for (int t : response)
      if (t < 0 || t >= inst_->vocab()) throw UsageError("token out of range");
    bool ok = true;
    for (int p = 0; p < inst_->tokens_per_turn(); ++p)
      ok = ok && response[p] == inst_->secret_token(turn_, p);
    if (ok) ++correct_;
    feedback_.push_back(ok ? Feedback::lock_ok : Feedback::lock_wrong);
    ++turn_;
    return feedback_.back();
  }

  EpisodeResult result() const {
    if (!done()) throw UsageError("result requested before termination");
    EpisodeResult r;
    const int k = inst_->num_turns();
    r.success = correct_ == k;
    r.reward = inst_->spec().reward_mode() == RewardMode::binary
                   ? (r.success ? 1.0 : 0.0)
                   : static_cast<double>(correct_) / k;
    r.per_turn_feedback = feedback_;
    r.steps_used = turn_;
    return r;
  }

 private:
  const Instance* inst_;
  int turn_ = 0;
  int correct_ = 0;
  std::vector<Feedback> feedback_;
};

// Earliest 0-indexed turn whose response deviates from the instance's correct
// response; K (one past the end) for a fully correct sequence of responses.
template <typename Turns>
int oracle_pivot_of_responses(const Instance& inst, const Turns& responses) {
  if (static_cast<int>(responses.size()) != inst.num_turns())
    throw UsageError("trajectory length does not match instance");
  for (int k = 0; k < inst.num_turns(); ++k) {
    for (int p = 0; p < inst.tokens_per_turn(); ++p) {
      if (responses[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)] !=
          inst.secret_token(k, p))
        return k;
    }
  }
  return inst.num_turns();
}

// Point-mass distributions (one per token position) on the correct tokens for
// the given turn.
inline std::vector<std::vector<double>> oracle_correction(const Instance& inst,
                                                          int pivot) {
  if (pivot < 0 || pivot >= inst.num_turns())
    throw UsageError("oracle_correction: pivot out of range");
  std::vector<std::vector<double>> dists;
  dists.reserve(static_cast<std::size_t>(inst.tokens_per_turn()));
  for (int p = 0; p < inst.tokens_per_turn(); ++p) {
    std::vector<double> d(static_cast<std::size_t>(inst.vocab()), 0.0);
    d[static_cast<std::size_t>(inst.secret_token(pivot, p))] = 1.0;
    dists.push_back(std::move(d));
  }
  return dists;
}

}  // namespace r3lab::env
