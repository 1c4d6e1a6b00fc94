#include <cmath>

#include "doctest.h"

#include "r3lab/trainers.hpp"

using namespace r3lab;

namespace {

// Hand-built single-token turn with the lock-chain key convention.
rollout::TrajTurn turn_at(int turn_index, int token,
                          int tag = policy::kNoGuidance) {
  rollout::TrajTurn t;
  t.obs.turn_index = turn_index;
  t.obs.state_token = turn_index;
  t.tokens = {token};
  t.guidance_tag = tag;
  return t;
}

rollout::Trajectory traj_of(std::initializer_list<int> tokens, double reward) {
  rollout::Trajectory traj;
  int k = 0;
  for (int t : tokens) traj.turns.push_back(turn_at(k++, t));
  traj.reward = reward;
  return traj;
}

rollout::ExplorationGroup group_of(std::vector<rollout::Trajectory> members,
                                   std::vector<int> pivots) {
  rollout::ExplorationGroup g;
  const int k = static_cast<int>(members[0].turns.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    g.rewards.push_back(members[i].reward);
    g.masks.push_back(credit::pivot_mask(pivots[i], k));
  }
  g.members = std::move(members);
  return g;
}

// Learner logits at `key` chosen so pi_new(0) = target exactly (vocab 2).
void set_prob_of_token0(policy::PolicyParams& params,
                        const policy::ContextKey& key, double target) {
  params.logits_for(key) = {std::log(target), std::log(1.0 - target)};
}

bool gradients_match(const trainers::Gradient& a, const trainers::Gradient& b,
                     double tol) {
  if (a.by_key.size() != b.by_key.size()) return false;
  for (const auto& [key, vec] : a.by_key) {
    auto it = b.by_key.find(key);
    if (it == b.by_key.end()) return false;
    for (std::size_t v = 0; v < vec.size(); ++v)
      if (std::abs(vec[v] - it->second[v]) > tol) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("clipped surrogate term arithmetic") {
  auto t1 = trainers::clipped_term(1.0, 0.7, 0.8, 1.2);
  CHECK(t1.value == doctest::Approx(0.7));
  CHECK(!t1.clipped_active);

  auto t2 = trainers::clipped_term(1.5, 1.0, 0.8, 1.2);
  CHECK(t2.value == doctest::Approx(1.2));
  CHECK(t2.clipped_active);

  auto t3 = trainers::clipped_term(0.5, -1.0, 0.8, 1.2);
  CHECK(t3.value == doctest::Approx(-0.8));
  CHECK(t3.clipped_active);

  // Inside the clip range the branches tie and the ratio path is active.
  auto t4 = trainers::clipped_term(1.1, -2.0, 0.8, 1.2);
  CHECK(t4.value == doctest::Approx(-2.2));
  CHECK(!t4.clipped_active);
}

TEST_CASE("grpo: exact clip arithmetic on a engineered two-member group") {
  policy::PolicySet set(2);
  trainers::TrainConfig cfg;
  cfg.kl_beta = 0.0;
  cfg.clip_epsilon = 0.2;
  // Two one-turn trajectories on distinct keys; rewards {1, 0} give exact
  // advantages {+1, -1}.
  auto g = group_of({traj_of({0}, 1.0), traj_of({0}, 0.0)}, {0, 0});
  g.members[1].turns[0] = turn_at(1, 0);
  // Behavior stays uniform; learner ratios 1.5 and 0.5 on the taken tokens.
  set_prob_of_token0(set.learner, {0, 0, 0, policy::kNoGuidance}, 0.75);
  set_prob_of_token0(set.learner, {1, 1, 0, policy::kNoGuidance}, 0.25);

  auto r = trainers::grpo_step(g, set, cfg);
  // min(1.5*1, 1.2*1) = 1.2 ; min(0.5*-1, 0.8*-1) = -0.8 ; mean = 0.2.
  CHECK(r.policy_loss == doctest::Approx(-0.2).epsilon(1e-12));
  CHECK(r.clip_fraction == doctest::Approx(1.0));
  CHECK(r.grad.by_key.empty());  // both tokens on the clipped branch
}

TEST_CASE("grpo: ratio-1 surrogate is the mean advantage and clip is inactive") {
  policy::PolicySet set(3);
  set.learner.logits_for({0, 0, 0, policy::kNoGuidance}) = {0.4, -0.2, 0.0};
  policy::sync_behavior(set);
  trainers::TrainConfig cfg;
  cfg.kl_beta = 0.0;
  auto g = group_of({traj_of({0}, 1.0), traj_of({1}, 0.0), traj_of({2}, 0.0),
                     traj_of({0}, 0.0)},
                    {0, 0, 0, 0});
  auto r = trainers::grpo_step(g, set, cfg);
  CHECK(r.policy_loss == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.clip_fraction == 0.0);
}

TEST_CASE("at-sync equivalence: grpo (beta 0) and opmd gradients agree") {
  policy::PolicySet set(4);
  auto stream = rng::derive(77, "test/trainers-sync");
  for (int k = 0; k < 3; ++k) {
    auto& z = set.learner.logits_for({k, k, 0, policy::kNoGuidance});
    for (auto& v : z) v = stream.next_double() - 0.5;
  }
  policy::sync_behavior(set);
  trainers::TrainConfig cfg;
  cfg.kl_beta = 0.0;
  auto g = group_of({traj_of({0, 1, 2}, 1.0), traj_of({3, 1, 0}, 0.5),
                     traj_of({2, 2, 2}, 0.0), traj_of({1, 0, 3}, 0.25)},
                    {0, 0, 0, 0});
  auto a = trainers::grpo_step(g, set, cfg);
  auto b = trainers::opmd_step(g, set, cfg);
  CHECK(gradients_match(a.grad, b.grad, 1e-10));
  CHECK(a.clip_fraction == 0.0);
}

TEST_CASE("opmd: all-equal rewards produce a zero gradient") {
  policy::PolicySet set(3);
  trainers::TrainConfig cfg;
  auto g = group_of({traj_of({0}, 0.5), traj_of({1}, 0.5), traj_of({2}, 0.5)},
                    {0, 0, 0});
  auto r = trainers::opmd_step(g, set, cfg);
  for (const auto& [key, vec] : r.grad.by_key)
    for (double v : vec) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("gspo: sequence ratio is the exponentiated mean token log-ratio") {
  policy::PolicySet set(2);
  trainers::TrainConfig cfg;
  cfg.kl_beta = 0.0;
  cfg.gspo_clip_low = 0.5;   // wide range so the ratio path stays active
  cfg.gspo_clip_high = 0.5;
  // Token log-ratios +0.1 and -0.1 -> sequence ratio exactly 1.
  set_prob_of_token0(set.learner, {0, 0, 0, policy::kNoGuidance},
                     0.5 * std::exp(0.1));
  set_prob_of_token0(set.learner, {1, 1, 0, policy::kNoGuidance},
                     0.5 * std::exp(-0.1));
  auto g = group_of({traj_of({0, 0}, 1.0), traj_of({0, 0}, 0.0)}, {0, 0});
  g.members[1].turns[0] = turn_at(2, 0);
  g.members[1].turns[1] = turn_at(3, 0);
  auto r = trainers::gspo_step(g, set, cfg);
  // Member 0: r_seq = 1, advantage +1 -> term 1. Member 1: behavior uniform
  // and learner uniform at its keys -> r_seq = 1, advantage -1 -> term -1.
  CHECK(r.policy_loss == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.clip_fraction == 0.0);
}

TEST_CASE("gspo: constant token ratios collapse to that constant") {
  policy::PolicySet set(2);
  // Both tokens of one member get ratio 1.25.
  set_prob_of_token0(set.learner, {0, 0, 0, policy::kNoGuidance}, 0.625);
  set_prob_of_token0(set.learner, {1, 1, 0, policy::kNoGuidance}, 0.625);
  auto traj = traj_of({0, 0}, 1.0);
  const double r_seq =
      std::exp((rollout::trajectory_logprob(set.learner, traj) -
                rollout::trajectory_logprob(set.behavior, traj)) /
               2.0);
  CHECK(r_seq == doctest::Approx(1.25).epsilon(1e-12));
}

TEST_CASE("raft: imitates the single best trajectory, ties to lowest index") {
  policy::PolicySet set(3);
  trainers::TrainConfig cfg;
  auto g = group_of({traj_of({0, 1}, 0.5), traj_of({2, 2}, 1.0),
                     traj_of({1, 1}, 1.0)},
                    {0, 0, 0});
  auto r = trainers::raft_step(g, set, cfg);
  // NLL of the first max-reward member (index 1), averaged per token.
  CHECK(r.policy_loss == doctest::Approx(std::log(3.0)));
  // Gradient touches only that member's keys: (0,0) and (1,1) with token 2.
  REQUIRE(r.grad.by_key.size() == 2);
  for (const auto& [key, vec] : r.grad.by_key) {
    CHECK(vec[2] == doctest::Approx(0.5 * (1.0 - 1.0 / 3)));
    CHECK(vec[0] == doctest::Approx(0.5 * (-1.0 / 3)));
  }
}

TEST_CASE("r3l: masked prefix keys receive exactly zero update") {
  policy::PolicySet set(4);
  trainers::TrainConfig cfg;
  auto g = group_of({traj_of({0, 1, 2}, 0.0), traj_of({0, 1, 3}, 1.0)}, {2, 2});
  rollout::MetaDatasets meta;
  auto r = trainers::r3l_step(g, meta, set, cfg);
  for (const auto& [key, vec] : r.grad.by_key)
    CHECK(key.turn_index >= 2);
  CHECK(!r.grad.by_key.empty());
}

TEST_CASE("r3l: self-paired success contributes its full trajectory at alpha") {
  policy::PolicySet set(2);
  trainers::TrainConfig cfg;
  cfg.alpha = 3.0;
  auto g = group_of({traj_of({0, 0}, 1.0), traj_of({1, 1}, 0.0)}, {2, 0});
  rollout::MetaDatasets meta;
  auto r = trainers::r3l_step(g, meta, set, cfg);
  // Max member amplified to exactly alpha: 3/(N |tau|) * (1 - 1/2) = 0.375
  // on its token; the negative member shares the turn-0 key and adds
  // -1/(N |tau|) * (0 - 1/2) = +0.125 there.
  auto it = r.grad.by_key.find({0, 0, 0, policy::kNoGuidance});
  REQUIRE(it != r.grad.by_key.end());
  CHECK(it->second[0] == doctest::Approx(0.5));
  CHECK(r.p_positive == doctest::Approx(0.5));
}

TEST_CASE("r3l: gradient decomposes additively into RL and SFT parts") {
  policy::PolicySet set(3);
  trainers::TrainConfig cfg;
  auto g = group_of({traj_of({0, 1}, 1.0), traj_of({2, 0}, 0.0)}, {0, 0});
  rollout::MetaDatasets meta;
  reflect::RetryExample ex;
  ex.tokens = {{policy::ContextKey{1, 1, 0, 1}, 2},
               {policy::ContextKey{0, 0, 0, 0}, 1}};
  meta.retry_examples.push_back(ex);

  auto combined = trainers::r3l_step(g, meta, set, cfg);
  rollout::MetaDatasets empty;
  auto rl_only = trainers::r3l_step(g, empty, set, cfg);
  auto sft_only = trainers::sft_step(meta, set, cfg);
  trainers::Gradient sum(3);
  sum.add(rl_only.grad);
  sum.add(sft_only.grad);
  CHECK(gradients_match(combined.grad, sum, 1e-15));
  CHECK(combined.sft_loss == doctest::Approx(sft_only.sft_loss));
}

TEST_CASE("r3l ablation flags: raw advantages and all-ones masks") {
  policy::PolicySet set(2);
  trainers::TrainConfig cfg;
  auto g = group_of({traj_of({0, 0}, 1.0), traj_of({1, 1}, 0.0)}, {1, 1});
  rollout::MetaDatasets meta;

  cfg.ablate_positive = true;
  auto raw = trainers::r3l_step(g, meta, set, cfg);
  CHECK(raw.advantages[0] == doctest::Approx(1.0));  // no amplification

  cfg.ablate_positive = false;
  cfg.ablate_credit = true;
  auto unmasked = trainers::r3l_step(g, meta, set, cfg);
  bool saw_prefix = false;
  for (const auto& [key, vec] : unmasked.grad.by_key)
    saw_prefix = saw_prefix || key.turn_index == 0;
  CHECK(saw_prefix);
}

TEST_CASE("sft: empty meta datasets cost zero and move nothing") {
  policy::PolicySet set(3);
  trainers::TrainConfig cfg;
  rollout::MetaDatasets meta;
  auto r = trainers::sft_step(meta, set, cfg);
  CHECK(r.sft_loss == 0.0);
  CHECK(r.grad.by_key.empty());
}

TEST_CASE("apply_update: plain ascent step, eta 0 is a no-op") {
  policy::PolicySet set(2);
  trainers::Gradient g(2);
  g.at({0, 0, 0, policy::kNoGuidance}) = {0.5, -0.5};
  trainers::apply_update(set, g, 0.0);
  CHECK(set.learner.logits.empty());

  trainers::apply_update(set, g, 0.1);
  auto& z = set.learner.logits_for({0, 0, 0, policy::kNoGuidance});
  CHECK(z[0] == doctest::Approx(0.05));
  CHECK(z[1] == doctest::Approx(-0.05));
}

TEST_CASE("maybe_sync: S=1 syncs every step; S=3 every third") {
  policy::PolicySet set(2);
  set.learner.logits_for({0, 0, 0, policy::kNoGuidance}) = {1.0, 0.0};
  CHECK(trainers::maybe_sync(set, 1, 1));
  CHECK(!set.behavior.logits.empty());

  policy::PolicySet s3(2);
  s3.learner.logits_for({0, 0, 0, policy::kNoGuidance}) = {1.0, 0.0};
  CHECK(!trainers::maybe_sync(s3, 1, 3));
  CHECK(!trainers::maybe_sync(s3, 2, 3));
  CHECK(s3.behavior.logits.empty());
  CHECK(trainers::maybe_sync(s3, 3, 3));
  CHECK(!s3.behavior.logits.empty());
}

TEST_CASE("replay buffer: capacity cap and recency weighting") {
  trainers::ReplayBuffer buf(3, 0.5);
  for (int i = 0; i < 5; ++i) {
    rollout::SynthesisResult r;
    r.env_turns = i;
    buf.push(std::move(r));
  }
  CHECK(buf.size() == 3);
  // Newest item (env_turns = 4) carries weight 1; counts should lean recent.
  auto stream = rng::derive(5, "test/replay");
  int newest = 0;
  const int draws = 4000;
  for (int i = 0; i < draws; ++i)
    if (buf.sample(stream).env_turns == 4) ++newest;
  // weights 0.25, 0.5, 1.0 -> newest fraction 1/1.75 = 0.5714...
  const double expect = 1.0 / 1.75;
  const double se = std::sqrt(expect * (1 - expect) / draws);
  CHECK(std::abs(newest / static_cast<double>(draws) - expect) <= 4 * se);
}

TEST_CASE("step results are bit-identical across repeated evaluation") {
  policy::PolicySet set(4);
  auto stream = rng::derive(31, "test/trainers-det");
  for (int k = 0; k < 3; ++k) {
    auto& z = set.learner.logits_for({k, k, 0, policy::kNoGuidance});
    for (auto& v : z) v = stream.next_double() - 0.5;
  }
  policy::sync_behavior(set);
  trainers::TrainConfig cfg;
  auto g = group_of({traj_of({0, 1, 2}, 1.0), traj_of({3, 1, 0}, 0.0),
                     traj_of({2, 2, 2}, 0.5), traj_of({1, 0, 3}, 0.0)},
                    {1, 1, 0, 0});
  rollout::MetaDatasets meta;
  auto a = trainers::r3l_step(g, meta, set, cfg);
  auto b = trainers::r3l_step(g, meta, set, cfg);
  CHECK(a.policy_loss == b.policy_loss);
  REQUIRE(a.grad.by_key.size() == b.grad.by_key.size());
  for (const auto& [key, vec] : a.grad.by_key) {
    const auto& other = b.grad.by_key.at(key);
    for (std::size_t v = 0; v < vec.size(); ++v) CHECK(vec[v] == other[v]);
  }
}
