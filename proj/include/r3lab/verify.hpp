#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "r3lab/theory.hpp"

namespace r3lab::verify {

// Theory-module checks shared by the `verify` subcommand and the acceptance
// suite. Each check prints one structured report and a pass/fail verdict.

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  theory::TheoryReport report;
};

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string format_report(const theory::TheoryReport& r) {
  return "p=" + fmt(r.p) + " mean_pos_adv=" + fmt(r.mean_pos_adv) +
         " mean_neg_adv=" + fmt(r.mean_neg_adv) + " |C|=" +
         fmt(r.constructive_norm) + " |D|=" + fmt(r.destructive_norm) +
         " alpha_min=" + fmt(r.alpha_min) + " var_ratio=" +
         fmt(r.var_ratio_empirical) + "/" + fmt(r.var_ratio_bound) +
         " cov_fraction=" + fmt(r.cov_fraction);
}

// Gradient dominance (equal-norm bandit construction, p = 0.25, ratio 1):
// strict dominance must flip between alpha = 2.9 and alpha = 3.1.
inline CheckResult check_gradient_dominance() {
  CheckResult r;
  r.name = "gradient_dominance";
  theory::DominanceSpec spec;  // vocab 8, N 8, p 0.25, ratio 1
  const double amin = theory::alpha_min(spec.p, 1.0, -spec.adv_ratio);
  const bool below = theory::dominance_check(spec, 2.9);
  const bool above = theory::dominance_check(spec, 3.1);
  const bool at = theory::dominance_check(spec, amin);
  auto g = theory::build_dominance_group(spec);
  auto d = theory::decompose_gradient(g.advantages, g.member_grads);
  r.report.p = d.p;
  r.report.mean_pos_adv = d.mean_pos_adv;
  r.report.mean_neg_adv = d.mean_neg_adv;
  r.report.constructive_norm = theory::l2(d.constructive);
  r.report.destructive_norm = theory::l2(d.destructive);
  r.report.alpha_min = amin;
  r.pass = !below && above && !at && std::abs(amin - 3.0) < 1e-12;
  r.detail = "alpha_min=" + fmt(amin) + " dominance(2.9)=" +
             (below ? "true" : "false") + " dominance(3.1)=" +
             (above ? "true" : "false") + " dominance(alpha_min)=" +
             (at ? "true" : "false");
  return r;
}

// Exact enumeration vs Monte Carlo REINFORCE on LockChain(K=2, V=3):
// every coordinate within 3 standard errors at M = 100000.
inline CheckResult check_oracle_equivalence(long samples = 100000) {
  CheckResult r;
  r.name = "oracle_equivalence";
  env::EnvSpec spec;
  spec.lock = {2, 3, 1, env::RewardMode::binary};
  env::Instance inst(spec, 12345);
  policy::PolicyParams params(inst.vocab());
  auto logit_stream = rng::derive(2024, "verify/oracle-logits");
  theory::CoordSpace space(inst);
  for (int k = 0; k < space.num_turns; ++k) {
    auto& z = params.logits_for(space.key(k, 0));
    for (auto& v : z) v = logit_stream.next_double() - 0.5;
  }
  auto exact = theory::exact_policy_gradient(inst, params);
  auto mc_stream = rng::derive(2024, "verify/oracle-mc");
  auto mc = theory::mc_policy_gradient(inst, params, samples, mc_stream);
  double worst = 0.0;
  bool ok = true;
  for (std::size_t j = 0; j < exact.grad.size(); ++j) {
    const double dev = std::abs(mc.mean[j] - exact.grad[j]);
    const double limit = 3.0 * mc.std_error[j] + 1e-12;
    worst = std::max(worst, mc.std_error[j] > 0 ? dev / mc.std_error[j] : 0.0);
    ok = ok && dev <= limit;
  }
  r.pass = ok;
  r.detail = "J=" + fmt(exact.objective) + " M=" + std::to_string(samples) +
             " worst_dev_stderr=" + fmt(worst);
  return r;
}

// Variance reduction (LockChain K=5, V=4, uniform policy, fraction reward):
// empirical masked/unmasked ratio <= (T - T_pivot)/T + 0.05 for pivots 1..4.
inline CheckResult check_variance_reduction(long samples = 10000) {
  CheckResult r;
  r.name = "variance_reduction";
  env::EnvSpec spec;
  spec.lock = {5, 4, 1, env::RewardMode::fraction};
  env::Instance inst(spec, 777);
  policy::PolicyParams uniform(inst.vocab());
  bool ok = true;
  std::string parts;
  for (int pivot = 1; pivot <= 4; ++pivot) {
    auto stream = rng::derive(31337, "verify/var-ratio", pivot);
    auto vr = theory::variance_ratio(inst, uniform, pivot, samples, stream);
    ok = ok && vr.empirical <= vr.bound + 0.05;
    parts += " p" + std::to_string(pivot) + "=" + fmt(vr.empirical) + "/" +
             fmt(vr.bound);
    if (pivot == 3) {  // the illustrative pivot-ratio-0.6 pair
      r.report.var_ratio_empirical = vr.empirical;
      r.report.var_ratio_bound = vr.bound;
    }
  }
  r.pass = ok;
  r.detail = "empirical/bound:" + parts;
  return r;
}

// Covariance structure of paired base/retry gradients (LockChain K=8, V=2):
// measured covariance fraction within 0.1 of T_pivot/T and Var(diff)
// fraction within 0.1 of 2(1 - T_pivot/T) at pivot ratios 0.25/0.5/0.75.
inline CheckResult check_covariance(long samples = 10000) {
  CheckResult r;
  r.name = "covariance";
  env::EnvSpec spec;
  spec.lock = {8, 2, 1, env::RewardMode::fraction};
  env::Instance inst(spec, 99);
  policy::PolicyParams uniform(inst.vocab());
  bool ok = true;
  std::string parts;
  for (int pivot : {2, 4, 6}) {
    auto stream = rng::derive(4242, "verify/covariance", pivot);
    auto pairs = theory::sample_paired_gradients(inst, uniform, pivot, samples,
                                                 stream);
    auto cc = theory::covariance_check(pairs.base, pairs.retry, pivot,
                                       inst.num_turns());
    ok = ok && std::abs(cc.measured_cov_fraction - cc.predicted_cov_fraction) <=
                   0.1 &&
         std::abs(cc.measured_diff_fraction - cc.predicted_diff_fraction) <= 0.1;
    parts += " p" + std::to_string(pivot) + ":cov=" +
             fmt(cc.measured_cov_fraction) + "~" +
             fmt(cc.predicted_cov_fraction) + ",diff=" +
             fmt(cc.measured_diff_fraction) + "~" +
             fmt(cc.predicted_diff_fraction);
    if (pivot == 4) r.report.cov_fraction = cc.measured_cov_fraction;
  }
  r.pass = ok;
  r.detail = parts;
  return r;
}

// Entropy collapse probe on HardBandit(V=64), failure-dominated init.
// alpha = 1: median entropy rise >= 0.1 nats over 200 steps (5 seeds).
// alpha = 3: median final E[R] >= 0.8 and final entropy below initial.
inline CheckResult check_entropy_collapse() {
  CheckResult r;
  r.name = "entropy_collapse_probe";
  env::HardBanditSpec bandit;
  bandit.vocab = 64;
  std::vector<double> rises, final_rewards, entropy_drops;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    theory::ProbeOptions low;
    low.alpha = 1.0;
    auto t1 = theory::entropy_collapse_probe(bandit, low, seed);
    rises.push_back(t1.entropy.back() - t1.entropy.front());
    theory::ProbeOptions high;
    high.alpha = 3.0;
    auto t3 = theory::entropy_collapse_probe(bandit, high, seed);
    final_rewards.push_back(t3.expected_reward.back());
    entropy_drops.push_back(t3.entropy.front() - t3.entropy.back());
  }
  auto median = [](std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
  };
  const double med_rise = median(rises);
  const double med_final = median(final_rewards);
  const double med_drop = median(entropy_drops);
  r.pass = med_rise >= 0.1 && med_final >= 0.8 && med_drop > 0.0;
  r.detail = "alpha1_median_entropy_rise=" + fmt(med_rise) +
             " alpha3_median_final_reward=" + fmt(med_final) +
             " alpha3_median_entropy_drop=" + fmt(med_drop);
  return r;
}

inline std::vector<CheckResult> run_all_checks() {
  return {check_gradient_dominance(), check_oracle_equivalence(),
          check_variance_reduction(), check_covariance(),
          check_entropy_collapse()};
}

}  // namespace r3lab::verify
