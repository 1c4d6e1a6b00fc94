// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavier criteria reuse one shared bundle of training runs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "r3lab/runner.hpp"
#include "r3lab/verify.hpp"

using namespace r3lab;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  int id;
  std::string title;
  bool pass;
  std::string detail;
  double seconds;
};

std::vector<Criterion> g_results;

template <typename Fn>
void run_criterion(int id, const std::string& title, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Criterion c;
  c.id = id;
  c.title = title;
  try {
    auto [pass, detail] = fn();
    c.pass = pass;
    c.detail = detail;
  } catch (const std::exception& e) {
    c.pass = false;
    c.detail = std::string("exception: ") + e.what();
  }
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                            t0)
                  .count();
  std::printf("[%s] criterion %2d  %-28s (%.2fs)  %s\n",
              c.pass ? "PASS" : "FAIL", c.id, c.title.c_str(), c.seconds,
              c.detail.c_str());
  std::fflush(stdout);
  g_results.push_back(std::move(c));
}

std::string fmt(double v) { return verify::fmt(v); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2]
                      : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

// --- criterion 1: equation exactness ---------------------------------------

std::pair<bool, std::string> criterion_equation_exactness() {
  // Group normalization over 1000 random non-degenerate groups.
  auto stream = rng::derive(101, "acceptance/eq-norm");
  int checked = 0;
  double worst_mean = 0.0, worst_std = 0.0;
  while (checked < 1000) {
    const int n = 2 + stream.next_below(15);
    std::vector<double> rewards(n);
    double lo = 1.0, hi = 0.0;
    for (auto& r : rewards) {
      r = stream.next_double();
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    if (hi - lo < 1e-6) continue;
    auto adv = credit::group_advantages(rewards);
    double mean = 0.0, var = 0.0;
    for (double a : adv) mean += a;
    mean /= n;
    for (double a : adv) var += (a - mean) * (a - mean);
    var /= n;
    worst_mean = std::max(worst_mean, std::abs(mean));
    worst_std = std::max(worst_std, std::abs(std::sqrt(var) - 1.0));
    ++checked;
  }
  if (worst_mean >= 1e-9 || worst_std >= 1e-9)
    return {false, "normalization drift mean=" + fmt(worst_mean) +
                       " std=" + fmt(worst_std)};

  // Amplification: branch-exact on an enumerated 50-case table.
  const std::vector<std::vector<double>> patterns = {
      {1, 0, 0, 0},            // unique max over failures
      {1, 1, 0, 0},            // tied maxima
      {0.9, 1.0, 0.2, 0.1},    // positive non-max member
      {0, 0, 0, 0},            // all-zero rewards: max branch at R_max = 0
      {0.5, 0.5, 0.5, 0.5},    // all equal, nonzero
      {1, 0},                  // minimal group
      {0.2, 0.8, 0.4, 0.6, 0.0, 1.0, 0.3, 0.7},
      {0.05, 0.1, 0.95, 1.0},  // two near-max, two low
      {1.0, 1.0, 1.0, 0.0},    // many tied maxima
      {0.25, 0.5, 0.75},       // graded, no exact ties
  };
  const std::vector<double> alphas = {1.0, 2.0, 3.0, 5.0, 7.0};
  int cases = 0;
  for (const auto& rewards : patterns) {
    for (double alpha : alphas) {
      auto raw = credit::group_advantages(rewards);
      auto amp = credit::amplify(raw, rewards, alpha);
      // Independent branch evaluation, straight from the reweighting rule.
      double rmax = rewards[0];
      for (double r : rewards) rmax = std::max(rmax, r);
      for (std::size_t i = 0; i < rewards.size(); ++i) {
        double expect;
        if (rewards[i] >= rmax - 1e-9)
          expect = alpha;
        else if (raw[i] > 0.0)
          expect = alpha * raw[i];
        else
          expect = raw[i];
        if (std::abs(amp[i] - expect) > 1e-12)
          return {false, "amplify branch mismatch on case " +
                             std::to_string(cases) + " member " +
                             std::to_string(i)};
      }
      ++cases;
    }
  }
  if (cases != 50) return {false, "expected 50 amplify cases"};

  // Pivot masks for every (k_pivot, K) with K <= 12.
  for (int k_total = 1; k_total <= 12; ++k_total) {
    for (int pivot = 0; pivot <= k_total; ++pivot) {
      auto m = credit::pivot_mask(pivot, k_total);
      for (int t = 0; t < k_total; ++t) {
        const int expect = pivot == k_total ? 1 : (t < pivot ? 0 : 1);
        if (m.value(t) != expect)
          return {false, "mask mismatch at pivot " + std::to_string(pivot) +
                             " K " + std::to_string(k_total)};
      }
    }
  }
  return {true, "1000 groups normalized exactly; 50 amplify cases branch-"
                "exact; masks exact for K<=12"};
}

// --- criterion 2: gradient correctness --------------------------------------

std::pair<bool, std::string> criterion_gradient_correctness() {
  auto stream = rng::derive(202, "acceptance/grad-fd");
  double worst_rel = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int vocab = 2 + stream.next_below(7);
    policy::ContextKey key{stream.next_below(5), stream.next_below(5),
                           stream.next_below(3),
                           trial % 4 == 0 ? stream.next_below(4)
                                          : policy::kNoGuidance};
    policy::PolicyParams params(vocab);
    auto& z = params.logits_for(key);
    for (auto& v : z) v = 4.0 * stream.next_double() - 2.0;
    const int token = stream.next_below(vocab);
    auto analytic = policy::grad_logprob(params, key, token);
    const double h = 1e-5;
    for (int v = 0; v < vocab; ++v) {
      const double orig = z[v];
      z[v] = orig + h;
      const double up = policy::logprob(params, key, token);
      z[v] = orig - h;
      const double down = policy::logprob(params, key, token);
      z[v] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = std::abs(analytic[v] - numeric) /
                         std::max({std::abs(analytic[v]), std::abs(numeric), 1e-8});
      worst_rel = std::max(worst_rel, rel);
    }
  }
  if (worst_rel >= 1e-5)
    return {false, "finite-difference rel err " + fmt(worst_rel)};

  double worst_identity = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int vocab = 2 + stream.next_below(7);
    policy::ContextKey key{stream.next_below(5), 0, 0};
    policy::PolicyParams params(vocab);
    auto& z = params.logits_for(key);
    for (auto& v : z) v = 6.0 * stream.next_double() - 3.0;
    auto pi = policy::token_distribution(params, key);
    std::vector<double> acc(vocab, 0.0);
    for (int t = 0; t < vocab; ++t) {
      auto g = policy::grad_logprob(params, key, t);
      for (int v = 0; v < vocab; ++v) acc[v] += pi[t] * g[v];
    }
    for (double v : acc) worst_identity = std::max(worst_identity, std::abs(v));
  }
  if (worst_identity >= 1e-10)
    return {false, "score identity residual " + fmt(worst_identity)};
  return {true, "200 keys FD-exact (worst rel " + fmt(worst_rel) +
                    "); score identity residual " + fmt(worst_identity)};
}

// --- shared training bundle for criteria 8, 9, 10, 12 -----------------------

config::RunConfig ordering_config() {
  config::RunConfig cfg;
  cfg.train.algorithm = trainers::Algorithm::r3l;
  cfg.train.learning_rate = 0.2;
  cfg.train.max_iterations = 1000000;
  cfg.budget_env_turns = 6000;  // matched cap for every algorithm
  cfg.environment.lock = {4, 8, 1, env::RewardMode::binary};
  cfg.eval_interval = 10;
  cfg.eval_episodes = 64;
  return cfg;
}

struct OrderingBundle {
  std::vector<runner::RunSummary> full;
  std::vector<double> wo_positive, wo_credit, wo_reflect, grpo;
  bool ready = false;
};

OrderingBundle& ordering_bundle() {
  static OrderingBundle bundle;
  if (bundle.ready) return bundle;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = ordering_config();
    bundle.full.push_back(runner::run_single(cfg, seed));
    auto c2 = cfg;
    c2.train.ablate_positive = true;
    bundle.wo_positive.push_back(runner::run_single(c2, seed).final_eval);
    auto c3 = cfg;
    c3.train.ablate_credit = true;
    bundle.wo_credit.push_back(runner::run_single(c3, seed).final_eval);
    auto c4 = cfg;
    c4.train.ablate_reflect = true;
    bundle.wo_reflect.push_back(runner::run_single(c4, seed).final_eval);
    auto c5 = cfg;
    c5.train.algorithm = trainers::Algorithm::grpo;
    bundle.grpo.push_back(runner::run_single(c5, seed).final_eval);
  }
  bundle.ready = true;
  return bundle;
}

std::pair<bool, std::string> criterion_end_to_end_ordering() {
  auto& b = ordering_bundle();
  std::vector<double> full_evals;
  for (const auto& s : b.full) full_evals.push_back(s.final_eval);
  const double med_full = median(full_evals);
  const double med_grpo = median(b.grpo);
  const double med_pos = median(b.wo_positive);
  const double med_credit = median(b.wo_credit);
  const double med_reflect = median(b.wo_reflect);
  const bool beats_grpo = med_full >= med_grpo + 0.05;
  const bool absolute = med_full >= 0.9;
  const bool ablations_below =
      med_pos <= med_full && med_credit <= med_full && med_reflect <= med_full;
  const bool reflect_worst =
      med_reflect <= med_pos && med_reflect <= med_credit;
  const std::string detail =
      "medians: r3l=" + fmt(med_full) + " grpo=" + fmt(med_grpo) +
      " w/oPositive=" + fmt(med_pos) + " w/oCredit=" + fmt(med_credit) +
      " w/oReflect=" + fmt(med_reflect);
  return {beats_grpo && absolute && ablations_below && reflect_worst, detail};
}

std::pair<bool, std::string> criterion_sustained_rir() {
  auto& b = ordering_bundle();
  long defined = 0;
  for (const auto& s : b.full) {
    bool any = false;
    for (std::size_t i = 50; i < s.rir_windowed.size(); ++i) {
      if (!s.rir_windowed[i].has_value()) continue;
      ++defined;
      any = true;
      if (*s.rir_windowed[i] <= 0.0)
        return {false, "nonpositive RIR window at step " +
                           std::to_string(i + 1) + " (seed " +
                           std::to_string(s.seed) + ")"};
    }
    if (!any)
      return {false, "no defined RIR windows after step 50 for seed " +
                         std::to_string(s.seed)};
  }
  return {true, std::to_string(defined) +
                    " windows after step 50, all strictly positive"};
}

std::pair<bool, std::string> criterion_pivot_trend() {
  auto& b = ordering_bundle();
  std::vector<double> trends;
  std::string detail = "spearman:";
  for (const auto& s : b.full) {
    if (!s.pivot_trend)
      return {false, "fewer than 20 pivot windows for seed " +
                         std::to_string(s.seed)};
    trends.push_back(*s.pivot_trend);
    detail += " " + fmt(*s.pivot_trend);
  }
  return {median(trends) > 0.0, detail};
}

std::pair<bool, std::string> criterion_budget_accounting() {
  auto& b = ordering_bundle();
  const long cap = ordering_config().train.group_size *
                   ordering_config().environment.lock.num_locks;
  long strict = 0, total = 0;
  for (const auto& s : b.full) {
    for (std::size_t i = 0; i < s.group_turns.size(); ++i) {
      ++total;
      if (s.group_turns[i] > cap)
        return {false, "group exceeded N*K at step " + std::to_string(i + 1)};
      if (s.group_mean_pivot[i] > 0.0) {
        if (s.group_turns[i] >= cap)
          return {false, "group with positive mean pivot consumed N*K at step " +
                             std::to_string(i + 1)};
        ++strict;
      }
    }
  }
  return {true, std::to_string(total) + " groups <= N*K; " +
                    std::to_string(strict) +
                    " groups with mean pivot > 0 all strictly below"};
}

// --- criterion 11: sync-interval experiment ---------------------------------

std::pair<bool, std::string> criterion_sync_experiment() {
  // Fraction-reward LockChain where OPMD learns at S=1. Tabular OPMD keeps
  // its reward even at S=10 (per-key signals stay sign-correct), so the
  // criterion's drift branch applies: max update KL beyond the documented
  // threshold of 0.1 nats marks the off-policy risk.
  const double kl_threshold = 0.1;
  auto run = [&](trainers::Algorithm alg, int sync,
                 std::vector<double>& finals, std::vector<double>& kls) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      config::RunConfig cfg;
      cfg.train.algorithm = alg;
      cfg.train.learning_rate = 2.0;
      cfg.train.sync_interval = sync;
      cfg.train.max_iterations = 800;
      cfg.environment.lock = {4, 8, 1, env::RewardMode::fraction};
      cfg.eval_episodes = 64;
      auto s = runner::run_single(cfg, seed);
      finals.push_back(s.final_eval);
      kls.push_back(s.max_update_kl);
    }
  };
  std::vector<double> r3l_medians;
  for (int sync : {1, 5, 10}) {
    std::vector<double> finals, kls;
    run(trainers::Algorithm::r3l, sync, finals, kls);
    r3l_medians.push_back(median(finals));
  }
  const double r3l_range =
      *std::max_element(r3l_medians.begin(), r3l_medians.end()) -
      *std::min_element(r3l_medians.begin(), r3l_medians.end());

  std::vector<double> opmd_s1, opmd_s1_kl, opmd_s10, opmd_s10_kl;
  run(trainers::Algorithm::opmd, 1, opmd_s1, opmd_s1_kl);
  run(trainers::Algorithm::opmd, 10, opmd_s10, opmd_s10_kl);
  const double reward_drop = median(opmd_s1) - median(opmd_s10);
  const double opmd_kl10 = median(opmd_s10_kl);
  const bool opmd_flagged = reward_drop >= 0.3 || opmd_kl10 >= kl_threshold;
  const std::string detail =
      "r3l median range across S=" + fmt(r3l_range) +
      "; opmd reward drop S1->S10=" + fmt(reward_drop) +
      ", opmd update-KL S10=" + fmt(opmd_kl10) + " vs S1=" +
      fmt(median(opmd_s1_kl)) + " (threshold " + fmt(kl_threshold) + ")";
  return {r3l_range <= 0.1 && opmd_flagged, detail};
}

// --- criterion 13: determinism ----------------------------------------------

std::pair<bool, std::string> criterion_determinism() {
  auto cfg = ordering_config();
  cfg.budget_env_turns = 1600;
  auto root = fs::temp_directory_path() / "r3lab_acceptance_determinism";
  fs::remove_all(root);
  runner::run_single(cfg, 7, (root / "a").string());
  runner::run_single(cfg, 7, (root / "b").string());
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const auto a = slurp(root / "a" / "metrics.jsonl");
  const auto b = slurp(root / "b" / "metrics.jsonl");
  const bool same = !a.empty() && a == b;
  fs::remove_all(root);
  return {same, same ? "metrics JSONL byte-identical across repeated runs"
                     : "metrics files differ"};
}

}  // namespace

int main() {
  std::printf("acceptance suite\n================\n");

  run_criterion(1, "equation exactness", criterion_equation_exactness);
  run_criterion(2, "gradient correctness", criterion_gradient_correctness);
  run_criterion(3, "oracle equivalence", [] {
    auto r = verify::check_oracle_equivalence(100000);
    return std::make_pair(r.pass, r.detail);
  });
  run_criterion(4, "variance reduction bound", [] {
    auto r = verify::check_variance_reduction(10000);
    return std::make_pair(r.pass, r.detail);
  });
  run_criterion(5, "gradient dominance", [] {
    auto r = verify::check_gradient_dominance();
    return std::make_pair(r.pass, r.detail);
  });
  run_criterion(6, "covariance structure", [] {
    auto r = verify::check_covariance(10000);
    return std::make_pair(r.pass, r.detail);
  });
  run_criterion(7, "entropy collapse probe", [] {
    auto r = verify::check_entropy_collapse();
    return std::make_pair(r.pass, r.detail);
  });
  run_criterion(8, "end-to-end ordering", criterion_end_to_end_ordering);
  run_criterion(9, "sustained retry improvement", criterion_sustained_rir);
  run_criterion(10, "pivot trend", criterion_pivot_trend);
  run_criterion(11, "sync-interval experiment", criterion_sync_experiment);
  run_criterion(12, "budget accounting", criterion_budget_accounting);
  run_criterion(13, "determinism", criterion_determinism);

  // Runtime caps stated with the criteria.
  struct Cap {
    int id;
    double seconds;
  };
  const std::vector<Cap> caps = {{1, 5.0}, {3, 60.0}, {7, 120.0}, {8, 300.0}};
  bool all = true;
  for (const auto& c : g_results) all = all && c.pass;
  for (const auto& cap : caps) {
    for (const auto& c : g_results) {
      if (c.id != cap.id) continue;
      const bool ok = c.seconds <= cap.seconds;
      if (!ok)
        std::printf("[FAIL] criterion %d exceeded its runtime cap (%.2fs > %.0fs)\n",
                    cap.id, c.seconds, cap.seconds);
      all = all && ok;
    }
  }
  std::printf("================\n%s\n",
              all ? "acceptance: ALL CRITERIA PASSED"
                  : "acceptance: FAILURES PRESENT");
  return all ? 0 : 1;
}
