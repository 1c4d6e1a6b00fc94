#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "r3lab/config.hpp"
#include "r3lab/metrics.hpp"
#include "r3lab/reflect.hpp"
#include "r3lab/rollout.hpp"
#include "r3lab/theory.hpp"
#include "r3lab/trainers.hpp"

namespace r3lab::runner {

struct RunSummary {
  std::uint64_t seed = 0;
  long steps = 0;
  long env_turns = 0;
  double final_eval = 0.0;
  double final_train_reward = 0.0;  // trailing-window mean
  bool early_stopped = false;
  double max_update_kl = 0.0;
  double final_ref_kl = 0.0;
  std::optional<double> pivot_trend;          // needs >= 20 windows
  double lyapunov_nonincreasing_fraction = 0.0;
  std::optional<double> reflector_pivot_accuracy;  // over retried pairs
  long amplified_failing_max_groups = 0;  // max branch fired with R_max < 1

  // Per-step traces kept for downstream checks.
  std::vector<long> group_turns;
  std::vector<double> group_mean_pivot;  // -1 when no pair was retried
  std::vector<std::optional<double>> rir_windowed;
  std::vector<double> window_pivot_means;  // one per 10-step window
  std::vector<double> eval_history;
  std::vector<double> reward_history;
};

inline double eval_policy(const env::Instance& inst,
                          const policy::PolicyParams& params, int episodes,
                          double temperature, std::uint64_t seed,
                          std::uint64_t step) {
  double total = 0.0;
  for (int i = 0; i < episodes; ++i) {
    auto stream = rng::derive(seed, "eval", step, static_cast<std::uint64_t>(i));
    total += rollout::sample_episode(inst, params, temperature, stream).reward;
  }
  return total / episodes;
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

namespace detail {

inline double window_mean(const std::deque<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace detail

// One seeded training run of Algorithm-1 (or a baseline). When out_dir is
// nonempty, writes config snapshot, metrics JSONL, wall-clock sidecar,
// checkpoints and a summary under it.
inline RunSummary run_single(const config::RunConfig& cfg, std::uint64_t seed,
                             const std::string& out_dir = "") {
  namespace fs = std::filesystem;
  config::validate(cfg);
  const auto& tc = cfg.train;
  const auto start_time = std::chrono::steady_clock::now();

  std::unique_ptr<metrics::JsonlWriter> writer;
  std::unique_ptr<std::ofstream> traj_dump;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/checkpoints");
    std::ofstream snap(out_dir + "/config.txt");
    snap << "# config_hash " << config::content_hash(cfg) << "\n"
         << "# run_seed " << seed << "\n"
         << config::canonical_text(cfg);
    writer = std::make_unique<metrics::JsonlWriter>(out_dir + "/metrics.jsonl");
    if (cfg.dump_trajectories)
      traj_dump = std::make_unique<std::ofstream>(out_dir + "/trajectories.txt");
  }

  const std::uint64_t instance_seed = rng::derive(seed, "env/instance").next_u64();
  env::Instance inst(cfg.environment, instance_seed);
  const int k = inst.num_turns();
  const int vocab = inst.vocab();

  policy::PolicySet set(vocab);
  reflect::LearnedReflector reflector(k);
  reflect::GuidanceOffset offset(vocab);
  trainers::Optimizer optimizer;
  optimizer.adam = tc.use_adam;
  optimizer.beta1 = tc.adam_beta1;
  optimizer.beta2 = tc.adam_beta2;
  optimizer.eps = tc.adam_eps;

  const bool uses_reflection =
      (tc.algorithm == trainers::Algorithm::r3l ||
       tc.algorithm == trainers::Algorithm::reflect_grpo) &&
      !tc.ablate_reflect;
  const bool replay_active =
      tc.sync_interval > 1 && tc.replay == trainers::ReplayMode::recency;
  trainers::ReplayBuffer buffer(tc.replay_capacity, tc.replay_weight);

  rollout::SynthesisOptions synth_opt;
  synth_opt.group_size = tc.group_size;
  synth_opt.train_temperature = tc.train_temperature;
  synth_opt.reflector_mode = tc.reflector_mode;
  synth_opt.reflector_accuracy = tc.reflector_accuracy;
  synth_opt.retry.lambda = tc.guidance_lambda;
  synth_opt.retry.scope = tc.guidance_scope;
  synth_opt.retry.conditioning = tc.retry_conditioning;
  synth_opt.retry.offset = &offset;
  synth_opt.retry.temperature = tc.train_temperature;
  synth_opt.collect_meta = tc.algorithm == trainers::Algorithm::r3l;

  RunSummary summary;
  summary.seed = seed;
  long accuracy_hits = 0, accuracy_total = 0;
  metrics::PairWindow pair_window(10);
  std::deque<double> reward_window;       // trailing 10 for lyapunov
  std::deque<double> plateau_window;      // trailing 100 for early stop
  std::deque<double> alpha_min_window;    // trailing 10 valid estimates

  for (long step = 1; step <= tc.max_iterations; ++step) {
    if (cfg.budget_env_turns > 0 && summary.env_turns >= cfg.budget_env_turns)
      break;

    rollout::SynthesisResult synth =
        uses_reflection
            ? rollout::synthesize(inst, set.behavior, synth_opt,
                                  &reflector, seed,
                                  static_cast<std::uint64_t>(step))
            : rollout::plain_group(inst, set.behavior, tc.group_size,
                                   tc.train_temperature, seed,
                                   static_cast<std::uint64_t>(step));
    summary.env_turns += synth.env_turns;
    summary.group_turns.push_back(synth.env_turns);
    {
      double sum = 0.0;
      long n = 0;
      for (const auto& p : synth.pairs) {
        if (!p.retried) continue;
        sum += p.pivot;
        ++n;
        ++accuracy_total;
        if (p.pivot == p.oracle_pivot) ++accuracy_hits;
      }
      summary.group_mean_pivot.push_back(n > 0 ? sum / n : -1.0);
    }
    pair_window.push(synth.pairs);
    if (traj_dump) {
      for (const auto& member : synth.group.members)
        *traj_dump << "step " << step << ' '
                   << rollout::dump_trajectory(member) << "\n";
    }

    const rollout::SynthesisResult* train_data = &synth;
    if (replay_active) {
      buffer.push(synth);
      auto replay_stream =
          rng::derive(seed, "replay", static_cast<std::uint64_t>(step));
      train_data = &buffer.sample(replay_stream);
    }

    trainers::StepResult result(vocab);
    switch (tc.algorithm) {
      case trainers::Algorithm::grpo:
      case trainers::Algorithm::reflect_grpo:
        result = trainers::grpo_step(train_data->group, set, tc);
        break;
      case trainers::Algorithm::opmd:
        result = trainers::opmd_step(train_data->group, set, tc);
        break;
      case trainers::Algorithm::gspo:
        result = trainers::gspo_step(train_data->group, set, tc);
        break;
      case trainers::Algorithm::raft:
        result = trainers::raft_step(train_data->group, set, tc);
        break;
      case trainers::Algorithm::r3l:
        result = trainers::r3l_step(train_data->group, train_data->meta, set, tc);
        if (!tc.ablate_positive) {
          // Pure-reinforcement incident: the max branch amplified a group
          // whose best reward is itself a failure.
          double rmax = 0.0;
          for (double r : train_data->group.rewards) rmax = std::max(rmax, r);
          if (rmax < 1.0 - 1e-9) ++summary.amplified_failing_max_groups;
        }
        break;
    }
    optimizer.apply(set, result.grad, tc.learning_rate);

    if (tc.algorithm == trainers::Algorithm::r3l && !tc.ablate_reflect) {
      reflect::train_reflector(reflector, train_data->meta.reflect_examples,
                               tc.reflector_lr);
      reflect::train_offset(offset, set.learner,
                            train_data->meta.retry_examples, tc.reflector_lr);
    }

    auto keys = trainers::visited_keys(train_data->group);
    const double update_kl =
        trainers::mean_kl_over_keys(set.learner, set.behavior, keys);
    summary.max_update_kl = std::max(summary.max_update_kl, update_kl);
    trainers::maybe_sync(set, step, tc.sync_interval);

    double mean_reward = 0.0;
    for (double r : synth.group.rewards) mean_reward += r;
    mean_reward /= synth.group.rewards.size();
    summary.reward_history.push_back(mean_reward);
    reward_window.push_back(mean_reward);
    if (reward_window.size() > 10) reward_window.pop_front();
    plateau_window.push_back(mean_reward);
    if (plateau_window.size() > 100) plateau_window.pop_front();

    if (result.p_positive > 0.0 && result.p_positive < 1.0 &&
        result.mean_pos_adv > 0.0) {
      alpha_min_window.push_back(theory::alpha_min(
          result.p_positive, result.mean_pos_adv, result.mean_neg_adv));
      if (alpha_min_window.size() > 10) alpha_min_window.pop_front();
    }

    metrics::MetricsRecord rec;
    rec.step = step;
    rec.mean_reward = mean_reward;
    rec.entropy_mean = trainers::mean_entropy_over_keys(set.learner, keys);
    rec.ref_kl = result.ref_kl;
    rec.update_kl = update_kl;
    rec.clip_fraction = result.clip_fraction;
    rec.grad_norm = result.grad.l2_norm();
    rec.policy_loss = result.policy_loss;
    rec.sft_loss = result.sft_loss;
    rec.rir = pair_window.rir();
    rec.reward_gain = pair_window.reward_gain();
    rec.mean_pivot = pair_window.mean_pivot();
    rec.p_positive = result.p_positive;
    if (!alpha_min_window.empty())
      rec.alpha_min_running = detail::window_mean(alpha_min_window);
    rec.lyapunov = -detail::window_mean(reward_window);
    if (step % cfg.eval_interval == 0) {
      rec.eval_reward = eval_policy(inst, set.learner, cfg.eval_episodes,
                                    tc.eval_temperature, seed,
                                    static_cast<std::uint64_t>(step));
      summary.eval_history.push_back(*rec.eval_reward);
    }
    summary.rir_windowed.push_back(rec.rir);
    summary.final_ref_kl = rec.ref_kl;
    if (step % 10 == 0 && rec.mean_pivot)
      summary.window_pivot_means.push_back(*rec.mean_pivot);
    if (writer) writer->write(rec);

    if (!out_dir.empty() && cfg.checkpoint_interval > 0 &&
        step % cfg.checkpoint_interval == 0) {
      policy::save_params_file(
          set.learner, out_dir + "/checkpoints/step_" + std::to_string(step) +
                           ".learner.policy");
    }

    summary.steps = step;
    // Plateau rule: relative change of the trailing 50-step mean against the
    // preceding 50-step mean under 1%, evaluated once 100 steps are banked.
    if (cfg.early_stop && plateau_window.size() == 100) {
      double prev = 0.0, now = 0.0;
      for (int i = 0; i < 50; ++i) prev += plateau_window[i];
      for (int i = 50; i < 100; ++i) now += plateau_window[i];
      prev /= 50.0;
      now /= 50.0;
      if (prev > 0.0 && std::abs(now - prev) / prev < 0.01) {
        summary.early_stopped = true;
        break;
      }
    }
  }

  summary.final_eval =
      eval_policy(inst, set.learner, cfg.eval_episodes, tc.eval_temperature,
                  seed, static_cast<std::uint64_t>(summary.steps) + 1000000);
  summary.final_train_reward = detail::window_mean(reward_window);
  if (accuracy_total > 0)
    summary.reflector_pivot_accuracy =
        static_cast<double>(accuracy_hits) / accuracy_total;
  if (summary.window_pivot_means.size() >= 20)
    summary.pivot_trend = metrics::pivot_trend(summary.window_pivot_means);

  // Theorem-4 monitor: fraction of consecutive 50-step windows (after a
  // 100-step warm-up) where the smoothed Lyapunov value -E[R] did not rise.
  {
    const auto& h = summary.reward_history;
    std::vector<double> windows;
    for (std::size_t i = 100; i + 50 <= h.size(); i += 50) {
      double m = 0.0;
      for (std::size_t j = i; j < i + 50; ++j) m += h[j];
      windows.push_back(m / 50.0);
    }
    long ok = 0, total = 0;
    for (std::size_t i = 1; i < windows.size(); ++i) {
      ++total;
      if (-windows[i] <= -windows[i - 1] + 1e-9) ++ok;
    }
    summary.lyapunov_nonincreasing_fraction =
        total > 0 ? static_cast<double>(ok) / total : 1.0;
  }

  if (!out_dir.empty()) {
    policy::save_params_file(set.learner, out_dir + "/checkpoints/final.learner.policy");
    policy::save_params_file(set.behavior, out_dir + "/checkpoints/final.behavior.policy");
    policy::save_params_file(set.reference, out_dir + "/checkpoints/final.reference.policy");
    const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - start_time)
                          .count();
    std::ofstream sidecar(out_dir + "/metrics_sidecar.txt");
    sidecar << "wall_clock_ms = " << wall << "\n";
    std::ofstream sum(out_dir + "/summary.txt");
    sum << "config_hash = " << config::content_hash(cfg) << "\n";
    sum << "algorithm = " << trainers::algorithm_name(tc.algorithm) << "\n";
    sum << "seed = " << seed << "\n";
    sum << "steps = " << summary.steps << "\n";
    sum << "env_turns = " << summary.env_turns << "\n";
    sum << "final_eval = " << metrics::json_number(summary.final_eval) << "\n";
    sum << "final_train_reward = "
        << metrics::json_number(summary.final_train_reward) << "\n";
    sum << "early_stopped = " << (summary.early_stopped ? "yes" : "no") << "\n";
    sum << "early_stop_rule = plateau: relative change of trailing 50-step "
           "reward mean vs previous 50-step mean below 1% over a 100-step "
           "span (enabled: "
        << (cfg.early_stop ? "yes" : "no") << ")\n";
    sum << "max_update_kl = " << metrics::json_number(summary.max_update_kl)
        << "\n";
    sum << "pivot_trend_spearman = "
        << (summary.pivot_trend ? metrics::json_number(*summary.pivot_trend)
                                : std::string("n/a (fewer than 20 windows)"))
        << "\n";
    sum << "lyapunov_nonincreasing_fraction = "
        << metrics::json_number(summary.lyapunov_nonincreasing_fraction)
        << "\n";
    sum << "reflector_pivot_accuracy = "
        << (summary.reflector_pivot_accuracy
                ? metrics::json_number(*summary.reflector_pivot_accuracy)
                : std::string("n/a (no retried pairs)"))
        << "\n";
    sum << "amplified_failing_max_groups = "
        << summary.amplified_failing_max_groups << "\n";
  }
  return summary;
}

struct AggregateSummary {
  std::vector<RunSummary> runs;
  double median_final_eval = 0.0;
  double median_final_train = 0.0;
};

// Executes the configured seed list; per-seed outputs land in seed_<n>/
// subdirectories when an output root is given.
inline AggregateSummary run_all(const config::RunConfig& cfg,
                                const std::string& out_root = "") {
  AggregateSummary agg;
  std::vector<double> evals, trains;
  for (auto seed : cfg.seed_list()) {
    const std::string dir =
        out_root.empty() ? "" : out_root + "/seed_" + std::to_string(seed);
    auto s = run_single(cfg, seed, dir);
    evals.push_back(s.final_eval);
    trains.push_back(s.final_train_reward);
    agg.runs.push_back(std::move(s));
  }
  agg.median_final_eval = median(evals);
  agg.median_final_train = median(trains);
  if (!out_root.empty()) {
    std::ofstream sum(out_root + "/summary.txt");
    sum << "config_hash = " << config::content_hash(cfg) << "\n";
    sum << "algorithm = " << trainers::algorithm_name(cfg.train.algorithm)
        << "\n";
    sum << "runs = " << agg.runs.size() << "\n";
    sum << "median_final_eval = "
        << metrics::json_number(agg.median_final_eval) << "\n";
    sum << "median_final_train_reward = "
        << metrics::json_number(agg.median_final_train) << "\n";
    for (const auto& r : agg.runs)
      sum << "seed_" << r.seed << "_final_eval = "
          << metrics::json_number(r.final_eval) << "\n";
  }
  return agg;
}

}  // namespace r3lab::runner
