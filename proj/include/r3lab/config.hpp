#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "r3lab/env.hpp"
#include "r3lab/rng.hpp"
#include "r3lab/trainers.hpp"

namespace r3lab::config {

using env::ConfigError;

// Experiment configuration: flat `key = value` lines with dotted section
// names, `#` comments, and command-line overrides of the same shape. Every
// output references the canonical serialization by content hash.
struct RunConfig {
  trainers::TrainConfig train;
  env::EnvSpec environment;
  std::uint64_t master_seed = 1;
  std::vector<std::uint64_t> seeds;  // empty: just the master seed
  long budget_env_turns = 0;         // 0: run train.max_iterations steps
  int eval_interval = 10;
  int eval_episodes = 64;
  int checkpoint_interval = 0;  // 0: final checkpoint only
  bool early_stop = false;      // reward-plateau rule
  bool dump_trajectories = false;

  std::vector<std::uint64_t> seed_list() const {
    return seeds.empty() ? std::vector<std::uint64_t>{master_seed} : seeds;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

inline double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline long parse_long(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    long n = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    std::size_t used = 0;
    unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an unsigned integer, got '" +
                      v + "'");
  }
}

}  // namespace detail

inline void apply_key(RunConfig& cfg, const std::string& key,
                      const std::string& value) {
  using namespace detail;
  auto& t = cfg.train;
  auto& e = cfg.environment;
  if (key == "algorithm") {
    if (value == "grpo") t.algorithm = trainers::Algorithm::grpo;
    else if (value == "opmd") t.algorithm = trainers::Algorithm::opmd;
    else if (value == "gspo") t.algorithm = trainers::Algorithm::gspo;
    else if (value == "raft") t.algorithm = trainers::Algorithm::raft;
    else if (value == "r3l") t.algorithm = trainers::Algorithm::r3l;
    else if (value == "reflect_grpo") t.algorithm = trainers::Algorithm::reflect_grpo;
    else throw ConfigError("unknown algorithm '" + value + "'");
  } else if (key == "master_seed") {
    cfg.master_seed = parse_u64(value, key);
  } else if (key == "seeds") {
    cfg.seeds.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) cfg.seeds.push_back(parse_u64(item, key));
    }
  } else if (key == "budget_env_turns") {
    cfg.budget_env_turns = parse_long(value, key);
  } else if (key == "eval_interval") {
    cfg.eval_interval = static_cast<int>(parse_long(value, key));
  } else if (key == "eval_episodes") {
    cfg.eval_episodes = static_cast<int>(parse_long(value, key));
  } else if (key == "checkpoint_interval") {
    cfg.checkpoint_interval = static_cast<int>(parse_long(value, key));
  } else if (key == "early_stop") {
    cfg.early_stop = parse_bool(value, key);
  } else if (key == "dump_trajectories") {
    cfg.dump_trajectories = parse_bool(value, key);
  } else if (key == "env.family") {
    if (value == "lock_chain") e.family = env::Family::lock_chain;
    else if (value == "hard_bandit") e.family = env::Family::hard_bandit;
    else throw ConfigError("unknown env.family '" + value + "'");
  } else if (key == "env.num_locks") {
    e.lock.num_locks = static_cast<int>(parse_long(value, key));
  } else if (key == "env.vocab") {
    e.lock.vocab = static_cast<int>(parse_long(value, key));
    e.bandit.vocab = e.lock.vocab;
  } else if (key == "env.tokens_per_turn") {
    e.lock.tokens_per_turn = static_cast<int>(parse_long(value, key));
  } else if (key == "env.reward_mode") {
    if (value == "binary") e.lock.reward_mode = env::RewardMode::binary;
    else if (value == "fraction") e.lock.reward_mode = env::RewardMode::fraction;
    else throw ConfigError("unknown env.reward_mode '" + value + "'");
  } else if (key == "env.good_arm") {
    e.bandit.good_arm = static_cast<int>(parse_long(value, key));
  } else if (key == "train.group_size") {
    t.group_size = static_cast<int>(parse_long(value, key));
  } else if (key == "train.alpha") {
    t.alpha = parse_double(value, key);
  } else if (key == "train.amplify_max_mode") {
    if (value == "alpha") t.amplify_max_mode = credit::AmplifyMaxMode::alpha;
    else if (value == "one") t.amplify_max_mode = credit::AmplifyMaxMode::one;
    else throw ConfigError("unknown train.amplify_max_mode '" + value + "'");
  } else if (key == "train.sync_interval") {
    t.sync_interval = static_cast<int>(parse_long(value, key));
  } else if (key == "train.learning_rate") {
    t.learning_rate = parse_double(value, key);
  } else if (key == "train.clip_epsilon") {
    t.clip_epsilon = parse_double(value, key);
  } else if (key == "train.kl_beta") {
    t.kl_beta = parse_double(value, key);
  } else if (key == "train.gspo_clip_low") {
    t.gspo_clip_low = parse_double(value, key);
  } else if (key == "train.gspo_clip_high") {
    t.gspo_clip_high = parse_double(value, key);
  } else if (key == "train.guidance_lambda") {
    t.guidance_lambda = parse_double(value, key);
  } else if (key == "train.guidance_scope") {
    if (value == "pivot_only") t.guidance_scope = rollout::GuidanceScope::pivot_only;
    else if (value == "all_remaining")
      t.guidance_scope = rollout::GuidanceScope::all_remaining;
    else throw ConfigError("unknown train.guidance_scope '" + value + "'");
  } else if (key == "train.retry_conditioning") {
    if (value == "mixture")
      t.retry_conditioning = rollout::RetryConditioning::mixture;
    else if (value == "learned_offset")
      t.retry_conditioning = rollout::RetryConditioning::learned_offset;
    else throw ConfigError("unknown train.retry_conditioning '" + value + "'");
  } else if (key == "train.reflector_mode") {
    if (value == "oracle") t.reflector_mode = rollout::ReflectorMode::oracle;
    else if (value == "noisy") t.reflector_mode = rollout::ReflectorMode::noisy;
    else if (value == "learned") t.reflector_mode = rollout::ReflectorMode::learned;
    else throw ConfigError("unknown train.reflector_mode '" + value + "'");
  } else if (key == "train.reflector_accuracy") {
    t.reflector_accuracy = parse_double(value, key);
  } else if (key == "train.train_temperature") {
    t.train_temperature = parse_double(value, key);
  } else if (key == "train.eval_temperature") {
    t.eval_temperature = parse_double(value, key);
  } else if (key == "train.reflect_temperature") {
    t.reflect_temperature = parse_double(value, key);
  } else if (key == "train.normalize") {
    if (value == "all_tokens") t.normalize = trainers::NormalizeMode::all_tokens;
    else if (value == "unmasked_tokens")
      t.normalize = trainers::NormalizeMode::unmasked_tokens;
    else throw ConfigError("unknown train.normalize '" + value + "'");
  } else if (key == "train.max_iterations") {
    t.max_iterations = static_cast<int>(parse_long(value, key));
  } else if (key == "train.replay") {
    if (value == "off") t.replay = trainers::ReplayMode::off;
    else if (value == "recency") t.replay = trainers::ReplayMode::recency;
    else throw ConfigError("unknown train.replay '" + value + "'");
  } else if (key == "train.replay_weight") {
    t.replay_weight = parse_double(value, key);
  } else if (key == "train.replay_capacity") {
    t.replay_capacity = static_cast<int>(parse_long(value, key));
  } else if (key == "train.sft_weight") {
    t.sft_weight = parse_double(value, key);
  } else if (key == "train.reflector_lr") {
    t.reflector_lr = parse_double(value, key);
  } else if (key == "train.use_adam") {
    t.use_adam = parse_bool(value, key);
  } else if (key == "train.ablate_positive") {
    t.ablate_positive = parse_bool(value, key);
  } else if (key == "train.ablate_credit") {
    t.ablate_credit = parse_bool(value, key);
  } else if (key == "train.ablate_reflect") {
    t.ablate_reflect = parse_bool(value, key);
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

// Parses `key = value` text; errors carry the offending line number.
inline RunConfig parse_text(const std::string& text,
                            const RunConfig& base = RunConfig{}) {
  RunConfig cfg = base;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    try {
      apply_key(cfg, key, value);
    } catch (const ConfigError& err) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  return cfg;
}

inline RunConfig parse_file(const std::string& path,
                            const RunConfig& base = RunConfig{}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), base);
}

// `--set key=value` override.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "': expected key=value");
  apply_key(cfg, detail::trim(assignment.substr(0, eq)),
            detail::trim(assignment.substr(eq + 1)));
}

inline const char* name_of(trainers::NormalizeMode m) {
  return m == trainers::NormalizeMode::all_tokens ? "all_tokens"
                                                  : "unmasked_tokens";
}

// Canonical serialization: every key in a fixed order. The content hash of
// this text identifies the configuration in all outputs.
inline std::string canonical_text(const RunConfig& cfg) {
  std::ostringstream os;
  const auto& t = cfg.train;
  const auto& e = cfg.environment;
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  os << "algorithm = " << trainers::algorithm_name(t.algorithm) << "\n";
  os << "master_seed = " << cfg.master_seed << "\n";
  os << "seeds = ";
  auto list = cfg.seed_list();
  for (std::size_t i = 0; i < list.size(); ++i)
    os << (i ? "," : "") << list[i];
  os << "\n";
  os << "budget_env_turns = " << cfg.budget_env_turns << "\n";
  os << "eval_interval = " << cfg.eval_interval << "\n";
  os << "eval_episodes = " << cfg.eval_episodes << "\n";
  os << "checkpoint_interval = " << cfg.checkpoint_interval << "\n";
  os << "early_stop = " << (cfg.early_stop ? "on" : "off") << "\n";
  os << "dump_trajectories = " << (cfg.dump_trajectories ? "on" : "off") << "\n";
  os << "env.family = "
     << (e.family == env::Family::lock_chain ? "lock_chain" : "hard_bandit")
     << "\n";
  os << "env.num_locks = " << e.lock.num_locks << "\n";
  os << "env.vocab = " << e.vocab() << "\n";
  os << "env.tokens_per_turn = " << e.lock.tokens_per_turn << "\n";
  os << "env.reward_mode = "
     << (e.lock.reward_mode == env::RewardMode::binary ? "binary" : "fraction")
     << "\n";
  os << "env.good_arm = " << e.bandit.good_arm << "\n";
  os << "train.group_size = " << t.group_size << "\n";
  os << "train.alpha = " << num(t.alpha) << "\n";
  os << "train.amplify_max_mode = "
     << (t.amplify_max_mode == credit::AmplifyMaxMode::alpha ? "alpha" : "one")
     << "\n";
  os << "train.sync_interval = " << t.sync_interval << "\n";
  os << "train.learning_rate = " << num(t.learning_rate) << "\n";
  os << "train.clip_epsilon = " << num(t.clip_epsilon) << "\n";
  os << "train.kl_beta = " << num(t.kl_beta) << "\n";
  os << "train.gspo_clip_low = " << num(t.gspo_clip_low) << "\n";
  os << "train.gspo_clip_high = " << num(t.gspo_clip_high) << "\n";
  os << "train.guidance_lambda = " << num(t.guidance_lambda) << "\n";
  os << "train.guidance_scope = "
     << (t.guidance_scope == rollout::GuidanceScope::pivot_only ? "pivot_only"
                                                                : "all_remaining")
     << "\n";
  os << "train.retry_conditioning = "
     << (t.retry_conditioning == rollout::RetryConditioning::mixture
             ? "mixture"
             : "learned_offset")
     << "\n";
  os << "train.reflector_mode = "
     << (t.reflector_mode == rollout::ReflectorMode::oracle
             ? "oracle"
             : (t.reflector_mode == rollout::ReflectorMode::noisy ? "noisy"
                                                                  : "learned"))
     << "\n";
  os << "train.reflector_accuracy = " << num(t.reflector_accuracy) << "\n";
  os << "train.train_temperature = " << num(t.train_temperature) << "\n";
  os << "train.eval_temperature = " << num(t.eval_temperature) << "\n";
  os << "train.reflect_temperature = " << num(t.reflect_temperature) << "\n";
  os << "train.normalize = " << name_of(t.normalize) << "\n";
  os << "train.max_iterations = " << t.max_iterations << "\n";
  os << "train.replay = "
     << (t.replay == trainers::ReplayMode::off ? "off" : "recency") << "\n";
  os << "train.replay_weight = " << num(t.replay_weight) << "\n";
  os << "train.replay_capacity = " << t.replay_capacity << "\n";
  os << "train.sft_weight = " << num(t.sft_weight) << "\n";
  os << "train.reflector_lr = " << num(t.reflector_lr) << "\n";
  os << "train.use_adam = " << (t.use_adam ? "on" : "off") << "\n";
  os << "train.ablate_positive = " << (t.ablate_positive ? "on" : "off") << "\n";
  os << "train.ablate_credit = " << (t.ablate_credit ? "on" : "off") << "\n";
  os << "train.ablate_reflect = " << (t.ablate_reflect ? "on" : "off") << "\n";
  return os.str();
}

inline std::string content_hash(const RunConfig& cfg) {
  std::uint64_t h = rng::fnv1a(canonical_text(cfg));
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

inline void validate(const RunConfig& cfg) {
  cfg.train.validate();
  env::validate(cfg.environment);
  if (cfg.eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (cfg.eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
}

}  // namespace r3lab::config
