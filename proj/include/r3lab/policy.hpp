#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "r3lab/env.hpp"
#include "r3lab/rng.hpp"

namespace r3lab::policy {

using env::ConfigError;
using env::UsageError;

// Tabular softmax policy over (state, turn, token position, guidance) keys.
// Unseen keys read as all-zero logits, i.e. uniform.

constexpr int kNoGuidance = -1;

struct ContextKey {
  int state_token = 0;
  int turn_index = 0;
  int token_position = 0;
  int guidance_tag = kNoGuidance;  // keys with and without a tag are distinct

  auto operator<=>(const ContextKey&) const = default;
};

inline ContextKey key_for(const env::Observation& obs, int token_position,
                          int guidance_tag = kNoGuidance) {
  return ContextKey{obs.state_token, obs.turn_index, token_position,
                    guidance_tag};
}

struct PolicyParams {
  int vocab = 0;
  std::map<ContextKey, std::vector<double>> logits;

  explicit PolicyParams(int v = 0) : vocab(v) {}

  const std::vector<double>* find(const ContextKey& key) const {
    auto it = logits.find(key);
    return it == logits.end() ? nullptr : &it->second;
  }

  std::vector<double>& logits_for(const ContextKey& key) {
    auto it = logits.find(key);
    if (it == logits.end())
      it = logits.emplace(key, std::vector<double>(vocab, 0.0)).first;
    return it->second;
  }
};

inline std::vector<double> softmax(const std::vector<double>& z,
                                   double temperature = 1.0) {
  const double inv_t = 1.0 / temperature;
  double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp((z[i] - zmax) * inv_t);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

inline std::vector<double> token_distribution(const PolicyParams& params,
                                              const ContextKey& key,
                                              double temperature = 1.0) {
  if (!(temperature > 0.0))
    throw ConfigError("token_distribution: temperature must be > 0");
  if (const auto* z = params.find(key)) return softmax(*z, temperature);
  return std::vector<double>(params.vocab, 1.0 / params.vocab);
}

inline double logprob(const PolicyParams& params, const ContextKey& key,
                      int token) {
  if (token < 0 || token >= params.vocab)
    throw UsageError("logprob: token out of range");
  const auto* z = params.find(key);
  if (!z) return -std::log(static_cast<double>(params.vocab));
  double zmax = *std::max_element(z->begin(), z->end());
  double sum = 0.0;
  for (double v : *z) sum += std::exp(v - zmax);
  return (*z)[token] - zmax - std::log(sum);
}

// d log pi(token | key) / d logits[key] = onehot(token) - softmax(logits).
inline std::vector<double> grad_logprob(const PolicyParams& params,
                                        const ContextKey& key, int token) {
  if (token < 0 || token >= params.vocab)
    throw UsageError("grad_logprob: token out of range");
  std::vector<double> g = token_distribution(params, key);
  for (auto& v : g) v = -v;
  g[token] += 1.0;
  return g;
}

inline double entropy(const PolicyParams& params, const ContextKey& key) {
  auto p = token_distribution(params, key);
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline double entropy_of(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// Exact KL(p_key || q_key) between two parameter tables at one key.
inline double kl_at_key(const PolicyParams& p, const PolicyParams& q,
                        const ContextKey& key) {
  auto pd = token_distribution(p, key);
  auto qd = token_distribution(q, key);
  double kl = 0.0;
  for (std::size_t i = 0; i < pd.size(); ++i)
    if (pd[i] > 0.0) kl += pd[i] * (std::log(pd[i]) - std::log(qd[i]));
  return kl;
}

// Retry-time conditioning: mixture of the policy distribution with an
// explicit guidance distribution. Sampling-only; never part of any
// training-loss likelihood.
inline std::vector<double> guided_distribution(const PolicyParams& params,
                                               const ContextKey& key,
                                               const std::vector<double>& guidance,
                                               double lambda,
                                               double temperature = 1.0) {
  if (lambda < 0.0 || lambda > 1.0)
    throw ConfigError("guided_distribution: lambda must be in [0, 1]");
  if (static_cast<int>(guidance.size()) != params.vocab)
    throw UsageError("guided_distribution: guidance size != vocab");
  double sum = 0.0;
  for (double g : guidance) {
    if (g < 0.0) throw UsageError("guided_distribution: negative guidance mass");
    sum += g;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw UsageError("guided_distribution: guidance must sum to 1");
  auto p = token_distribution(params, key, temperature);
  for (std::size_t i = 0; i < p.size(); ++i)
    p[i] = (1.0 - lambda) * p[i] + lambda * guidance[i];
  return p;
}

inline int sample_token(const std::vector<double>& dist, rng::Stream& stream) {
  return stream.categorical(dist);
}

// Draw tokens_per_turn tokens sequentially, advancing token_position in the
// key. Deterministic given the stream state.
inline env::TurnResponse sample_turn(const PolicyParams& params,
                                     ContextKey key_base, int tokens_per_turn,
                                     double temperature, rng::Stream& stream) {
  env::TurnResponse out;
  out.reserve(static_cast<std::size_t>(tokens_per_turn));
  for (int pos = 0; pos < tokens_per_turn; ++pos) {
    key_base.token_position = pos;
    auto dist = token_distribution(params, key_base, temperature);
    out.push_back(sample_token(dist, stream));
  }
  return out;
}

struct PolicySet {
  PolicyParams learner;
  PolicyParams behavior;
  PolicyParams reference;  // frozen after initialization

  explicit PolicySet(int vocab = 0)
      : learner(vocab), behavior(vocab), reference(vocab) {}
};

inline void sync_behavior(PolicySet& set) { set.behavior = set.learner; }

// --- checkpoint format (versioned, line-oriented) --------------------------
//
//   r3lab-policy v1
//   vocab <V>
//   key <state> <turn> <pos> <tag|-> <logit_0> ... <logit_{V-1}>

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void save_params(const PolicyParams& params, std::ostream& os) {
  os << "r3lab-policy v1\n";
  os << "vocab " << params.vocab << "\n";
  for (const auto& [key, z] : params.logits) {
    os << "key " << key.state_token << ' ' << key.turn_index << ' '
       << key.token_position << ' ';
    if (key.guidance_tag == kNoGuidance)
      os << '-';
    else
      os << key.guidance_tag;
    for (double v : z) os << ' ' << format_double(v);
    os << '\n';
  }
}

inline PolicyParams load_params(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "r3lab-policy v1")
    throw ConfigError("policy file: bad or missing version header");
  PolicyParams params;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "vocab") {
      ss >> params.vocab;
    } else if (word == "key") {
      ContextKey key;
      std::string tag;
      ss >> key.state_token >> key.turn_index >> key.token_position >> tag;
      key.guidance_tag = tag == "-" ? kNoGuidance : std::stoi(tag);
      std::vector<double> z(static_cast<std::size_t>(params.vocab));
      for (auto& v : z) ss >> v;
      if (!ss) throw ConfigError("policy file: truncated key line");
      params.logits.emplace(key, std::move(z));
    } else {
      throw ConfigError("policy file: unknown record '" + word + "'");
    }
  }
  return params;
}

inline void save_params_file(const PolicyParams& params,
                             const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open for write: " + path);
  save_params(params, f);
}

inline PolicyParams load_params_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open for read: " + path);
  return load_params(f);
}

}  // namespace r3lab::policy
