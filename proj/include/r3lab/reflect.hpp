#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "r3lab/env.hpp"
#include "r3lab/policy.hpp"

namespace r3lab::reflect {

// Learned reflection and retry skills at toy scale. The reflector is a
// per-turn linear scorer over feedback codes plus a position prior, softmaxed
// over pivot candidates {0..K-1} and K (no failure). The guidance offset is
// an additive logit table keyed by guidance tag, applied to guided keys only.

struct ReflectExample {
  std::vector<env::Feedback> feedback;  // one code per turn
  int pivot_label = 0;                  // oracle pivot; K means no failure
};

struct RetryExample {
  // Guided (key, token) pairs of a verified corrected suffix; every key
  // carries a guidance tag.
  std::vector<std::pair<policy::ContextKey, int>> tokens;
};

struct LearnedReflector {
  // Score of "turn k is the pivot" = position_prior[k] + feedback_weight[code
  // at k]; candidate K scores position_prior[K] alone.
  std::vector<double> feedback_weight = std::vector<double>(3, 0.0);
  std::vector<double> position_prior;  // size K + 1

  explicit LearnedReflector(int num_turns = 0)
      : position_prior(static_cast<std::size_t>(num_turns) + 1, 0.0) {}

  int num_turns() const { return static_cast<int>(position_prior.size()) - 1; }
};

inline std::vector<double> predict_pivot(const LearnedReflector& r,
                                         const std::vector<env::Feedback>& feedback) {
  const int k = r.num_turns();
  std::vector<double> scores(static_cast<std::size_t>(k) + 1);
  for (int i = 0; i < k; ++i)
    scores[i] = r.position_prior[i] +
                r.feedback_weight[static_cast<int>(feedback[i])];
  scores[k] = r.position_prior[k];
  return policy::softmax(scores);
}

inline int predict_pivot_argmax(const LearnedReflector& r,
                                const std::vector<env::Feedback>& feedback) {
  auto p = predict_pivot(r, feedback);
  int best = 0;
  for (int i = 1; i < static_cast<int>(p.size()); ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

// One full-batch cross-entropy step on the pivot labels. Returns the mean
// loss before the update; empty input is a no-op with loss 0.
inline double train_reflector(LearnedReflector& r,
                              const std::vector<ReflectExample>& examples,
                              double learning_rate) {
  if (examples.empty()) return 0.0;
  const int k = r.num_turns();
  std::vector<double> grad_prior(r.position_prior.size(), 0.0);
  std::vector<double> grad_fb(r.feedback_weight.size(), 0.0);
  double loss = 0.0;
  for (const auto& ex : examples) {
    auto p = predict_pivot(r, ex.feedback);
    loss -= std::log(std::max(p[ex.pivot_label], 1e-300));
    for (int i = 0; i <= k; ++i) {
      const double d = p[i] - (i == ex.pivot_label ? 1.0 : 0.0);
      grad_prior[i] += d;
      if (i < k) grad_fb[static_cast<int>(ex.feedback[i])] += d;
    }
  }
  const double scale = learning_rate / static_cast<double>(examples.size());
  for (std::size_t i = 0; i < grad_prior.size(); ++i)
    r.position_prior[i] -= scale * grad_prior[i];
  for (std::size_t i = 0; i < grad_fb.size(); ++i)
    r.feedback_weight[i] -= scale * grad_fb[i];
  return loss / static_cast<double>(examples.size());
}

struct GuidanceOffset {
  int vocab = 0;
  std::map<int, std::vector<double>> by_tag;

  explicit GuidanceOffset(int v = 0) : vocab(v) {}

  const std::vector<double>* find(int tag) const {
    auto it = by_tag.find(tag);
    return it == by_tag.end() ? nullptr : &it->second;
  }

  std::vector<double>& offsets_for(int tag) {
    auto it = by_tag.find(tag);
    if (it == by_tag.end())
      it = by_tag.emplace(tag, std::vector<double>(vocab, 0.0)).first;
    return it->second;
  }
};

// Distribution at a guided key with the learned offset added to the logits.
// Unguided keys are untouched by construction.
inline std::vector<double> offset_distribution(const policy::PolicyParams& params,
                                               const GuidanceOffset& offset,
                                               const policy::ContextKey& key,
                                               double temperature = 1.0) {
  std::vector<double> z(static_cast<std::size_t>(params.vocab), 0.0);
  if (const auto* base = params.find(key)) z = *base;
  if (key.guidance_tag != policy::kNoGuidance) {
    if (const auto* o = offset.find(key.guidance_tag))
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += (*o)[i];
  }
  return policy::softmax(z, temperature);
}

// One NLL step on the offset table (policy logits held fixed). Returns the
// mean per-token loss before the update.
inline double train_offset(GuidanceOffset& offset,
                           const policy::PolicyParams& params,
                           const std::vector<RetryExample>& examples,
                           double learning_rate) {
  std::size_t count = 0;
  for (const auto& ex : examples) count += ex.tokens.size();
  if (count == 0) return 0.0;
  std::map<int, std::vector<double>> grads;
  double loss = 0.0;
  for (const auto& ex : examples) {
    for (const auto& [key, token] : ex.tokens) {
      auto p = offset_distribution(params, offset, key);
      loss -= std::log(std::max(p[token], 1e-300));
      auto& g = grads.try_emplace(key.guidance_tag,
                                  std::vector<double>(offset.vocab, 0.0))
                    .first->second;
      for (int v = 0; v < offset.vocab; ++v)
        g[v] += p[v] - (v == token ? 1.0 : 0.0);
    }
  }
  const double scale = learning_rate / static_cast<double>(count);
  for (auto& [tag, g] : grads) {
    auto& o = offset.offsets_for(tag);
    for (int v = 0; v < offset.vocab; ++v) o[v] -= scale * g[v];
  }
  return loss / static_cast<double>(count);
}

}  // namespace r3lab::reflect
