#include <cmath>

#include "doctest.h"

#include "r3lab/reflect.hpp"
#include "r3lab/rng.hpp"

using namespace r3lab;
using env::Feedback;

namespace {

// Oracle pivot of a feedback sequence on LockChain: first wrong turn, or K.
int feedback_pivot(const std::vector<Feedback>& f) {
  for (std::size_t i = 0; i < f.size(); ++i)
    if (f[i] == Feedback::lock_wrong) return static_cast<int>(i);
  return static_cast<int>(f.size());
}

std::vector<Feedback> random_feedback(int k, rng::Stream& stream) {
  std::vector<Feedback> f(static_cast<std::size_t>(k));
  for (auto& c : f)
    c = stream.next_below(3) == 0 ? Feedback::lock_wrong : Feedback::lock_ok;
  return f;
}

}  // namespace

TEST_CASE("untrained reflector is near-uniform over candidates") {
  reflect::LearnedReflector r(4);
  auto p = reflect::predict_pivot(
      r, {Feedback::lock_ok, Feedback::lock_wrong, Feedback::lock_ok,
          Feedback::lock_wrong});
  REQUIRE(p.size() == 5);
  for (double v : p) CHECK(v == doctest::Approx(0.2));
}

TEST_CASE("reflector training: loss strictly decreases on a repeated example") {
  reflect::LearnedReflector r(3);
  reflect::ReflectExample ex;
  ex.feedback = {Feedback::lock_ok, Feedback::lock_wrong, Feedback::lock_wrong};
  ex.pivot_label = 1;
  double prev = 1e9;
  for (int step = 0; step < 100; ++step) {
    double loss = reflect::train_reflector(r, {ex}, 0.1);
    CHECK(loss < prev);
    prev = loss;
  }
  CHECK(reflect::predict_pivot_argmax(r, ex.feedback) == 1);
}

TEST_CASE("reflector training: empty input is a no-op with zero loss") {
  reflect::LearnedReflector r(3);
  auto before = r;
  CHECK(reflect::train_reflector(r, {}, 0.1) == 0.0);
  CHECK(r.position_prior == before.position_prior);
  CHECK(r.feedback_weight == before.feedback_weight);
}

TEST_CASE("reflector reaches >0.9 held-out pivot accuracy on lock-chain feedback") {
  // Feedback codes determine the pivot exactly on LockChain, so a trained
  // reflector should recover it nearly always.
  const int k = 4;
  reflect::LearnedReflector r(k);
  auto stream = rng::derive(42, "test/reflector-train");
  std::vector<reflect::ReflectExample> batch;
  for (int step = 0; step < 400; ++step) {
    batch.clear();
    for (int i = 0; i < 16; ++i) {
      reflect::ReflectExample ex;
      ex.feedback = random_feedback(k, stream);
      ex.pivot_label = feedback_pivot(ex.feedback);
      batch.push_back(std::move(ex));
    }
    reflect::train_reflector(r, batch, 0.5);
  }
  auto held_out = rng::derive(43, "test/reflector-eval");
  int correct = 0;
  const int trials = 500;
  for (int i = 0; i < trials; ++i) {
    auto f = random_feedback(k, held_out);
    if (reflect::predict_pivot_argmax(r, f) == feedback_pivot(f)) ++correct;
  }
  CHECK(static_cast<double>(correct) / trials > 0.9);

  // Fully successful feedback concentrates on the no-failure candidate K.
  auto p = reflect::predict_pivot(
      r, {Feedback::lock_ok, Feedback::lock_ok, Feedback::lock_ok,
          Feedback::lock_ok});
  int best = 0;
  for (int i = 1; i <= k; ++i)
    if (p[i] > p[best]) best = i;
  CHECK(best == k);
}

TEST_CASE("guidance offset: training raises the guided logprob monotonically") {
  policy::PolicyParams params(4);
  reflect::GuidanceOffset offset(4);
  policy::ContextKey guided{2, 2, 0, 2};
  reflect::RetryExample ex;
  ex.tokens = {{guided, 3}};
  double prev = -1e9;
  for (int step = 0; step < 50; ++step) {
    reflect::train_offset(offset, params, {ex}, 0.25);
    auto p = reflect::offset_distribution(params, offset, guided);
    CHECK(std::log(p[3]) > prev);
    prev = std::log(p[3]);
  }
  CHECK(prev > std::log(0.25));
}

TEST_CASE("guidance offset: zero examples change nothing; unguided keys untouched") {
  policy::PolicyParams params(3);
  params.logits_for({0, 0, 0, policy::kNoGuidance}) = {0.5, -0.5, 0.0};
  reflect::GuidanceOffset offset(3);
  CHECK(reflect::train_offset(offset, params, {}, 0.1) == 0.0);
  CHECK(offset.by_tag.empty());

  reflect::RetryExample ex;
  ex.tokens = {{policy::ContextKey{0, 0, 0, 1}, 2}};
  reflect::train_offset(offset, params, {ex}, 0.5);
  // The unguided distribution is bit-identical before and after training.
  auto unguided = reflect::offset_distribution(params, offset,
                                               {0, 0, 0, policy::kNoGuidance});
  auto direct = policy::token_distribution(params, {0, 0, 0, policy::kNoGuidance});
  for (int v = 0; v < 3; ++v) CHECK(unguided[v] == direct[v]);
}
