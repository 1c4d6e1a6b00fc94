#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace r3lab::rng {

// Counter-based deterministic generator. Every random stream in the project
// is derived from (master_seed, purpose tag, indices); the stream itself is a
// splitmix64 walk over state + counter, so identical derivations always yield
// identical sequences regardless of call interleaving elsewhere.

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Stream {
 public:
  Stream() = default;
  explicit Stream(std::uint64_t state) : state_(state) {}

  std::uint64_t next_u64() { return splitmix64(state_ + kGolden * counter_++); }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  int next_below(int n) {
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Index sampled from an (unnormalized is fine) nonnegative weight vector.
  int categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = next_double() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  std::uint64_t state() const { return state_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t counter_ = 0;
};

// Derive a stream from a master seed, a purpose tag and up to four indices.
inline Stream derive(std::uint64_t master, std::string_view tag,
                     std::uint64_t a = 0, std::uint64_t b = 0,
                     std::uint64_t c = 0, std::uint64_t d = 0) {
  std::uint64_t h = splitmix64(master ^ fnv1a(tag));
  h = splitmix64(h ^ (a * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL));
  h = splitmix64(h ^ (b * 0xc2b2ae3d27d4eb4fULL + 0x27d4eb4fULL));
  h = splitmix64(h ^ (c * 0x165667b19e3779f9ULL + 0x9e3779f9ULL));
  h = splitmix64(h ^ (d * 0xd6e8feb86659fd93ULL + 0x6659fd93ULL));
  return Stream(h);
}

}  // namespace r3lab::rng
