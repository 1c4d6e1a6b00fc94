#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "r3lab/env.hpp"
#include "r3lab/rollout.hpp"

namespace r3lab::metrics {

// Per-step telemetry. Optional fields serialize as JSON null; field order in
// the JSONL body is fixed and carries no timestamps (wall clock goes to a
// sidecar), so identical runs produce byte-identical files.
struct MetricsRecord {
  long step = 0;
  double mean_reward = 0.0;
  std::optional<double> eval_reward;
  double entropy_mean = 0.0;
  double ref_kl = 0.0;
  double update_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double policy_loss = 0.0;
  double sft_loss = 0.0;
  std::optional<double> rir;
  std::optional<double> reward_gain;
  std::optional<double> mean_pivot;
  double p_positive = 0.0;
  std::optional<double> alpha_min_running;
  double lyapunov = 0.0;
};

inline std::string json_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  std::string s(buf);
  if (s == "inf") return "1e308";
  if (s == "-inf") return "-1e308";
  if (s == "nan" || s == "-nan") return "null";
  return s;
}

inline std::string to_jsonl(const MetricsRecord& r) {
  std::ostringstream os;
  auto opt = [](const std::optional<double>& v) {
    return v ? json_number(*v) : std::string("null");
  };
  os << "{\"step\":" << r.step
     << ",\"mean_reward\":" << json_number(r.mean_reward)
     << ",\"eval_reward\":" << opt(r.eval_reward)
     << ",\"entropy_mean\":" << json_number(r.entropy_mean)
     << ",\"ref_kl\":" << json_number(r.ref_kl)
     << ",\"update_kl\":" << json_number(r.update_kl)
     << ",\"clip_fraction\":" << json_number(r.clip_fraction)
     << ",\"grad_norm\":" << json_number(r.grad_norm)
     << ",\"policy_loss\":" << json_number(r.policy_loss)
     << ",\"sft_loss\":" << json_number(r.sft_loss)
     << ",\"rir\":" << opt(r.rir)
     << ",\"reward_gain\":" << opt(r.reward_gain)
     << ",\"mean_pivot\":" << opt(r.mean_pivot)
     << ",\"p_positive\":" << json_number(r.p_positive)
     << ",\"alpha_min_running\":" << opt(r.alpha_min_running)
     << ",\"lyapunov\":" << json_number(r.lyapunov) << "}";
  return os.str();
}

inline const std::vector<std::string>& numeric_fields() {
  static const std::vector<std::string> fields = {
      "mean_reward",  "eval_reward",  "entropy_mean", "ref_kl",
      "update_kl",    "clip_fraction", "grad_norm",    "policy_loss",
      "sft_loss",     "rir",          "reward_gain",  "mean_pivot",
      "p_positive",   "alpha_min_running", "lyapunov"};
  return fields;
}

// Extracts "name":<number|null> from one of our own JSONL lines.
inline std::optional<double> extract_field(const std::string& line,
                                           const std::string& name) {
  const std::string needle = "\"" + name + "\":";
  auto pos = line.find(needle);
  if (pos == std::string::npos) return std::nullopt;
  pos += needle.size();
  auto end = line.find_first_of(",}", pos);
  std::string token = line.substr(pos, end - pos);
  if (token == "null") return std::nullopt;
  return std::stod(token);
}

// Strict-improvement fraction over base/retry pairs; self-paired successes
// are excluded from the denominator.
inline std::optional<double> rir(const std::vector<rollout::PairRecord>& pairs) {
  long denom = 0, num = 0;
  for (const auto& p : pairs) {
    if (!p.retried) continue;
    ++denom;
    if (p.retry_reward > p.base_reward) ++num;
  }
  if (denom == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(denom);
}

// (mean retry - mean base) / mean base over retried pairs; absent (flagged
// upstream) when the base mean is zero.
inline std::optional<double> reward_gain(
    const std::vector<rollout::PairRecord>& pairs) {
  double base = 0.0, retry = 0.0;
  long n = 0;
  for (const auto& p : pairs) {
    if (!p.retried) continue;
    base += p.base_reward;
    retry += p.retry_reward;
    ++n;
  }
  if (n == 0 || base <= 0.0) return std::nullopt;
  return (retry - base) / base;
}

inline std::optional<double> mean_pivot(
    const std::vector<rollout::PairRecord>& pairs) {
  double sum = 0.0;
  long n = 0;
  for (const auto& p : pairs) {
    if (!p.retried) continue;
    sum += p.pivot;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline std::vector<double> average_ranks(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

// Spearman rank correlation of a series against its index, with average
// ranks for ties; an all-tied series correlates 0 by convention.
inline double spearman_against_index(const std::vector<double>& ys) {
  const std::size_t n = ys.size();
  if (n < 2) return 0.0;
  auto ry = average_ranks(ys);
  std::vector<double> rx(n);
  for (std::size_t i = 0; i < n; ++i) rx[i] = static_cast<double>(i) + 1.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline double pivot_trend(const std::vector<double>& window_means) {
  return spearman_against_index(window_means);
}

// Trailing window over per-step pair records, used for the smoothed
// RIR / Reward Gain / mean pivot series.
class PairWindow {
 public:
  explicit PairWindow(std::size_t window_steps = 10) : window_(window_steps) {}

  void push(const std::vector<rollout::PairRecord>& step_pairs) {
    steps_.push_back(step_pairs);
    if (steps_.size() > window_) steps_.pop_front();
  }

  std::vector<rollout::PairRecord> flattened() const {
    std::vector<rollout::PairRecord> all;
    for (const auto& s : steps_)
      all.insert(all.end(), s.begin(), s.end());
    return all;
  }

  std::optional<double> rir() const { return metrics::rir(flattened()); }
  std::optional<double> reward_gain() const {
    return metrics::reward_gain(flattened());
  }
  std::optional<double> mean_pivot() const {
    return metrics::mean_pivot(flattened());
  }

 private:
  std::size_t window_;
  std::deque<std::vector<rollout::PairRecord>> steps_;
};

class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path) : out_(path) {
    if (!out_) throw env::ConfigError("cannot open metrics file: " + path);
  }

  void write(const MetricsRecord& r) { out_ << to_jsonl(r) << "\n"; }
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

// One CSV of (step, value) per numeric field, skipping nulls.
inline std::vector<std::string> emit_plotdata(const std::string& metrics_path,
                                              const std::string& out_dir) {
  std::ifstream in(metrics_path);
  if (!in) throw env::ConfigError("cannot open metrics file: " + metrics_path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  std::vector<std::string> written;
  for (const auto& field : numeric_fields()) {
    const std::string path = out_dir + "/" + field + ".csv";
    std::ofstream out(path);
    if (!out) throw env::ConfigError("cannot open csv file: " + path);
    out << "step," << field << "\n";
    for (const auto& l : lines) {
      auto step = extract_field(l, "step");
      auto value = extract_field(l, field);
      if (step && value)
        out << static_cast<long>(*step) << "," << json_number(*value) << "\n";
    }
    written.push_back(path);
  }
  return written;
}

}  // namespace r3lab::metrics
