#pragma once

// Independent reference implementations used as test oracles.

#include <cmath>
#include <cstdint>
#include <vector>

#include "pvit/rng.hpp"
#include "pvit/stats.hpp"

namespace pvit::oracle {

/// AUROC by explicit pair enumeration in integer half-credits.
inline double auroc_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
  long long half_credits = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 1) continue;
      half_credits += scores[i] > scores[j] ? 2 : (scores[i] == scores[j] ? 1 : 0);
      ++pairs;
    }
  }
  return static_cast<double>(half_credits) / (2.0 * static_cast<double>(pairs));
}

/// Two-sided signed-rank p from all 2^n sign assignments of the given ranks.
inline double wilcoxon_brute(const std::vector<double>& differences) {
  std::vector<double> d;
  for (double x : differences) {
    if (x != 0.0) d.push_back(x);
  }
  const std::size_t n = d.size();
  if (n == 0) return 1.0;
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) ++less;
      if (std::abs(d[j]) == std::abs(d[i])) ++equal;
    }
    ranks[i] = less + (equal + 1) / 2.0;
  }
  double observed = 0, total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += ranks[i];
    if (d[i] > 0) observed += ranks[i];
  }
  const double center = total / 2;
  std::size_t extreme = 0;
  const std::size_t patterns = std::size_t{1} << n;
  for (std::size_t mask = 0; mask < patterns; ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1) w += ranks[i];
    }
    if (std::abs(w - center) >= std::abs(observed - center) - 1e-9) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(patterns);
}

/// Two-sided z-test p for the AUROC difference with its standard error estimated by a
/// class-stratified paired bootstrap.
inline double delong_bootstrap_p(const std::vector<double>& a, const std::vector<double>& b,
                                 const std::vector<int>& labels, std::size_t draws, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  Rng rng(seed);
  std::vector<double> sa(labels.size()), sb(labels.size());
  std::vector<int> sl(labels.size());
  double sum = 0, sum_sq = 0;
  for (std::size_t r = 0; r < draws; ++r) {
    std::size_t k = 0;
    for (const auto* group : {&pos, &neg}) {
      for (std::size_t t = 0; t < group->size(); ++t, ++k) {
        const std::size_t i = (*group)[rng.below(group->size())];
        sa[k] = a[i];
        sb[k] = b[i];
        sl[k] = labels[i];
      }
    }
    const double diff = auroc_pairs(sa, sl) - auroc_pairs(sb, sl);
    sum += diff;
    sum_sq += diff * diff;
  }
  const double mean = sum / static_cast<double>(draws);
  const double se = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(draws) - mean * mean));
  const double z = (auroc_pairs(a, labels) - auroc_pairs(b, labels)) / se;
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

/// Correlated paired scores for a two-classifier comparison.
struct PairedScores {
  std::vector<double> a, b;
  std::vector<int> labels;
};

inline PairedScores paired_instance(std::size_t n, Rng& rng, double signal_a = 1.0, double signal_b = 0.7) {
  PairedScores s;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = i < n / 2 ? 1 : 0;
    const double shared = rng.normal();
    s.labels.push_back(y);
    s.a.push_back(signal_a * y + 0.7 * shared + 0.7 * rng.normal());
    s.b.push_back(signal_b * y + 0.7 * shared + 0.7 * rng.normal());
  }
  return s;
}

}  // namespace pvit::oracle
