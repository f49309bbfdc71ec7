#include "pvit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pvit/rng.hpp"

namespace pvit {

namespace {

void require_both_classes(std::span<const ScoredSubject> scored, const char* what) {
  bool pos = false, neg = false;
  for (const auto& s : scored) (s.label == 1 ? pos : neg) = true;
  if (!pos || !neg) throw StatsError(std::string(what) + " needs both classes present");
}

double pair_credit(double pos, double neg) { return pos > neg ? 1.0 : (pos == neg ? 0.5 : 0.0); }

// Average 1-based ranks of values, ties sharing the mean rank.
std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double log_binom_pmf(std::size_t k, std::size_t n, double p) {
  const double nk = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
  return nk + static_cast<double>(k) * std::log(p) + static_cast<double>(n - k) * std::log1p(-p);
}

// Bisection for the point where a monotone predicate turns from true to false.
template <typename Pred>
double bisect(Pred below_root, double lo, double hi) {
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    (below_root(mid) ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double auroc(std::span<const ScoredSubject> scored) {
  require_both_classes(scored, "auroc");
  double credit = 0.0;
  std::size_t pairs = 0;
  for (const auto& p : scored) {
    if (p.label != 1) continue;
    for (const auto& n : scored) {
      if (n.label == 1) continue;
      credit += pair_credit(p.score, n.score);
      ++pairs;
    }
  }
  return credit / static_cast<double>(pairs);
}

std::vector<RocPoint> roc_curve(std::span<const ScoredSubject> scored) {
  require_both_classes(scored, "roc_curve");
  std::vector<double> thresholds;
  for (const auto& s : scored) thresholds.push_back(s.score);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.insert(thresholds.begin(), std::numeric_limits<double>::infinity());
  std::vector<RocPoint> curve;
  for (double t : thresholds) {
    const auto m = confusion_metrics(scored, t);
    curve.push_back({t, 1.0 - m.specificity, m.sensitivity});
  }
  return curve;
}

ConfusionMetrics confusion_metrics(std::span<const ScoredSubject> scored, double threshold) {
  require_both_classes(scored, "confusion_metrics");
  std::size_t tp = 0, tn = 0, pos = 0, neg = 0;
  for (const auto& s : scored) {
    const bool predicted = s.score >= threshold;
    if (s.label == 1) {
      ++pos;
      tp += predicted;
    } else {
      ++neg;
      tn += !predicted;
    }
  }
  return {static_cast<double>(tp + tn) / static_cast<double>(pos + neg),
          static_cast<double>(tp) / static_cast<double>(pos), static_cast<double>(tn) / static_cast<double>(neg)};
}

OperatingPoint operating_point(std::span<const ScoredSubject> scored, double min_specificity) {
  OperatingPoint best{std::numeric_limits<double>::infinity(), 0.0, 1.0};
  // roc_curve visits thresholds from high to low, so a strict improvement keeps the higher one on ties.
  for (const auto& pt : roc_curve(scored)) {
    const double spec = 1.0 - pt.fpr;
    if (spec >= min_specificity && pt.tpr > best.sensitivity) best = {pt.threshold, pt.tpr, spec};
  }
  return best;
}

DeLongResult delong_test(std::span<const double> scores_a, std::span<const double> scores_b,
                         std::span<const int> labels) {
  if (scores_a.size() != labels.size() || scores_b.size() != labels.size()) {
    throw StatsError("delong_test: scores and labels must be paired");
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  if (pos.size() < 2 || neg.size() < 2) throw StatsError("delong_test needs at least two subjects per class");
  const double m = static_cast<double>(pos.size()), n = static_cast<double>(neg.size());

  // Structural components: V10 over positives, V01 over negatives, per classifier.
  auto components = [&](std::span<const double> s, std::vector<double>& v10, std::vector<double>& v01) {
    v10.assign(pos.size(), 0.0);
    v01.assign(neg.size(), 0.0);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      for (std::size_t j = 0; j < neg.size(); ++j) {
        const double c = pair_credit(s[pos[i]], s[neg[j]]);
        v10[i] += c / n;
        v01[j] += c / m;
      }
    }
    return std::accumulate(v10.begin(), v10.end(), 0.0) / m;
  };
  std::vector<double> a10, a01, b10, b01;
  DeLongResult r;
  r.auroc_a = components(scores_a, a10, a01);
  r.auroc_b = components(scores_b, b10, b01);

  auto cov = [](const std::vector<double>& x, const std::vector<double>& y, double mx, double my) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
    return s / static_cast<double>(x.size() - 1);
  };
  const double s10 = cov(a10, a10, r.auroc_a, r.auroc_a) + cov(b10, b10, r.auroc_b, r.auroc_b) -
                     2.0 * cov(a10, b10, r.auroc_a, r.auroc_b);
  const double s01 = cov(a01, a01, r.auroc_a, r.auroc_a) + cov(b01, b01, r.auroc_b, r.auroc_b) -
                     2.0 * cov(a01, b01, r.auroc_a, r.auroc_b);
  const double var = s10 / m + s01 / n;
  const double diff = r.auroc_a - r.auroc_b;
  if (!(var > 1e-300)) {
    if (std::abs(diff) < 1e-15) return r;
    throw StatsError("delong_test not applicable: zero variance of the AUROC difference with unequal AUROCs");
  }
  r.z = diff / std::sqrt(var);
  r.p = std::min(1.0, std::erfc(std::abs(r.z) / std::sqrt(2.0)));
  return r;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences) {
  std::vector<double> nonzero;
  for (double d : differences) {
    if (d != 0.0) nonzero.push_back(d);
  }
  WilcoxonResult r;
  r.n = nonzero.size();
  if (nonzero.empty()) {
    r.degenerate = true;
    return r;
  }
  std::vector<double> mags(nonzero.size());
  std::transform(nonzero.begin(), nonzero.end(), mags.begin(), [](double d) { return std::abs(d); });
  const std::vector<double> ranks = average_ranks(mags);
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (nonzero[i] > 0) r.w_plus += ranks[i];
  }

  if (r.n <= 20) {
    // Doubled ranks are integers, so the null distribution of 2W+ is a subset-sum count.
    std::vector<std::size_t> twice(ranks.size());
    std::size_t total = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) total += twice[i] = static_cast<std::size_t>(std::lround(2 * ranks[i]));
    std::vector<double> ways(total + 1, 0.0);
    ways[0] = 1.0;
    for (std::size_t w : twice) {
      for (std::size_t s = total; s >= w; --s) {
        ways[s] += ways[s - w];
        if (s == w) break;
      }
    }
    const auto observed = static_cast<std::size_t>(std::lround(2 * r.w_plus));
    const double all = std::ldexp(1.0, static_cast<int>(r.n));
    double lower = 0.0, upper = 0.0;
    for (std::size_t s = 0; s <= total; ++s) {
      if (s <= observed) lower += ways[s];
      if (s >= observed) upper += ways[s];
    }
    r.p = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    return r;
  }

  r.exact = false;
  const double n = static_cast<double>(r.n);
  double ties = 0.0;
  std::vector<double> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double mean = n * (n + 1) / 4.0;
  const double var = n * (n + 1) * (2 * n + 1) / 24.0 - ties / 48.0;
  const double z = (r.w_plus - mean) / std::sqrt(var);
  r.p = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
  return r;
}

SignTestResult sign_test(std::span<const double> differences) {
  SignTestResult r;
  for (double d : differences) {
    if (d > 0) ++r.positive;
    if (d < 0) ++r.negative;
  }
  const std::size_t n = r.positive + r.negative;
  if (n == 0) return r;
  const std::size_t small = std::min(r.positive, r.negative);
  r.p = std::min(1.0, 2.0 * binomial_cdf(small, n, 0.5));
  return r;
}

double binomial_cdf(std::size_t k, std::size_t n, double p) {
  if (k >= n) return 1.0;
  if (p <= 0.0) return 1.0;
  if (p >= 1.0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i <= k; ++i) s += std::exp(log_binom_pmf(i, n, p));
  return std::min(1.0, s);
}

double binomial_sf(std::size_t k, std::size_t n, double p) {
  if (k == 0) return 1.0;
  if (k > n) return 0.0;
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;
  double s = 0.0;
  for (std::size_t i = k; i <= n; ++i) s += std::exp(log_binom_pmf(i, n, p));
  return std::min(1.0, s);
}

Interval clopper_pearson(std::size_t k, std::size_t n, double alpha) {
  if (n == 0 || k > n) throw StatsError("clopper_pearson requires 0 <= k <= n and n >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw StatsError("clopper_pearson requires alpha in (0, 1)");
  const double tail = alpha / 2.0;
  Interval ci{0.0, 1.0};
  // P(X >= k) increases in p; P(X <= k) decreases in p.
  if (k > 0) ci.lower = bisect([&](double p) { return binomial_sf(k, n, p) < tail; }, 0.0, 1.0);
  if (k < n) ci.upper = bisect([&](double p) { return binomial_cdf(k, n, p) > tail; }, 0.0, 1.0);
  return ci;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw StatsError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

Interval bootstrap_ci(std::span<const ScoredSubject> scored, const SubjectMetric& metric, std::size_t resamples,
                      std::uint64_t seed, double level) {
  if (scored.size() < 2) throw StatsError("bootstrap_ci needs at least two subjects");
  if (resamples == 0) throw StatsError("bootstrap_ci needs at least one resample");
  constexpr int kRetries = 100;
  Rng rng(seed);
  std::vector<double> stats;
  std::size_t undefined = 0;
  std::vector<ScoredSubject> sample(scored.size());
  for (std::size_t b = 0; b < resamples; ++b) {
    bool mixed = false;
    for (int attempt = 0; attempt < kRetries && !mixed; ++attempt) {
      int seen = 0;
      for (auto& s : sample) {
        s = scored[rng.below(scored.size())];
        seen |= s.label == 1 ? 1 : 2;
      }
      mixed = seen == 3;
    }
    double value = std::numeric_limits<double>::quiet_NaN();
    if (mixed) {
      try {
        value = metric(sample);
      } catch (const StatsError&) {
      }
    }
    if (std::isfinite(value)) {
      stats.push_back(value);
    } else {
      ++undefined;
    }
  }
  if (2 * undefined > resamples) throw StatsError("bootstrap_ci: metric undefined on most resamples");
  const double a = (1.0 - level) / 2.0;
  return {quantile(stats, a), quantile(stats, 1.0 - a)};
}

std::vector<std::string> FoldSplit::members(std::size_t f) const {
  std::vector<std::string> out;
  for (const auto& [id, fi] : fold) {
    if (fi == f) out.push_back(id);
  }
  return out;
}

FoldSplit group_kfold(const std::map<std::string, std::string>& subject_group, std::size_t k) {
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& [subject, group] : subject_group) groups[group].push_back(subject);
  if (k == 0 || k > groups.size()) {
    throw StatsError("group_kfold: k=" + std::to_string(k) + " exceeds the " + std::to_string(groups.size()) +
                     " distinct groups");
  }
  std::vector<const std::pair<const std::string, std::vector<std::string>>*> order;
  for (const auto& g : groups) order.push_back(&g);
  std::stable_sort(order.begin(), order.end(),
                   [](auto* a, auto* b) { return a->second.size() > b->second.size(); });  // map order = id order
  FoldSplit split;
  split.k = k;
  std::vector<std::size_t> load(k, 0);
  for (const auto* g : order) {
    const auto f = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    load[f] += g->second.size();
    for (const auto& s : g->second) split.fold[s] = f;
  }
  return split;
}

FoldSplit stratified_group_kfold(const std::map<std::string, std::string>& subject_group,
                                 const std::map<std::string, int>& subject_label, std::size_t k) {
  std::map<int, std::map<std::string, std::string>> by_label;
  for (const auto& [subject, group] : subject_group) {
    const auto it = subject_label.find(subject);
    if (it == subject_label.end()) throw StatsError("stratified_group_kfold: no label for " + subject);
    by_label[it->second][subject] = group;
  }
  FoldSplit split;
  split.k = k;
  for (const auto& [label, members] : by_label) {
    for (const auto& [s, f] : group_kfold(members, k).fold) split.fold[s] = f;
  }
  // A group carrying both labels would otherwise straddle folds.
  std::map<std::string, std::size_t> group_fold;
  for (const auto& [s, f] : split.fold) {
    const auto [it, fresh] = group_fold.emplace(subject_group.at(s), f);
    if (!fresh && it->second != f) throw StatsError("stratified_group_kfold: group " + it->first + " mixes labels");
  }
  return split;
}

MaskScore dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw StatsError("dice: mask sizes differ");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] != 0;
    nb += b[i] != 0;
    both += a[i] != 0 && b[i] != 0;
  }
  if (na + nb == 0) return {1.0, true};
  return {2.0 * static_cast<double>(both) / static_cast<double>(na + nb), false};
}

MaskScore energy_fraction(std::span<const double> saliency, std::span<const std::uint8_t> mask) {
  if (saliency.size() != mask.size()) throw StatsError("energy_fraction: map and mask sizes differ");
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < saliency.size(); ++i) {
    total += saliency[i];
    if (mask[i]) inside += saliency[i];
  }
  if (!(total > 0.0)) return {0.0, true};
  return {inside / total, false};
}

}  // namespace pvit
