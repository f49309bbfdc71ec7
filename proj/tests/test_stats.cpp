#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "pvit/rng.hpp"
#include "pvit/stats.hpp"

using namespace pvit;

namespace {

std::vector<ScoredSubject> scored_from(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<ScoredSubject> out;
  for (std::size_t i = 0; i < scores.size(); ++i) out.push_back({"s" + std::to_string(i), labels[i], scores[i]});
  return out;
}

std::vector<ScoredSubject> random_scored(Rng& rng, std::size_t n, bool coarse) {
  std::vector<double> s;
  std::vector<int> y;
  for (std::size_t i = 0; i < n; ++i) {
    y.push_back(i % 2 == 0 || rng.bernoulli(0.3) ? 1 : 0);
    const double v = rng.normal(y.back() * 0.8, 1.0);
    s.push_back(coarse ? std::round(v * 2) / 2 : v);  // coarse scores create ties
  }
  y[1] = 0;
  return scored_from(s, y);
}

}  // namespace

TEST_CASE("auroc") {
  CHECK(auroc(scored_from({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0})) == 1.0);
  CHECK(auroc(scored_from({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0})) == 0.5);
  CHECK(auroc(scored_from({0.9, 0.4, 0.6, 0.1}, {1, 1, 0, 0})) == 0.75);
  CHECK_THROWS_AS(auroc(scored_from({0.1, 0.2}, {1, 1})), StatsError);

  SUBCASE("matches pair enumeration exactly") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
      const auto s = random_scored(rng, 2 + rng.below(49), trial % 2 == 0);
      std::vector<double> scores;
      std::vector<int> labels;
      for (const auto& x : s) {
        scores.push_back(x.score);
        labels.push_back(x.label);
      }
      CHECK(auroc(s) == oracle::auroc_pairs(scores, labels));
    }
  }

  SUBCASE("invariant under increasing transforms and complementary under label flip") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      auto s = random_scored(rng, 30, trial % 2 == 0);
      const double base = auroc(s);
      auto t = s;
      for (auto& x : t) x.score = std::exp(3 * x.score) + 1;
      CHECK(auroc(t) == base);
      for (auto& x : t) x.label = 1 - x.label;
      CHECK(std::abs(auroc(t) + base - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("roc_curve starts at the origin and ends at (1, 1)") {
  const auto curve = roc_curve(scored_from({0.9, 0.4, 0.6, 0.1}, {1, 1, 0, 0}));
  CHECK(curve.front().fpr == 0.0);
  CHECK(curve.front().tpr == 0.0);
  CHECK(curve.back().fpr == 1.0);
  CHECK(curve.back().tpr == 1.0);
  CHECK(curve.size() == 5);
}

TEST_CASE("operating_point") {
  SUBCASE("perfect classifier") {
    const auto op = operating_point(scored_from({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}));
    CHECK(op.sensitivity == 1.0);
    CHECK(op.specificity == 1.0);
    CHECK(op.threshold == 0.8);
  }
  SUBCASE("inverted classifier") {
    const auto op = operating_point(scored_from({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}));
    CHECK(op.sensitivity == 0.0);
    CHECK(op.specificity >= 0.9);
  }
  SUBCASE("ten negatives allow at most one false positive") {
    // Negatives 0.0..0.9; positives interleaved so each extra false positive buys sensitivity.
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 10; ++i) {
      s.push_back(i / 10.0);
      y.push_back(0);
      s.push_back(i / 10.0 + 0.05);
      y.push_back(1);
    }
    const auto scored = scored_from(s, y);
    const auto op = operating_point(scored, 0.90);
    std::size_t fp = 0, tp = 0;
    for (const auto& x : scored) {
      if (x.score >= op.threshold) (x.label ? tp : fp) += 1;
    }
    CHECK(fp == 1);
    CHECK(op.specificity == doctest::Approx(0.9));
    CHECK(tp == 2);
    // Exhaustive: no threshold with <= 1 false positive does better.
    for (const auto& cand : scored) {
      const auto m = confusion_metrics(scored, cand.score);
      if (m.specificity >= 0.9) CHECK(m.sensitivity <= op.sensitivity);
    }
  }
}

TEST_CASE("confusion_metrics") {
  const auto perfect = confusion_metrics(scored_from({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 0.5);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.sensitivity == 1.0);
  CHECK(perfect.specificity == 1.0);
  const auto all_pos = confusion_metrics(scored_from({0.9, 0.8, 0.7, 0.6}, {1, 1, 0, 0}), 0.0);
  CHECK(all_pos.sensitivity == 1.0);
  CHECK(all_pos.specificity == 0.0);
}

TEST_CASE("delong_test") {
  Rng rng(21);
  SUBCASE("identical classifiers") {
    const auto inst = oracle::paired_instance(30, rng);
    const auto r = delong_test(inst.a, inst.a, inst.labels);
    CHECK(r.p == 1.0);
  }
  SUBCASE("swap symmetry and p range") {
    for (int t = 0; t < 20; ++t) {
      const auto inst = oracle::paired_instance(30, rng);
      const auto ab = delong_test(inst.a, inst.b, inst.labels);
      const auto ba = delong_test(inst.b, inst.a, inst.labels);
      CHECK(ab.z == doctest::Approx(-ba.z).epsilon(1e-12));
      CHECK(ab.p == doctest::Approx(ba.p).epsilon(1e-12));
      CHECK(ab.p > 0.0);
      CHECK(ab.p <= 1.0);
    }
  }
  SUBCASE("agrees with a paired bootstrap") {
    for (std::uint64_t t = 0; t < 5; ++t) {
      const auto inst = oracle::paired_instance(30, rng);
      const double p = delong_test(inst.a, inst.b, inst.labels).p;
      const double boot = oracle::delong_bootstrap_p(inst.a, inst.b, inst.labels, 10000, 100 + t);
      INFO("delong " << p << " bootstrap " << boot);
      CHECK(std::abs(p - boot) < 0.02);
    }
  }
  SUBCASE("zero variance with unequal AUROCs is flagged") {
    // A separates perfectly; B is constant, so both placement vectors are constant.
    const std::vector<double> a{0.9, 0.8, 0.2, 0.1}, b{0.5, 0.5, 0.5, 0.5};
    const std::vector<int> y{1, 1, 0, 0};
    CHECK_THROWS_AS(delong_test(a, b, y), StatsError);
  }
}

TEST_CASE("wilcoxon_signed_rank") {
  const std::vector<double> five{1, 2, 3, 4, 5};
  const auto r = wilcoxon_signed_rank(five);
  CHECK(r.p == doctest::Approx(2.0 / 32).epsilon(1e-15));
  CHECK(r.exact);
  CHECK(wilcoxon_signed_rank(std::vector<double>{0.3, -0.3}).p == 1.0);
  const auto zeros = wilcoxon_signed_rank(std::vector<double>{0, 0, 0});
  CHECK(zeros.p == 1.0);
  CHECK(zeros.degenerate);

  SUBCASE("exact path matches brute-force enumeration for n <= 10") {
    Rng rng(31);
    for (std::size_t n = 1; n <= 10; ++n) {
      for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> d(n);
        for (double& x : d) x = trial % 3 == 0 ? std::round(rng.normal(0.3, 1.0) * 2) / 2 : rng.normal(0.3, 1.0);
        INFO("n=" << n << " trial=" << trial);
        CHECK(wilcoxon_signed_rank(d).p == doctest::Approx(oracle::wilcoxon_brute(d)).epsilon(1e-12));
      }
    }
  }

  SUBCASE("normal approximation above 20") {
    std::vector<double> d(24);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(i + 1);
    const auto approx = wilcoxon_signed_rank(d);
    CHECK_FALSE(approx.exact);
    // W+ = 300, mean 150, variance 24*25*49/24 = 1225.
    CHECK(approx.p == doctest::Approx(std::erfc(150.0 / 35.0 / std::sqrt(2.0))).epsilon(1e-12));
  }
}

TEST_CASE("sign_test") {
  const std::vector<double> all_pos(10, 1.0);
  CHECK(sign_test(all_pos).p == doctest::Approx(2.0 / 1024).epsilon(1e-13));
  CHECK(sign_test(std::vector<double>{1, -1}).p == 1.0);
}

TEST_CASE("clopper_pearson") {
  CHECK(clopper_pearson(0, 10).lower == 0.0);
  CHECK(clopper_pearson(10, 10).upper == 1.0);
  const auto ci = clopper_pearson(8, 10);
  CHECK(ci.lower == doctest::Approx(0.4439).epsilon(1e-4));
  CHECK(ci.upper == doctest::Approx(0.9748).epsilon(1e-4));
  CHECK_THROWS_AS(clopper_pearson(11, 10), StatsError);
  CHECK_THROWS_AS(clopper_pearson(0, 0), StatsError);

  SUBCASE("endpoints solve the binomial tail equations") {
    for (std::size_t n : {1, 5, 10, 34, 100}) {
      for (std::size_t k = 0; k <= n; ++k) {
        const auto c = clopper_pearson(k, n);
        if (k > 0) CHECK(std::abs(binomial_sf(k, n, c.lower) - 0.025) < 1e-9);
        if (k < n) CHECK(std::abs(binomial_cdf(k, n, c.upper) - 0.025) < 1e-9);
      }
    }
  }
  SUBCASE("monotone in k") {
    for (std::size_t n : {7, 20}) {
      for (std::size_t k = 0; k < n; ++k) {
        CHECK(clopper_pearson(k, n).lower <= clopper_pearson(k + 1, n).lower);
        CHECK(clopper_pearson(k, n).upper <= clopper_pearson(k + 1, n).upper);
      }
    }
  }
}

TEST_CASE("bootstrap_ci") {
  Rng rng(41);
  const auto s = random_scored(rng, 40, false);
  const auto constant = bootstrap_ci(s, [](auto) { return 0.25; }, 200, 1);
  CHECK(constant.lower == 0.25);
  CHECK(constant.upper == 0.25);
  const SubjectMetric metric = [](std::span<const ScoredSubject> x) { return auroc(x); };
  const auto a = bootstrap_ci(s, metric, 500, 9);
  const auto b = bootstrap_ci(s, metric, 500, 9);
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);
  const double point = auroc(s);
  CHECK(a.lower <= point);
  CHECK(point <= a.upper);
  CHECK_THROWS_AS(bootstrap_ci(std::span<const ScoredSubject>(s).first(1), metric, 10, 1), StatsError);
  CHECK_THROWS_AS(bootstrap_ci(s, [](auto) { return std::numeric_limits<double>::quiet_NaN(); }, 10, 1), StatsError);
}

TEST_CASE("quantile") {
  CHECK(quantile({3, 1, 2}, 0.5) == 2.0);
  CHECK(quantile({1, 2}, 0.25) == 1.25);
  CHECK(median({4, 1, 3, 2}) == 2.5);
}

TEST_CASE("group_kfold") {
  SUBCASE("equal groups balance") {
    std::map<std::string, std::string> g;
    for (int i = 0; i < 10; ++i) g["s" + std::to_string(i)] = "g" + std::to_string(i);
    const auto split = group_kfold(g, 5);
    for (std::size_t f = 0; f < 5; ++f) CHECK(split.members(f).size() == 2);
  }
  SUBCASE("greedy sizes 5,4,3,2,1 into two folds") {
    std::map<std::string, std::string> g;
    const int sizes[] = {5, 4, 3, 2, 1};
    for (int gi = 0; gi < 5; ++gi) {
      for (int j = 0; j < sizes[gi]; ++j) g["g" + std::to_string(gi) + "-" + std::to_string(j)] = "g" + std::to_string(gi);
    }
    const auto split = group_kfold(g, 2);
    std::vector<std::size_t> totals{split.members(0).size(), split.members(1).size()};
    std::sort(totals.begin(), totals.end());
    CHECK(totals == std::vector<std::size_t>{7, 8});
  }
  SUBCASE("groups never span folds, every subject assigned, deterministic") {
    Rng rng(51);
    std::map<std::string, std::string> g;
    for (int i = 0; i < 60; ++i) g["s" + std::to_string(i)] = "g" + std::to_string(rng.below(17));
    const auto split = group_kfold(g, 5);
    CHECK(split.fold.size() == g.size());
    std::map<std::string, std::size_t> seen;
    for (const auto& [s, f] : split.fold) {
      const auto [it, fresh] = seen.emplace(g.at(s), f);
      CHECK(it->second == f);
    }
    CHECK(group_kfold(g, 5).fold == split.fold);
  }
  SUBCASE("k above the group count") {
    std::map<std::string, std::string> g{{"a", "x"}, {"b", "x"}};
    CHECK_THROWS_AS(group_kfold(g, 2), StatsError);
  }
  SUBCASE("stratified variant balances each class") {
    std::map<std::string, std::string> g;
    std::map<std::string, int> y;
    for (int i = 0; i < 79; ++i) g[y.emplace("bat-" + std::to_string(i), 1).first->first] = "bat-" + std::to_string(i);
    for (int i = 0; i < 90; ++i) g[y.emplace("ctl-" + std::to_string(i), 0).first->first] = "ctl-" + std::to_string(i);
    const auto split = stratified_group_kfold(g, y, 5);
    for (std::size_t f = 0; f < 5; ++f) {
      std::size_t cases = 0, controls = 0;
      for (const auto& s : split.members(f)) (y.at(s) ? cases : controls) += 1;
      CHECK(cases >= 15);
      CHECK(cases <= 16);
      CHECK(controls == 18);
    }
  }
}

TEST_CASE("dice") {
  const std::vector<std::uint8_t> a{1, 1, 1, 1, 0, 0, 0, 0};
  const std::vector<std::uint8_t> b{0, 0, 1, 1, 1, 1, 0, 0};
  const std::vector<std::uint8_t> c{0, 0, 0, 0, 0, 0, 1, 1};
  const std::vector<std::uint8_t> empty(8, 0);
  CHECK(dice(a, a).value == 1.0);
  CHECK(dice(a, c).value == 0.0);
  CHECK(dice(a, b).value == 0.5);
  CHECK(dice(a, b).value == dice(b, a).value);
  CHECK(dice(empty, empty).value == 1.0);
  CHECK(dice(empty, empty).degenerate);
  CHECK_THROWS_AS(dice(a, std::vector<std::uint8_t>(3)), StatsError);

  Rng rng(61);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::uint8_t> x(50), y(50);
    for (std::size_t i = 0; i < 50; ++i) {
      x[i] = rng.bernoulli(0.3);
      y[i] = rng.bernoulli(0.4);
    }
    CHECK(dice(x, y).value == dice(y, x).value);
  }
}

TEST_CASE("energy_fraction") {
  std::vector<double> uniform(100, 1.0);
  std::vector<std::uint8_t> mask(100, 0);
  for (std::size_t i = 0; i < 10; ++i) mask[i * 7] = 1;
  CHECK(energy_fraction(uniform, mask).value == doctest::Approx(0.10).epsilon(1e-14));
  std::vector<double> inside(100, 0.0);
  for (std::size_t i = 0; i < 100; ++i) inside[i] = mask[i] ? 2.0 : 0.0;
  CHECK(energy_fraction(inside, mask).value == 1.0);
  const auto zero = energy_fraction(std::vector<double>(100, 0.0), mask);
  CHECK(zero.value == 0.0);
  CHECK(zero.degenerate);

  SUBCASE("random maps concentrate near the mask share") {
    Rng rng(71);
    double sum = 0.0;
    for (int t = 0; t < 100; ++t) {
      std::vector<double> map(400);
      for (double& v : map) v = rng.uniform();
      std::vector<std::size_t> idx(400);
      for (std::size_t i = 0; i < 400; ++i) idx[i] = i;
      rng.shuffle(idx);
      std::vector<std::uint8_t> m(400, 0);
      for (std::size_t i = 0; i < 40; ++i) m[idx[i]] = 1;
      sum += energy_fraction(map, m).value;
    }
    CHECK(std::abs(sum / 100 - 0.10) < 0.03);
  }
}

TEST_CASE("normal_cdf") {
  CHECK(normal_cdf(0.0) == 0.5);
  CHECK(normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
  CHECK(normal_cdf(-3.0) == doctest::Approx(0.0013498980316301).epsilon(1e-12));
}
