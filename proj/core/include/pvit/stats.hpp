#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvit {

class StatsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ScoredSubject {
  std::string id;
  int label = 0;  // 1 = case
  double score = 0.0;
};

/// Mann-Whitney AUROC: mean pair credit, 1 for s+ > s-, 0.5 for ties.
double auroc(std::span<const ScoredSubject> scored);

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};
/// Thresholds from +inf down through every distinct score.
std::vector<RocPoint> roc_curve(std::span<const ScoredSubject> scored);

struct OperatingPoint {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};
/// Highest-sensitivity threshold with specificity >= min_specificity; ties go to the higher threshold.
OperatingPoint operating_point(std::span<const ScoredSubject> scored, double min_specificity = 0.90);

struct ConfusionMetrics {
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};
/// Predicted positive when score >= threshold.
ConfusionMetrics confusion_metrics(std::span<const ScoredSubject> scored, double threshold);

struct DeLongResult {
  double auroc_a = 0.0;
  double auroc_b = 0.0;
  double z = 0.0;
  double p = 1.0;
};
/// Paired two-sided DeLong test. Zero variance with equal AUROCs gives p = 1; zero
/// variance with unequal AUROCs throws StatsError (test not applicable).
DeLongResult delong_test(std::span<const double> scores_a, std::span<const double> scores_b,
                         std::span<const int> labels);

struct WilcoxonResult {
  double p = 1.0;
  double w_plus = 0.0;  // sum of positive ranks (average ranks for ties)
  std::size_t n = 0;    // nonzero differences
  bool exact = true;
  bool degenerate = false;  // every difference was zero
};
/// Two-sided signed-rank test. Exact null distribution for n <= 20, else the normal
/// approximation with tie-corrected variance.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences);

struct SignTestResult {
  std::size_t positive = 0;
  std::size_t negative = 0;
  double p = 1.0;  // two-sided exact binomial
};
/// Zeros dropped.
SignTestResult sign_test(std::span<const double> differences);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// P(Bin(n, p) <= k).
double binomial_cdf(std::size_t k, std::size_t n, double p);
/// P(Bin(n, p) >= k).
double binomial_sf(std::size_t k, std::size_t n, double p);
/// Exact interval by bisection on the binomial tails.
Interval clopper_pearson(std::size_t k, std::size_t n, double alpha = 0.05);

double normal_cdf(double x);

using SubjectMetric = std::function<double(std::span<const ScoredSubject>)>;
/// Subject-level percentile bootstrap (2.5th, 97.5th for level 0.95). Single-class
/// resamples are redrawn; throws when the metric is undefined for most resamples.
Interval bootstrap_ci(std::span<const ScoredSubject> scored, const SubjectMetric& metric, std::size_t resamples,
                      std::uint64_t seed, double level = 0.95);

/// Linear-interpolated quantile of unsorted values, q in [0, 1].
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);

struct FoldSplit {
  std::size_t k = 0;
  std::map<std::string, std::size_t> fold;  // subject id -> fold

  std::vector<std::string> members(std::size_t f) const;
};

/// Greedy grouped split: groups by descending subject count (ties by group id), each into the
/// currently smallest fold (ties to the lowest index).
FoldSplit group_kfold(const std::map<std::string, std::string>& subject_group, std::size_t k);
/// group_kfold applied within each label, folds merged by index.
FoldSplit stratified_group_kfold(const std::map<std::string, std::string>& subject_group,
                                 const std::map<std::string, int>& subject_label, std::size_t k);

struct MaskScore {
  double value = 0.0;
  bool degenerate = false;
};
/// Both empty: 1 with the degenerate flag.
MaskScore dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
/// Share of total saliency inside the mask. Zero total: 0 with the degenerate flag.
MaskScore energy_fraction(std::span<const double> saliency, std::span<const std::uint8_t> mask);

}  // namespace pvit
