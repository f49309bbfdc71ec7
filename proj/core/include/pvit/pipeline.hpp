#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvit/distill.hpp"
#include "pvit/explain.hpp"
#include "pvit/fewshot.hpp"
#include "pvit/phantom.hpp"
#include "pvit/stats.hpp"
#include "pvit/vit.hpp"

namespace pvit {

/// Raised when a pipeline stage fails; the message starts with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Size of one auxiliary phantom cohort, generated in memory from a derived seed.
struct Cohort {
  std::size_t cases = 0;
  std::size_t controls = 0;
};

inline SupervisedConfig supervised(std::size_t epochs, std::size_t batch_size, double lr) {
  SupervisedConfig c;
  c.epochs = epochs;
  c.batch_size = batch_size;
  c.lr = lr;
  return c;
}

/// Everything a run depends on. Phase seeds are derived from `seed`; the seed fields of the
/// phase configs are ignored.
struct RunConfig {
  std::filesystem::path data = "data";
  std::filesystem::path out = "run";
  std::string teacher_preset = "micro-teacher";
  std::string student_preset = "micro-student";
  std::uint64_t seed = 7;
  std::size_t folds = 5;

  // Auxiliary cohorts keep the main dataset's labels out of teacher training and distillation.
  Cohort teacher_cohort{40, 40};
  Cohort distill_cohort{60, 60};  // unlabeled, added to the teacher cohort for distillation
  Cohort holdout_cohort{20, 20};  // teacher/student agreement

  SupervisedConfig teacher = supervised(40, 16, 1e-3);
  bool augment_teacher = true;
  // Applied wherever slices are augmented; identity by default.
  IntensityJitter intensity;
  DistillConfig distill{.lambda = 1.0, .epochs = 40, .batch_size = 32, .lr = 1e-3};
  FewShotConfig fewshot = [] {
    FewShotConfig f;
    f.episodes_per_epoch = 30;
    f.epochs = 10;
    return f;
  }();
  SupervisedConfig baseline = supervised(10, 16, 1e-4);
  bool ablation = false;  // also train the plain cross-entropy baseline per fold
  CamTarget cam_target = CamTarget::final_features;

  std::size_t triptychs = 8;

  ViTConfig teacher_config() const;
  ViTConfig student_config() const;
  /// Throws std::invalid_argument on an unknown preset or invalid phase settings.
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the canonical JSON of the run's substantive settings.
std::string config_hash(const RunConfig& config);

/// Fixed output layout under RunConfig::out.
struct RunLayout {
  std::filesystem::path root;
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path logs() const { return root / "logs"; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path explain() const { return root / "explain"; }
  std::filesystem::path report() const { return root / "report"; }
  std::filesystem::path teacher() const { return checkpoints() / "teacher.pvit"; }
  std::filesystem::path distilled() const { return checkpoints() / "student_distilled.pvit"; }
  std::filesystem::path fold(std::size_t i) const;
  std::filesystem::path baseline(std::size_t i) const;
};

struct TrainSummary {
  std::vector<std::string> ran;
  std::vector<std::string> skipped;
  double teacher_holdout_accuracy = 0.0;
  double student_holdout_accuracy = 0.0;
  double agreement = 0.0;  // student vs teacher top-1 on the holdout cohort
};

/// Stages: teacher, distillation, then per fold the episodic fine-tune (and the plain-CE
/// baseline when ablation is on). A stage whose artifact carries the current stage hash is
/// skipped; new artifacts are written as <name>.partial and renamed on success.
TrainSummary run_train(const RunConfig& config, std::ostream& log);

struct FoldMetrics {
  std::size_t fold = 0;
  std::size_t subjects = 0;
  double auroc = 0.0;
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

/// Subject-level bootstrap 95% intervals over pooled held-out subjects.
struct MetricIntervals {
  Interval auroc, accuracy, sensitivity, specificity;
};

/// Fold accuracy, sensitivity and specificity call a subject positive at score >= this.
inline constexpr double kDecisionThreshold = 0.5;

struct SubjectScore {
  std::string subject;
  std::size_t fold = 0;
  int label = 0;
  double score = 0.0;
  std::optional<double> baseline;
};

struct EvalReport {
  std::vector<FoldMetrics> folds;
  FoldMetrics aggregate;  // fold means; `fold` holds the fold count
  MetricIntervals bootstrap;
  std::optional<MetricIntervals> baseline_bootstrap;
  Interval sensitivity_ci, specificity_ci;  // Clopper–Pearson on pooled subjects
  std::vector<FoldMetrics> baseline_folds;
  std::optional<FoldMetrics> baseline_aggregate;
  std::vector<SubjectScore> scores;
  nlohmann::json tests;
  std::string config_hash;
};

/// Scores every held-out subject with its fold's model and writes eval/metrics.csv,
/// eval/scores.csv, eval/tests.json and eval/report.json. `compare` names another run
/// directory whose eval/scores.csv is compared by DeLong and per-fold Wilcoxon tests.
EvalReport run_eval(const RunConfig& config, const std::optional<std::filesystem::path>& compare, std::ostream& log);

struct CaseSaliency {
  std::string subject;
  std::size_t fold = 0;
  double dice = 0.0;          // mean over the case's slices
  double energy = 0.0;        // mean energy fraction inside the lesion
  double lesion_area = 0.0;   // mean lesion share of the slice
  std::optional<double> rollout_dice;  // Grad-CAM vs rollout top-quintile masks
};

struct ExplainSummary {
  std::vector<CaseSaliency> cases;
  double mean_dice = 0.0;
  double mean_energy = 0.0;
  double mean_lesion_area = 0.0;
  SignTestResult energy_sign;
  double aligned_fraction = 0.0;  // cases whose energy fraction beats their lesion area
  double permutation_ratio = 0.0;
  double permutation_original_median = 0.0;
  double permutation_permuted_median = 0.0;
  double noise_dice_drop = 0.0;
  std::size_t noise_used = 0;
  std::size_t noise_excluded = 0;
  std::size_t sanity_images = 0;
  std::size_t sanity_cases = 0;
  std::optional<double> mean_rollout_dice;
};

/// Grad-CAM at full slice resolution for every correctly predicted held-out case, plus both
/// randomization checks. Writes explain/saliency/*, explain/cases.csv and explain/summary.json.
ExplainSummary run_explain(const RunConfig& config, bool rollout, std::ostream& log);

/// Self-contained report/report.html from the eval and explain outputs.
std::filesystem::path run_report(const RunConfig& config, std::ostream& log);

}  // namespace pvit
