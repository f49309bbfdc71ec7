#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pvit/phantom.hpp"
#include "pvit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pvit;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool out_required) {
  cmd->add_option("--config", f.config, "RunConfig JSON; defaults to <out>/config.json when present");
  cmd->add_option("--data", f.data, "dataset directory holding manifest.json");
  auto* out = cmd->add_option("--out", f.out, "run output directory");
  if (out_required) out->required();
  cmd->add_option("--seed", f.seed, "global seed (overrides PVIT_SEED and the config)");
  cmd->add_option("--preset", f.preset, "model pair: micro (micro-teacher/micro-student) or full (teacher/student)")
      ->check(CLI::IsMember({"micro", "full"}));
}

/// Precedence: explicit flag, then PVIT_SEED, then --config / <out>/config.json, then defaults.
RunConfig resolve(const CommonFlags& f) {
  RunConfig c;
  if (f.config) {
    c = load_run_config(*f.config);
  } else if (f.out && fs::exists(fs::path(*f.out) / "config.json")) {
    c = load_run_config(fs::path(*f.out) / "config.json");
  }
  if (f.data) c.data = *f.data;
  if (f.out) c.out = *f.out;
  if (const char* env = std::getenv("PVIT_SEED")) {
    try {
      c.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw CLI::ValidationError("PVIT_SEED", "must be an unsigned integer, got '" + std::string(env) + "'");
    }
  }
  if (f.seed) c.seed = *f.seed;
  if (f.preset) {
    c.teacher_preset = *f.preset == "micro" ? "micro-teacher" : "teacher";
    c.student_preset = *f.preset == "micro" ? "micro-student" : "student";
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot compact vision transformer pipeline on synthetic brain phantoms"};
  app.require_subcommand(1);

  std::size_t cases = 79, controls = 90, size = 224, folds = 5;
  std::uint64_t gen_seed = 7;
  std::string gen_out, regime = "standard";
  auto* gen = app.add_subcommand("phantom-gen", "generate a phantom dataset and manifest");
  gen->add_option("--cases", cases, "number of case subjects");
  gen->add_option("--controls", controls, "number of control subjects");
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--size", size, "slice size in pixels");
  gen->add_option("--folds", folds, "stratified grouped folds stored in the manifest");
  gen->add_option("--regime", regime, "parameter regime")->check(CLI::IsMember({"standard", "hard"}));

  CommonFlags train_f, eval_f, explain_f, report_f;
  std::string ablation = "none";
  auto* train = app.add_subcommand("train", "teacher, distillation and per-fold fine-tuning");
  add_common(train, train_f, true);
  train->add_option("--ablation", ablation, "plain-ce also trains the non-episodic baseline")
      ->check(CLI::IsMember({"none", "plain-ce"}));

  std::optional<std::string> compare;
  auto* eval = app.add_subcommand("eval", "subject-level scoring, metrics and statistical tests");
  add_common(eval, eval_f, true);
  eval->add_option("--compare", compare, "another run directory to compare against");

  bool rollout = false;
  auto* explain = app.add_subcommand("explain", "Grad-CAM saliency, lesion overlap and sanity checks");
  add_common(explain, explain_f, true);
  explain->add_flag("--rollout", rollout, "also compute attention rollout and cross-method Dice");
  std::optional<std::string> cam_target;
  explain->add_option("--cam-target", cam_target, "Grad-CAM feature layer")
      ->check(CLI::IsMember({"final-features", "last-block-input"}));

  std::optional<std::size_t> triptychs;
  auto* report = app.add_subcommand("report", "self-contained HTML report");
  add_common(report, report_f, true);
  report->add_option("--triptychs", triptychs, "number of slice/heatmap/composite samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsageError;
  }

  // Argument-level validation maps to the usage exit code; everything later is a runtime failure.
  RunConfig config;
  try {
    if (*gen) {
      if (cases == 0 || controls == 0) throw CLI::ValidationError("--cases/--controls", "counts must be >= 1");
      if (size == 0 || folds < 2) throw CLI::ValidationError("--size/--folds", "size must be >= 1 and folds >= 2");
    } else {
      const CommonFlags& f = *train ? train_f : *eval ? eval_f : *explain ? explain_f : report_f;
      config = resolve(f);
      if (*train && ablation == "plain-ce") config.ablation = true;
      if (*report && triptychs) config.triptychs = *triptychs;
      if (*explain && cam_target) config.cam_target = parse_cam_target(*cam_target);
      config.validate();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }

  try {
    if (*gen) {
      const Regime r = regime == "hard" ? Regime::hard() : Regime::standard();
      const DatasetManifest m = generate_dataset(cases, controls, gen_seed, gen_out, size, r, folds);
      std::size_t slices = 0;
      for (const auto& s : m.subjects) slices += s.slices.size();
      std::cout << manifest_path(gen_out).string() << "\n"
                << m.subjects.size() << " subjects (" << cases << " cases, " << controls << " controls), " << slices
                << " slices\n";
    } else if (*train) {
      const TrainSummary s = run_train(config, std::cout);
      std::cout << "ran " << s.ran.size() << " stages, skipped " << s.skipped.size() << "\n";
    } else if (*eval) {
      run_eval(config, compare ? std::optional<fs::path>(*compare) : std::nullopt, std::cout);
    } else if (*explain) {
      run_explain(config, rollout, std::cout);
    } else if (*report) {
      run_report(config, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
