#include "pvit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "pvit/checkpoint.hpp"
#include "pvit/explain.hpp"
#include "pvit/report.hpp"
#include "pvit/rng.hpp"

namespace pvit {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------------------------
// Configuration

namespace {

json supervised_json(const SupervisedConfig& c) {
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr}, {"weight_decay", c.weight_decay}};
}

void supervised_from(const json& j, SupervisedConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
}

json distill_json(const DistillConfig& c) {
  return {{"lambda", c.lambda}, {"epochs", c.epochs},       {"batch_size", c.batch_size},
          {"lr", c.lr},         {"weight_decay", c.weight_decay}, {"temperature", c.temperature}};
}

void distill_from(const json& j, DistillConfig& c) {
  c.lambda = j.value("lambda", c.lambda);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.temperature = j.value("temperature", c.temperature);
}

json fewshot_json(const FewShotConfig& c) {
  return {{"k", c.k},
          {"episodes_per_epoch", c.episodes_per_epoch},
          {"epochs", c.epochs},
          {"ce_weight", c.ce_weight},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"query_size", c.query_size},
          {"squared_distance", c.squared_distance},
          {"augment_support", c.augment_support}};
}

void fewshot_from(const json& j, FewShotConfig& c) {
  c.k = j.value("k", c.k);
  c.episodes_per_epoch = j.value("episodes_per_epoch", c.episodes_per_epoch);
  c.epochs = j.value("epochs", c.epochs);
  c.ce_weight = j.value("ce_weight", c.ce_weight);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.query_size = j.value("query_size", c.query_size);
  c.squared_distance = j.value("squared_distance", c.squared_distance);
  c.augment_support = j.value("augment_support", c.augment_support);
}

json cohort_json(const Cohort& c) { return {{"cases", c.cases}, {"controls", c.controls}}; }

void cohort_from(const json& j, Cohort& c) {
  c.cases = j.value("cases", c.cases);
  c.controls = j.value("controls", c.controls);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string hash_json(const json& j) { return hex64(hash_string(j.dump())); }

std::uint64_t derived_seed(const RunConfig& c, std::string_view stream, std::uint64_t index = 0) {
  return mix_seed(mix_seed(c.seed, hash_string(stream)), index);
}

}  // namespace

ViTConfig RunConfig::teacher_config() const { return ViTConfig::preset(teacher_preset); }
ViTConfig RunConfig::student_config() const { return ViTConfig::preset(student_preset); }

void RunConfig::validate() const {
  const ViTConfig t = teacher_config(), s = student_config();
  t.validate();
  s.validate();
  if (t.image_size != s.image_size || t.patch != s.patch) {
    throw std::invalid_argument("teacher and student presets must share image and patch size");
  }
  if (folds < 2) throw std::invalid_argument("fold count must be >= 2");
  if (teacher_cohort.cases == 0 || teacher_cohort.controls == 0 || holdout_cohort.cases == 0 ||
      holdout_cohort.controls == 0) {
    throw std::invalid_argument("teacher and holdout cohorts need both classes");
  }
  if (teacher.epochs == 0 || teacher.batch_size == 0 || baseline.epochs == 0 || baseline.batch_size == 0) {
    throw std::invalid_argument("teacher and baseline epochs and batch size must be >= 1");
  }
  distill.validate();
  fewshot.validate();
  intensity.validate();
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"data", c.data.string()},
           {"out", c.out.string()},
           {"teacher_preset", c.teacher_preset},
           {"student_preset", c.student_preset},
           {"seed", c.seed},
           {"folds", c.folds},
           {"cohorts",
            {{"teacher", cohort_json(c.teacher_cohort)},
             {"distill", cohort_json(c.distill_cohort)},
             {"holdout", cohort_json(c.holdout_cohort)}}},
           {"teacher", supervised_json(c.teacher)},
           {"augment_teacher", c.augment_teacher},
           {"intensity", {{"scale", c.intensity.scale}, {"offset", c.intensity.offset}}},
           {"distill", distill_json(c.distill)},
           {"fewshot", fewshot_json(c.fewshot)},
           {"baseline", supervised_json(c.baseline)},
           {"ablation", c.ablation},
           {"cam_target", cam_target_name(c.cam_target)},
           {"triptychs", c.triptychs}};
}

void from_json(const json& j, RunConfig& c) {
  if (j.contains("data")) c.data = j.at("data").get<std::string>();
  if (j.contains("out")) c.out = j.at("out").get<std::string>();
  c.teacher_preset = j.value("teacher_preset", c.teacher_preset);
  c.student_preset = j.value("student_preset", c.student_preset);
  c.seed = j.value("seed", c.seed);
  c.folds = j.value("folds", c.folds);
  if (j.contains("cohorts")) {
    const json& k = j.at("cohorts");
    if (k.contains("teacher")) cohort_from(k.at("teacher"), c.teacher_cohort);
    if (k.contains("distill")) cohort_from(k.at("distill"), c.distill_cohort);
    if (k.contains("holdout")) cohort_from(k.at("holdout"), c.holdout_cohort);
  }
  if (j.contains("teacher")) supervised_from(j.at("teacher"), c.teacher);
  c.augment_teacher = j.value("augment_teacher", c.augment_teacher);
  if (j.contains("intensity")) {
    c.intensity.scale = j.at("intensity").value("scale", c.intensity.scale);
    c.intensity.offset = j.at("intensity").value("offset", c.intensity.offset);
  }
  if (j.contains("distill")) distill_from(j.at("distill"), c.distill);
  if (j.contains("fewshot")) fewshot_from(j.at("fewshot"), c.fewshot);
  if (j.contains("baseline")) supervised_from(j.at("baseline"), c.baseline);
  c.ablation = j.value("ablation", c.ablation);
  if (j.contains("cam_target")) c.cam_target = parse_cam_target(j.at("cam_target").get<std::string>());
  c.triptychs = j.value("triptychs", c.triptychs);
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  RunConfig c;
  from_json(json::parse(in), c);
  return c;
}

std::string config_hash(const RunConfig& config) {
  json j = config;
  // Locations and presentation do not change any number.
  j.erase("data");
  j.erase("out");
  j.erase("triptychs");
  return hash_json(j);
}

fs::path RunLayout::fold(std::size_t i) const { return checkpoints() / ("student_fold" + std::to_string(i) + ".pvit"); }
fs::path RunLayout::baseline(std::size_t i) const {
  return checkpoints() / ("baseline_fold" + std::to_string(i) + ".pvit");
}

// ---------------------------------------------------------------------------------------------
// Shared plumbing

namespace {

struct Dataset {
  DatasetManifest manifest;
  std::vector<LabeledSlice> slices;
  std::vector<Tensor> inputs;  // model-ready
  FoldSplit folds;
  std::string hash;
  std::map<std::string, std::vector<std::size_t>> by_subject;
};

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return hex64(hash_string(s.str()));
}

Dataset load_dataset(const RunConfig& config) {
  Dataset d;
  const fs::path mpath = manifest_path(config.data);
  d.manifest = read_manifest(mpath);
  d.hash = file_hash(mpath);
  d.slices = load_slices(d.manifest, config.data);
  const std::size_t model_size = config.student_config().image_size;
  for (std::size_t i = 0; i < d.slices.size(); ++i) {
    d.inputs.push_back(prepare_input(d.slices[i].pixels, model_size));
    d.by_subject[d.slices[i].subject].push_back(i);
  }
  if (d.manifest.folds && d.manifest.folds->k == config.folds) {
    d.folds = *d.manifest.folds;
  } else {
    std::map<std::string, std::string> groups;
    std::map<std::string, int> labels;
    for (const auto& s : d.manifest.subjects) {
      groups[s.spec.id] = s.spec.id;
      labels[s.spec.id] = s.spec.label;
    }
    d.folds = stratified_group_kfold(groups, labels, config.folds);
  }
  return d;
}

std::vector<LabeledImage> training_pool(const Dataset& d, std::size_t fold) {
  std::vector<LabeledImage> pool;
  for (std::size_t i = 0; i < d.slices.size(); ++i) {
    if (d.folds.fold.at(d.slices[i].subject) != fold) pool.push_back({d.inputs[i], d.slices[i].label, d.slices[i].subject});
  }
  return pool;
}

std::vector<LabeledImage> cohort_images(const Cohort& cohort, std::uint64_t seed, std::size_t slice_size,
                                        std::size_t model_size) {
  std::vector<LabeledImage> out;
  for (const auto& spec : sample_specs(cohort.cases, cohort.controls, seed)) {
    for (const auto& sl : generate_subject(spec, seed, slice_size)) {
      out.push_back({prepare_input(sl.pixels, model_size), sl.label, "aux-" + hex64(seed) + "/" + sl.subject});
    }
  }
  return out;
}

fs::path partial(const fs::path& p) { return fs::path(p.string() + ".partial"); }
fs::path stamp(const fs::path& p) { return fs::path(p.string() + ".stage"); }

bool stage_current(const fs::path& artifact, const std::string& hash) {
  if (!fs::exists(artifact) || !fs::exists(stamp(artifact))) return false;
  std::ifstream in(stamp(artifact));
  const json j = json::parse(in, nullptr, false);
  return !j.is_discarded() && j.value("hash", std::string{}) == hash;
}

void commit(const fs::path& artifact, const std::string& stage, const std::string& hash) {
  fs::rename(partial(artifact), artifact);
  std::ofstream out(stamp(artifact), std::ios::trunc);
  out << json{{"stage", stage}, {"hash", hash}}.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + stamp(artifact).string());
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

template <typename F>
auto run_stage(const std::string& stage, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

double softmax_positive(const Tensor& z) { return 1.0 / (1.0 + std::exp(z[0] - z[1])); }

struct StageHashes {
  std::string teacher, distill;
  std::vector<std::string> fold, baseline;
};

StageHashes stage_hashes(const RunConfig& config, const std::string& dataset_hash, std::size_t slice_size) {
  StageHashes h;
  const json cfg = config;
  h.teacher = hash_json({{"stage", "teacher"},
                         {"preset", config.teacher_preset},
                         {"slice_size", slice_size},
                         {"seed", config.seed},
                         {"cohort", cfg.at("cohorts").at("teacher")},
                         {"train", cfg.at("teacher")},
                         {"augment", config.augment_teacher},
                         {"intensity", cfg.at("intensity")}});
  h.distill = hash_json({{"stage", "distill"},
                         {"teacher", h.teacher},
                         {"preset", config.student_preset},
                         {"seed", config.seed},
                         {"cohort", cfg.at("cohorts").at("distill")},
                         {"distill", cfg.at("distill")}});
  for (std::size_t i = 0; i < config.folds; ++i) {
    const json common{{"distill", h.distill}, {"data", dataset_hash}, {"folds", config.folds}, {"fold", i}};
    h.fold.push_back(hash_json(
        {{"stage", "fewshot"}, {"on", common}, {"fewshot", cfg.at("fewshot")}, {"intensity", cfg.at("intensity")}}));
    h.baseline.push_back(hash_json(
        {{"stage", "baseline"}, {"on", common}, {"baseline", cfg.at("baseline")}, {"intensity", cfg.at("intensity")}}));
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Training

TrainSummary run_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.out};
  fs::create_directories(layout.checkpoints());
  fs::create_directories(layout.logs());
  write_text(layout.root / "config.json", json(config).dump(2) + "\n");

  const Dataset data = run_stage("load", [&] { return load_dataset(config); });
  const std::size_t slice_size = data.manifest.image_size;
  const ViTConfig tc = config.teacher_config(), sc = config.student_config();
  const StageHashes hashes = stage_hashes(config, data.hash, slice_size);
  TrainSummary summary;

  const auto teacher_pool = cohort_images(config.teacher_cohort, derived_seed(config, "cohort/teacher"), slice_size,
                                          tc.image_size);

  // Stage 1: supervised teacher on the auxiliary cohort.
  const ModelParams teacher = run_stage("teacher", [&] {
    if (stage_current(layout.teacher(), hashes.teacher)) {
      summary.skipped.push_back("teacher");
      return load_params(layout.teacher(), tc);
    }
    log << "[teacher] " << teacher_pool.size() << " slices, " << config.teacher.epochs << " epochs\n";
    std::vector<Tensor> images;
    std::vector<int> labels;
    for (const auto& li : teacher_pool) {
      images.push_back(li.image);
      labels.push_back(li.label);
    }
    SupervisedConfig opts = config.teacher;
    opts.seed = derived_seed(config, "teacher");
    if (config.augment_teacher) {
      opts.augment = [jitter = config.intensity](const Tensor& x, Rng& rng) { return augment(x, rng, jitter); };
    }
    const SupervisedResult r = train_supervised(tc, images, labels, opts);
    write_supervised_csv(layout.logs() / "teacher.csv", r.history);
    save_params(r.params, partial(layout.teacher()));
    commit(layout.teacher(), "teacher", hashes.teacher);
    summary.ran.push_back("teacher");
    return r.params;
  });

  // Stage 2: distillation on the teacher cohort plus an unlabeled auxiliary cohort.
  const ModelParams distilled = run_stage("distill", [&] {
    if (stage_current(layout.distilled(), hashes.distill)) {
      summary.skipped.push_back("distill");
      return load_params(layout.distilled(), sc);
    }
    std::vector<Tensor> images;
    for (const auto& li : teacher_pool) images.push_back(li.image);
    for (const auto& li :
         cohort_images(config.distill_cohort, derived_seed(config, "cohort/distill"), slice_size, sc.image_size)) {
      images.push_back(li.image);
    }
    log << "[distill] " << images.size() << " slices, " << config.distill.epochs << " epochs\n";
    DistillConfig opts = config.distill;
    opts.seed = derived_seed(config, "distill");
    const DistillResult r = run_distillation(teacher, sc, images, opts);
    write_distill_csv(layout.logs() / "distill.csv", r.history);
    save_params(r.student, partial(layout.distilled()));
    commit(layout.distilled(), "distill", hashes.distill);
    summary.ran.push_back("distill");
    return r.student;
  });

  run_stage("agreement", [&] {
    const auto holdout =
        cohort_images(config.holdout_cohort, derived_seed(config, "cohort/holdout"), slice_size, sc.image_size);
    std::size_t agree = 0, teacher_right = 0, student_right = 0;
    for (const auto& li : holdout) {
      const std::size_t t = predict_class(teacher, li.image), s = predict_class(distilled, li.image);
      agree += t == s;
      teacher_right += t == static_cast<std::size_t>(li.label);
      student_right += s == static_cast<std::size_t>(li.label);
    }
    const double n = static_cast<double>(holdout.size());
    summary.agreement = static_cast<double>(agree) / n;
    summary.teacher_holdout_accuracy = static_cast<double>(teacher_right) / n;
    summary.student_holdout_accuracy = static_cast<double>(student_right) / n;
    write_text(layout.logs() / "agreement.json", json{{"slices", holdout.size()},
                                                      {"agreement", summary.agreement},
                                                      {"teacher_accuracy", summary.teacher_holdout_accuracy},
                                                      {"student_accuracy", summary.student_holdout_accuracy}}
                                                         .dump(2) + "\n");
    log << "[distill] holdout agreement " << summary.agreement << " (teacher acc " << summary.teacher_holdout_accuracy
        << ", student acc " << summary.student_holdout_accuracy << ")\n";
    return 0;
  });

  // Stage 3: per-fold episodic fine-tuning and the plain cross-entropy baseline.
  for (std::size_t i = 0; i < config.folds; ++i) {
    const std::string name = "fewshot fold " + std::to_string(i);
    const auto pool = training_pool(data, i);
    run_stage(name, [&] {
      if (stage_current(layout.fold(i), hashes.fold[i])) {
        summary.skipped.push_back(name);
        return 0;
      }
      log << "[" << name << "] " << pool.size() << " training slices\n";
      FewShotConfig opts = config.fewshot;
      opts.seed = derived_seed(config, "fewshot", i);
      opts.intensity = config.intensity;
      const FineTuneResult r = finetune_run(distilled, pool, opts);
      write_fewshot_csv(layout.logs() / ("fewshot_fold" + std::to_string(i) + ".csv"), r.history);
      save_params(r.params, partial(layout.fold(i)));
      commit(layout.fold(i), "fewshot", hashes.fold[i]);
      summary.ran.push_back(name);
      return 0;
    });
    if (!config.ablation) continue;
    const std::string bname = "baseline fold " + std::to_string(i);
    run_stage(bname, [&] {
      if (stage_current(layout.baseline(i), hashes.baseline[i])) {
        summary.skipped.push_back(bname);
        return 0;
      }
      log << "[" << bname << "] " << pool.size() << " training slices\n";
      std::vector<Tensor> images;
      std::vector<int> labels;
      for (const auto& li : pool) {
        images.push_back(li.image);
        labels.push_back(li.label);
      }
      SupervisedConfig opts = config.baseline;
      opts.seed = derived_seed(config, "baseline", i);
      opts.augment = [jitter = config.intensity](const Tensor& x, Rng& rng) { return augment(x, rng, jitter); };
      const SupervisedResult r = train_supervised(sc, images, labels, opts, &distilled);
      write_supervised_csv(layout.logs() / ("baseline_fold" + std::to_string(i) + ".csv"), r.history);
      save_params(r.params, partial(layout.baseline(i)));
      commit(layout.baseline(i), "baseline", hashes.baseline[i]);
      summary.ran.push_back(bname);
      return 0;
    });
  }
  return summary;
}

// ---------------------------------------------------------------------------------------------
// Evaluation

namespace {

ModelParams load_fold(const fs::path& path, const ViTConfig& config, const std::string& what) {
  if (!fs::exists(path)) throw std::runtime_error("missing " + what + " checkpoint " + path.string());
  return load_params(path, config);
}

FoldMetrics metrics_of(std::size_t fold, std::span<const ScoredSubject> scored) {
  const ConfusionMetrics cm = confusion_metrics(scored, kDecisionThreshold);
  return {fold, scored.size(), auroc(scored), cm.accuracy, cm.sensitivity, cm.specificity};
}

FoldMetrics mean_metrics(std::span<const FoldMetrics> folds) {
  FoldMetrics m{folds.size(), 0, 0, 0, 0, 0};
  for (const auto& f : folds) {
    m.subjects += f.subjects;
    m.auroc += f.auroc;
    m.accuracy += f.accuracy;
    m.sensitivity += f.sensitivity;
    m.specificity += f.specificity;
  }
  const double n = static_cast<double>(folds.size());
  m.auroc /= n;
  m.accuracy /= n;
  m.sensitivity /= n;
  m.specificity /= n;
  return m;
}

json metrics_json(const FoldMetrics& m) {
  return {{"fold", m.fold},         {"subjects", m.subjects},       {"auroc", m.auroc},
          {"accuracy", m.accuracy}, {"sensitivity", m.sensitivity}, {"specificity", m.specificity}};
}

std::string metrics_csv(std::span<const FoldMetrics> folds, const FoldMetrics& aggregate, const MetricIntervals& ci) {
  std::ostringstream s;
  s.precision(17);
  s << "fold,subjects,auroc,accuracy,sensitivity,specificity,threshold\n";
  auto row = [&](const std::string& name, std::size_t subjects, double auroc, double acc, double sens, double spec) {
    s << name << ',' << subjects << ',' << auroc << ',' << acc << ',' << sens << ',' << spec << ','
      << kDecisionThreshold << '\n';
  };
  for (const auto& f : folds) row(std::to_string(f.fold), f.subjects, f.auroc, f.accuracy, f.sensitivity, f.specificity);
  row("mean", aggregate.subjects, aggregate.auroc, aggregate.accuracy, aggregate.sensitivity, aggregate.specificity);
  row("ci_lower", aggregate.subjects, ci.auroc.lower, ci.accuracy.lower, ci.sensitivity.lower, ci.specificity.lower);
  row("ci_upper", aggregate.subjects, ci.auroc.upper, ci.accuracy.upper, ci.sensitivity.upper, ci.specificity.upper);
  return s.str();
}

MetricIntervals bootstrap_metrics(std::span<const ScoredSubject> pooled, std::uint64_t seed) {
  constexpr std::size_t kResamples = 2000;
  auto at_threshold = [](auto pick) {
    return [pick](std::span<const ScoredSubject> s) { return pick(confusion_metrics(s, kDecisionThreshold)); };
  };
  // One seed for all four, so each metric sees the same resamples.
  return {bootstrap_ci(pooled, [](std::span<const ScoredSubject> s) { return auroc(s); }, kResamples, seed),
          bootstrap_ci(pooled, at_threshold([](const ConfusionMetrics& m) { return m.accuracy; }), kResamples, seed),
          bootstrap_ci(pooled, at_threshold([](const ConfusionMetrics& m) { return m.sensitivity; }), kResamples, seed),
          bootstrap_ci(pooled, at_threshold([](const ConfusionMetrics& m) { return m.specificity; }), kResamples, seed)};
}

json interval_json(const Interval& i) { return json::array({i.lower, i.upper}); }

json intervals_json(const MetricIntervals& m) {
  return {{"auroc", interval_json(m.auroc)},
          {"accuracy", interval_json(m.accuracy)},
          {"sensitivity", interval_json(m.sensitivity)},
          {"specificity", interval_json(m.specificity)}};
}

json wilcoxon_json(const WilcoxonResult& w) {
  return {{"p", w.p}, {"w_plus", w.w_plus}, {"n", w.n}, {"exact", w.exact}, {"degenerate", w.degenerate}};
}

json delong_json(std::span<const double> a, std::span<const double> b, std::span<const int> labels) {
  try {
    const DeLongResult d = delong_test(a, b, labels);
    return {{"auroc_a", d.auroc_a}, {"auroc_b", d.auroc_b}, {"z", d.z}, {"p", d.p}, {"applicable", true}};
  } catch (const StatsError& e) {
    return {{"applicable", false}, {"reason", e.what()}};
  }
}

json comparison_json(std::span<const SubjectScore> scores, const std::map<std::string, double>& other,
                     std::span<const FoldMetrics> ours, std::span<const FoldMetrics> theirs) {
  std::vector<double> a, b;
  std::vector<int> labels;
  for (const auto& s : scores) {
    const auto it = other.find(s.subject);
    if (it == other.end()) continue;
    a.push_back(s.score);
    b.push_back(it->second);
    labels.push_back(s.label);
  }
  std::vector<double> d_auroc, d_acc;
  for (std::size_t i = 0; i < std::min(ours.size(), theirs.size()); ++i) {
    d_auroc.push_back(ours[i].auroc - theirs[i].auroc);
    d_acc.push_back(ours[i].accuracy - theirs[i].accuracy);
  }
  const double gap = std::accumulate(d_acc.begin(), d_acc.end(), 0.0) / static_cast<double>(d_acc.size());
  return {{"subjects", a.size()},
          {"delong", delong_json(a, b, labels)},
          {"wilcoxon_fold_auroc", wilcoxon_json(wilcoxon_signed_rank(d_auroc))},
          {"wilcoxon_fold_accuracy", wilcoxon_json(wilcoxon_signed_rank(d_acc))},
          {"mean_accuracy_gap", gap}};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

struct FoldScoring {
  ModelParams model;
  Prototypes protos;
};

FoldScoring score_model(const RunConfig& config, const Dataset& data, std::size_t fold) {
  const RunLayout layout{config.out};
  ModelParams model = load_fold(layout.fold(fold), config.student_config(), "fold " + std::to_string(fold));
  const Prototypes protos = prototypes_from(model, training_pool(data, fold));
  return {std::move(model), protos};
}

std::vector<Tensor> subject_inputs(const Dataset& data, const std::string& subject) {
  std::vector<Tensor> out;
  for (std::size_t i : data.by_subject.at(subject)) out.push_back(data.inputs[i]);
  return out;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

EvalReport run_eval(const RunConfig& config, const std::optional<fs::path>& compare, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.out};
  const Dataset data = load_dataset(config);
  EvalReport report;
  report.config_hash = config_hash(config);
  const bool with_baseline = config.ablation && fs::exists(layout.baseline(0));

  for (std::size_t f = 0; f < config.folds; ++f) {
    const FoldScoring fs_ = score_model(config, data, f);
    std::optional<ModelParams> base;
    if (with_baseline) base = load_fold(layout.baseline(f), config.student_config(), "baseline fold " + std::to_string(f));
    std::vector<ScoredSubject> scored, scored_base;
    for (const std::string& subject : data.folds.members(f)) {
      const int label = data.manifest.subject(subject).spec.label;
      const auto inputs = subject_inputs(data, subject);
      SubjectScore s{subject, f, label, predict_subject(fs_.model, fs_.protos, inputs, config.fewshot.squared_distance), {}};
      if (base) {
        double p = 0.0;
        for (const auto& img : inputs) p += softmax_positive(predict(*base, img).logits);
        s.baseline = p / static_cast<double>(inputs.size());
        scored_base.push_back({subject, label, *s.baseline});
      }
      scored.push_back({subject, label, s.score});
      report.scores.push_back(s);
    }
    report.folds.push_back(metrics_of(f, scored));
    if (base) report.baseline_folds.push_back(metrics_of(f, scored_base));
    log << "[eval] fold " << f << ": AUROC " << report.folds.back().auroc << ", accuracy "
        << report.folds.back().accuracy << "\n";
  }
  report.aggregate = mean_metrics(report.folds);
  if (with_baseline) report.baseline_aggregate = mean_metrics(report.baseline_folds);

  std::vector<ScoredSubject> pooled, pooled_base;
  std::size_t tp = 0, pos = 0, tn = 0, neg = 0;
  for (const auto& s : report.scores) {
    pooled.push_back({s.subject, s.label, s.score});
    if (s.baseline) pooled_base.push_back({s.subject, s.label, *s.baseline});
    if (s.label == 1) {
      ++pos;
      tp += s.score >= kDecisionThreshold;
    } else {
      ++neg;
      tn += s.score < kDecisionThreshold;
    }
  }
  report.bootstrap = bootstrap_metrics(pooled, derived_seed(config, "bootstrap"));
  if (with_baseline) report.baseline_bootstrap = bootstrap_metrics(pooled_base, derived_seed(config, "bootstrap"));
  report.sensitivity_ci = clopper_pearson(tp, pos);
  report.specificity_ci = clopper_pearson(tn, neg);

  report.tests = json::object();
  report.tests["pooled_auroc"] = auroc(pooled);
  report.tests["auroc_ci"] = interval_json(report.bootstrap.auroc);
  report.tests["accuracy_ci"] = interval_json(report.bootstrap.accuracy);
  report.tests["sensitivity_ci"] = interval_json(report.sensitivity_ci);
  report.tests["specificity_ci"] = interval_json(report.specificity_ci);
  report.tests["cp_intervals"] = {{"sensitivity", interval_json(report.sensitivity_ci)},
                                  {"specificity", interval_json(report.specificity_ci)}};
  report.tests["operating_point"] = [&] {
    const OperatingPoint op = operating_point(pooled, 0.9);
    return json{{"threshold", op.threshold}, {"sensitivity", op.sensitivity}, {"specificity", op.specificity}};
  }();
  if (with_baseline) {
    std::map<std::string, double> base;
    for (const auto& s : report.scores) base[s.subject] = *s.baseline;
    report.tests["episodic_vs_baseline"] = comparison_json(report.scores, base, report.folds, report.baseline_folds);
  }
  if (compare) {
    const auto rows = read_csv(*compare / "eval" / "scores.csv");
    std::map<std::string, double> other;
    std::map<std::size_t, std::vector<ScoredSubject>> other_folds;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      if (rows[r].size() < 4) continue;
      other[rows[r][0]] = std::stod(rows[r][3]);
      other_folds[std::stoul(rows[r][1])].push_back({rows[r][0], std::stoi(rows[r][2]), std::stod(rows[r][3])});
    }
    std::vector<FoldMetrics> theirs;
    for (const auto& [fold, scored] : other_folds) theirs.push_back(metrics_of(fold, scored));
    report.tests["compare"] = comparison_json(report.scores, other, report.folds, theirs);
    report.tests["compare"]["against"] = compare->string();
  }
  // Headline p-values: the explicit comparison run if given, else the plain-CE ablation.
  report.tests["delong_p"] = nullptr;
  report.tests["wilcoxon_p"] = nullptr;
  for (const char* key : {"episodic_vs_baseline", "compare"}) {
    if (!report.tests.contains(key)) continue;
    const json& c = report.tests.at(key);
    report.tests["delong_p"] = c.at("delong").contains("p") ? c.at("delong").at("p") : json(nullptr);
    report.tests["wilcoxon_p"] = c.at("wilcoxon_fold_accuracy").at("p");
  }

  fs::create_directories(layout.eval());
  write_text(layout.eval() / "metrics.csv", metrics_csv(report.folds, report.aggregate, report.bootstrap));
  if (with_baseline) {
    write_text(layout.eval() / "metrics_baseline.csv",
               metrics_csv(report.baseline_folds, *report.baseline_aggregate, *report.baseline_bootstrap));
  }
  {
    std::ostringstream s;
    s.precision(17);
    s << "subject,fold,label,score" << (with_baseline ? ",baseline_score" : "") << '\n';
    for (const auto& r : report.scores) {
      s << r.subject << ',' << r.fold << ',' << r.label << ',' << r.score;
      if (r.baseline) s << ',' << *r.baseline;
      s << '\n';
    }
    write_text(layout.eval() / "scores.csv", s.str());
  }
  write_text(layout.eval() / "tests.json", report.tests.dump(2) + "\n");

  json folds = json::array(), base_folds = json::array(), roc = json::array();
  for (const auto& f : report.folds) folds.push_back(metrics_json(f));
  for (const auto& f : report.baseline_folds) base_folds.push_back(metrics_json(f));
  for (const auto& p : roc_curve(pooled)) roc.push_back({std::isinf(p.threshold) ? json("inf") : json(p.threshold), p.fpr, p.tpr});
  json rj{{"folds", folds},
          {"aggregate", metrics_json(report.aggregate)},
          {"baseline_folds", base_folds},
          {"bootstrap_ci", intervals_json(report.bootstrap)},
          {"roc", roc},
          {"tests", report.tests},
          {"provenance",
           {{"config_hash", report.config_hash},
            {"dataset_hash", data.hash},
            {"seed", config.seed},
            {"generated", timestamp()}}}};
  if (report.baseline_aggregate) rj["baseline_aggregate"] = metrics_json(*report.baseline_aggregate);
  if (report.baseline_bootstrap) rj["baseline_bootstrap_ci"] = intervals_json(*report.baseline_bootstrap);
  write_text(layout.eval() / "report.json", rj.dump(2) + "\n");
  log << "[eval] mean AUROC " << report.aggregate.auroc << " (95% CI " << report.bootstrap.auroc.lower << ", "
      << report.bootstrap.auroc.upper << ")\n";
  return report;
}

// ---------------------------------------------------------------------------------------------
// Explanations

ExplainSummary run_explain(const RunConfig& config, bool rollout, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.out};
  const Dataset data = load_dataset(config);
  const std::size_t slice_size = data.manifest.image_size;
  const GradCamOptions cam_opts{.output_size = slice_size, .target = config.cam_target};
  ExplainSummary summary;
  const fs::path sal_dir = layout.explain() / "saliency";
  fs::remove_all(sal_dir);
  fs::create_directories(sal_dir);

  std::vector<double> sanity_original, sanity_permuted;
  double drop_sum = 0.0;
  std::set<std::string> sanity_subjects;

  for (std::size_t f = 0; f < config.folds; ++f) {
    const FoldScoring fold = score_model(config, data, f);
    Rng perm_rng(derived_seed(config, "permute", f));
    const ModelParams permuted = permute_params(fold.model, perm_rng);
    std::vector<Tensor> noise_images;
    std::vector<Mask> noise_masks;

    for (const std::string& subject : data.folds.members(f)) {
      if (data.manifest.subject(subject).spec.label != 1) continue;  // lesion masks exist for cases only
      const auto inputs = subject_inputs(data, subject);
      const double score = predict_subject(fold.model, fold.protos, inputs, config.fewshot.squared_distance);
      if (score < kDecisionThreshold) continue;  // correctly predicted cases only

      CaseSaliency cs{subject, f, 0, 0, 0, std::nullopt};
      double rollout_sum = 0.0;
      const auto& idx = data.by_subject.at(subject);
      for (std::size_t i : idx) {
        const LabeledSlice& sl = data.slices[i];
        const SaliencyMap cam = grad_cam(fold.model, data.inputs[i], 1, cam_opts);
        cs.dice += dice(*cam.threshold_mask, sl.lesion).value;
        cs.energy += energy_fraction(cam.upsampled.data(), sl.lesion).value;
        cs.lesion_area += static_cast<double>(std::count(sl.lesion.begin(), sl.lesion.end(), 1)) /
                          static_cast<double>(sl.lesion.size());
        write_saliency(sal_dir, subject + "_" + plane_name(sl.plane), subject + "/" + plane_name(sl.plane), 1, cam);
        if (rollout) {
          const ViTConfig& mc = fold.model.config();
          const Tensor coarse = attention_rollout(*predict(fold.model, data.inputs[i], true).trace, mc);
          Tensor up = bilinear_upsample(coarse, slice_size, slice_size);
          rollout_sum += dice(binarize_top_quintile(up).mask, *cam.threshold_mask).value;
        }
        sanity_original.push_back(median(cam.raw.storage()));
        sanity_permuted.push_back(median(grad_cam(permuted, data.inputs[i], 1, {.output_size = slice_size, .target = config.cam_target, .binarize = false}).raw.storage()));
        noise_images.push_back(data.inputs[i]);
        noise_masks.push_back(sl.lesion);
        sanity_subjects.insert(subject);
      }
      const double n = static_cast<double>(idx.size());
      cs.dice /= n;
      cs.energy /= n;
      cs.lesion_area /= n;
      if (rollout) cs.rollout_dice = rollout_sum / n;
      summary.cases.push_back(cs);
    }
    if (!noise_images.empty()) {
      Rng noise_rng(derived_seed(config, "noise", f));
      try {
        const DiceDrop d = input_randomization_check(fold.model, noise_images, noise_masks, 1, std::nullopt, noise_rng, cam_opts);
        drop_sum += d.drop * static_cast<double>(d.used);
        summary.noise_used += d.used;
        summary.noise_excluded += d.excluded;
      } catch (const std::invalid_argument&) {
        summary.noise_excluded += noise_images.size();  // every before-Dice was zero
      }
    }
    log << "[explain] fold " << f << " done\n";
  }
  if (summary.cases.empty()) throw std::runtime_error("explain: no correctly predicted cases");

  std::vector<double> diffs;
  std::size_t aligned = 0;
  double rollout_sum = 0.0;
  for (const auto& c : summary.cases) {
    summary.mean_dice += c.dice;
    summary.mean_energy += c.energy;
    summary.mean_lesion_area += c.lesion_area;
    diffs.push_back(c.energy - c.lesion_area);
    aligned += c.energy > c.lesion_area;
    if (c.rollout_dice) rollout_sum += *c.rollout_dice;
  }
  const double n = static_cast<double>(summary.cases.size());
  summary.mean_dice /= n;
  summary.mean_energy /= n;
  summary.mean_lesion_area /= n;
  summary.aligned_fraction = static_cast<double>(aligned) / n;
  summary.energy_sign = sign_test(diffs);
  if (rollout) summary.mean_rollout_dice = rollout_sum / n;

  summary.sanity_images = sanity_original.size();
  summary.sanity_cases = sanity_subjects.size();
  summary.permutation_original_median = median(sanity_original);
  summary.permutation_permuted_median = median(sanity_permuted);
  summary.permutation_ratio = summary.permutation_original_median > 0.0
                                  ? summary.permutation_permuted_median / summary.permutation_original_median
                                  : std::numeric_limits<double>::infinity();
  summary.noise_dice_drop = summary.noise_used ? drop_sum / static_cast<double>(summary.noise_used) : 0.0;

  std::ostringstream csv;
  csv.precision(17);
  csv << "subject,fold,dice,energy_fraction,lesion_area" << (rollout ? ",rollout_dice" : "") << '\n';
  for (const auto& c : summary.cases) {
    csv << c.subject << ',' << c.fold << ',' << c.dice << ',' << c.energy << ',' << c.lesion_area;
    if (c.rollout_dice) csv << ',' << *c.rollout_dice;
    csv << '\n';
  }
  write_text(layout.explain() / "cases.csv", csv.str());
  json j{{"cases", summary.cases.size()},
         {"mean_dice", summary.mean_dice},
         {"mean_energy_fraction", summary.mean_energy},
         {"mean_lesion_area", summary.mean_lesion_area},
         {"energy_sign_test",
          {{"positive", summary.energy_sign.positive}, {"negative", summary.energy_sign.negative}, {"p", summary.energy_sign.p}}},
         {"aligned_fraction", summary.aligned_fraction},
         {"permutation",
          {{"ratio", summary.permutation_ratio},
           {"original_median", summary.permutation_original_median},
           {"permuted_median", summary.permutation_permuted_median}}},
         {"noise",
          {{"dice_drop", summary.noise_dice_drop}, {"used", summary.noise_used}, {"excluded", summary.noise_excluded}}},
         {"sanity_images", summary.sanity_images},
         {"sanity_cases", summary.sanity_cases},
         {"config_hash", config_hash(config)}};
  if (summary.mean_rollout_dice) j["mean_rollout_dice"] = *summary.mean_rollout_dice;
  write_text(layout.explain() / "summary.json", j.dump(2) + "\n");
  log << "[explain] " << summary.cases.size() << " cases, mean Dice " << summary.mean_dice << ", energy "
      << summary.mean_energy << " vs area " << summary.mean_lesion_area << ", permutation ratio "
      << summary.permutation_ratio << ", noise drop " << summary.noise_dice_drop << "\n";
  return summary;
}

// ---------------------------------------------------------------------------------------------
// Report

namespace {

std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string img_tag(const std::vector<std::uint8_t>& rgb, std::size_t size, const std::string& alt) {
  return "<img alt=\"" + html_escape(alt) + "\" src=\"data:image/png;base64," + base64(encode_png(rgb, size, size)) + "\">";
}

std::string metrics_table(const json& folds, const json& aggregate, const json& ci) {
  std::ostringstream s;
  s << "<table><tr><th>fold</th><th>subjects</th><th>AUROC</th><th>accuracy</th><th>sensitivity</th><th>specificity</th></tr>\n";
  auto row = [&](const std::string& name, const json& m) {
    s << "<tr><td>" << name << "</td><td>" << m.at("subjects").get<std::size_t>() << "</td><td>"
      << fmt(m.at("auroc")) << "</td><td>" << fmt(m.at("accuracy")) << "</td><td>" << fmt(m.at("sensitivity"))
      << "</td><td>" << fmt(m.at("specificity")) << "</td></tr>\n";
  };
  for (const auto& f : folds) row(std::to_string(f.at("fold").get<std::size_t>()), f);
  row("mean", aggregate);
  if (!ci.is_null()) {
    auto cell = [&](const char* k) { return "[" + fmt(ci.at(k)[0]) + ", " + fmt(ci.at(k)[1]) + "]"; };
    s << "<tr><td>95% CI</td><td></td><td>" << cell("auroc") << "</td><td>" << cell("accuracy") << "</td><td>"
      << cell("sensitivity") << "</td><td>" << cell("specificity") << "</td></tr>\n";
  }
  s << "</table>\n";
  return s.str();
}

}  // namespace

fs::path run_report(const RunConfig& config, std::ostream& log) {
  const RunLayout layout{config.out};
  const std::vector<fs::path> required{layout.eval() / "report.json", layout.explain() / "summary.json",
                                       layout.explain() / "cases.csv", manifest_path(config.data)};
  std::vector<std::string> missing;
  for (const auto& p : required)
    if (!fs::exists(p)) missing.push_back(p.string());
  if (!missing.empty()) {
    std::string msg = "report: missing inputs:";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }
  const json eval = read_json(layout.eval() / "report.json");
  const json expl = read_json(layout.explain() / "summary.json");
  const DatasetManifest manifest = read_manifest(manifest_path(config.data));
  const std::size_t size = manifest.image_size;

  std::ostringstream h;
  h << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>pvit run report</title>\n"
    << "<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse;margin:1em 0}"
       "td,th{border:1px solid #999;padding:3px 8px;text-align:right}img{margin:2px;width:224px;height:224px;"
       "image-rendering:pixelated}.trip{margin:1em 0}</style></head><body>\n";
  h << "<h1>Run report</h1>\n<p>config hash " << html_escape(eval.at("provenance").at("config_hash")) << ", seed "
    << eval.at("provenance").at("seed").get<std::uint64_t>() << ", dataset hash "
    << html_escape(eval.at("provenance").at("dataset_hash")) << ", generated "
    << html_escape(eval.at("provenance").at("generated")) << "</p>\n";

  h << "<h2>Subject-level metrics (episodic fine-tune)</h2>\n" << metrics_table(eval.at("folds"), eval.at("aggregate"), eval.value("bootstrap_ci", json()));
  const json& tests = eval.at("tests");
  h << "<p>Pooled AUROC " << fmt(tests.at("pooled_auroc")) << ", bootstrap 95% CI [" << fmt(tests.at("auroc_ci")[0])
    << ", " << fmt(tests.at("auroc_ci")[1]) << "]; sensitivity CI [" << fmt(tests.at("sensitivity_ci")[0]) << ", "
    << fmt(tests.at("sensitivity_ci")[1]) << "]; specificity CI [" << fmt(tests.at("specificity_ci")[0]) << ", "
    << fmt(tests.at("specificity_ci")[1]) << "] (Clopper–Pearson).</p>\n";
  if (eval.contains("baseline_aggregate")) {
    h << "<h2>Plain cross-entropy baseline</h2>\n" << metrics_table(eval.at("baseline_folds"), eval.at("baseline_aggregate"),
                                                                  eval.value("baseline_bootstrap_ci", json()));
  }
  for (const char* key : {"episodic_vs_baseline", "compare"}) {
    if (!tests.contains(key)) continue;
    const json& c = tests.at(key);
    h << "<h3>" << (std::string(key) == "compare" ? "Comparison run" : "Episodic vs baseline") << "</h3>\n<ul>";
    const json& d = c.at("delong");
    if (d.at("applicable").get<bool>()) {
      h << "<li>DeLong: AUROC " << fmt(d.at("auroc_a")) << " vs " << fmt(d.at("auroc_b")) << ", z = " << fmt(d.at("z"))
        << ", p = " << fmt(d.at("p")) << "</li>";
    } else {
      h << "<li>DeLong not applicable: " << html_escape(d.at("reason")) << "</li>";
    }
    h << "<li>Wilcoxon on fold AUROC: p = " << fmt(c.at("wilcoxon_fold_auroc").at("p")) << "</li>"
      << "<li>Wilcoxon on fold accuracy: p = " << fmt(c.at("wilcoxon_fold_accuracy").at("p")) << "</li>"
      << "<li>Mean accuracy gap: " << fmt(c.at("mean_accuracy_gap")) << "</li></ul>\n";
  }

  h << "<h2>ROC (pooled)</h2>\n<table><tr><th>threshold</th><th>FPR</th><th>TPR</th></tr>\n";
  for (const auto& p : eval.at("roc")) {
    h << "<tr><td>" << (p[0].is_string() ? std::string("+inf") : fmt(p[0])) << "</td><td>" << fmt(p[1]) << "</td><td>"
      << fmt(p[2]) << "</td></tr>\n";
  }
  h << "</table>\n";

  h << "<h2>Saliency</h2>\n<ul><li>" << expl.at("cases").get<std::size_t>() << " correctly predicted cases; mean Dice "
    << fmt(expl.at("mean_dice")) << "</li><li>mean energy fraction " << fmt(expl.at("mean_energy_fraction"))
    << " vs mean lesion area " << fmt(expl.at("mean_lesion_area")) << " (sign test p = "
    << fmt(expl.at("energy_sign_test").at("p"), 6) << ")</li><li>saliency-aligned cases "
    << fmt(expl.at("aligned_fraction")) << "</li><li>weight-permutation median ratio "
    << fmt(expl.at("permutation").at("ratio")) << "</li><li>input-noise Dice drop " << fmt(expl.at("noise").at("dice_drop"))
    << "</li>";
  if (expl.contains("mean_rollout_dice")) h << "<li>Grad-CAM vs rollout Dice " << fmt(expl.at("mean_rollout_dice")) << "</li>";
  h << "</ul>\n";

  const auto rows = read_csv(layout.explain() / "cases.csv");
  std::size_t shown = 0;
  for (std::size_t r = 1; r < rows.size() && shown < config.triptychs; ++r, ++shown) {
    const std::string& subject = rows[r][0];
    const SubjectRecord& rec = manifest.subject(subject);
    const SliceRecord& slice = rec.slices.front();
    Tensor pixels({size, size}, read_f32(config.data / slice.image, size * size));
    const std::string stem = subject + "_" + plane_name(slice.plane);
    Tensor sal({size, size}, read_f32(layout.explain() / "saliency" / (stem + ".sal"), size * size));
    h << "<div class=\"trip\"><b>" << html_escape(stem) << "</b> Dice " << fmt(std::stod(rows[r][2])) << "<br>"
      << img_tag(gray_rgb(pixels), size, stem + " slice") << img_tag(saliency_rgb(sal), size, stem + " Grad-CAM")
      << img_tag(composite_rgb(pixels, sal), size, stem + " composite") << "</div>\n";
  }
  h << "</body></html>\n";

  const fs::path out = layout.report() / "report.html";
  write_text(out, h.str());
  log << "[report] wrote " << out.string() << "\n";
  return out;
}

}  // namespace pvit
