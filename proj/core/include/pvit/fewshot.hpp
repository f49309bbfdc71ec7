#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pvit/autodiff.hpp"
#include "pvit/rng.hpp"
#include "pvit/vit.hpp"

namespace pvit {

/// One model-ready slice. Label 1 = case (Batten), 0 = control.
struct LabeledImage {
  Tensor image;
  int label = 0;
  std::string subject;
};

/// Indices into the pool an episode was drawn from.
struct Episode {
  std::vector<std::size_t> support;  // K per class, class 0 first
  std::vector<std::size_t> query;
};

/// K support slices per class without replacement, then queries from subjects absent from
/// the support, split evenly between classes. Throws std::invalid_argument naming a class
/// that cannot supply K support slices and one query.
Episode sample_episode(std::span<const LabeledImage> pool, std::size_t k, std::size_t q, Rng& rng);

struct Prototypes {
  Tensor c_plus;   // case
  Tensor c_minus;  // control
};

Prototypes compute_prototypes(std::span<const Tensor> embeddings, std::span<const int> labels);

/// P(y = 1 | u) = exp(−d₊) / (exp(−d₊) + exp(−d₋)), d Euclidean (squared when requested).
double proto_probability(const Tensor& u, const Prototypes& protos, bool squared = false);

/// Mean over queries of −ln P(true class).
Var proto_loss(const std::vector<Var>& queries, std::span<const int> labels, Var c_plus, Var c_minus,
               bool squared = false);

/// proto + ce_weight · ce.
Var combined_loss(Var proto, Var ce, double ce_weight);

/// Horizontal flip, then rotation by `degrees` about the center with bilinear resampling;
/// uncovered pixels take the slice minimum.
Tensor augment_with(const Tensor& slice, bool flip, double degrees);
/// Random affine intensity change v ↦ a·v + b with ln a ~ U(−ln scale, ln scale) and
/// b ~ U(−offset, offset). The identity (scale 1, offset 0) draws nothing.
struct IntensityJitter {
  double scale = 1.0;
  double offset = 0.0;

  bool active() const { return scale != 1.0 || offset != 0.0; }
  void validate() const;
};

/// Flip with probability 0.5, angle uniform in [−15°, 15°], then the intensity jitter.
Tensor augment(const Tensor& slice, Rng& rng, const IntensityJitter& jitter = {});

struct FewShotConfig {
  std::size_t k = 5;
  std::size_t episodes_per_epoch = 100;
  std::size_t epochs = 30;
  double ce_weight = 0.5;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  std::size_t query_size = 10;
  bool squared_distance = false;
  bool augment_support = true;
  IntensityJitter intensity;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FewShotEpoch {
  std::size_t epoch = 0;
  double proto_loss = 0.0;
  double ce_loss = 0.0;
  double episode_accuracy = 0.0;
};

struct FineTuneResult {
  ModelParams params;
  std::vector<FewShotEpoch> history;
};

/// Episodic prototypical fine-tuning of every parameter, the head trained through the CE term.
FineTuneResult finetune_run(const ModelParams& params, std::span<const LabeledImage> train, const FewShotConfig& config);

/// Class means of f(x) over a whole labeled set.
Prototypes prototypes_from(const ModelParams& params, std::span<const LabeledImage> images);

/// Mean of per-slice proto_probability over one subject's slices.
double predict_subject(const ModelParams& params, const Prototypes& protos, std::span<const Tensor> slices,
                       bool squared = false);

void write_fewshot_csv(const std::filesystem::path& path, std::span<const FewShotEpoch> history);

}  // namespace pvit
