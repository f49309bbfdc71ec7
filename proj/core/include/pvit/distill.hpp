#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "pvit/adam.hpp"
#include "pvit/autodiff.hpp"
#include "pvit/rng.hpp"
#include "pvit/vit.hpp"

namespace pvit {

/// Maps teacher token features into the student width: F_T·Wᵀ, W is D_s × D_t.
struct Projection {
  Tensor weight;
  std::optional<Tensor> bias;
};

Projection init_projection(std::size_t student_dim, std::size_t teacher_dim, std::uint64_t seed, bool with_bias = false);

struct DistillConfig {
  double lambda = 1.0;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double lr = 2e-4;
  double weight_decay = 0.0;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// KL(softmax(z_T / T) ‖ softmax(z_S / T)), teacher held constant, mean over rows.
/// Accepts one example [K] or a batch [B×K].
Var kd_logits_loss(Tape& tape, const Tensor& teacher_logits, Var student_logits, double temperature = 1.0);

/// Mean over tokens of ‖F_S − F_T·Wᵀ (+ b)‖². F_T is constant; token counts must agree.
Var kd_feature_loss(Tape& tape, Var student_tokens, const Tensor& teacher_tokens, Var weight,
                    std::optional<Var> bias = std::nullopt);

/// L_logits + λ·L_feat.
Var kd_total(Var logits_loss, Var feature_loss, double lambda);

/// −log softmax(logits)[label].
Var cross_entropy(Var logits, std::size_t label);

struct DistillEpoch {
  std::size_t epoch = 0;
  double l_logits = 0.0;
  double l_feat = 0.0;
  double l_total = 0.0;
};

struct DistillResult {
  ModelParams student;
  Projection projection;
  std::vector<DistillEpoch> history;
};

/// Fits a fresh student (init seed derived from config.seed) to a frozen teacher on
/// unlabeled images. Shuffling and initialization are fixed by the seed.
DistillResult run_distillation(const ModelParams& teacher, const ViTConfig& student_config,
                               std::span<const Tensor> images, const DistillConfig& config);

void write_distill_csv(const std::filesystem::path& path, std::span<const DistillEpoch> history);

using Augment = std::function<Tensor(const Tensor&, Rng&)>;

struct SupervisedConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  /// Applied to each training image per visit when set.
  Augment augment;
};

struct SupervisedEpoch {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct SupervisedResult {
  ModelParams params;
  std::vector<SupervisedEpoch> history;
};

/// Cross-entropy training of every parameter. Starts from `init` when given, otherwise
/// from init_params(config, derived seed). Throws std::invalid_argument on a single class.
SupervisedResult train_supervised(const ViTConfig& config, std::span<const Tensor> images, std::span<const int> labels,
                                  const SupervisedConfig& options, const ModelParams* init = nullptr);

void write_supervised_csv(const std::filesystem::path& path, std::span<const SupervisedEpoch> history);

/// Arg-max class of predict(params, image).
std::size_t predict_class(const ModelParams& params, const Tensor& image);

}  // namespace pvit
