#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pvit/phantom.hpp"
#include "pvit/rng.hpp"
#include "pvit/vit.hpp"

namespace pvit {

struct SaliencyMap {
  Tensor coarse;     // grid×grid, >= 0
  Tensor raw;        // upsampled, before min-max normalization
  Tensor upsampled;  // raw min-max normalized to [0, 1]; zeros when degenerate
  std::optional<Mask> threshold_mask;
  bool degenerate = false;
};

enum class CamTarget {
  final_features,    // tokens after the final LayerNorm; needs a mean-pooled readout
  last_block_input,  // the last block's LN1 output; works for either readout
};

std::string cam_target_name(CamTarget target);
/// "final-features" or "last-block-input"; throws std::invalid_argument otherwise.
CamTarget parse_cam_target(std::string_view name);

struct GradCamOptions {
  std::size_t output_size = 0;  // 0: the model's image size
  CamTarget target = CamTarget::final_features;
  bool relu = true;
  bool binarize = true;
};

/// Grad-CAM on the final token features, class token excluded: α_d = token-mean of
/// ∂S_c/∂F[·,d], coarse = ReLU(F·α) on the patch grid, bilinear upsampling, min-max.
SaliencyMap grad_cam(const ModelParams& params, const Tensor& image, std::size_t class_index,
                     const GradCamOptions& options = {});

/// The Grad-CAM combination step for given patch features and their gradients (N×D each).
SaliencyMap cam_from_gradients(const Tensor& features, const Tensor& gradients, std::size_t grid,
                               std::size_t output_size, const GradCamOptions& options = {});

/// Half-pixel-centre bilinear resampling of h×w to out_h×out_w, source coordinates clamped.
Tensor bilinear_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w);

struct QuintileMask {
  Mask mask;
  double threshold = 0.0;
  bool degenerate = false;
};

/// Pixels >= the value at ascending index ceil(0.8·(n−1)). A constant map gives an empty,
/// degenerate mask.
QuintileMask binarize_top_quintile(const Tensor& map);

/// Ā = 0.5·(head-mean(A) + I), rows renormalized, R = Ā_L ⋯ Ā_1. Coarse map: the class-token
/// row of R over patch columns, or the mean row of R for mean-pooled models.
Tensor attention_rollout(const ForwardTrace& trace, const ViTConfig& config);

/// Every tensor's entries shuffled in place of their positions; shapes preserved.
ModelParams permute_params(const ModelParams& params, Rng& rng);

struct RandomizationRatio {
  double ratio = 0.0;
  double original_median = 0.0;
  double permuted_median = 0.0;
};

/// Median over images of per-image median raw upsampled intensity, `other` over `reference`.
RandomizationRatio median_intensity_ratio(const ModelParams& reference, const ModelParams& other,
                                          std::span<const Tensor> images, std::size_t class_index,
                                          const GradCamOptions& options = {});

/// median_intensity_ratio of a weight-permuted copy against the model itself.
RandomizationRatio param_randomization_check(const ModelParams& params, std::span<const Tensor> images,
                                             std::size_t class_index, Rng& rng, const GradCamOptions& options = {});

struct DiceDrop {
  double drop = 0.0;         // mean over images of 1 − after/before
  double mean_before = 0.0;
  double mean_after = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;  // before-Dice of 0
};

/// Replaces each image by Gaussian noise with its mean and std (or `sigma` when given) and
/// compares top-quintile Dice against the region masks before and after.
DiceDrop input_randomization_check(const ModelParams& params, std::span<const Tensor> images,
                                   std::span<const Mask> masks, std::size_t class_index, std::optional<double> sigma,
                                   Rng& rng, const GradCamOptions& options = {});

/// Writes <stem>.sal (f32), <stem>.pgm (8-bit P5) and <stem>.json.
void write_saliency(const std::filesystem::path& dir, const std::string& stem, const std::string& image_id,
                    std::size_t class_index, const SaliencyMap& map);

/// 8-bit binary PGM from values in [0, 1], quantized by round(v·255).
void write_pgm(const std::filesystem::path& path, const Tensor& image);

}  // namespace pvit
