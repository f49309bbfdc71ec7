#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvit/adam.hpp"
#include "pvit/autodiff.hpp"
#include "pvit/tensor.hpp"

namespace pvit {

struct ViTConfig {
  std::size_t layers = 1;
  std::size_t dim = 8;
  std::size_t heads = 1;
  std::size_t patch = 1;
  std::size_t image_size = 1;
  std::size_t mlp_ratio = 4;
  std::size_t channels = 1;
  std::size_t classes = 2;
  /// Prepend a learned class token and read the head from it; otherwise mean-pool all tokens.
  bool use_class_token = true;
  double ln_eps = 1e-6;

  /// Throws std::invalid_argument when an extent is zero or does not divide.
  void validate() const;

  std::size_t grid() const { return image_size / patch; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t num_tokens() const { return num_patches() + (use_class_token ? 1 : 0); }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t patch_len() const { return patch * patch * channels; }

  /// ViT-B/16 shape: 12 layers, 768 wide, 12 heads.
  static ViTConfig teacher();
  /// 6 layers, 192 wide, 3 heads.
  static ViTConfig student();
  /// Desk-scale pair used by the pipeline; both share the 32 px / 8 px patch grid.
  static ViTConfig micro_teacher();
  static ViTConfig micro_student();
  /// Smallest config used by gradient checks: L=2, D=32, H=2, P=8, S=32.
  static ViTConfig micro();
  static ViTConfig preset(std::string_view name);

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

void to_json(nlohmann::json& j, const ViTConfig& c);
void from_json(const nlohmann::json& j, ViTConfig& c);

/// Closed-form number of scalars induced by a config.
std::size_t param_count(const ViTConfig& config);

/// Named parameter set, in a fixed order determined by the config.
class ModelParams {
 public:
  explicit ModelParams(const ViTConfig& config);

  const ViTConfig& config() const noexcept { return config_; }
  std::vector<NamedTensor>& tensors() noexcept { return tensors_; }
  const std::vector<NamedTensor>& tensors() const noexcept { return tensors_; }

  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  std::size_t scalar_count() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  ViTConfig config_;
  std::vector<NamedTensor> tensors_;
};

/// Weights ~ truncated normal(0.02), biases and class token zero, LayerNorm (1, 0),
/// positions ~ normal(0.02). Deterministic in (config, seed).
ModelParams init_params(const ViTConfig& config, std::uint64_t seed);

/// C×S×S (or S×S for one channel) → N×(P²·C), raster patch order, each patch row-major per channel.
Tensor patchify(const Tensor& image, const ViTConfig& config);

/// Parameters recorded on a tape.
struct BoundParams {
  const ModelParams* params = nullptr;
  std::vector<Var> vars;

  Var operator[](std::size_t i) const { return vars[i]; }
  Var get(std::string_view name) const { return vars[params->index_of(name)]; }
  /// Gradients of every parameter after backward(), in ModelParams order.
  std::vector<Tensor> grads(const Tape& tape) const;
};

BoundParams bind(Tape& tape, const ModelParams& params, bool trainable);

struct ForwardTrace {
  /// Per layer, [H × T × T]; each row softmax-normalized.
  std::vector<Tensor> attention;
  /// T×D token features after the final LayerNorm.
  Tensor features;
  Tensor logits;
};

struct ForwardOptions {
  bool capture = false;
  /// Make the final token features a fresh leaf so gradients stop there (used by Grad-CAM).
  bool detach_features = false;
  /// Make the last block's LN1 output a fresh leaf; gradients reaching it flow only through
  /// that block's attention, so class-token readouts still give patch tokens a gradient.
  bool detach_block_input = false;
};

struct ForwardOutput {
  Var logits;      // [K]
  Var features;    // [T×D]
  Var embedding;   // [D]
  Var block_input;  // [T×D] last block's LN1 output, set when detach_block_input
  std::optional<ForwardTrace> trace;
};

/// Pre-norm encoder forward pass on a tape. Throws NonFiniteError naming the layer.
ForwardOutput forward(Tape& tape, const BoundParams& params, const Tensor& image, const ForwardOptions& options = {});

/// Classification head applied to an embedding [D] → logits [K].
Var head_logits(const BoundParams& params, Var embedding);
/// Embedding readout of final features: class-token row or token mean.
Var pool_features(const ViTConfig& config, Var features);

struct Prediction {
  Tensor logits;
  std::optional<ForwardTrace> trace;
};

/// Inference-only forward over constants.
Prediction predict(const ModelParams& params, const Tensor& image, bool capture = false);
/// f(x): the pooled final-LayerNorm embedding.
Tensor embed(const ModelParams& params, const Tensor& image);

}  // namespace pvit
