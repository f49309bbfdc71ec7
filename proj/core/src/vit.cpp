#include "pvit/vit.hpp"

#include <cmath>
#include <stdexcept>

#include "pvit/rng.hpp"

namespace pvit {

// ---------------------------------------------------------------------------
// Config

void ViTConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v < 1) throw std::invalid_argument(std::string("ViTConfig: ") + what + " must be >= 1");
  };
  positive(layers, "layers");
  positive(dim, "dim");
  positive(heads, "heads");
  positive(patch, "patch");
  positive(image_size, "image_size");
  positive(mlp_ratio, "mlp_ratio");
  positive(channels, "channels");
  positive(classes, "classes");
  if (dim % heads != 0) throw std::invalid_argument("ViTConfig: dim must be divisible by heads");
  if (image_size % patch != 0) throw std::invalid_argument("ViTConfig: image_size must be divisible by patch");
  if (!(ln_eps > 0.0)) throw std::invalid_argument("ViTConfig: ln_eps must be positive");
}

ViTConfig ViTConfig::teacher() { return {12, 768, 12, 16, 224, 4, 1, 2, true}; }
ViTConfig ViTConfig::student() { return {6, 192, 3, 16, 224, 4, 1, 2, true}; }
ViTConfig ViTConfig::micro_teacher() { return {4, 64, 4, 8, 32, 4, 1, 2, false}; }
ViTConfig ViTConfig::micro_student() { return {2, 32, 2, 8, 32, 4, 1, 2, false}; }
ViTConfig ViTConfig::micro() { return {2, 32, 2, 8, 32, 4, 1, 2, true}; }

ViTConfig ViTConfig::preset(std::string_view name) {
  if (name == "teacher") return teacher();
  if (name == "student") return student();
  if (name == "micro-teacher") return micro_teacher();
  if (name == "micro-student") return micro_student();
  if (name == "micro") return micro();
  throw std::invalid_argument("unknown model preset '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const ViTConfig& c) {
  j = nlohmann::json{{"layers", c.layers},       {"dim", c.dim},
                     {"heads", c.heads},         {"patch", c.patch},
                     {"image_size", c.image_size}, {"mlp_ratio", c.mlp_ratio},
                     {"channels", c.channels},   {"classes", c.classes},
                     {"use_class_token", c.use_class_token}, {"ln_eps", c.ln_eps}};
}

void from_json(const nlohmann::json& j, ViTConfig& c) {
  j.at("layers").get_to(c.layers);
  j.at("dim").get_to(c.dim);
  j.at("heads").get_to(c.heads);
  j.at("patch").get_to(c.patch);
  j.at("image_size").get_to(c.image_size);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("channels").get_to(c.channels);
  j.at("classes").get_to(c.classes);
  j.at("use_class_token").get_to(c.use_class_token);
  c.ln_eps = j.value("ln_eps", 1e-6);
}

std::size_t param_count(const ViTConfig& c) {
  c.validate();
  const std::size_t d = c.dim, r = c.mlp_ratio;
  const std::size_t patch_embed = c.patch_len() * d + d;
  const std::size_t block = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (2 * r * d * d + r * d + d);
  const std::size_t final_ln = 2 * d;
  const std::size_t cls = c.use_class_token ? d : 0;
  const std::size_t positions = c.num_tokens() * d;
  const std::size_t head = d * c.classes + c.classes;
  return patch_embed + c.layers * block + final_ln + cls + positions + head;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

// Fixed slot layout; must match the construction order in ModelParams.
constexpr std::size_t kPatchW = 0, kPatchB = 1, kPos = 2;
constexpr std::size_t kBlockSlots = 12;
enum BlockSlot : std::size_t { Ln1G, Ln1B, QkvW, QkvB, ProjW, ProjB, Ln2G, Ln2B, Fc1W, Fc1B, Fc2W, Fc2B };

std::size_t block_base(const ViTConfig& c) { return c.use_class_token ? 4 : 3; }
std::size_t slot(const ViTConfig& c, std::size_t layer, BlockSlot s) {
  return block_base(c) + layer * kBlockSlots + s;
}
std::size_t final_ln_gamma(const ViTConfig& c) { return block_base(c) + c.layers * kBlockSlots; }
std::size_t head_weight(const ViTConfig& c) { return final_ln_gamma(c) + 2; }

bool is_weight_matrix(const std::string& name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".weight");
}

}  // namespace

ModelParams::ModelParams(const ViTConfig& config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.dim, r = config_.mlp_ratio;
  auto add = [&](std::string name, Shape shape, double fill = 0.0) {
    tensors_.push_back({std::move(name), Tensor(std::move(shape), fill)});
  };
  add("patch_embed.weight", {config_.patch_len(), d});
  add("patch_embed.bias", {d});
  add("pos_embed", {config_.num_tokens(), d});
  if (config_.use_class_token) add("cls_token", {d});
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    add(p + "ln1.gamma", {d}, 1.0);
    add(p + "ln1.beta", {d});
    add(p + "qkv.weight", {d, 3 * d});
    add(p + "qkv.bias", {3 * d});
    add(p + "attn_proj.weight", {d, d});
    add(p + "attn_proj.bias", {d});
    add(p + "ln2.gamma", {d}, 1.0);
    add(p + "ln2.beta", {d});
    add(p + "mlp.fc1.weight", {d, r * d});
    add(p + "mlp.fc1.bias", {r * d});
    add(p + "mlp.fc2.weight", {r * d, d});
    add(p + "mlp.fc2.bias", {d});
  }
  add("final_ln.gamma", {d}, 1.0);
  add("final_ln.beta", {d});
  add("head.weight", {d, config_.classes});
  add("head.bias", {config_.classes});
}

std::size_t ModelParams::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return i;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

Tensor& ModelParams::get(std::string_view name) { return tensors_[index_of(name)].value; }
const Tensor& ModelParams::get(std::string_view name) const { return tensors_[index_of(name)].value; }

std::size_t ModelParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (!(a.config_ == b.config_) || a.tensors_.size() != b.tensors_.size()) return false;
  for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
    if (a.tensors_[i].name != b.tensors_[i].name || !(a.tensors_[i].value == b.tensors_[i].value)) return false;
  }
  return true;
}

ModelParams init_params(const ViTConfig& config, std::uint64_t seed) {
  ModelParams params(config);
  Rng rng(mix_seed(seed, 0x5649540000000001ULL));
  for (auto& [name, value] : params.tensors()) {
    if (is_weight_matrix(name)) {
      for (double& v : value.storage()) v = rng.truncated_normal(0.02);
    } else if (name == "pos_embed") {
      for (double& v : value.storage()) v = rng.normal(0.0, 0.02);
    }
  }
  return params;
}

std::vector<Tensor> BoundParams::grads(const Tape& tape) const {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (Var v : vars) out.push_back(tape.grad(v));
  return out;
}

BoundParams bind(Tape& tape, const ModelParams& params, bool trainable) {
  BoundParams b;
  b.params = &params;
  b.vars.reserve(params.tensors().size());
  for (const auto& t : params.tensors()) b.vars.push_back(tape.leaf(t.value, trainable));
  return b;
}

// ---------------------------------------------------------------------------
// Forward

Tensor patchify(const Tensor& image, const ViTConfig& c) {
  const std::size_t s = c.image_size, p = c.patch, ch = c.channels;
  const bool shape_ok = (image.rank() == 3 && image.shape() == Shape{ch, s, s}) ||
                        (image.rank() == 2 && ch == 1 && image.shape() == Shape{s, s});
  if (!shape_ok) {
    throw DimensionError("patchify: image " + shape_string(image.shape()) + " does not match config " +
                         std::to_string(ch) + "x" + std::to_string(s) + "x" + std::to_string(s));
  }
  const std::size_t g = s / p;
  Tensor tokens(Shape{g * g, p * p * ch});
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      double* out = tokens.data().data() + (gy * g + gx) * p * p * ch;
      for (std::size_t k = 0; k < ch; ++k)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x) *out++ = image[(k * s + gy * p + y) * s + gx * p + x];
    }
  }
  return tokens;
}

Var pool_features(const ViTConfig& config, Var features) {
  return config.use_class_token ? row(features, 0) : mean_rows(features);
}

Var head_logits(const BoundParams& params, Var embedding) {
  const ViTConfig& c = params.params->config();
  const std::size_t hw = head_weight(c);
  Var z = matmul(reshape(embedding, Shape{1, c.dim}), params[hw]);
  return add(reshape(z, Shape{c.classes}), params[hw + 1]);
}

ForwardOutput forward(Tape& tape, const BoundParams& bp, const Tensor& image, const ForwardOptions& options) {
  const ViTConfig& c = bp.params->config();
  const std::size_t d = c.dim, h = c.heads, dh = c.head_dim(), t_count = c.num_tokens();
  ForwardOutput out;
  if (options.capture) out.trace.emplace();

  tape.set_scope("patch embedding");
  Var patches = tape.constant(patchify(image, c));
  Var x = add_bias(matmul(patches, bp[kPatchW]), bp[kPatchB]);
  if (c.use_class_token) x = concat_rows({reshape(bp[kPos + 1], Shape{1, d}), x});
  x = add(x, bp[kPos]);

  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < c.layers; ++l) {
    tape.set_scope("block " + std::to_string(l));
    auto P = [&](BlockSlot s) { return bp[slot(c, l, s)]; };

    Var y = layer_norm(x, P(Ln1G), P(Ln1B), c.ln_eps);
    if (options.detach_block_input && l + 1 == c.layers) {
      y = tape.leaf(y.value(), true);
      out.block_input = y;
    }
    Var qkv = add_bias(matmul(y, P(QkvW)), P(QkvB));
    std::vector<Var> heads;
    heads.reserve(h);
    Tensor captured;
    if (options.capture) captured = Tensor(Shape{h, t_count, t_count});
    for (std::size_t hi = 0; hi < h; ++hi) {
      Var q = slice_cols(qkv, hi * dh, dh);
      Var k = slice_cols(qkv, d + hi * dh, dh);
      Var v = slice_cols(qkv, 2 * d + hi * dh, dh);
      Var attn = softmax(scale(matmul_nt(q, k), attn_scale), 1);
      if (options.capture) {
        const auto& av = attn.value();
        std::copy(av.data().begin(), av.data().end(), captured.data().begin() + hi * t_count * t_count);
      }
      heads.push_back(matmul(attn, v));
    }
    if (options.capture) out.trace->attention.push_back(std::move(captured));
    Var mixed = h == 1 ? heads.front() : concat_cols(heads);
    x = add(x, add_bias(matmul(mixed, P(ProjW)), P(ProjB)));

    Var z = layer_norm(x, P(Ln2G), P(Ln2B), c.ln_eps);
    z = gelu(add_bias(matmul(z, P(Fc1W)), P(Fc1B)));
    z = add_bias(matmul(z, P(Fc2W)), P(Fc2B));
    x = add(x, z);
  }

  tape.set_scope("final layer norm");
  const std::size_t fl = final_ln_gamma(c);
  Var features = layer_norm(x, bp[fl], bp[fl + 1], c.ln_eps);
  if (options.detach_features) features = tape.leaf(features.value(), true);
  tape.set_scope("head");
  out.features = features;
  out.embedding = pool_features(c, features);
  out.logits = head_logits(bp, out.embedding);
  tape.set_scope({});
  if (out.trace) {
    out.trace->features = features.value();
    out.trace->logits = out.logits.value();
  }
  return out;
}

Prediction predict(const ModelParams& params, const Tensor& image, bool capture) {
  Tape tape;
  BoundParams bp = bind(tape, params, false);
  ForwardOptions opts;
  opts.capture = capture;
  ForwardOutput fo = forward(tape, bp, image, opts);
  return Prediction{fo.logits.value(), std::move(fo.trace)};
}

Tensor embed(const ModelParams& params, const Tensor& image) {
  Tape tape;
  BoundParams bp = bind(tape, params, false);
  return forward(tape, bp, image).embedding.value();
}

}  // namespace pvit
