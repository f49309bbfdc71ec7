#include "pvit/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace pvit {

namespace {

Tensor softmax_rows(const Tensor& z, double temperature) {
  const std::size_t k = z.rank() == 1 ? z.size() : z.cols();
  Tensor p(z.shape());
  for (std::size_t r = 0; r < z.size() / k; ++r) {
    double hi = z[r * k];
    for (std::size_t j = 1; j < k; ++j) hi = std::max(hi, z[r * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += p[r * k + j] = std::exp((z[r * k + j] - hi) / temperature);
    for (std::size_t j = 0; j < k; ++j) p[r * k + j] /= s;
  }
  return p;
}

std::vector<std::size_t> iota_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  return order;
}

struct TeacherOutput {
  Tensor logits;
  Tensor features;
};

TeacherOutput run_teacher(const ModelParams& teacher, const Tensor& image) {
  Tape tape;
  const BoundParams bp = bind(tape, teacher, false);
  const ForwardOutput out = forward(tape, bp, image);
  return {out.logits.value(), out.features.value()};
}

}  // namespace

Projection init_projection(std::size_t student_dim, std::size_t teacher_dim, std::uint64_t seed, bool with_bias) {
  Rng rng(mix_seed(seed, hash_string("projection")));
  Projection p{Tensor({student_dim, teacher_dim}), std::nullopt};
  // Variance-preserving scale so the projected teacher tokens start at unit-order norm.
  const double sd = 1.0 / std::sqrt(static_cast<double>(teacher_dim));
  for (double& w : p.weight.storage()) w = rng.truncated_normal(sd);
  if (with_bias) p.bias = Tensor({student_dim});
  return p;
}

void DistillConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("distillation lambda must be >= 0");
  if (epochs == 0 || batch_size == 0) throw std::invalid_argument("distillation epochs and batch size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("distillation lr must be > 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("distillation temperature must be > 0");
}

Var kd_logits_loss(Tape& tape, const Tensor& teacher_logits, Var student_logits, double temperature) {
  if (teacher_logits.shape() != student_logits.shape()) {
    throw DimensionError("kd_logits_loss: teacher " + shape_string(teacher_logits.shape()) + " vs student " +
                         shape_string(student_logits.shape()));
  }
  const std::size_t axis = teacher_logits.rank() - 1;
  const double rows = static_cast<double>(teacher_logits.size() / teacher_logits.dim(axis));
  const Tensor p = softmax_rows(teacher_logits, temperature);
  double p_log_p = 0.0;
  for (double v : p.data()) {
    if (v > 0.0) p_log_p += v * std::log(v);
  }
  Var zs = temperature == 1.0 ? student_logits : scale(student_logits, 1.0 / temperature);
  Var cross = sum(mul(tape.constant(p), log_softmax(zs, axis)));
  return add_scalar(scale(cross, -1.0 / rows), p_log_p / rows);
}

Var kd_feature_loss(Tape& tape, Var student_tokens, const Tensor& teacher_tokens, Var weight, std::optional<Var> bias) {
  if (student_tokens.value().rank() != 2 || teacher_tokens.rank() != 2) {
    throw DimensionError("kd_feature_loss expects token matrices");
  }
  if (student_tokens.value().rows() != teacher_tokens.rows()) {
    throw DimensionError("kd_feature_loss: token counts differ (student " + std::to_string(student_tokens.value().rows()) +
                         ", teacher " + std::to_string(teacher_tokens.rows()) + "); patch grids must agree");
  }
  Var projected = matmul_nt(tape.constant(teacher_tokens), weight);
  if (bias) projected = add_bias(projected, *bias);
  const double tokens = static_cast<double>(teacher_tokens.rows());
  return scale(squared_norm(sub(student_tokens, projected)), 1.0 / tokens);
}

Var kd_total(Var logits_loss, Var feature_loss, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("kd_total: lambda must be >= 0");
  return add(logits_loss, scale(feature_loss, lambda));
}

Var cross_entropy(Var logits, std::size_t label) {
  if (label >= logits.size()) throw DimensionError("cross_entropy: label out of range");
  return scale(element(log_softmax(logits, 0), label), -1.0);
}

DistillResult run_distillation(const ModelParams& teacher, const ViTConfig& student_config,
                               std::span<const Tensor> images, const DistillConfig& config) {
  config.validate();
  student_config.validate();
  if (images.empty()) throw std::invalid_argument("run_distillation: empty dataset");
  const ViTConfig& tc = teacher.config();
  if (tc.num_tokens() != student_config.num_tokens() || tc.image_size != student_config.image_size) {
    throw DimensionError("run_distillation: teacher and student token grids differ");
  }

  // Teacher is frozen and inputs are not augmented, so its outputs are fixed for the run.
  std::vector<TeacherOutput> targets;
  targets.reserve(images.size());
  for (const auto& img : images) targets.push_back(run_teacher(teacher, img));

  DistillResult result{init_params(student_config, mix_seed(config.seed, 1)),
                       init_projection(student_config.dim, tc.dim, mix_seed(config.seed, 2)),
                       {}};
  std::vector<NamedTensor> proj{{"proj.weight", result.projection.weight}};
  AdamState student_state, proj_state;
  const AdamConfig adam{config.lr, 0.9, 0.999, 1e-8, config.weight_decay, true};
  Rng rng(mix_seed(config.seed, 3));
  std::vector<std::size_t> order = iota_order(images.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    DistillEpoch stats{epoch, 0, 0, 0};
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Tape tape;
      const BoundParams bp = bind(tape, result.student, true);
      Var w = tape.leaf(proj[0].value);
      std::vector<Var> ll, lf;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const ForwardOutput out = forward(tape, bp, images[i]);
        ll.push_back(kd_logits_loss(tape, targets[i].logits, out.logits, config.temperature));
        lf.push_back(kd_feature_loss(tape, out.features, targets[i].features, w));
      }
      tape.set_scope("distillation loss");
      Var l_logits = mean(concat(ll)), l_feat = mean(concat(lf));
      Var total = kd_total(l_logits, l_feat, config.lambda);
      tape.backward(total);
      const double n = static_cast<double>(end - start);
      stats.l_logits += n * l_logits.value().item();
      stats.l_feat += n * l_feat.value().item();
      stats.l_total += n * total.value().item();
      adam_step(result.student.tensors(), bp.grads(tape), student_state, adam);
      adam_step(proj, {tape.grad(w)}, proj_state, adam);
    }
    const double n = static_cast<double>(order.size());
    stats.l_logits /= n;
    stats.l_feat /= n;
    stats.l_total /= n;
    result.history.push_back(stats);
  }
  result.projection.weight = proj[0].value;
  return result;
}

void write_distill_csv(const std::filesystem::path& path, std::span<const DistillEpoch> history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "epoch,l_logits,l_feat,l_total\n";
  for (const auto& e : history) out << e.epoch << ',' << e.l_logits << ',' << e.l_feat << ',' << e.l_total << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

SupervisedResult train_supervised(const ViTConfig& config, std::span<const Tensor> images, std::span<const int> labels,
                                  const SupervisedConfig& options, const ModelParams* init) {
  config.validate();
  if (images.size() != labels.size()) throw std::invalid_argument("train_supervised: images and labels differ in count");
  if (options.epochs == 0 || options.batch_size == 0) throw std::invalid_argument("train_supervised: epochs and batch >= 1");
  std::vector<std::size_t> per_class(config.classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= config.classes) throw std::invalid_argument("train_supervised: label out of range");
    ++per_class[static_cast<std::size_t>(y)];
  }
  if (std::count_if(per_class.begin(), per_class.end(), [](std::size_t c) { return c > 0; }) < 2) {
    throw std::invalid_argument("train_supervised needs examples of at least two classes");
  }
  if (init && !(init->config() == config)) throw std::invalid_argument("train_supervised: init params have another config");

  SupervisedResult result{init ? *init : init_params(config, mix_seed(options.seed, 1)), {}};
  AdamState state;
  const AdamConfig adam{options.lr, 0.9, 0.999, 1e-8, options.weight_decay, true};
  Rng rng(mix_seed(options.seed, 4));
  std::vector<std::size_t> order = iota_order(images.size());

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(order);
    SupervisedEpoch stats{epoch, 0, 0};
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      Tape tape;
      const BoundParams bp = bind(tape, result.params, true);
      std::vector<Var> losses;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const Tensor img = options.augment ? options.augment(images[i], rng) : images[i];
        const ForwardOutput out = forward(tape, bp, img);
        const auto& z = out.logits.value();
        const auto pred = static_cast<std::size_t>(std::max_element(z.data().begin(), z.data().end()) - z.data().begin());
        stats.accuracy += pred == static_cast<std::size_t>(labels[i]);
        losses.push_back(cross_entropy(out.logits, static_cast<std::size_t>(labels[i])));
      }
      tape.set_scope("cross-entropy loss");
      Var loss = mean(concat(losses));
      tape.backward(loss);
      stats.loss += static_cast<double>(end - start) * loss.value().item();
      adam_step(result.params.tensors(), bp.grads(tape), state, adam);
    }
    stats.loss /= static_cast<double>(order.size());
    stats.accuracy /= static_cast<double>(order.size());
    result.history.push_back(stats);
  }
  return result;
}

void write_supervised_csv(const std::filesystem::path& path, std::span<const SupervisedEpoch> history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "epoch,loss,accuracy\n";
  for (const auto& e : history) out << e.epoch << ',' << e.loss << ',' << e.accuracy << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::size_t predict_class(const ModelParams& params, const Tensor& image) {
  const Tensor z = predict(params, image).logits;
  return static_cast<std::size_t>(std::max_element(z.data().begin(), z.data().end()) - z.data().begin());
}

}  // namespace pvit
