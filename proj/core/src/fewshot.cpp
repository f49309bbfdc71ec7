#include "pvit/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <stdexcept>

#include "pvit/distill.hpp"

namespace pvit {

namespace {

const char* class_name(int label) { return label == 1 ? "case (label 1)" : "control (label 0)"; }

double distance(const Tensor& u, const Tensor& c, bool squared) {
  if (u.size() != c.size()) throw DimensionError("prototype distance: embedding sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - c[i]) * (u[i] - c[i]);
  return squared ? s : std::sqrt(s);
}

Var distance(Var u, Var c, bool squared) {
  Var s = squared_norm(sub(u, c));
  return squared ? s : sqrt(s);
}

// Draws `count` distinct entries of `from` in sampled order.
std::vector<std::size_t> draw(std::vector<std::size_t> from, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) std::swap(from[i], from[i + rng.below(from.size() - i)]);
  from.resize(count);
  return from;
}

}  // namespace

Episode sample_episode(std::span<const LabeledImage> pool, std::size_t k, std::size_t q, Rng& rng) {
  if (k == 0 || q == 0) throw std::invalid_argument("sample_episode: K and Q must be >= 1");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const int y = pool[i].label;
    if (y != 0 && y != 1) throw std::invalid_argument("sample_episode: labels must be 0 or 1");
    by_class[y].push_back(i);
  }
  for (int y : {0, 1}) {
    if (by_class[y].size() < k + 1) {
      throw std::invalid_argument(std::string("sample_episode: class ") + class_name(y) + " has " +
                                  std::to_string(by_class[y].size()) + " slices; K=" + std::to_string(k) +
                                  " support plus one query needed");
    }
  }
  Episode ep;
  std::set<std::string> support_subjects;
  for (int y : {0, 1}) {
    for (std::size_t i : draw(by_class[y], k, rng)) {
      ep.support.push_back(i);
      support_subjects.insert(pool[i].subject);
    }
  }
  std::vector<std::size_t> candidates[2];
  for (int y : {0, 1}) {
    for (std::size_t i : by_class[y]) {
      if (!support_subjects.count(pool[i].subject)) candidates[y].push_back(i);
    }
    if (candidates[y].empty()) {
      throw std::invalid_argument(std::string("sample_episode: class ") + class_name(y) +
                                  " has no query slice outside the support subjects");
    }
  }
  for (int y : {0, 1}) {
    const std::size_t want = q / 2 + (static_cast<std::size_t>(y) < q % 2 ? 1 : 0);
    for (std::size_t i : draw(candidates[y], std::min(want, candidates[y].size()), rng)) ep.query.push_back(i);
  }
  return ep;
}

Prototypes compute_prototypes(std::span<const Tensor> embeddings, std::span<const int> labels) {
  if (embeddings.size() != labels.size()) throw std::invalid_argument("compute_prototypes: size mismatch");
  if (embeddings.empty()) throw std::invalid_argument("compute_prototypes: no embeddings");
  const std::size_t d = embeddings.front().size();
  Tensor sums[2] = {Tensor({d}), Tensor({d})};
  std::size_t counts[2] = {0, 0};
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != d) throw DimensionError("compute_prototypes: embedding sizes differ");
    const int y = labels[i];
    if (y != 0 && y != 1) throw std::invalid_argument("compute_prototypes: labels must be 0 or 1");
    for (std::size_t j = 0; j < d; ++j) sums[y][j] += embeddings[i][j];
    ++counts[y];
  }
  for (int y : {0, 1}) {
    if (counts[y] == 0) throw std::invalid_argument(std::string("compute_prototypes: no ") + class_name(y) + " embeddings");
    for (double& v : sums[y].storage()) v /= static_cast<double>(counts[y]);
  }
  return {sums[1], sums[0]};
}

double proto_probability(const Tensor& u, const Prototypes& protos, bool squared) {
  const double dp = distance(u, protos.c_plus, squared), dm = distance(u, protos.c_minus, squared);
  return 1.0 / (1.0 + std::exp(dp - dm));
}

Var proto_loss(const std::vector<Var>& queries, std::span<const int> labels, Var c_plus, Var c_minus, bool squared) {
  if (queries.empty() || queries.size() != labels.size()) throw std::invalid_argument("proto_loss: need >= 1 labeled query");
  std::vector<Var> nll;
  nll.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    // Logit of class y is −d_y, so the two-way log-softmax gives ln P(y).
    Var logits = concat({scale(distance(queries[i], c_minus, squared), -1.0), scale(distance(queries[i], c_plus, squared), -1.0)});
    nll.push_back(cross_entropy(logits, static_cast<std::size_t>(labels[i])));
  }
  return mean(concat(nll));
}

Var combined_loss(Var proto, Var ce, double ce_weight) {
  if (!(ce_weight >= 0.0)) throw std::invalid_argument("combined_loss: ce_weight must be >= 0");
  return add(proto, scale(ce, ce_weight));
}

Tensor augment_with(const Tensor& slice, bool flip, double degrees) {
  if (slice.rank() != 2 || slice.rows() != slice.cols()) throw DimensionError("augment expects a square slice");
  const std::size_t n = slice.rows();
  Tensor src = slice;
  if (flip) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) src.at(r, c) = slice.at(r, n - 1 - c);
  }
  if (degrees == 0.0) return src;
  const double fill = *std::min_element(slice.data().begin(), slice.data().end());
  const double th = degrees * std::numbers::pi / 180.0, cs = std::cos(th), sn = std::sin(th);
  const double half = static_cast<double>(n) / 2.0, last = static_cast<double>(n - 1);
  Tensor out({n, n}, fill);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double x = static_cast<double>(c) + 0.5 - half, y = static_cast<double>(r) + 0.5 - half;
      const double sx = cs * x + sn * y + half - 0.5, sy = -sn * x + cs * y + half - 0.5;
      if (sx < 0.0 || sy < 0.0 || sx > last || sy > last) continue;
      const auto x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, n - 1), y1 = std::min(y0 + 1, n - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      out.at(r, c) = (1 - fy) * ((1 - fx) * src.at(y0, x0) + fx * src.at(y0, x1)) +
                     fy * ((1 - fx) * src.at(y1, x0) + fx * src.at(y1, x1));
    }
  }
  return out;
}

void IntensityJitter::validate() const {
  if (!(scale >= 1.0) || !(offset >= 0.0)) throw std::invalid_argument("intensity jitter needs scale >= 1, offset >= 0");
}

Tensor augment(const Tensor& slice, Rng& rng, const IntensityJitter& jitter) {
  const bool flip = rng.bernoulli(0.5);
  const double degrees = rng.uniform(-15.0, 15.0);
  Tensor out = augment_with(slice, flip, degrees);
  if (!jitter.active()) return out;
  const double a = std::exp(rng.uniform(-std::log(jitter.scale), std::log(jitter.scale)));
  const double b = rng.uniform(-jitter.offset, jitter.offset);
  for (double& v : out.storage()) v = a * v + b;
  return out;
}

void FewShotConfig::validate() const {
  if (k == 0 || query_size == 0) throw std::invalid_argument("few-shot K and query size must be >= 1");
  if (episodes_per_epoch == 0 || epochs == 0) throw std::invalid_argument("few-shot epochs and episodes must be >= 1");
  if (!(ce_weight >= 0.0)) throw std::invalid_argument("few-shot ce_weight must be >= 0");
  if (!(lr > 0.0) || !(weight_decay >= 0.0)) throw std::invalid_argument("few-shot lr must be > 0, weight decay >= 0");
  intensity.validate();
}

FineTuneResult finetune_run(const ModelParams& params, std::span<const LabeledImage> train, const FewShotConfig& config) {
  config.validate();
  FineTuneResult result{params, {}};
  AdamState state;
  const AdamConfig adam{config.lr, 0.9, 0.999, 1e-8, config.weight_decay, true};
  Rng rng(mix_seed(config.seed, 5));

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    FewShotEpoch stats{epoch, 0, 0, 0};
    std::size_t queries_seen = 0;
    for (std::size_t e = 0; e < config.episodes_per_epoch; ++e) {
      const Episode ep = sample_episode(train, config.k, config.query_size, rng);
      Tape tape;
      const BoundParams bp = bind(tape, result.params, true);
      std::vector<Var> class_emb[2], ce_terms;
      for (std::size_t i : ep.support) {
        const Tensor img = config.augment_support ? augment(train[i].image, rng, config.intensity) : train[i].image;
        const ForwardOutput out = forward(tape, bp, img);
        class_emb[train[i].label].push_back(out.embedding);
        ce_terms.push_back(cross_entropy(out.logits, static_cast<std::size_t>(train[i].label)));
      }
      tape.set_scope("prototypes");
      Var c_minus = mean_rows(stack(class_emb[0])), c_plus = mean_rows(stack(class_emb[1]));
      std::vector<Var> queries;
      std::vector<int> labels;
      for (std::size_t i : ep.query) {
        queries.push_back(forward(tape, bp, train[i].image).embedding);
        labels.push_back(train[i].label);
      }
      tape.set_scope("episode loss");
      Var pl = proto_loss(queries, labels, c_plus, c_minus, config.squared_distance);
      Var ce = mean(concat(ce_terms));
      tape.backward(combined_loss(pl, ce, config.ce_weight));
      adam_step(result.params.tensors(), bp.grads(tape), state, adam);

      const Prototypes protos{c_plus.value(), c_minus.value()};
      for (std::size_t j = 0; j < queries.size(); ++j) {
        const bool predicted = proto_probability(queries[j].value(), protos, config.squared_distance) > 0.5;
        stats.episode_accuracy += predicted == (labels[j] == 1);
      }
      queries_seen += queries.size();
      stats.proto_loss += pl.value().item();
      stats.ce_loss += ce.value().item();
    }
    const double n = static_cast<double>(config.episodes_per_epoch);
    stats.proto_loss /= n;
    stats.ce_loss /= n;
    stats.episode_accuracy /= static_cast<double>(queries_seen);
    result.history.push_back(stats);
  }
  return result;
}

Prototypes prototypes_from(const ModelParams& params, std::span<const LabeledImage> images) {
  std::vector<Tensor> emb;
  std::vector<int> labels;
  for (const auto& li : images) {
    emb.push_back(embed(params, li.image));
    labels.push_back(li.label);
  }
  return compute_prototypes(emb, labels);
}

double predict_subject(const ModelParams& params, const Prototypes& protos, std::span<const Tensor> slices, bool squared) {
  if (slices.empty()) throw std::invalid_argument("predict_subject: no slices");
  double s = 0.0;
  for (const auto& img : slices) s += proto_probability(embed(params, img), protos, squared);
  return s / static_cast<double>(slices.size());
}

void write_fewshot_csv(const std::filesystem::path& path, std::span<const FewShotEpoch> history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "epoch,proto_loss,ce_loss,episode_accuracy\n";
  for (const auto& e : history) out << e.epoch << ',' << e.proto_loss << ',' << e.ce_loss << ',' << e.episode_accuracy << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace pvit
