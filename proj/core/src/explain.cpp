#include "pvit/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pvit/stats.hpp"

namespace pvit {

namespace {

std::size_t resolve_size(const ViTConfig& config, const GradCamOptions& options) {
  return options.output_size == 0 ? config.image_size : options.output_size;
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

Tensor bilinear_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  if (map.rank() != 2 || map.size() == 0) throw DimensionError("bilinear_upsample expects a non-empty matrix");
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_upsample: zero output extent");
  const std::size_t h = map.rows(), w = map.cols();
  auto source = [](std::size_t i, std::size_t in, std::size_t out) {
    const double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  Tensor out({out_h, out_w});
  for (std::size_t r = 0; r < out_h; ++r) {
    const double sy = source(r, h, out_h);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t c = 0; c < out_w; ++c) {
      const double sx = source(c, w, out_w);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      out.at(r, c) = (1 - fy) * ((1 - fx) * map.at(y0, x0) + fx * map.at(y0, x1)) +
                     fy * ((1 - fx) * map.at(y1, x0) + fx * map.at(y1, x1));
    }
  }
  return out;
}

QuintileMask binarize_top_quintile(const Tensor& map) {
  const std::size_t n = map.size();
  if (n == 0) throw DimensionError("binarize_top_quintile: empty map");
  std::vector<double> sorted(map.data().begin(), map.data().end());
  std::sort(sorted.begin(), sorted.end());
  QuintileMask q{Mask(n, 0), 0.0, false};
  if (sorted.front() == sorted.back()) {
    q.degenerate = true;
    return q;
  }
  // ceil(0.8·(n−1)) in integers; the floating product can land just above an integer.
  const std::size_t index = (4 * (n - 1) + 4) / 5;
  q.threshold = sorted[index];
  for (std::size_t i = 0; i < n; ++i) q.mask[i] = map[i] >= q.threshold ? 1 : 0;
  return q;
}

SaliencyMap cam_from_gradients(const Tensor& features, const Tensor& gradients, std::size_t grid,
                               std::size_t output_size, const GradCamOptions& options) {
  if (features.rank() != 2 || features.shape() != gradients.shape()) {
    throw DimensionError("cam_from_gradients: features and gradients must be equal-shape matrices");
  }
  const std::size_t n = features.rows(), d = features.cols();
  if (n != grid * grid) throw DimensionError("cam_from_gradients: token count is not grid²");
  std::vector<double> alpha(d, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t j = 0; j < d; ++j) alpha[j] += gradients.at(t, j);
  for (double& a : alpha) a /= static_cast<double>(n);

  SaliencyMap m;
  m.coarse = Tensor({grid, grid});
  for (std::size_t t = 0; t < n; ++t) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += alpha[j] * features.at(t, j);
    m.coarse[t] = options.relu ? std::max(0.0, s) : s;
  }
  m.raw = bilinear_upsample(m.coarse, output_size, output_size);
  const auto [lo, hi] = std::minmax_element(m.coarse.data().begin(), m.coarse.data().end());
  m.upsampled = Tensor({output_size, output_size});
  if (*lo == *hi) {
    m.degenerate = true;
  } else {
    const auto [rlo, rhi] = std::minmax_element(m.raw.data().begin(), m.raw.data().end());
    const double span = *rhi - *rlo;
    for (std::size_t i = 0; i < m.raw.size(); ++i) m.upsampled[i] = (m.raw[i] - *rlo) / span;
  }
  if (options.binarize) m.threshold_mask = binarize_top_quintile(m.upsampled).mask;
  return m;
}

std::string cam_target_name(CamTarget target) {
  return target == CamTarget::final_features ? "final-features" : "last-block-input";
}

CamTarget parse_cam_target(std::string_view name) {
  if (name == "final-features") return CamTarget::final_features;
  if (name == "last-block-input") return CamTarget::last_block_input;
  throw std::invalid_argument("unknown Grad-CAM target '" + std::string(name) + "'");
}

SaliencyMap grad_cam(const ModelParams& params, const Tensor& image, std::size_t class_index,
                     const GradCamOptions& options) {
  const ViTConfig& config = params.config();
  if (class_index >= config.classes) throw std::invalid_argument("grad_cam: class index out of range");
  Tape tape;
  const BoundParams bp = bind(tape, params, false);
  const bool at_block = options.target == CamTarget::last_block_input;
  const ForwardOutput out =
      forward(tape, bp, image, {.capture = false, .detach_features = !at_block, .detach_block_input = at_block});
  tape.backward(element(out.logits, class_index));
  const Var target = at_block ? out.block_input : out.features;
  Tensor features = target.value(), grads = tape.grad(target);
  if (config.use_class_token) {
    const std::size_t n = config.num_patches(), d = config.dim;
    Tensor f({n, d}), g({n, d});
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < d; ++j) {
        f.at(t, j) = features.at(t + 1, j);
        g.at(t, j) = grads.at(t + 1, j);
      }
    features = std::move(f);
    grads = std::move(g);
  }
  return cam_from_gradients(features, grads, config.grid(), resolve_size(config, options), options);
}

Tensor attention_rollout(const ForwardTrace& trace, const ViTConfig& config) {
  if (trace.attention.empty()) throw std::invalid_argument("attention_rollout: trace holds no attention maps");
  const std::size_t t = config.num_tokens();
  Tensor r({t, t});
  for (std::size_t i = 0; i < t; ++i) r.at(i, i) = 1.0;
  for (const Tensor& a : trace.attention) {
    if (a.rank() != 3 || a.dim(1) != t || a.dim(2) != t) throw DimensionError("attention_rollout: attention is not H×T×T");
    const std::size_t h = a.dim(0);
    Tensor bar({t, t});
    for (std::size_t i = 0; i < t; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        double m = 0.0;
        for (std::size_t k = 0; k < h; ++k) m += a[(k * t + i) * t + j];
        bar.at(i, j) = 0.5 * (m / static_cast<double>(h) + (i == j ? 1.0 : 0.0));
        row_sum += bar.at(i, j);
      }
      for (std::size_t j = 0; j < t; ++j) bar.at(i, j) /= row_sum;
    }
    Tensor next({t, t});  // Ā_l · R
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t k = 0; k < t; ++k) {
        const double b = bar.at(i, k);
        for (std::size_t j = 0; j < t; ++j) next.at(i, j) += b * r.at(k, j);
      }
    r = std::move(next);
  }
  const std::size_t g = config.grid(), offset = config.use_class_token ? 1 : 0;
  Tensor coarse({g, g});
  for (std::size_t p = 0; p < g * g; ++p) {
    if (config.use_class_token) {
      coarse[p] = r.at(0, p + offset);
    } else {
      double s = 0.0;
      for (std::size_t i = 0; i < t; ++i) s += r.at(i, p);
      coarse[p] = s / static_cast<double>(t);
    }
  }
  return coarse;
}

ModelParams permute_params(const ModelParams& params, Rng& rng) {
  ModelParams out = params;
  for (auto& nt : out.tensors()) rng.shuffle(nt.value.storage());
  return out;
}

RandomizationRatio median_intensity_ratio(const ModelParams& reference, const ModelParams& other,
                                          std::span<const Tensor> images, std::size_t class_index,
                                          const GradCamOptions& options) {
  if (images.empty()) throw std::invalid_argument("median_intensity_ratio: no images");
  GradCamOptions o = options;
  o.binarize = false;
  std::vector<double> a, b;
  for (const auto& img : images) {
    a.push_back(median(grad_cam(reference, img, class_index, o).raw.storage()));
    b.push_back(median(grad_cam(other, img, class_index, o).raw.storage()));
  }
  RandomizationRatio r;
  r.original_median = median(a);
  r.permuted_median = median(b);
  if (!(r.original_median > 0.0)) {
    throw std::invalid_argument("median_intensity_ratio: reference saliency has zero median intensity");
  }
  r.ratio = r.permuted_median / r.original_median;
  return r;
}

RandomizationRatio param_randomization_check(const ModelParams& params, std::span<const Tensor> images,
                                             std::size_t class_index, Rng& rng, const GradCamOptions& options) {
  return median_intensity_ratio(params, permute_params(params, rng), images, class_index, options);
}

DiceDrop input_randomization_check(const ModelParams& params, std::span<const Tensor> images,
                                   std::span<const Mask> masks, std::size_t class_index, std::optional<double> sigma,
                                   Rng& rng, const GradCamOptions& options) {
  if (images.empty() || images.size() != masks.size()) {
    throw std::invalid_argument("input_randomization_check: need one mask per image");
  }
  if (sigma && !(*sigma > 0.0)) throw std::invalid_argument("input_randomization_check: sigma must be > 0");
  GradCamOptions o = options;
  o.binarize = true;
  DiceDrop out;
  double sum_before = 0.0, sum_after = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor& img = images[i];
    const double mu = mean_of(img.data());
    double var = 0.0;
    for (double v : img.data()) var += (v - mu) * (v - mu);
    const double sd = sigma ? *sigma : std::sqrt(var / static_cast<double>(img.size()));
    Tensor noise(img.shape());
    for (double& v : noise.storage()) v = rng.normal(mu, sd);

    const SaliencyMap before = grad_cam(params, img, class_index, o);
    const SaliencyMap after = grad_cam(params, noise, class_index, o);
    if (before.threshold_mask->size() != masks[i].size()) {
      throw DimensionError("input_randomization_check: mask size differs from the saliency output size");
    }
    const double db = dice(*before.threshold_mask, masks[i]).value;
    const double da = dice(*after.threshold_mask, masks[i]).value;
    if (!(db > 0.0)) {
      ++out.excluded;
      continue;
    }
    sum_before += db;
    sum_after += da;
    out.drop += 1.0 - da / db;
    ++out.used;
  }
  if (out.used == 0) throw std::invalid_argument("input_randomization_check: every image had zero Dice before noise");
  const double n = static_cast<double>(out.used);
  out.drop /= n;
  out.mean_before = sum_before / n;
  out.mean_after = sum_after / n;
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) throw DimensionError("write_pgm expects a matrix");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  std::vector<char> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_saliency(const std::filesystem::path& dir, const std::string& stem, const std::string& image_id,
                    std::size_t class_index, const SaliencyMap& map) {
  std::filesystem::create_directories(dir);
  write_f32(dir / (stem + ".sal"), map.upsampled.data());
  write_pgm(dir / (stem + ".pgm"), map.upsampled);
  const auto [lo, hi] = std::minmax_element(map.raw.data().begin(), map.raw.data().end());
  nlohmann::json j{{"image_id", image_id},
                   {"class", class_index},
                   {"size", map.upsampled.rows()},
                   {"grid", map.coarse.rows()},
                   {"degenerate", map.degenerate},
                   {"raw_min", *lo},
                   {"raw_max", *hi},
                   {"coarse", map.coarse.storage()}};
  std::ofstream out(dir / (stem + ".json"), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / (stem + ".json")).string());
  out << j.dump(2) << '\n';
}

}  // namespace pvit
