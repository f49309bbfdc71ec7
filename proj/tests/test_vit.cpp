#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "pvit/checkpoint.hpp"
#include "pvit/vit.hpp"
#include "test_support.hpp"

using namespace pvit;
using pvit::testing::random_image;
using pvit::testing::random_tensor;

namespace {

// Small enough that every parameter can be finite-differenced.
ViTConfig tiny_config(bool cls) { return {2, 8, 2, 4, 16, 2, 1, 2, cls}; }

// Random readout so every logit contributes to the loss.
Var logit_readout(Tape& tape, const BoundParams& bp, const Tensor& image, const Tensor& w) {
  ForwardOutput out = forward(tape, bp, image);
  return sum(mul(out.logits, tape.constant(w)));
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pvit_test_" + name);
}

}  // namespace

TEST_CASE("patchify") {
  SUBCASE("raster order within and across patches") {
    ViTConfig c{1, 4, 1, 2, 4, 1, 1, 2, true};
    Tensor img(Shape{1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i);
    const Tensor tokens = patchify(img, c);
    CHECK(tokens.shape() == Shape{4, 4});
    // token 0 = pixels (0,0),(0,1),(1,0),(1,1)
    CHECK(tokens.at(0, 0) == 0.0);
    CHECK(tokens.at(0, 1) == 1.0);
    CHECK(tokens.at(0, 2) == 4.0);
    CHECK(tokens.at(0, 3) == 5.0);
    // token 1 is the top-right patch
    CHECK(tokens.at(1, 0) == 2.0);
    CHECK(tokens.at(2, 0) == 8.0);
  }
  SUBCASE("constant image gives identical tokens") {
    ViTConfig c = ViTConfig::micro();
    const Tensor tokens = patchify(Tensor(Shape{1, 32, 32}, 0.25), c);
    for (std::size_t r = 1; r < tokens.rows(); ++r)
      for (std::size_t k = 0; k < tokens.cols(); ++k) CHECK(tokens.at(r, k) == tokens.at(0, k));
  }
  SUBCASE("224 px with 16 px patches gives a 14x14 grid") {
    ViTConfig c = ViTConfig::student();
    CHECK(c.num_patches() == 196);
    CHECK(patchify(Tensor(Shape{224, 224}, 1.0), c).rows() == 196);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(patchify(Tensor(Shape{1, 30, 30}), ViTConfig::micro()), DimensionError);
  }
}

TEST_CASE("config validation") {
  ViTConfig c = ViTConfig::micro();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ViTConfig::micro();
  c.patch = 5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ViTConfig::micro();
  c.layers = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(ViTConfig::preset("micro-student") == ViTConfig::micro_student());
  CHECK_THROWS_AS(ViTConfig::preset("huge"), std::invalid_argument);
}

TEST_CASE("param_count") {
  // Hand summation for the micro config:
  //   patch embed 64*32 + 32                          = 2080
  //   per block 64 + 3168 + 1056 + 64 + 8352          = 12704, x2 = 25408
  //   final LN 64, class token 32, positions 17*32=544, head 66
  CHECK(param_count(ViTConfig::micro()) == 2080 + 25408 + 64 + 32 + 544 + 66);
  CHECK(param_count(ViTConfig::micro()) == 28194);
  CHECK(ModelParams(ViTConfig::micro()).scalar_count() == 28194);

  CHECK(param_count(ViTConfig::student()) == 2757314);
  CHECK(ModelParams(ViTConfig::student()).scalar_count() == 2757314);

  for (const ViTConfig& c : {ViTConfig::micro_teacher(), ViTConfig::micro_student(), tiny_config(true)}) {
    CHECK(ModelParams(c).scalar_count() == param_count(c));
  }

  ViTConfig wide = ViTConfig::micro();
  wide.dim = 64;
  const double ratio = static_cast<double>(param_count(wide)) / static_cast<double>(param_count(ViTConfig::micro()));
  CHECK(ratio > 3.0);
  CHECK(ratio < 4.2);
}

TEST_CASE("init_params") {
  const ViTConfig c = ViTConfig::micro();
  const ModelParams a = init_params(c, 42);
  const ModelParams b = init_params(c, 42);
  const ModelParams other = init_params(c, 43);
  CHECK(a == b);
  CHECK_FALSE(a == other);

  std::set<std::string> names;
  for (const auto& t : a.tensors()) names.insert(t.name);
  CHECK(names.size() == a.tensors().size());

  CHECK(a.get("cls_token") == Tensor(Shape{c.dim}, 0.0));
  CHECK(a.get("blocks.0.qkv.bias") == Tensor(Shape{3 * c.dim}, 0.0));
  CHECK(a.get("blocks.1.ln2.gamma") == Tensor(Shape{c.dim}, 1.0));
  const Tensor& w = a.get("blocks.0.mlp.fc1.weight");
  double sq = 0.0, mx = 0.0;
  for (double v : w.data()) {
    sq += v * v;
    mx = std::max(mx, std::abs(v));
  }
  CHECK(mx <= 0.04);
  const double sd = std::sqrt(sq / static_cast<double>(w.size()));
  CHECK(sd > 0.015);
  CHECK(sd < 0.02);
}

TEST_CASE("forward") {
  Rng rng(7);
  const ViTConfig c = ViTConfig::micro();

  SUBCASE("dead network returns the head bias") {
    ModelParams p(c);
    for (auto& t : p.tensors())
      for (double& v : t.value.storage()) v = 0.0;
    p.get("head.bias") = Tensor::vector({0.3, -1.7});
    for (int i = 0; i < 3; ++i) CHECK(predict(p, random_image(c, rng)).logits == Tensor::vector({0.3, -1.7}));
  }

  SUBCASE("trace attention rows are normalized") {
    const ModelParams p = init_params(c, 1);
    const Prediction pred = predict(p, random_image(c, rng), true);
    REQUIRE(pred.trace);
    CHECK(pred.trace->attention.size() == c.layers);
    CHECK(pred.trace->features.shape() == Shape{c.num_tokens(), c.dim});
    for (const Tensor& a : pred.trace->attention) {
      REQUIRE(a.shape() == Shape{c.heads, 17, 17});
      for (std::size_t r = 0; r < c.heads * 17; ++r) {
        double total = 0.0;
        for (std::size_t k = 0; k < 17; ++k) total += a[r * 17 + k];
        CHECK(std::abs(total - 1.0) < 1e-9);
      }
    }
  }

  SUBCASE("swapping two patches with their positions leaves logits unchanged") {
    for (bool cls : {true, false}) {
      ViTConfig cc = c;
      cc.use_class_token = cls;
      ModelParams p = init_params(cc, 5);
      for (double& v : p.get("pos_embed").storage()) v *= 20.0;  // make positions matter
      const Tensor img = random_image(cc, rng);
      // patches (0,1) and (2,3) of the 4x4 grid, i.e. token indices 1 and 11
      const std::size_t ia = 1, ib = 11, off = cls ? 1 : 0;
      Tensor swapped = img;
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
          const std::size_t pa = (0 * 8 + y) * 32 + 1 * 8 + x;
          const std::size_t pb = (2 * 8 + y) * 32 + 3 * 8 + x;
          std::swap(swapped[pa], swapped[pb]);
        }
      ModelParams q = p;
      Tensor& pos = q.get("pos_embed");
      for (std::size_t d = 0; d < cc.dim; ++d) std::swap(pos.at(ia + off, d), pos.at(ib + off, d));
      const Tensor la = predict(p, img).logits;
      const Tensor lb = predict(q, swapped).logits;
      CHECK(pvit::testing::max_abs_diff(la, lb) < 1e-9);
      CHECK(pvit::testing::max_abs_diff(la, predict(p, swapped).logits) > 1e-6);
    }
  }

  SUBCASE("deterministic") {
    const ModelParams p = init_params(c, 2);
    const Tensor img = random_image(c, rng);
    CHECK(predict(p, img).logits == predict(p, img).logits);
  }

  SUBCASE("non-finite activation names the layer") {
    ModelParams p = init_params(c, 3);
    for (double& v : p.get("blocks.1.mlp.fc1.weight").storage()) v = 1e200;
    for (double& v : p.get("blocks.1.mlp.fc2.weight").storage()) v = 1e200;
    try {
      predict(p, random_image(c, rng));
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(std::string(e.what()).find("block 1") != std::string::npos);
    }
  }
}

TEST_CASE("embed") {
  Rng rng(17);
  ViTConfig c = ViTConfig::micro();
  const ModelParams p = init_params(c, 4);
  const Tensor img = random_image(c, rng);
  const Tensor e = embed(p, img);
  CHECK(e.shape() == Shape{c.dim});
  CHECK(embed(p, img) == e);
  const Prediction pred = predict(p, img, true);
  for (std::size_t d = 0; d < c.dim; ++d) CHECK(e[d] == pred.trace->features.at(0, d));

  c.use_class_token = false;
  const ModelParams pm = init_params(c, 4);
  const Tensor em = embed(pm, img);
  const Prediction pm_pred = predict(pm, img, true);
  for (std::size_t d = 0; d < c.dim; ++d) {
    double m = 0.0;
    for (std::size_t r = 0; r < c.num_tokens(); ++r) m += pm_pred.trace->features.at(r, d);
    CHECK(em[d] == doctest::Approx(m / static_cast<double>(c.num_tokens())).epsilon(1e-12));
  }
}

TEST_CASE("full forward gradient matches finite differences") {
  // Every scalar of a tiny model, several seeds, both readouts.
  for (bool cls : {true, false}) {
    const ViTConfig c = tiny_config(cls);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(100 + seed);
      ModelParams p = init_params(c, seed);
      // Perturb away from the near-linear init so every path carries signal.
      for (auto& t : p.tensors())
        for (double& v : t.value.storage()) v += rng.normal(0.0, 0.3);
      const Tensor img = random_image(c, rng);
      const Tensor w = random_tensor({c.classes}, rng);
      auto loss = [&](Tape& tape, const BoundParams& bp) { return logit_readout(tape, bp, img, w); };
      const auto res = pvit::testing::model_grad_check(p, loss, 1e-5);
      INFO("cls=" << cls << " seed=" << seed << " worst " << res.worst);
      CHECK(res.max_rel_error < 1e-4);
      CHECK(res.null_checked == c.layers * c.dim);
      CHECK(res.null_max_abs_analytic < 1e-13);
      CHECK(res.null_max_abs_numeric < 1e-9);
    }
  }
}

TEST_CASE("micro config gradient matches finite differences on sampled entries") {
  const ViTConfig c = ViTConfig::micro();
  Rng rng(9);
  ModelParams p = init_params(c, 11);
  for (auto& t : p.tensors())
    for (double& v : t.value.storage()) v += rng.normal(0.0, 0.1);
  const Tensor img = random_image(c, rng);
  const Tensor w = random_tensor({c.classes}, rng);
  auto loss = [&](Tape& tape, const BoundParams& bp) { return logit_readout(tape, bp, img, w); };
  const auto res = pvit::testing::model_grad_check(p, loss, 1e-5, 6, 3);
  INFO("worst " << res.worst);
  CHECK(res.max_rel_error < 1e-4);
  CHECK(res.null_max_abs_analytic < 1e-13);
  CHECK(res.null_max_abs_numeric < 1e-9);
}

TEST_CASE("checkpoint round trip") {
  const ModelParams p = init_params(ViTConfig::micro_student(), 21);
  const auto path = temp_path("roundtrip.pvit");
  save_params(p, path);
  CHECK(load_params(path) == p);
  CHECK(load_params(path, ViTConfig::micro_student()) == p);

  SUBCASE("truncated file fails the checksum") {
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 100);
    CHECK_THROWS_WITH_AS(load_params(path), doctest::Contains("checksum"), CheckpointError);
  }
  SUBCASE("flipped payload byte fails the checksum") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(std::filesystem::file_size(path) - 64));
    f.put('\x7f');
    f.close();
    CHECK_THROWS_AS(load_params(path), CheckpointError);
  }
  SUBCASE("loading into a different architecture is a shape mismatch") {
    const auto tpath = temp_path("teacher.pvit");
    save_params(init_params(ViTConfig::micro_teacher(), 1), tpath);
    CHECK_THROWS_WITH_AS(load_params(tpath, ViTConfig::micro_student()), doctest::Contains("shape mismatch"),
                         CheckpointError);
    std::filesystem::remove(tpath);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_params(temp_path("absent.pvit")), CheckpointError); }
  std::filesystem::remove(path);
}
