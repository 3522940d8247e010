#include "doctest.h"

#include "simex/checkpoint.hpp"
#include "simex/model.hpp"
#include "simex/synth.hpp"

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

using namespace simex;

namespace {

Dataset tiny_glyphs(int per_class, int classes, std::uint64_t seed) {
  GlyphParams p;
  p.count_per_class = per_class;
  p.num_classes = classes;
  return synth_glyphs(p, seed);
}

TrainConfig quick_cfg(int epochs, std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.optimizer = OptimizerConfig::adam(1e-3);
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("autoencoder output shape mirrors the input") {
  for (const int side : {16, 20, 28}) {
    auto m = build_autoencoder<float>(side, side, 1);
    CHECK(m.net.output_shape({1, side, side}) == Shape({1, side, side}));
    Tensor<float> x({2, 1, side, side});
    x.data.setConstant(0.5f);
    const auto y = reconstruct(m, x);
    CHECK(y.shape == Shape({2, 1, side, side}));
    // sigmoid head keeps reconstructions in (0,1)
    CHECK((y.data > 0.0f).all());
    CHECK((y.data < 1.0f).all());
  }
}

TEST_CASE("unsupported input shapes are rejected with the offending size") {
  CHECK_THROWS_WITH_AS(build_autoencoder<float>(28, 27, 0), doctest::Contains("28x27"),
                       std::invalid_argument);
  CHECK_THROWS_AS(build_autoencoder<float>(12, 12, 0), std::invalid_argument);
  CHECK_THROWS_AS(build_autoencoder<float>(30, 30, 0), std::invalid_argument);
  CHECK_THROWS_AS(build_classifier<float>(28, 28, 7, 0), std::invalid_argument);
}

TEST_CASE("bottleneck embedding has width 120") {
  auto m = build_autoencoder<float>(28, 28, 3);
  CHECK(m.bottleneck_width == 120);
  Tensor<float> x({3, 1, 28, 28});
  x.data.setRandom();
  x.data = x.data.abs();
  const auto e = bottleneck_embed(m, x);
  CHECK(e.shape == Shape({3, 120}));
  // relu bottleneck is non-negative
  CHECK((e.data >= 0.0f).all());
}

TEST_CASE("28x28 autoencoder parameter count is fixed") {
  const auto m = build_autoencoder<float>(28, 28, 0);
  // conv 6@5x5x1 + 6, conv 16@5x5x6 + 16, dense 400*120 + 120,
  // dense 120*400 + 400, conv 6@5x5x16 + 6, conv 1@5x5x6 + 1
  CHECK(m.net.param_count() == 101649);
}

TEST_CASE("classifier head matches the class count") {
  for (const int classes : {9, 10}) {
    auto m = build_classifier<float>(28, 28, classes, 5);
    Tensor<float> x({4, 1, 28, 28});
    x.data.setConstant(0.25f);
    const auto p = predict_proba(m, x);
    CHECK(p.shape == Shape({4, classes}));
    for (int i = 0; i < 4; ++i) {
      double row = 0;
      for (int j = 0; j < classes; ++j) {
        row += p.data[long(i) * classes + j];
        CHECK(p.data[long(i) * classes + j] >= 0.0f);
      }
      CHECK(row == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("zero epochs is a no-op on the parameters") {
  auto m = build_autoencoder<float>(16, 16, 9);
  const auto before = m.net.params();
  std::vector<Tensor<float>> copies;
  for (const auto* p : before) copies.push_back(*p);

  const Dataset d = tiny_glyphs(2, 2, 4);
  Dataset d16 = d;
  // re-render at 16x16 so shapes match
  GlyphParams gp;
  gp.count_per_class = 2;
  gp.num_classes = 2;
  gp.height = gp.width = 16;
  d16 = synth_glyphs(gp, 4);

  const auto res = train(m, d16, quick_cfg(0));
  CHECK(res.epoch_loss.empty());
  CHECK(m.meta.epochs_trained == 0);
  const auto after = m.net.params();
  for (std::size_t i = 0; i < after.size(); ++i)
    CHECK((after[i]->data == copies[i].data).all());
}

TEST_CASE("training is deterministic for a fixed seed") {
  GlyphParams gp;
  gp.count_per_class = 4;
  gp.num_classes = 3;
  gp.height = gp.width = 16;
  const Dataset d = synth_glyphs(gp, 8);

  auto run = [&](std::uint64_t seed) {
    auto m = build_autoencoder<float>(16, 16, 42);
    const auto res = train(m, d, quick_cfg(2, seed));
    return std::make_pair(res.epoch_loss, m.net.params()[0]->data.eval());
  };
  const auto a = run(7), b = run(7), c = run(8);
  CHECK(a.first == b.first);
  CHECK((a.second == b.second).all());
  CHECK(!(a.second == c.second).all());
}

TEST_CASE("a few epochs reduce reconstruction loss under both losses") {
  GlyphParams gp;
  gp.count_per_class = 6;
  gp.num_classes = 3;
  gp.height = gp.width = 16;
  const Dataset d = synth_glyphs(gp, 15);

  for (const LossKind kind : {LossKind::mse(), LossKind::issim()}) {
    auto m = build_autoencoder<float>(16, 16, 1);
    TrainConfig cfg = quick_cfg(6, 3);
    cfg.loss = kind;
    const auto res = train(m, d, cfg);
    REQUIRE(res.epoch_loss.size() == 6);
    CHECK(res.epoch_loss.back() < res.epoch_loss.front());
    CHECK(m.meta.loss == std::string(loss_name(kind.id)));
  }
}

TEST_CASE("classifier training reduces cross-entropy and fits tiny data") {
  GlyphParams gp;
  gp.count_per_class = 8;
  gp.num_classes = 9;
  gp.height = gp.width = 16;
  const Dataset d = synth_glyphs(gp, 31);

  auto m = build_classifier<float>(16, 16, 9, 2);
  TrainConfig cfg = quick_cfg(8, 5);
  const auto res = train(m, d, cfg);
  CHECK(res.epoch_loss.back() < res.epoch_loss.front());

  // accuracy on the training set should beat chance comfortably
  std::vector<int> all(std::size_t(d.n));
  std::iota(all.begin(), all.end(), 0);
  const auto proba = predict_proba(m, d.batch<float>(all));
  int hits = 0;
  for (int i = 0; i < d.n; ++i) {
    int arg = 0;
    for (int j = 1; j < 9; ++j)
      if (proba.data[long(i) * 9 + j] > proba.data[long(i) * 9 + arg]) arg = j;
    hits += arg == d.labels[std::size_t(i)];
  }
  CHECK(double(hits) / d.n > 0.5);
}

TEST_CASE("frozen prefix stays byte-identical during classifier training") {
  GlyphParams gp;
  gp.count_per_class = 4;
  gp.num_classes = 9;
  gp.height = gp.width = 16;
  const Dataset d = synth_glyphs(gp, 12);

  auto m = build_classifier<float>(16, 16, 9, 77);
  auto& layers = m.net.layers();
  std::vector<Tensor<float>> before;
  for (const auto& l : layers)
    for (const auto& p : l.params) before.push_back(p);

  train(m, d, quick_cfg(2, 1), m.conv_layer_count);

  std::size_t k = 0;
  bool head_changed = false;
  for (std::size_t li = 0; li < layers.size(); ++li)
    for (const auto& p : layers[li].params) {
      if (li < m.conv_layer_count)
        CHECK((p.data == before[k].data).all());
      else
        head_changed = head_changed || !(p.data == before[k].data).all();
      ++k;
    }
  CHECK(head_changed);
}

TEST_CASE("training rejects bad inputs") {
  auto m = build_autoencoder<float>(16, 16, 0);
  Dataset empty;
  empty.id = "empty";
  CHECK_THROWS_AS(train(m, empty, quick_cfg(1)), std::invalid_argument);

  GlyphParams gp;
  gp.count_per_class = 2;
  gp.num_classes = 2;
  gp.height = gp.width = 16;
  Dataset d = synth_glyphs(gp, 1);
  TrainConfig bad = quick_cfg(1);
  bad.batch_size = 0;
  CHECK_THROWS_AS(train(m, d, bad), std::invalid_argument);

  auto c = build_classifier<float>(16, 16, 9, 0);
  d.labels.clear();
  CHECK_THROWS_AS(train(c, d, quick_cfg(1)), std::invalid_argument);
}

TEST_CASE("checkpoint round-trip preserves parameters and metadata") {
  GlyphParams gp;
  gp.count_per_class = 3;
  gp.num_classes = 2;
  gp.height = gp.width = 16;
  const Dataset d = synth_glyphs(gp, 19);

  auto m = build_autoencoder<float>(16, 16, 123);
  m.meta.reference_id = "glyphs/class0";
  train(m, d, quick_cfg(1, 55));

  const std::string path = "/tmp/simex_test_ae.ckpt";
  save_checkpoint(m, path);
  const auto back = load_autoencoder<float>(path);

  CHECK(back.meta.kind == "autoencoder");
  CHECK(back.meta.reference_id == "glyphs/class0");
  CHECK(back.meta.seed == 123);
  CHECK(back.meta.epochs_trained == 1);
  CHECK(back.meta.input_h == 16);
  CHECK(back.bottleneck_layer == m.bottleneck_layer);
  CHECK(back.bottleneck_width == 120);

  const auto pa = m.net.params();
  const auto pb = back.net.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i]->shape == pb[i]->shape);
    CHECK((pa[i]->data == pb[i]->data).all());
  }

  // loaded model computes identical outputs
  Tensor<float> x({1, 1, 16, 16});
  x.data.setConstant(0.3f);
  CHECK((reconstruct(m, x).data == reconstruct(back, x).data).all());
}

TEST_CASE("classifier checkpoints keep the trunk marker and reject kind mixups") {
  auto c = build_classifier<float>(16, 16, 10, 9);
  c.meta.reference_id = "probe";
  const std::string path = "/tmp/simex_test_clf.ckpt";
  save_checkpoint(c, path);
  const auto back = load_classifier<float>(path);
  CHECK(back.conv_layer_count == c.conv_layer_count);
  CHECK(back.meta.num_classes == 10);

  CHECK_THROWS_WITH_AS(load_autoencoder<float>(path), doctest::Contains("not an autoencoder"),
                       std::runtime_error);

  auto m = build_autoencoder<float>(16, 16, 2);
  const std::string ae_path = "/tmp/simex_test_ae2.ckpt";
  save_checkpoint(m, ae_path);
  CHECK_THROWS_WITH_AS(load_classifier<float>(ae_path), doctest::Contains("not a classifier"),
                       std::runtime_error);
}

TEST_CASE("corrupted checkpoints are rejected") {
  auto m = build_autoencoder<float>(16, 16, 4);
  const std::string path = "/tmp/simex_test_corrupt.ckpt";
  save_checkpoint(m, path);

  auto read_all = [&]() {
    std::ifstream f(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  };
  auto write_all = [&](const std::vector<char>& bytes, const std::string& p) {
    std::ofstream f(p, std::ios::binary);
    f.write(bytes.data(), long(bytes.size()));
  };
  const auto bytes = read_all();

  // flipped payload byte breaks the CRC
  auto flipped = bytes;
  flipped[flipped.size() / 2] = char(flipped[flipped.size() / 2] ^ 0x40);
  write_all(flipped, "/tmp/simex_test_flip.ckpt");
  CHECK_THROWS_WITH_AS(load_autoencoder<float>("/tmp/simex_test_flip.ckpt"),
                       doctest::Contains("CRC"), std::runtime_error);

  // bad magic
  auto magic = bytes;
  magic[0] = 'X';
  write_all(magic, "/tmp/simex_test_magic.ckpt");
  CHECK_THROWS_WITH_AS(load_autoencoder<float>("/tmp/simex_test_magic.ckpt"),
                       doctest::Contains("bad magic"), std::runtime_error);

  // truncation
  auto cut = bytes;
  cut.resize(cut.size() / 3);
  write_all(cut, "/tmp/simex_test_cut.ckpt");
  CHECK_THROWS_AS(load_autoencoder<float>("/tmp/simex_test_cut.ckpt"), std::runtime_error);

  // double precision reader refuses a float checkpoint
  CHECK_THROWS_WITH_AS(load_autoencoder<double>(path), doctest::Contains("scalar width"),
                       std::runtime_error);

  CHECK_THROWS_WITH_AS(load_autoencoder<float>("/tmp/simex_test_missing.ckpt"),
                       doctest::Contains("cannot open"), std::runtime_error);

  // no stray temp file is left behind by successful saves
  CHECK(!std::ifstream(path + ".tmp").good());
}
