#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "mvcnn/model.hpp"
#include "mvcnn/util.hpp"
#include "testutil.hpp"

using namespace mvcnn;
using namespace mvcnn::model;

namespace {

ModelConfig compact_config(int classes = 5, views::ViewCombination combo = views::ViewCombination::RgbGm) {
  ModelConfig cfg;
  cfg.combo = combo;
  cfg.input_h = cfg.input_w = 64;
  cfg.class_count = classes;
  cfg.conv_plan = compact_conv_plan();
  return cfg;
}

bool params_equal(const LayerParams& a, const LayerParams& b) {
  if (a.weights.shape() != b.weights.shape()) return false;
  if (std::memcmp(a.weights.data(), b.weights.data(), sizeof(float) * a.weights.numel()) != 0)
    return false;
  return a.bias == b.bias && a.bn_gamma == b.bn_gamma && a.bn_beta == b.bn_beta &&
         a.bn_running_mean == b.bn_running_mean && a.bn_running_var == b.bn_running_var;
}

}  // namespace

TEST_CASE("spatial trace of the full-size plan") {
  ModelConfig cfg;  // defaults: 256x256
  std::vector<std::pair<int, int>> trace = spatial_trace(cfg);
  const std::vector<int> want = {254, 252, 126, 124, 122, 61, 59, 57, 28, 26, 13};
  REQUIRE(trace.size() == want.size());
  for (size_t i = 0; i < want.size(); ++i) {
    CHECK(trace[i].first == want[i]);
    CHECK(trace[i].second == want[i]);
  }

  // The plan starves on an 8x8 input; the error names the failing stage.
  cfg.input_h = cfg.input_w = 8;
  CHECK_THROWS_AS(spatial_trace(cfg), ConfigError);
  try {
    spatial_trace(cfg);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("conv") != std::string::npos);
  }
  CHECK_THROWS_AS(build_model(cfg, 1), ConfigError);
}

TEST_CASE("build_model wiring and determinism") {
  ModelConfig cfg;  // 4-channel default combo
  Model m = build_model(cfg, 7);
  REQUIRE(m.layers.size() == 12);  // 7 convs, 4 pools, dense head
  CHECK(m.layers[0].params.weights.shape() == Shape4{32, 4, 3, 3});
  CHECK(m.layers.back().spec.kind == LayerKind::Dense);
  CHECK(m.layers.back().params.weights.shape() == Shape4{38, 256, 1, 1});
  CHECK(m.layers.back().params.has_bn() == false);

  // Channel continuity through the conv stack.
  int in_ch = m.input_channels();
  for (const Layer& layer : m.layers) {
    if (layer.spec.kind == LayerKind::Pool) continue;
    CHECK(layer.params.weights.c() == in_ch);
    in_ch = layer.params.weights.n();
    CHECK(layer.params.bias == std::vector<float>(size_t(in_ch), 0.0f));
    if (layer.spec.kind == LayerKind::Conv) {
      CHECK(layer.params.bn_gamma == std::vector<float>(size_t(in_ch), 1.0f));
      CHECK(layer.params.bn_running_var == std::vector<float>(size_t(in_ch), 1.0f));
    }
  }

  // Same seed, same parameters; different seed, different parameters.
  Model again = build_model(cfg, 7);
  Model other = build_model(cfg, 8);
  for (size_t i = 0; i < m.layers.size(); ++i) {
    CHECK(params_equal(m.layers[i].params, again.layers[i].params));
  }
  CHECK_FALSE(std::memcmp(m.layers[0].params.weights.data(), other.layers[0].params.weights.data(),
                          sizeof(float) * m.layers[0].params.weights.numel()) == 0);

  // Initialization stays inside the +-sqrt(2/fan_in) bound.
  const float bound1 = std::sqrt(2.0f / (9.0f * 4.0f));
  for (int64_t i = 0; i < m.layers[0].params.weights.numel(); ++i) {
    CHECK(std::abs(m.layers[0].params.weights.data()[i]) <= bound1);
  }

  ModelConfig bad = cfg;
  bad.class_count = 1;
  CHECK_THROWS_AS(build_model(bad, 1), ConfigError);
  bad = cfg;
  bad.dropout_rate = 1.0f;
  CHECK_THROWS_AS(build_model(bad, 1), ParameterError);
}

TEST_CASE("parameter counts match the closed form") {
  ModelConfig cfg;  // 4-channel combo
  Model m = build_model(cfg, 3);

  // Closed form, summed stage by stage.
  const std::vector<int> filters = {32, 32, 64, 64, 128, 128, 256};
  int64_t conv_sum = 0, bn_sum = 0;
  int in_ch = 4;
  for (int f : filters) {
    conv_sum += 9ll * in_ch * f + f;
    bn_sum += 2ll * f;
    in_ch = f;
  }
  const int64_t dense = 256ll * 38 + 38;
  CHECK(conv_sum == 582464);
  CHECK(dense == 9766);

  ParamCount pc = count_parameters(m);
  CHECK(pc.trainable == conv_sum + bn_sum + dense);
  CHECK(pc.trainable == 593638);
  CHECK(pc.total == pc.trainable + bn_sum);
  CHECK(pc.total == 595046);

  // Single stages: the second conv and the dense head.
  CHECK(m.layers[1].params.weights.numel() + int64_t(m.layers[1].params.bias.size()) == 9248);
  CHECK(m.layers.back().params.weights.numel() +
            int64_t(m.layers.back().params.bias.size()) == 9766);

  // Moving from a 3- to a 4-channel input touches only the first conv:
  // 3*3*1*32 extra weights.
  ModelConfig rgb = cfg;
  rgb.combo = views::ViewCombination::Rgb;
  CHECK(pc.trainable - count_parameters(build_model(rgb, 3)).trainable == 288);
}

TEST_CASE("forward: shapes, determinism, purity") {
  ModelConfig cfg = compact_config();
  Model m = build_model(cfg, 11);
  Rng rng(99);
  Tensor batch = testutil::random_tensor({3, 4, 64, 64}, rng, 0.0f, 1.0f);

  ActivationCache cache;
  Tensor probs = forward(m, batch, Mode::Infer, 0, &cache);
  REQUIRE(probs.shape() == Shape4{3, 5, 1, 1});
  for (int n = 0; n < 3; ++n) {
    double sum = 0;
    for (int c = 0; c < 5; ++c) sum += probs.at(n, c, 0, 0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }

  // The cache mirrors the stage list and keeps the pre-norm activations.
  REQUIRE(cache.layers.size() == m.layers.size());
  CHECK(cache.gap_out.shape() == Shape4{3, 64, 1, 1});
  CHECK(cache.logits.shape() == Shape4{3, 5, 1, 1});
  CHECK(cache.dropout.mask.empty());  // infer mode
  const Tensor& act0 = cache.layers[0].activated;
  CHECK(act0.shape() == Shape4{3, 16, 62, 62});
  Tensor re = relu(cache.layers[0].pre_act);
  CHECK(std::memcmp(re.data(), act0.data(), sizeof(float) * re.numel()) == 0);

  // Infer mode is bitwise repeatable and per-sample pure.
  Tensor probs2 = forward(m, batch, Mode::Infer, 123, nullptr);
  CHECK(std::memcmp(probs.data(), probs2.data(), sizeof(float) * probs.numel()) == 0);

  Tensor same(2, 4, 64, 64);
  for (int n = 0; n < 2; ++n) {
    std::memcpy(same.sample(n), batch.sample(0), sizeof(float) * 4 * 64 * 64);
  }
  Tensor sp = forward(m, same, Mode::Infer, 0);
  for (int c = 0; c < 5; ++c) {
    CHECK(sp.at(0, c, 0, 0) == doctest::Approx(sp.at(1, c, 0, 0)).epsilon(1e-6));
  }

  // Channel mismatch is rejected.
  Tensor bad(1, 3, 64, 64);
  CHECK_THROWS_AS(forward(m, bad, Mode::Infer, 0), DimensionError);

  // Train-mode forward needs the mutable overload.
  const Model& shared = m;
  CHECK_THROWS_AS(forward(shared, batch, Mode::Train, 0), ParameterError);

  // Train mode moves the running statistics, infer mode does not.
  std::vector<float> before = m.layers[0].params.bn_running_mean;
  forward(m, batch, Mode::Infer, 0);
  CHECK(m.layers[0].params.bn_running_mean == before);
  forward(m, batch, Mode::Train, 5);
  CHECK(m.layers[0].params.bn_running_mean != before);
}

TEST_CASE("fresh full-size models emit near-uniform probabilities") {
  ModelConfig cfg;  // 38 classes, 256x256, 4 channels
  const double lo = 1.0 / (2.0 * cfg.class_count);
  const double hi = 2.0 / cfg.class_count;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Model m = build_model(cfg, seed);
    Rng rng(seed * 31);
    Tensor x = testutil::random_tensor({1, 4, 256, 256}, rng, 0.0f, 1.0f);
    Tensor probs = forward(m, x, Mode::Infer, 0);
    for (int c = 0; c < cfg.class_count; ++c) {
      CHECK(probs.at(0, c, 0, 0) > lo);
      CHECK(probs.at(0, c, 0, 0) < hi);
    }
  }
}

TEST_CASE("probability rows sum to one across random plans") {
  Rng meta(4242);
  for (int it = 0; it < 100; ++it) {
    ModelConfig cfg;
    cfg.combo = views::all_combinations()[size_t(meta.next_below(4))];
    cfg.class_count = 2 + int(meta.next_below(7));
    cfg.dropout_rate = 0.5f * meta.next_float01();
    cfg.input_h = 10 + int(meta.next_below(7));
    cfg.input_w = 10 + int(meta.next_below(7));
    cfg.conv_plan.clear();
    const int convs = 1 + int(meta.next_below(2));
    for (int i = 0; i < convs; ++i) {
      cfg.conv_plan.push_back({LayerKind::Conv, 2 + int(meta.next_below(6)), 3});
    }
    cfg.conv_plan.push_back({LayerKind::Pool, 0, 0});

    Model m = build_model(cfg, 1000 + uint64_t(it));
    const int n = 1 + int(meta.next_below(3));
    Tensor x = testutil::random_tensor(
        {n, views::channel_count(cfg.combo), cfg.input_h, cfg.input_w}, meta, -1.0f, 1.0f);
    Mode mode = it % 2 == 0 ? Mode::Infer : Mode::Train;
    Tensor probs = forward(m, x, mode, uint64_t(it));
    REQUIRE(probs.shape() == Shape4{n, cfg.class_count, 1, 1});
    REQUIRE(probs.all_finite());
    for (int s = 0; s < n; ++s) {
      double sum = 0;
      for (int c = 0; c < cfg.class_count; ++c) sum += probs.at(s, c, 0, 0);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("checkpoints round trip bitwise") {
  testutil::TempDir tmp("ckpt");
  ModelConfig cfg = compact_config(5, views::ViewCombination::RgbGxGyGm);
  Model m = build_model(cfg, 21);
  // Perturb the running statistics so the round trip covers trained state.
  Rng rng(55);
  Tensor x = testutil::random_tensor({2, 6, 64, 64}, rng, 0.0f, 1.0f);
  forward(m, x, Mode::Train, 1);

  const std::string path = tmp.str("model.mvck");
  save_checkpoint(m, path);
  Model back = load_checkpoint(path);

  CHECK(back.config.combo == cfg.combo);
  CHECK(back.config.class_count == 5);
  REQUIRE(back.layers.size() == m.layers.size());
  REQUIRE(back.config.conv_plan.size() == cfg.conv_plan.size());
  for (size_t i = 0; i < m.layers.size(); ++i) {
    CHECK(back.layers[i].spec.kind == m.layers[i].spec.kind);
    CHECK(params_equal(back.layers[i].params, m.layers[i].params));
  }

  // The reloaded model computes bitwise-identical outputs.
  Tensor a = forward(m, x, Mode::Infer, 0);
  Tensor b = forward(back, x, Mode::Infer, 0);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.numel()) == 0);

  // Class-count expectations are enforced by name.
  CHECK_NOTHROW(load_checkpoint(path, 5));
  try {
    load_checkpoint(path, 12);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("dense") != std::string::npos);
  }
}

TEST_CASE("corrupt checkpoints are rejected with offsets") {
  testutil::TempDir tmp("ckpt_bad");
  Model m = build_model(compact_config(3), 2);
  const std::string path = tmp.str("m.mvck");
  save_checkpoint(m, path);
  const std::vector<uint8_t> good = read_binary_file(path);

  auto expect_reject = [&](std::vector<uint8_t> bytes, const char* tag) {
    const std::string p = tmp.str(std::string(tag) + ".mvck");
    write_binary_file(p, bytes);
    CHECK_THROWS_AS(load_checkpoint(p), CheckpointError);
  };

  std::vector<uint8_t> bad = good;
  bad[0] = 'Z';
  expect_reject(bad, "magic");

  bad = good;
  bad[4] = 3;  // version
  expect_reject(bad, "version");

  bad = good;
  bad.resize(bad.size() / 2);  // truncation
  expect_reject(bad, "cut");

  expect_reject(std::vector<uint8_t>(6, 0), "tiny");

  bad = good;
  bad[20] ^= 0xff;  // payload damage -> checksum mismatch
  expect_reject(bad, "flip");

  bad = good;
  bad[14] = 9;  // unknown layer kind; refresh the checksum so parsing runs
  {
    const size_t payload = bad.size() - 14 - 4;
    uint32_t crc = crc32_bytes(bad.data() + 14, payload);
    for (int i = 0; i < 4; ++i) bad[bad.size() - 4 + size_t(i)] = uint8_t(crc >> (8 * i));
  }
  expect_reject(bad, "kind");
}
