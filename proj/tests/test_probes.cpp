#include <doctest.h>

#include <cmath>

#include "xtra/probes.hpp"
#include "xtra/trainer.hpp"

using namespace xtra;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.image_px = 8;
  cfg.channels = 3;
  cfg.patch_px = 2;
  cfg.block_tokens = 2;
  cfg.enc_width = 16;
  cfg.enc_depth = 1;
  cfg.enc_heads = 2;
  cfg.dec_width = 16;
  cfg.dec_depth = 1;
  cfg.dec_heads = 2;
  cfg.mlp_ratio = 2.0;
  return cfg;
}

// Cleanly separated class clusters in feature space.
void separable_features(std::size_t n, std::size_t classes, std::size_t E,
                        std::uint64_t seed, Tensor& feats,
                        std::vector<std::uint16_t>& labels) {
  Rng rng(seed);
  feats = Tensor::zeros({n, E});
  labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % classes;
    labels[i] = static_cast<std::uint16_t>(cls);
    for (std::size_t e = 0; e < E; ++e) {
      feats.data[i * E + e] = static_cast<float>(rng.normal() * 0.02);
    }
    feats.data[i * E + cls] += 2.0f;
  }
}

ProbeConfig quick_probe() {
  ProbeConfig pc;
  pc.lr_grid = {1e-3, 1e-2};
  pc.epochs = 30;
  pc.batch_size = 32;
  return pc;
}

}  // namespace

TEST_CASE("top1: perfect, all wrong, tie toward lowest index") {
  Tensor perfect({3, 2}, {1, 0, 0, 1, 1, 0});
  CHECK(top1(perfect, {0, 1, 0}) == 1.0);
  CHECK(top1(perfect, {1, 0, 1}) == 0.0);

  Tensor tied({3, 3}, {5, 5, 0,   // tie between 0 and 1 -> predicts 0
                       0, 7, 1,   //
                       1, 0, 9});
  CHECK(top1(tied, {0, 1, 2}) == doctest::Approx(1.0));
  CHECK(top1(tied, {1, 1, 2}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("extract_features: deterministic, shaped, trunk-sensitive") {
  const ModelConfig cfg = tiny_model();
  const BlockLayout layout = cfg.layout();
  const AttentionMask mask = build_block_causal_mask(layout);
  const auto params = init_parameters<float>(cfg, 1);
  Rng rng(3);
  const Tensor pixels = uniform_tensor<float>({2, 3, 8, 8}, 0, 1, rng);

  const Tensor a = extract_features(cfg, params, pixels, mask);
  const Tensor b = extract_features(cfg, params, pixels, mask);
  CHECK(a.shape == Shape{2, layout.tokens, cfg.enc_width});
  CHECK(a.data == b.data);

  const auto other = init_parameters<float>(cfg, 2);
  const Tensor c = extract_features(cfg, other, pixels, mask);
  CHECK(a.data != c.data);
}

TEST_CASE("linear probe solves a separable task and reports the best grid point") {
  Tensor train_x, test_x;
  std::vector<std::uint16_t> train_y, test_y;
  separable_features(128, 4, 16, 1, train_x, train_y);
  separable_features(64, 4, 16, 2, test_x, test_y);
  const ProbeResult res =
      linear_probe(train_x, train_y, test_x, test_y, 4, quick_probe());
  CHECK(res.accuracy >= 0.99);
  CHECK(res.lr_grid.size() == res.accuracies.size());
  double best = 0;
  for (double a : res.accuracies) best = std::max(best, a);
  CHECK(res.accuracy == best);
}

TEST_CASE("random labels land at chance level") {
  Rng rng(9);
  Tensor train_x = uniform_tensor<float>({200, 8}, -1, 1, rng);
  Tensor test_x = uniform_tensor<float>({200, 8}, -1, 1, rng);
  std::vector<std::uint16_t> train_y(200), test_y(200);
  for (auto& y : train_y) y = static_cast<std::uint16_t>(rng.index(4));
  for (auto& y : test_y) y = static_cast<std::uint16_t>(rng.index(4));
  ProbeConfig pc = quick_probe();
  pc.epochs = 10;
  const ProbeResult res = linear_probe(train_x, train_y, test_x, test_y, 4, pc);
  // 3 sigma around 0.25 over 200 draws
  CHECK(std::abs(res.accuracy - 0.25) < 3.0 * std::sqrt(0.25 * 0.75 / 200.0) + 0.02);
}

TEST_CASE("probes are deterministic in the seed") {
  Tensor train_x, test_x;
  std::vector<std::uint16_t> train_y, test_y;
  separable_features(64, 4, 8, 3, train_x, train_y);
  separable_features(32, 4, 8, 4, test_x, test_y);
  ProbeConfig pc = quick_probe();
  pc.epochs = 5;
  const ProbeResult a = linear_probe(train_x, train_y, test_x, test_y, 4, pc);
  const ProbeResult b = linear_probe(train_x, train_y, test_x, test_y, 4, pc);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.accuracies == b.accuracies);
}

TEST_CASE("attentive probe with one token reduces to a linear map of it") {
  Tensor train2d, test2d;
  std::vector<std::uint16_t> train_y, test_y;
  separable_features(128, 4, 16, 5, train2d, train_y);
  separable_features(64, 4, 16, 6, test2d, test_y);
  Tensor train_x({128, 1, 16}, train2d.data);
  Tensor test_x({64, 1, 16}, test2d.data);
  ProbeConfig pc = quick_probe();
  const ProbeResult att =
      attentive_probe(train_x, train_y, test_x, test_y, 4, 2, pc);
  const ProbeResult lin =
      linear_probe(train2d, train_y, test2d, test_y, 4, pc);
  CHECK(att.accuracy >= 0.99);
  CHECK(lin.accuracy >= 0.99);
}

TEST_CASE("attentive probe at chance on shuffled labels") {
  Rng rng(11);
  Tensor train_x = uniform_tensor<float>({160, 4, 8}, -1, 1, rng);
  Tensor test_x = uniform_tensor<float>({160, 4, 8}, -1, 1, rng);
  std::vector<std::uint16_t> train_y(160), test_y(160);
  for (auto& y : train_y) y = static_cast<std::uint16_t>(rng.index(4));
  for (auto& y : test_y) y = static_cast<std::uint16_t>(rng.index(4));
  ProbeConfig pc = quick_probe();
  pc.epochs = 8;
  const ProbeResult res =
      attentive_probe(train_x, train_y, test_x, test_y, 4, 2, pc);
  CHECK(std::abs(res.accuracy - 0.25) < 3.0 * std::sqrt(0.25 * 0.75 / 160.0) + 0.03);
}

TEST_CASE("probing leaves the trunk bitwise unchanged") {
  const ModelConfig cfg = tiny_model();
  const auto params = init_parameters<float>(cfg, 8);
  const auto before = params;
  const Dataset train = synth_dataset(4, 32, 8, 1);
  const Dataset test = synth_dataset(4, 16, 8, 2);
  ProbeConfig pc = quick_probe();
  pc.epochs = 2;
  run_probe(cfg, params, train, test, pc);
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(params.items[i].second.data == before.items[i].second.data);
  }
}

TEST_CASE("probe config validation") {
  ProbeConfig pc;
  pc.lr_grid.clear();
  CHECK_THROWS_AS(pc.validate(), ContractError);
}
