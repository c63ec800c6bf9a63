#include <doctest.h>

#include <cmath>
#include <cstring>

#include "xtra/model.hpp"
#include "xtra/objective.hpp"

using namespace xtra;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.image_px = 8;
  cfg.channels = 1;
  cfg.patch_px = 2;
  cfg.block_tokens = 2;  // 4x4 token grid -> K = 4
  cfg.enc_width = 16;
  cfg.enc_depth = 2;
  cfg.enc_heads = 2;
  cfg.dec_width = 16;
  cfg.dec_depth = 2;
  cfg.dec_heads = 2;
  cfg.mlp_ratio = 2.0;
  return cfg;
}

// Replaces the pixels of every block whose rank exceeds r with noise.
Tensor perturb_after_rank(const Tensor& images, const BlockLayout& layout,
                          std::size_t r, Rng& rng) {
  Tensor out = images;
  const std::size_t B = images.shape[0];
  const std::size_t p = layout.patch_px;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t rank = r + 1; rank < layout.blocks; ++rank) {
      for (std::size_t t : block_token_list(layout, rank)) {
        const std::size_t y0 = layout.token_row(t) * p;
        const std::size_t x0 = layout.token_col(t) * p;
        for (std::size_t c = 0; c < layout.channels; ++c) {
          for (std::size_t dy = 0; dy < p; ++dy) {
            for (std::size_t dx = 0; dx < p; ++dx) {
              const std::size_t off =
                  ((b * layout.channels + c) * layout.image_h + y0 + dy) *
                      layout.image_w +
                  x0 + dx;
              out.data[off] = static_cast<float>(rng.uniform01());
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor random_images(std::size_t B, const BlockLayout& layout, Rng& rng) {
  return uniform_tensor<float>(
      {B, layout.channels, layout.image_h, layout.image_w}, 0.0f, 1.0f, rng);
}

}  // namespace

TEST_CASE("patchify basics and round trip") {
  const BlockLayout l1 = BlockLayout::create(2, 2, 1, 1, 1);
  Tensor img({1, 2, 2}, {0, 1, 2, 3});
  const Tensor toks = patchify(img, l1);
  CHECK(toks.shape == Shape{4, 1});
  CHECK(toks.data == std::vector<float>{0, 1, 2, 3});

  const BlockLayout l2 = BlockLayout::create(4, 4, 1, 2, 1);
  Tensor img2 = Tensor::zeros({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) img2.data[i] = static_cast<float>(i);
  const Tensor toks2 = patchify(img2, l2);
  CHECK(std::vector<float>(toks2.data.begin(), toks2.data.begin() + 4) ==
        std::vector<float>{0, 1, 4, 5});

  Rng rng(21);
  const BlockLayout l3 = BlockLayout::create(8, 8, 3, 2, 2);
  const Tensor x = uniform_tensor<float>({3, 8, 8}, 0, 1, rng);
  CHECK(unpatchify(patchify(x, l3), l3).data == x.data);

  CHECK_THROWS_AS(patchify(Tensor::zeros({1, 4, 4}), l3), ShapeError);
}

TEST_CASE("init_parameters: deterministic, seed-sensitive, truncated") {
  const ModelConfig cfg = tiny_config();
  const auto a = init_parameters<float>(cfg, 7);
  const auto b = init_parameters<float>(cfg, 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.items[i].first == b.items[i].first);
    CHECK(a.items[i].second.data == b.items[i].second.data);
  }
  const auto c = init_parameters<float>(cfg, 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    any_diff = any_diff || a.items[i].second.data != c.items[i].second.data;
  }
  CHECK(any_diff);

  for (const auto& [name, t] : a.items) {
    CHECK(t.all_finite());
    const bool is_weight = name.find("weight") != std::string::npos ||
                           name == "pos_embed";
    if (is_weight) {
      for (float v : t.data) CHECK(std::abs(v) <= 2.0f * 0.02f);
    }
  }
}

TEST_CASE("parameter count matches the closed form") {
  for (auto cfg : {tiny_config(), [] {
         ModelConfig c;
         c.image_px = 16;
         c.channels = 3;
         c.patch_px = 4;
         c.block_tokens = 2;
         c.enc_width = 24;
         c.enc_depth = 3;
         c.enc_heads = 4;
         c.dec_width = 12;
         c.dec_depth = 1;
         c.dec_heads = 2;
         c.num_predicted_blocks = 2;
         return c;
       }()}) {
    const auto params = init_parameters<float>(cfg, 1);
    CHECK(params.total_scalars() == parameter_count(cfg));
  }
}

TEST_CASE("drop_path: identity cases and Monte-Carlo unbiasedness") {
  Rng rng(5);
  const Tensor x = uniform_tensor<float>({4, 3}, -1, 1, rng);
  const Tensor r = uniform_tensor<float>({4, 3}, -1, 1, rng);

  const Tensor zero_rate = drop_path(x, r, 0.0, RunMode::kTrain, rng);
  const Tensor eval_mode = drop_path(x, r, 0.2, RunMode::kEval, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(zero_rate.data[i] == x.data[i] + r.data[i]);
    CHECK(eval_mode.data[i] == x.data[i] + r.data[i]);
  }

  const std::size_t B = 10000;
  const Tensor xs = Tensor::zeros({B, 1});
  const Tensor rs = Tensor::full({B, 1}, 1.0f);
  const Tensor out = drop_path(xs, rs, 0.5, RunMode::kTrain, rng);
  double mean = 0;
  for (float v : out.data) mean += v;
  mean /= static_cast<double>(B);
  // keep/(1-rate) has mean 1, sd 1 at rate .5; 3 sigma over 10k draws
  CHECK(std::abs(mean - 1.0) < 3.0 / std::sqrt(static_cast<double>(B)));
}

TEST_CASE("encode/decode shape contracts and degenerate depth") {
  ModelConfig cfg = tiny_config();
  const BlockLayout layout = cfg.layout();
  const auto mask =
      std::make_shared<const AttentionMask>(build_block_causal_mask(layout));
  const auto params = init_parameters<float>(cfg, 3);
  Rng rng(9);
  const Tensor images = random_images(2, layout, rng);
  const Tensor tokens = patchify_batch(images, layout);

  Graph g;
  auto pm = attach_parameters(g, params, false);
  auto tok = g.input(tokens);
  auto enc = encode(g, cfg, pm, tok, mask);
  CHECK(g.value(enc).shape == Shape{2, layout.tokens, cfg.enc_width});
  auto dec = decode(g, cfg, pm, enc, mask);
  CHECK(g.value(dec).shape == Shape{2, layout.tokens, cfg.dec_width});

  // dec_depth = 0 leaves only the width projection
  ModelConfig flat = cfg;
  flat.dec_depth = 0;
  const auto fparams = init_parameters<float>(flat, 3);
  Graph g2;
  auto pm2 = attach_parameters(g2, fparams, false);
  auto tok2 = g2.input(tokens);
  auto enc2 = encode(g2, flat, pm2, tok2, mask);
  auto dec2 = decode(g2, flat, pm2, enc2, mask);
  const Tensor& enc_val = g2.value(enc2);
  auto proj = g2.add_broadcast(g2.matmul(g2.input(enc_val), pm2.at("enc2dec.weight")),
                               pm2.at("enc2dec.bias"));
  CHECK(g2.value(dec2).data == g2.value(proj).data);
}

TEST_CASE("single block equals an unmasked ViT on the same weights") {
  ModelConfig cfg = tiny_config();
  cfg.block_tokens = 4;          // one block covers the 4x4 grid
  cfg.num_predicted_blocks = 1;  // K=1 is invalid for the full model...
  const BlockLayout layout =
      BlockLayout::create(cfg.image_px, cfg.image_px, cfg.channels, cfg.patch_px, 4);
  const auto params = [&] {
    ModelConfig c = cfg;
    c.block_tokens = 2;  // init with a valid config; encoder shapes are equal
    return init_parameters<float>(c, 3);
  }();
  Rng rng(31);
  Tensor images = random_images(2, layout, rng);
  const Tensor tokens = patchify_batch(images, layout);

  const auto block_mask =
      std::make_shared<const AttentionMask>(build_block_causal_mask(layout));
  const auto all =
      std::make_shared<const AttentionMask>(full_mask(layout.tokens, layout.tokens));

  Graph g1, g2;
  auto pm1 = attach_parameters(g1, params, false);
  auto pm2 = attach_parameters(g2, params, false);
  auto e1 = encode(g1, cfg, pm1, g1.input(tokens), block_mask);
  auto e2 = encode(g2, cfg, pm2, g2.input(tokens), all);
  CHECK(g1.value(e1).data == g2.value(e2).data);
}

TEST_CASE("concat_blocks tags tokens correctly and round-trips") {
  const auto order = make_block_order(4, BlockPattern::kFixedRandom, 11);
  const BlockLayout layout = BlockLayout::create(4, 4, 1, 1, 2, order);
  const std::size_t B = 2, T = layout.tokens, D = 3;
  Tensor dec = Tensor::zeros({B, T, D});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t d = 0; d < D; ++d) {
        dec.data[(b * T + t) * D + d] = static_cast<float>(1000 * b + 10 * t + d);
      }
    }
  }
  Graph g;
  auto node = g.input(dec);
  auto cat = concat_blocks(g, layout, node);
  const Tensor& out = g.value(cat);
  CHECK(out.shape == Shape{B, layout.blocks, 4 * D});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t rank = 0; rank < layout.blocks; ++rank) {
      const auto toks = block_token_list(layout, rank);
      for (std::size_t i = 0; i < toks.size(); ++i) {
        for (std::size_t d = 0; d < D; ++d) {
          CHECK(out.data[(b * layout.blocks + rank) * 4 * D + i * D + d] ==
                doctest::Approx(1000.0 * b + 10.0 * toks[i] + d));
        }
      }
    }
  }

  // k=1 is a pure reshape
  const BlockLayout flat = BlockLayout::create(4, 4, 1, 1, 1);
  Graph g2;
  auto n2 = g2.input(dec);
  auto c2 = concat_blocks(g2, flat, n2);
  CHECK(g2.value(c2).shape == Shape{B, T, D});
  CHECK(g2.value(c2).data == dec.data);
}

TEST_CASE("predict_blocks: slot count, equivariance, multi-block validity") {
  ModelConfig cfg = tiny_config();
  cfg.num_predicted_blocks = 2;
  const BlockLayout layout = cfg.layout();
  const auto params = init_parameters<float>(cfg, 13);
  const auto mask =
      std::make_shared<const AttentionMask>(build_block_causal_mask(layout));
  Rng rng(7);
  const Tensor images = random_images(3, layout, rng);

  Graph g;
  auto nodes = build_forward(g, cfg, params, patchify_batch(images, layout), mask);
  const Tensor& pred = g.value(nodes.predictions);
  CHECK(pred.shape == Shape{3, layout.blocks - 1, 2, layout.block_pixel_count()});

  // M=2, K=4 leaves 5 valid slots
  CHECK(valid_slots_per_image(4, 2) == 5);
  const auto valid = valid_slot_mask<float>(4, 2);
  CHECK(valid.data == std::vector<float>{1, 1, 1, 1, 1, 0});

  // shared head: permuting the batch permutes predictions identically
  Tensor swapped = images;
  const std::size_t per = images.numel() / 3;
  std::vector<float> tmp(per);
  std::copy(swapped.data.begin(), swapped.data.begin() + per, tmp.begin());
  std::copy(swapped.data.begin() + per, swapped.data.begin() + 2 * per,
            swapped.data.begin());
  std::copy(tmp.begin(), tmp.end(), swapped.data.begin() + per);
  Graph g2;
  auto nodes2 = build_forward(g2, cfg, params, patchify_batch(swapped, layout), mask);
  const Tensor& pred2 = g2.value(nodes2.predictions);
  const std::size_t stride = pred.numel() / 3;
  CHECK(std::memcmp(pred.data.data(), pred2.data.data() + stride,
                    stride * sizeof(float)) == 0);
  CHECK(std::memcmp(pred.data.data() + stride, pred2.data.data(),
                    stride * sizeof(float)) == 0);
}

TEST_CASE("end-to-end causality: later blocks never leak backward") {
  ModelConfig cfg = tiny_config();
  const BlockLayout layout = cfg.layout();
  const auto params = init_parameters<float>(cfg, 99);
  const AttentionMask mask = build_block_causal_mask(layout);
  Rng rng(55);
  const Tensor images = random_images(2, layout, rng);
  const Tensor base = forward_predictions(cfg, params, images, mask);
  const std::size_t D = layout.block_pixel_count();

  for (std::size_t r = 0; r + 1 < layout.blocks; ++r) {
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor noisy = perturb_after_rank(images, layout, r, rng);
      const Tensor pred = forward_predictions(cfg, params, noisy, mask);
      for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t j = 0; j <= r; ++j) {
          const std::size_t off = (b * (layout.blocks - 1) + j) * D;
          CHECK(std::memcmp(base.data.data() + off, pred.data.data() + off,
                            D * sizeof(float)) == 0);
        }
      }
    }
  }
}

TEST_CASE("k=1 M=1 is the standard next-token AR model") {
  ModelConfig cfg = tiny_config();
  cfg.block_tokens = 1;  // 16 blocks of one token each
  const BlockLayout layout = cfg.layout();
  const auto params = init_parameters<float>(cfg, 123);
  const AttentionMask mask = build_block_causal_mask(layout);
  Rng rng(77);
  const Tensor images = random_images(1, layout, rng);
  const Tensor base = forward_predictions(cfg, params, images, mask);
  const std::size_t D = layout.block_pixel_count();

  // prediction for token t depends only on tokens < t
  for (std::size_t r = 0; r + 1 < layout.blocks; r += 5) {
    const Tensor noisy = perturb_after_rank(images, layout, r, rng);
    const Tensor pred = forward_predictions(cfg, params, noisy, mask);
    for (std::size_t j = 0; j <= r; ++j) {
      CHECK(std::memcmp(base.data.data() + j * D, pred.data.data() + j * D,
                        D * sizeof(float)) == 0);
    }
  }
}

TEST_CASE("forward pass is deterministic in eval mode") {
  const ModelConfig cfg = tiny_config();
  const BlockLayout layout = cfg.layout();
  const auto params = init_parameters<float>(cfg, 4);
  const AttentionMask mask = build_block_causal_mask(layout);
  Rng rng(1);
  const Tensor images = random_images(2, layout, rng);
  const Tensor a = forward_predictions(cfg, params, images, mask);
  const Tensor b = forward_predictions(cfg, params, images, mask);
  CHECK(a.data == b.data);
}

TEST_CASE("config validation") {
  ModelConfig bad = tiny_config();
  bad.enc_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = tiny_config();
  bad.num_predicted_blocks = 4;  // K-1 = 3
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = tiny_config();
  bad.drop_path_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}
