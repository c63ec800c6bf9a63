#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xtra/graph.hpp"
#include "xtra/masking.hpp"
#include "xtra/rng.hpp"
#include "xtra/tensor.hpp"

namespace xtra {

enum class RunMode { kTrain, kEval };

struct ModelConfig {
  std::size_t image_px = 32;
  std::size_t image_h = 0;  // 0 -> image_px
  std::size_t image_w = 0;  // 0 -> image_px
  std::size_t channels = 3;
  std::size_t patch_px = 4;
  std::size_t block_tokens = 2;
  BlockPattern pattern = BlockPattern::kRaster;
  std::uint64_t pattern_seed = 0;

  std::size_t enc_width = 128;
  std::size_t enc_depth = 4;
  std::size_t enc_heads = 4;
  std::size_t dec_width = 64;
  std::size_t dec_depth = 2;
  std::size_t dec_heads = 4;
  double mlp_ratio = 4.0;
  double drop_path_rate = 0.0;
  std::size_t num_predicted_blocks = 1;  // M
  std::size_t head_hidden = 0;           // 0 -> dec_width

  BlockLayout layout() const {
    const std::size_t h = image_h == 0 ? image_px : image_h;
    const std::size_t w = image_w == 0 ? image_px : image_w;
    const BlockLayout base = BlockLayout::create(h, w, channels, patch_px, block_tokens);
    return BlockLayout::create(h, w, channels, patch_px, block_tokens,
                               make_block_order(base.blocks, pattern, pattern_seed));
  }
  std::size_t head_hidden_dim() const {
    return head_hidden == 0 ? dec_width : head_hidden;
  }
  std::size_t mlp_hidden(std::size_t width) const {
    return static_cast<std::size_t>(mlp_ratio * static_cast<double>(width));
  }

  void validate() const {
    if (enc_heads == 0 || enc_width % enc_heads != 0) {
      throw ContractError("config: enc_width must be divisible by enc_heads");
    }
    if (dec_heads == 0 || dec_width % dec_heads != 0) {
      throw ContractError("config: dec_width must be divisible by dec_heads");
    }
    if (drop_path_rate < 0.0 || drop_path_rate >= 1.0) {
      throw ContractError("config: drop_path_rate must be in [0, 1)");
    }
    const BlockLayout l = layout();
    if (num_predicted_blocks < 1 || num_predicted_blocks > l.blocks - 1) {
      throw ContractError("config: num_predicted_blocks must be in [1, K-1]");
    }
  }
};

// Named tensors in a fixed creation order. Ordering matters: the optimizer
// walks it, and checkpoints serialize it verbatim.
template <typename T>
struct ParamSetT {
  std::vector<std::pair<std::string, TensorT<T>>> items;
  std::unordered_map<std::string, std::size_t> index;

  void add(std::string name, TensorT<T> value) {
    if (index.count(name)) throw ContractError("duplicate parameter " + name);
    index.emplace(name, items.size());
    items.emplace_back(std::move(name), std::move(value));
  }
  bool has(const std::string& name) const { return index.count(name) != 0; }
  TensorT<T>& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ContractError("unknown parameter " + name);
    return items[it->second].second;
  }
  const TensorT<T>& at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ContractError("unknown parameter " + name);
    return items[it->second].second;
  }
  std::size_t size() const { return items.size(); }
  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items) n += t.numel();
    return n;
  }
  bool all_finite() const {
    for (const auto& [name, t] : items) {
      if (!t.all_finite()) return false;
    }
    return true;
  }
};

using ModelParameters = ParamSetT<float>;
using ModelParametersD = ParamSetT<double>;

namespace model_detail {

template <typename T>
void add_block_params(ParamSetT<T>& p, const std::string& prefix,
                      std::size_t width, std::size_t hidden, Rng& rng) {
  const T std = T(0.02);
  p.add(prefix + ".ln1.gamma", TensorT<T>::full({width}, T(1)));
  p.add(prefix + ".ln1.beta", TensorT<T>::zeros({width}));
  for (const char* w : {"wq", "wk", "wv", "wo"}) {
    p.add(prefix + ".attn." + std::string(w) + ".weight",
          trunc_normal<T>({width, width}, std, rng));
    p.add(prefix + ".attn." + std::string(w) + ".bias", TensorT<T>::zeros({width}));
  }
  p.add(prefix + ".ln2.gamma", TensorT<T>::full({width}, T(1)));
  p.add(prefix + ".ln2.beta", TensorT<T>::zeros({width}));
  p.add(prefix + ".mlp.fc1.weight", trunc_normal<T>({width, hidden}, std, rng));
  p.add(prefix + ".mlp.fc1.bias", TensorT<T>::zeros({hidden}));
  p.add(prefix + ".mlp.fc2.weight", trunc_normal<T>({hidden, width}, std, rng));
  p.add(prefix + ".mlp.fc2.bias", TensorT<T>::zeros({width}));
}

}  // namespace model_detail

// Truncated-normal(0.02) weights clipped at 2 sigma, zero biases, unit
// layer-norm gains. Deterministic in the seed.
template <typename T>
ParamSetT<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const BlockLayout layout = cfg.layout();
  const std::size_t patch_dim = layout.patch_dim();
  const std::size_t block_dim = layout.block_pixel_count();
  const T std = T(0.02);
  Rng rng = derive_rng(seed, 0x1217ull);

  ParamSetT<T> p;
  p.add("patch_embed.weight", trunc_normal<T>({patch_dim, cfg.enc_width}, std, rng));
  p.add("patch_embed.bias", TensorT<T>::zeros({cfg.enc_width}));
  p.add("pos_embed", trunc_normal<T>({layout.tokens, cfg.enc_width}, std, rng));
  for (std::size_t i = 0; i < cfg.enc_depth; ++i) {
    model_detail::add_block_params(p, "enc." + std::to_string(i), cfg.enc_width,
                                   cfg.mlp_hidden(cfg.enc_width), rng);
  }
  p.add("enc.norm.gamma", TensorT<T>::full({cfg.enc_width}, T(1)));
  p.add("enc.norm.beta", TensorT<T>::zeros({cfg.enc_width}));
  p.add("enc2dec.weight", trunc_normal<T>({cfg.enc_width, cfg.dec_width}, std, rng));
  p.add("enc2dec.bias", TensorT<T>::zeros({cfg.dec_width}));
  for (std::size_t i = 0; i < cfg.dec_depth; ++i) {
    model_detail::add_block_params(p, "dec." + std::to_string(i), cfg.dec_width,
                                   cfg.mlp_hidden(cfg.dec_width), rng);
  }
  const std::size_t in_dim = layout.block_tokens * layout.block_tokens * cfg.dec_width;
  const std::size_t hidden = cfg.head_hidden_dim();
  const std::size_t out_dim = cfg.num_predicted_blocks * block_dim;
  p.add("head.fc1.weight", trunc_normal<T>({in_dim, hidden}, std, rng));
  p.add("head.fc1.bias", TensorT<T>::zeros({hidden}));
  p.add("head.fc2.weight", trunc_normal<T>({hidden, out_dim}, std, rng));
  p.add("head.fc2.bias", TensorT<T>::zeros({out_dim}));
  return p;
}

// Closed-form parameter count for a config; kept independent of
// init_parameters so the two can be checked against each other.
inline std::size_t parameter_count(const ModelConfig& cfg) {
  const BlockLayout layout = cfg.layout();
  auto block = [&](std::size_t w, std::size_t h) {
    return 2 * w + 4 * (w * w + w) + 2 * w + (w * h + h) + (h * w + w);
  };
  std::size_t n = 0;
  n += layout.patch_dim() * cfg.enc_width + cfg.enc_width;
  n += layout.tokens * cfg.enc_width;
  n += cfg.enc_depth * block(cfg.enc_width, cfg.mlp_hidden(cfg.enc_width));
  n += 2 * cfg.enc_width;
  n += cfg.enc_width * cfg.dec_width + cfg.dec_width;
  n += cfg.dec_depth * block(cfg.dec_width, cfg.mlp_hidden(cfg.dec_width));
  const std::size_t in_dim = cfg.block_tokens * cfg.block_tokens * cfg.dec_width;
  const std::size_t hidden = cfg.head_hidden_dim();
  const std::size_t out_dim = cfg.num_predicted_blocks * layout.block_pixel_count();
  n += in_dim * hidden + hidden + hidden * out_dim + out_dim;
  return n;
}

// ---- pixel <-> token movement ----

// [C x H x W] -> [T x p^2*C]; token t holds its patch flattened channel-major
// (c, then patch row, then patch col). Lossless.
template <typename T>
TensorT<T> patchify(const TensorT<T>& image, const BlockLayout& layout) {
  if (image.shape != Shape{layout.channels, layout.image_h, layout.image_w}) {
    throw ShapeError("patchify: image " + image.shape_string() +
                     " does not match layout [" + std::to_string(layout.channels) +
                     "x" + std::to_string(layout.image_h) + "x" +
                     std::to_string(layout.image_w) + "]");
  }
  const std::size_t p = layout.patch_px;
  TensorT<T> out = TensorT<T>::zeros({layout.tokens, layout.patch_dim()});
  std::size_t o = 0;
  for (std::size_t t = 0; t < layout.tokens; ++t) {
    const std::size_t y0 = layout.token_row(t) * p;
    const std::size_t x0 = layout.token_col(t) * p;
    for (std::size_t c = 0; c < layout.channels; ++c) {
      for (std::size_t dy = 0; dy < p; ++dy) {
        const T* row = image.data.data() +
                       (c * layout.image_h + y0 + dy) * layout.image_w + x0;
        for (std::size_t dx = 0; dx < p; ++dx) out.data[o++] = row[dx];
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> unpatchify(const TensorT<T>& tokens, const BlockLayout& layout) {
  if (tokens.shape != Shape{layout.tokens, layout.patch_dim()}) {
    throw ShapeError("unpatchify: tokens " + tokens.shape_string() +
                     " do not match layout");
  }
  const std::size_t p = layout.patch_px;
  TensorT<T> out =
      TensorT<T>::zeros({layout.channels, layout.image_h, layout.image_w});
  std::size_t o = 0;
  for (std::size_t t = 0; t < layout.tokens; ++t) {
    const std::size_t y0 = layout.token_row(t) * p;
    const std::size_t x0 = layout.token_col(t) * p;
    for (std::size_t c = 0; c < layout.channels; ++c) {
      for (std::size_t dy = 0; dy < p; ++dy) {
        T* row = out.data.data() +
                 (c * layout.image_h + y0 + dy) * layout.image_w + x0;
        for (std::size_t dx = 0; dx < p; ++dx) row[dx] = tokens.data[o++];
      }
    }
  }
  return out;
}

// [B x C x H x W] -> [B x T x p^2*C]
template <typename T>
TensorT<T> patchify_batch(const TensorT<T>& images, const BlockLayout& layout) {
  if (images.ndim() != 4) throw ShapeError("patchify_batch: need [B x C x H x W]");
  const std::size_t B = images.shape[0];
  const std::size_t per = images.numel() / B;
  TensorT<T> out = TensorT<T>::zeros({B, layout.tokens, layout.patch_dim()});
  for (std::size_t b = 0; b < B; ++b) {
    TensorT<T> one({layout.channels, layout.image_h, layout.image_w},
                   std::vector<T>(images.data.begin() + b * per,
                                  images.data.begin() + (b + 1) * per));
    TensorT<T> toks = patchify(one, layout);
    std::copy(toks.data.begin(), toks.data.end(),
              out.data.begin() + b * toks.numel());
  }
  return out;
}

// token index for each (block rank, within-block position); length T.
inline std::vector<std::size_t> block_gather_index(const BlockLayout& layout) {
  std::vector<std::size_t> index;
  index.reserve(layout.tokens);
  for (std::size_t rank = 0; rank < layout.blocks; ++rank) {
    for (std::size_t t : block_token_list(layout, rank)) index.push_back(t);
  }
  return index;
}

// Ground-truth pixels per block in rank order: [B x T x Dp] -> [B x K x Dblk].
template <typename T>
TensorT<T> block_pixels(const TensorT<T>& tokens, const BlockLayout& layout) {
  if (tokens.ndim() != 3 || tokens.shape[1] != layout.tokens ||
      tokens.shape[2] != layout.patch_dim()) {
    throw ShapeError("block_pixels: tokens " + tokens.shape_string() +
                     " do not match layout");
  }
  const std::size_t B = tokens.shape[0];
  const std::size_t Dp = layout.patch_dim();
  const auto index = block_gather_index(layout);
  TensorT<T> out =
      TensorT<T>::zeros({B, layout.blocks, layout.block_pixel_count()});
  for (std::size_t b = 0; b < B; ++b) {
    T* dst = out.data.data() + b * layout.tokens * Dp;
    for (std::size_t i = 0; i < index.size(); ++i) {
      const T* src = tokens.data.data() + (b * layout.tokens + index[i]) * Dp;
      std::copy(src, src + Dp, dst + i * Dp);
    }
  }
  return out;
}

// Inverse of block_pixels for a single image: [K x Dblk] -> [T x Dp].
template <typename T>
TensorT<T> scatter_block_pixels(const TensorT<T>& blocks,
                                const BlockLayout& layout) {
  if (blocks.shape != Shape{layout.blocks, layout.block_pixel_count()}) {
    throw ShapeError("scatter_block_pixels: blocks " + blocks.shape_string() +
                     " do not match layout");
  }
  const std::size_t Dp = layout.patch_dim();
  const auto index = block_gather_index(layout);
  TensorT<T> out = TensorT<T>::zeros({layout.tokens, Dp});
  for (std::size_t i = 0; i < index.size(); ++i) {
    const T* src = blocks.data.data() + i * Dp;
    std::copy(src, src + Dp, out.data.data() + index[i] * Dp);
  }
  return out;
}

// ---- drop path (stochastic depth) ----

// Per-sample residual skip: eval returns x + residual; train keeps each
// sample's residual with prob 1-rate, scaled by 1/(1-rate).
template <typename T>
TensorT<T> drop_path(const TensorT<T>& x, const TensorT<T>& residual, double rate,
                     RunMode mode, Rng& rng) {
  if (!x.same_shape(residual)) {
    throw ShapeError("drop_path: shape mismatch " + x.shape_string() + " vs " +
                     residual.shape_string());
  }
  if (rate < 0.0 || rate >= 1.0) throw ContractError("drop_path: rate in [0,1)");
  TensorT<T> out = x;
  if (mode == RunMode::kEval || rate == 0.0) {
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += residual.data[i];
    return out;
  }
  const std::size_t B = x.shape[0];
  const std::size_t stride = x.numel() / B;
  const T scale = T(1.0 / (1.0 - rate));
  for (std::size_t b = 0; b < B; ++b) {
    const bool keep = rng.uniform01() >= rate;
    if (!keep) continue;
    T* o = out.data.data() + b * stride;
    const T* r = residual.data.data() + b * stride;
    for (std::size_t i = 0; i < stride; ++i) o[i] += scale * r[i];
  }
  return out;
}

// ---- forward graph construction ----

template <typename T>
struct ModelNodes {
  std::map<std::string, typename GraphT<T>::Id> params;
  typename GraphT<T>::Id tokens{};
  typename GraphT<T>::Id encoded{};
  typename GraphT<T>::Id decoded{};
  typename GraphT<T>::Id block_embed{};
  typename GraphT<T>::Id predictions{};
};

namespace model_detail {

template <typename T>
using NodeId = typename GraphT<T>::Id;

template <typename T>
NodeId<T> linear(GraphT<T>& g, const std::map<std::string, NodeId<T>>& pm,
                 NodeId<T> x, const std::string& prefix) {
  return g.linear(x, pm.at(prefix + ".weight"), pm.at(prefix + ".bias"));
}

// Residual join with optional per-sample drop path in train mode. The keep
// mask is drawn here (one uniform per sample) and enters the graph as data.
template <typename T>
NodeId<T> residual_join(GraphT<T>& g, NodeId<T> x, NodeId<T> branch, double rate,
                        RunMode mode, Rng* rng) {
  if (mode == RunMode::kEval || rate == 0.0) return g.add(x, branch);
  if (rng == nullptr) {
    throw ContractError("residual_join: train mode with drop path needs an rng");
  }
  const std::size_t B = g.value(x).shape[0];
  TensorT<T> keep = TensorT<T>::zeros({B});
  const T scale = T(1.0 / (1.0 - rate));
  for (std::size_t b = 0; b < B; ++b) {
    keep.data[b] = rng->uniform01() >= rate ? scale : T(0);
  }
  return g.add(x, g.row_scale(branch, g.input(std::move(keep))));
}

template <typename T>
NodeId<T> attention(GraphT<T>& g, const std::map<std::string, NodeId<T>>& pm,
                    NodeId<T> x, const std::string& prefix, std::size_t width,
                    std::size_t heads,
                    const std::shared_ptr<const AttentionMask>& mask) {
  const Shape& xs = g.value(x).shape;  // [B, T, width]
  const std::size_t B = xs[0], S = xs[1];
  const std::size_t dh = width / heads;
  auto split = [&](NodeId<T> v) {
    return g.swap_axes12(g.reshape(v, {B, S, heads, dh}));
  };
  NodeId<T> q = split(linear(g, pm, x, prefix + ".wq"));
  NodeId<T> k = split(linear(g, pm, x, prefix + ".wk"));
  NodeId<T> v = split(linear(g, pm, x, prefix + ".wv"));
  NodeId<T> scores = g.scale(g.matmul(q, g.transpose_last2(k)),
                             T(1.0 / std::sqrt(static_cast<double>(dh))));
  NodeId<T> probs = g.masked_softmax_op(scores, mask);
  NodeId<T> ctx = g.reshape(g.swap_axes12(g.matmul(probs, v)), {B, S, width});
  return linear(g, pm, ctx, prefix + ".wo");
}

template <typename T>
NodeId<T> transformer_block(GraphT<T>& g,
                            const std::map<std::string, NodeId<T>>& pm,
                            NodeId<T> x, const std::string& prefix,
                            std::size_t width, std::size_t heads,
                            const std::shared_ptr<const AttentionMask>& mask,
                            double drop_rate, RunMode mode, Rng* rng) {
  NodeId<T> a = g.layer_norm_op(x, pm.at(prefix + ".ln1.gamma"),
                                pm.at(prefix + ".ln1.beta"));
  NodeId<T> attn = attention(g, pm, a, prefix + ".attn", width, heads, mask);
  x = residual_join(g, x, attn, drop_rate, mode, rng);
  NodeId<T> m = g.layer_norm_op(x, pm.at(prefix + ".ln2.gamma"),
                                pm.at(prefix + ".ln2.beta"));
  NodeId<T> h = linear(g, pm, m, prefix + ".mlp.fc1");
  NodeId<T> out = linear(g, pm, g.gelu_op(h), prefix + ".mlp.fc2");
  return residual_join(g, x, out, drop_rate, mode, rng);
}

}  // namespace model_detail

// Registers every model parameter in the graph; trainable parameters become
// named leaves, frozen ones plain inputs.
template <typename T>
std::map<std::string, typename GraphT<T>::Id> attach_parameters(
    GraphT<T>& g, const ParamSetT<T>& params, bool trainable) {
  std::map<std::string, typename GraphT<T>::Id> out;
  for (const auto& [name, value] : params.items) {
    out[name] = trainable ? g.param(name, value) : g.input(value);
  }
  return out;
}

// Patch projection + positional table, then enc_depth pre-norm blocks under
// the block-causal mask, then a final layer norm.
template <typename T>
typename GraphT<T>::Id encode(GraphT<T>& g, const ModelConfig& cfg,
                              const std::map<std::string, typename GraphT<T>::Id>& pm,
                              typename GraphT<T>::Id tokens,
                              std::shared_ptr<const AttentionMask> mask,
                              RunMode mode = RunMode::kEval, Rng* rng = nullptr) {
  auto x = g.linear(tokens, pm.at("patch_embed.weight"), pm.at("patch_embed.bias"));
  x = g.add_broadcast(x, pm.at("pos_embed"));
  for (std::size_t i = 0; i < cfg.enc_depth; ++i) {
    x = model_detail::transformer_block(g, pm, x, "enc." + std::to_string(i),
                                        cfg.enc_width, cfg.enc_heads, mask,
                                        cfg.drop_path_rate, mode, rng);
  }
  return g.layer_norm_op(x, pm.at("enc.norm.gamma"), pm.at("enc.norm.beta"));
}

// Width projection followed by dec_depth masked blocks; depth 0 leaves just
// the projection.
template <typename T>
typename GraphT<T>::Id decode(GraphT<T>& g, const ModelConfig& cfg,
                              const std::map<std::string, typename GraphT<T>::Id>& pm,
                              typename GraphT<T>::Id enc_out,
                              std::shared_ptr<const AttentionMask> mask,
                              RunMode mode = RunMode::kEval, Rng* rng = nullptr) {
  auto x = model_detail::linear(g, pm, enc_out, "enc2dec");
  for (std::size_t i = 0; i < cfg.dec_depth; ++i) {
    x = model_detail::transformer_block(g, pm, x, "dec." + std::to_string(i),
                                        cfg.dec_width, cfg.dec_heads, mask,
                                        cfg.drop_path_rate, mode, rng);
  }
  return x;
}

// [B x T x D] -> [B x K x k^2*D]: per block (rank order), its token vectors
// concatenated in within-block raster order.
template <typename T>
typename GraphT<T>::Id concat_blocks(GraphT<T>& g, const BlockLayout& layout,
                                     typename GraphT<T>::Id dec_out) {
  const Shape& s = g.value(dec_out).shape;
  const std::size_t B = s[0], D = s[2];
  const std::size_t k2 = layout.block_tokens * layout.block_tokens;
  auto gathered = g.gather_axis1(dec_out, block_gather_index(layout));
  return g.reshape(gathered, {B, layout.blocks, k2 * D});
}

// Shared two-layer MLP head over block ranks 0..K-2. Output slot (b, j, m)
// predicts the pixels of block rank j+1+m; slots with j+1+m >= K are dead
// weight and excluded from the loss by the valid-slot mask.
template <typename T>
typename GraphT<T>::Id predict_blocks(GraphT<T>& g, const ModelConfig& cfg,
                                      const std::map<std::string, typename GraphT<T>::Id>& pm,
                                      typename GraphT<T>::Id block_embed) {
  const Shape& s = g.value(block_embed).shape;  // [B, K, k^2*D]
  const std::size_t B = s[0], K = s[1];
  std::vector<std::size_t> context(K - 1);
  for (std::size_t j = 0; j + 1 < K; ++j) context[j] = j;
  auto ctx = g.gather_axis1(block_embed, context);
  auto h = g.gelu_op(model_detail::linear(g, pm, ctx, "head.fc1"));
  auto out = model_detail::linear(g, pm, h, "head.fc2");
  const std::size_t block_dim = g.value(out).shape[2] / cfg.num_predicted_blocks;
  return g.reshape(out, {B, K - 1, cfg.num_predicted_blocks, block_dim});
}

// Full forward pass over already-patchified tokens.
template <typename T>
ModelNodes<T> build_forward(GraphT<T>& g, const ModelConfig& cfg,
                            const ParamSetT<T>& params, TensorT<T> tokens,
                            std::shared_ptr<const AttentionMask> mask,
                            RunMode mode = RunMode::kEval, Rng* rng = nullptr,
                            bool trainable = false) {
  ModelNodes<T> n;
  n.params = attach_parameters(g, params, trainable);
  n.tokens = g.input(std::move(tokens));
  n.encoded = encode(g, cfg, n.params, n.tokens, mask, mode, rng);
  n.decoded = decode(g, cfg, n.params, n.encoded, mask, mode, rng);
  n.block_embed = concat_blocks(g, cfg.layout(), n.decoded);
  n.predictions = predict_blocks(g, cfg, n.params, n.block_embed);
  return n;
}

// Eval-mode encoder features for a batch of images; used by the probes.
template <typename T>
TensorT<T> encode_features(const ModelConfig& cfg, const ParamSetT<T>& params,
                           const TensorT<T>& images, const AttentionMask& mask) {
  GraphT<T> g;
  auto pm = attach_parameters(g, params, false);
  auto tokens = g.input(patchify_batch(images, cfg.layout()));
  auto out = encode(g, cfg, pm, tokens,
                    std::make_shared<const AttentionMask>(mask));
  return g.value(out);
}

// Eval-mode predictions [B x (K-1) x M x Dblk] for a batch of images.
template <typename T>
TensorT<T> forward_predictions(const ModelConfig& cfg, const ParamSetT<T>& params,
                               const TensorT<T>& images, const AttentionMask& mask) {
  GraphT<T> g;
  auto nodes = build_forward(g, cfg, params, patchify_batch(images, cfg.layout()),
                             std::make_shared<const AttentionMask>(mask));
  return g.value(nodes.predictions);
}

}  // namespace xtra
