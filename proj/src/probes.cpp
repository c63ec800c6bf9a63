#include "xtra/probes.hpp"

#include <algorithm>
#include <cmath>

#include "xtra/graph.hpp"
#include "xtra/objective.hpp"
#include "xtra/trainer.hpp"

namespace xtra {

ProbeMode parse_probe_mode(const std::string& name) {
  if (name == "linear") return ProbeMode::kLinear;
  if (name == "attentive") return ProbeMode::kAttentive;
  throw ContractError("unknown probe mode '" + name + "' (linear|attentive)");
}

std::string probe_mode_name(ProbeMode mode) {
  return mode == ProbeMode::kLinear ? "linear" : "attentive";
}

Tensor extract_features(const ModelConfig& cfg, const ModelParameters& params,
                        const Tensor& pixels, const AttentionMask& mask) {
  return encode_features(cfg, params, pixels, mask);
}

Tensor dataset_features(const ModelConfig& cfg, const ModelParameters& params,
                        const Dataset& dataset, std::size_t batch_size) {
  const BlockLayout layout = cfg.layout();
  const AttentionMask mask = build_block_causal_mask(layout);
  const std::size_t N = dataset.size();
  Tensor out;
  std::size_t done = 0;
  AugmentConfig no_aug;
  no_aug.enabled = false;
  const std::size_t nb = batches_per_epoch(N, batch_size, false);
  for (std::size_t bi = 0; bi < nb; ++bi) {
    // epoch 0 with augmentation off gives the identity order modulo shuffle;
    // rebuild the batch directly to keep dataset order.
    const std::size_t begin = bi * batch_size;
    const std::size_t end = std::min(begin + batch_size, N);
    const std::size_t B = end - begin;
    Tensor pixels = Tensor::zeros({B, dataset.channels, layout.image_h, layout.image_w});
    const std::size_t per = dataset.channels * layout.image_h * layout.image_w;
    for (std::size_t i = 0; i < B; ++i) {
      Tensor img = image_to_f32(dataset, begin + i);
      img = bilinear_resize(img, layout.image_h, layout.image_w);
      std::copy(img.data.begin(), img.data.end(), pixels.data.begin() + i * per);
    }
    const Tensor feats = extract_features(cfg, params, pixels, mask);
    if (out.numel() == 0) {
      out = Tensor::zeros({N, feats.shape[1], feats.shape[2]});
    }
    std::copy(feats.data.begin(), feats.data.end(),
              out.data.begin() + done * feats.shape[1] * feats.shape[2]);
    done += B;
  }
  return out;
}

Tensor mean_pool_tokens(const Tensor& features) {
  if (features.ndim() != 3) throw ShapeError("mean_pool_tokens: need [N x T x E]");
  const std::size_t N = features.shape[0], T = features.shape[1],
                    E = features.shape[2];
  Tensor out = Tensor::zeros({N, E});
  const float inv = 1.0f / static_cast<float>(T);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t t = 0; t < T; ++t) {
      const float* src = features.data.data() + (n * T + t) * E;
      float* dst = out.data.data() + n * E;
      for (std::size_t e = 0; e < E; ++e) dst[e] += src[e];
    }
    float* dst = out.data.data() + n * E;
    for (std::size_t e = 0; e < E; ++e) dst[e] *= inv;
  }
  return out;
}

double top1(const Tensor& predictions, const std::vector<std::uint16_t>& labels) {
  if (predictions.ndim() != 2 || predictions.shape[0] != labels.size()) {
    throw ShapeError("top1: predictions " + predictions.shape_string() +
                     " do not match " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t N = predictions.shape[0], C = predictions.shape[1];
  std::size_t hits = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const float* row = predictions.data.data() + n * C;
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (row[c] > row[best]) best = c;  // strict: ties keep the lowest index
    }
    if (best == labels[n]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(N);
}

namespace {

std::vector<int> to_int_labels(const std::vector<std::uint16_t>& labels,
                               const std::vector<std::size_t>& order,
                               std::size_t begin, std::size_t end) {
  std::vector<int> out(end - begin);
  for (std::size_t i = begin; i < end; ++i) out[i - begin] = labels[order[i]];
  return out;
}

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& order,
                   std::size_t begin, std::size_t end) {
  const std::size_t stride = src.numel() / src.shape[0];
  Shape s = src.shape;
  s[0] = end - begin;
  Tensor out = Tensor::zeros(s);
  for (std::size_t i = begin; i < end; ++i) {
    const float* from = src.data.data() + order[i] * stride;
    std::copy(from, from + stride, out.data.data() + (i - begin) * stride);
  }
  return out;
}

// Per-dim standardization with training-set statistics, applied to both
// splits before the head. Keeps the probe conditioning independent of the
// trunk's feature scaling.
void standardize_features(Tensor& train, Tensor& test) {
  const std::size_t E = train.shape.back();
  const std::size_t rows_train = train.numel() / E;
  const std::size_t rows_test = test.numel() / E;
  std::vector<double> mean(E, 0.0), sd(E, 0.0);
  for (std::size_t r = 0; r < rows_train; ++r) {
    const float* p = train.data.data() + r * E;
    for (std::size_t e = 0; e < E; ++e) mean[e] += p[e];
  }
  for (auto& m : mean) m /= static_cast<double>(rows_train);
  for (std::size_t r = 0; r < rows_train; ++r) {
    const float* p = train.data.data() + r * E;
    for (std::size_t e = 0; e < E; ++e) {
      const double c = p[e] - mean[e];
      sd[e] += c * c;
    }
  }
  for (auto& v : sd) v = std::sqrt(v / static_cast<double>(rows_train) + 1e-6);
  auto apply = [&](Tensor& t, std::size_t rows) {
    for (std::size_t r = 0; r < rows; ++r) {
      float* p = t.data.data() + r * E;
      for (std::size_t e = 0; e < E; ++e) {
        p[e] = static_cast<float>((p[e] - mean[e]) / sd[e]);
      }
    }
  };
  apply(train, rows_train);
  apply(test, rows_test);
}

using LogitsBuilder =
    Graph::Id (*)(Graph&, const std::map<std::string, Graph::Id>&, Graph::Id,
                  std::size_t heads);

Graph::Id linear_logits(Graph& g, const std::map<std::string, Graph::Id>& pm,
                        Graph::Id feats, std::size_t /*heads*/) {
  return g.linear(feats, pm.at("cls.weight"), pm.at("cls.bias"));
}

Graph::Id attentive_logits(Graph& g, const std::map<std::string, Graph::Id>& pm,
                           Graph::Id feats, std::size_t heads) {
  const Shape& fs = g.value(feats).shape;  // [B, T, E]
  const std::size_t B = fs[0], T = fs[1], E = fs[2];
  const std::size_t dh = E / heads;
  auto split = [&](Graph::Id v) {
    return g.swap_axes12(g.reshape(v, {B, T, heads, dh}));
  };
  auto k = split(g.linear(feats, pm.at("wk.weight"), pm.at("wk.bias")));
  auto v = split(g.linear(feats, pm.at("wv.weight"), pm.at("wv.bias")));
  auto q = g.tile_batch(g.reshape(pm.at("query"), {heads, std::size_t(1), dh}), B);
  auto scores = g.scale(g.matmul(q, g.transpose_last2(k)),
                        static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh))));
  auto probs = g.masked_softmax_op(
      scores, std::make_shared<const AttentionMask>(full_mask(1, T)));
  auto ctx = g.reshape(g.matmul(probs, v), {B, E});
  auto out = g.linear(ctx, pm.at("wo.weight"), pm.at("wo.bias"));
  return g.linear(out, pm.at("cls.weight"), pm.at("cls.bias"));
}

Tensor eval_logits(const ModelParameters& head, const Tensor& features,
                   LogitsBuilder builder, std::size_t heads) {
  Graph g;
  std::map<std::string, Graph::Id> pm;
  for (const auto& [name, value] : head.items) pm[name] = g.input(value);
  auto feats = g.input(features);
  return g.value(builder(g, pm, feats, heads));
}

ProbeResult train_probe_head(Tensor train_features,
                             const std::vector<std::uint16_t>& train_labels,
                             Tensor test_features,
                             const std::vector<std::uint16_t>& test_labels,
                             std::size_t num_classes, std::size_t heads,
                             const ProbeConfig& cfg, ProbeMode mode) {
  cfg.validate();
  standardize_features(train_features, test_features);
  const std::size_t N = train_features.shape[0];
  const std::size_t E = train_features.shape.back();
  LogitsBuilder builder =
      mode == ProbeMode::kLinear ? linear_logits : attentive_logits;

  ProbeResult result;
  result.mode = mode;
  result.lr_grid = cfg.lr_grid;

  for (double lr : cfg.lr_grid) {
    ModelParameters head;
    if (mode == ProbeMode::kAttentive) {
      Rng rng = derive_rng(cfg.seed, 0xa77e117ull);
      head.add("query", trunc_normal<float>({E}, 0.02f, rng));
      head.add("wk.weight", trunc_normal<float>({E, E}, 0.02f, rng));
      head.add("wk.bias", Tensor::zeros({E}));
      head.add("wv.weight", trunc_normal<float>({E, E}, 0.02f, rng));
      head.add("wv.bias", Tensor::zeros({E}));
      head.add("wo.weight", trunc_normal<float>({E, E}, 0.02f, rng));
      head.add("wo.bias", Tensor::zeros({E}));
    }
    head.add("cls.weight", Tensor::zeros({E, num_classes}));
    head.add("cls.bias", Tensor::zeros({num_classes}));
    OptimizerState opt = OptimizerState::init(head);
    const AdamWConfig adam{cfg.beta1, cfg.beta2, cfg.weight_decay, 1e-8};

    TrainConfig sched;
    sched.peak_lr = lr;
    sched.min_lr = cfg.min_lr;
    sched.warmup_epochs = 0;
    sched.total_epochs = cfg.epochs;

    const std::size_t spe = batches_per_epoch(N, cfg.batch_size, false);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      const auto order = epoch_permutation(N, cfg.seed, epoch);
      for (std::size_t bi = 0; bi < spe; ++bi, ++step) {
        const std::size_t begin = bi * cfg.batch_size;
        const std::size_t end = std::min(begin + cfg.batch_size, N);
        Graph g;
        std::map<std::string, Graph::Id> pm;
        for (const auto& [name, value] : head.items) pm[name] = g.param(name, value);
        auto feats = g.input(gather_rows(train_features, order, begin, end));
        auto logits = builder(g, pm, feats, heads);
        auto loss = g.cross_entropy(logits, to_int_labels(train_labels, order, begin, end));
        auto grads = g.backward(loss);
        clip_gradients(grads, cfg.grad_clip);
        adamw_step(head, grads, opt, lr_at(step, spe, sched), adam);
      }
    }

    const Tensor test_logits = eval_logits(head, test_features, builder, heads);
    const double acc = top1(test_logits, test_labels);
    result.accuracies.push_back(acc);
    if (acc > result.accuracy) {
      result.accuracy = acc;
      result.best_lr = lr;
    }
  }
  if (result.best_lr == 0.0) result.best_lr = cfg.lr_grid.front();
  return result;
}

}  // namespace

ProbeResult linear_probe(const Tensor& train_pooled,
                         const std::vector<std::uint16_t>& train_labels,
                         const Tensor& test_pooled,
                         const std::vector<std::uint16_t>& test_labels,
                         std::size_t num_classes, const ProbeConfig& cfg) {
  if (train_pooled.ndim() != 2 || test_pooled.ndim() != 2) {
    throw ShapeError("linear_probe: pooled features must be [N x E]");
  }
  return train_probe_head(train_pooled, train_labels, test_pooled, test_labels,
                          num_classes, 1, cfg, ProbeMode::kLinear);
}

ProbeResult attentive_probe(const Tensor& train_features,
                            const std::vector<std::uint16_t>& train_labels,
                            const Tensor& test_features,
                            const std::vector<std::uint16_t>& test_labels,
                            std::size_t num_classes, std::size_t heads,
                            const ProbeConfig& cfg) {
  if (train_features.ndim() != 3 || test_features.ndim() != 3) {
    throw ShapeError("attentive_probe: features must be [N x T x E]");
  }
  if (heads == 0 || train_features.shape[2] % heads != 0) {
    throw ContractError("attentive_probe: feature width must divide heads");
  }
  return train_probe_head(train_features, train_labels, test_features,
                          test_labels, num_classes, heads, cfg,
                          ProbeMode::kAttentive);
}

ProbeResult run_probe(const ModelConfig& cfg, const ModelParameters& params,
                      const Dataset& train, const Dataset& test,
                      const ProbeConfig& probe_cfg) {
  const Tensor train_feats = dataset_features(cfg, params, train);
  const Tensor test_feats = dataset_features(cfg, params, test);
  if (probe_cfg.mode == ProbeMode::kLinear) {
    return linear_probe(mean_pool_tokens(train_feats), train.labels,
                        mean_pool_tokens(test_feats), test.labels,
                        train.num_classes, probe_cfg);
  }
  return attentive_probe(train_feats, train.labels, test_feats, test.labels,
                         train.num_classes, cfg.enc_heads, probe_cfg);
}

}  // namespace xtra
