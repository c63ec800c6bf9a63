#include "xtra/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "xtra/error.hpp"

namespace xtra {

double lr_at(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg) {
  if (steps_per_epoch < 1) throw ContractError("lr_at: steps_per_epoch >= 1");
  const std::size_t warmup = cfg.warmup_epochs * steps_per_epoch;
  const std::size_t total = cfg.total_epochs * steps_per_epoch;
  if (step < warmup) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const std::size_t span = total > warmup + 1 ? total - 1 - warmup : 1;
  double t = static_cast<double>(step - warmup) / static_cast<double>(span);
  t = std::min(t, 1.0);
  return cfg.min_lr +
         (cfg.peak_lr - cfg.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

OptimizerState OptimizerState::init(const ModelParameters& params) {
  OptimizerState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& [name, value] : params.items) {
    s.m.push_back(Tensor::zeros(value.shape));
    s.v.push_back(Tensor::zeros(value.shape));
  }
  return s;
}

bool parameter_decays(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const std::size_t n = std::strlen(suffix);
    return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
  };
  return !(ends_with(".bias") || ends_with(".gamma") || ends_with(".beta"));
}

double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm) {
  if (max_norm <= 0.0) throw ContractError("clip_gradients: max_norm > 0");
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (float v : g.data) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& [name, g] : grads) {
      for (float& v : g.data) v *= scale;
    }
  }
  return norm;
}

void adamw_step(ModelParameters& params, const std::map<std::string, Tensor>& grads,
                OptimizerState& state, double lr, const AdamWConfig& cfg) {
  if (state.m.size() != params.size()) {
    throw ContractError("adamw_step: optimizer state does not match parameters");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const float bc1 = static_cast<float>(1.0 - std::pow(cfg.beta1, t));
  const float bc2 = static_cast<float>(1.0 - std::pow(cfg.beta2, t));
  const float b1 = static_cast<float>(cfg.beta1);
  const float b2 = static_cast<float>(cfg.beta2);
  const float eps = static_cast<float>(cfg.eps);
  const float flr = static_cast<float>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, p] = params.items[i];
    auto it = grads.find(name);
    if (it == grads.end()) {
      throw ContractError("adamw_step: missing gradient for " + name);
    }
    const Tensor& g = it->second;
    if (!g.same_shape(p)) {
      throw ContractError("adamw_step: gradient shape mismatch for " + name);
    }
    if (!g.all_finite()) {
      throw ContractError("adamw_step: non-finite gradient in " + name +
                          "; step aborted");
    }
    const float decay = parameter_decays(name)
                            ? 1.0f - flr * static_cast<float>(cfg.weight_decay)
                            : 1.0f;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const float gj = g.data[j];
      if (decay != 1.0f) p.data[j] *= decay;
      m.data[j] = b1 * m.data[j] + (1.0f - b1) * gj;
      v.data[j] = b2 * v.data[j] + (1.0f - b2) * gj * gj;
      const float mhat = m.data[j] / bc1;
      const float vhat = v.data[j] / bc2;
      p.data[j] -= flr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[4] = {'X', 'C', 'K', 'P'};

void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > buf.size()) {
      throw FormatError("checkpoint: truncated " + std::string(what) +
                        " at byte offset " + std::to_string(pos));
    }
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) {
      v = static_cast<std::uint16_t>(
          v | static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i));
    }
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    }
    pos += 8;
    return v;
  }
};

void append_tensor(std::string& out, const std::string& name, const Tensor& t) {
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.append(name);
  out.push_back(0);  // dtype f32
  out.push_back(static_cast<char>(t.ndim()));
  for (std::size_t d : t.shape) put_u64(out, static_cast<std::uint64_t>(d));
  out.append(reinterpret_cast<const char*>(t.data.data()),
             t.data.size() * sizeof(float));
}

Tensor tensor_from_raw(const CheckpointTensor& ct) {
  if (ct.dtype != 0) {
    throw FormatError("checkpoint: tensor '" + ct.name + "' has dtype " +
                      std::to_string(ct.dtype) + ", expected f32");
  }
  Tensor t = Tensor::zeros(ct.shape);
  std::memcpy(t.data.data(), ct.raw.data(), ct.raw.size());
  return t;
}

}  // namespace

void save_checkpoint(const ModelParameters& params, const OptimizerState& state,
                     const Rng& rng, std::uint64_t step, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, 1);
  put_u64(out, step);
  put_u32(out, Rng::kAlgorithmId);
  const auto rng_bytes = rng.state_bytes();
  out.append(reinterpret_cast<const char*>(rng_bytes.data()), rng_bytes.size());
  put_u32(out, static_cast<std::uint32_t>(3 * params.size()));
  for (const auto& [name, t] : params.items) append_tensor(out, name, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    append_tensor(out, "opt.m." + params.items[i].first, state.m[i]);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    append_tensor(out, "opt.v." + params.items[i].first, state.v[i]);
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("checkpoint: cannot open '" + tmp + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("checkpoint: short write to '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  Reader r{buf};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != 1) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  CheckpointData data;
  data.step = r.u64("step");
  data.rng_algorithm = r.u32("rng algorithm");
  if (data.rng_algorithm != Rng::kAlgorithmId) {
    throw FormatError("checkpoint: unknown rng algorithm " +
                      std::to_string(data.rng_algorithm));
  }
  r.need(32, "rng state");
  std::memcpy(data.rng_state.data(), buf.data() + r.pos, 32);
  r.pos += 32;
  const std::uint32_t count = r.u32("tensor count");
  data.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor ct;
    const std::uint16_t name_len = r.u16("tensor name length");
    r.need(name_len, "tensor name");
    ct.name.assign(buf.data() + r.pos, name_len);
    r.pos += name_len;
    r.need(2, "tensor header");
    ct.dtype = static_cast<std::uint8_t>(buf[r.pos++]);
    if (ct.dtype > 1) {
      throw FormatError("checkpoint: tensor '" + ct.name + "' has unknown dtype");
    }
    const auto ndim = static_cast<std::uint8_t>(buf[r.pos++]);
    ct.shape.resize(ndim);
    for (std::uint8_t d = 0; d < ndim; ++d) {
      ct.shape[d] = static_cast<std::size_t>(r.u64("tensor dim"));
    }
    const std::size_t elem = ct.dtype == 0 ? 4 : 8;
    const std::size_t bytes = shape_numel(ct.shape) * elem;
    r.need(bytes, ("tensor data of " + ct.name).c_str());
    ct.raw.assign(buf.begin() + static_cast<std::ptrdiff_t>(r.pos),
                  buf.begin() + static_cast<std::ptrdiff_t>(r.pos + bytes));
    r.pos += bytes;
    data.tensors.push_back(std::move(ct));
  }
  if (r.pos != buf.size()) {
    throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(r.pos));
  }
  return data;
}

std::uint64_t apply_checkpoint(const CheckpointData& data, ModelParameters& params,
                               OptimizerState& state, Rng& rng) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& ct : data.tensors) by_name[ct.name] = &ct;
  auto take = [&](const std::string& name, const Shape& expected) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ContractError("checkpoint: missing tensor '" + name + "'");
    }
    if (it->second->shape != expected) {
      throw ContractError("checkpoint: tensor '" + name + "' has shape " +
                          shape_str(it->second->shape) + ", config expects " +
                          shape_str(expected));
    }
    return tensor_from_raw(*it->second);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, p] = params.items[i];
    p = take(name, p.shape);
    state.m[i] = take("opt.m." + name, p.shape);
    state.v[i] = take("opt.v." + name, p.shape);
  }
  state.step = data.step;
  rng.set_state_bytes(data.rng_state);
  return data.step;
}

ModelParameters load_parameters(const ModelConfig& cfg, const std::string& path) {
  ModelParameters params = init_parameters<float>(cfg, 0);
  OptimizerState state = OptimizerState::init(params);
  Rng rng(0);
  apply_checkpoint(load_checkpoint(path), params, state, rng);
  return params;
}

// ---- pre-training ----

TrainLog pretrain(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Dataset& dataset, const std::string& out_dir,
                  const std::string& resume_path, std::size_t stop_after_epochs) {
  model_cfg.validate();
  train_cfg.validate();
  const BlockLayout layout = model_cfg.layout();
  if (dataset.channels != layout.channels || dataset.height != layout.image_h ||
      dataset.width != layout.image_w) {
    throw ContractError("pretrain: dataset " + std::to_string(dataset.channels) +
                        "x" + std::to_string(dataset.height) + "x" +
                        std::to_string(dataset.width) + " does not match layout " +
                        std::to_string(layout.channels) + "x" +
                        std::to_string(layout.image_h) + "x" +
                        std::to_string(layout.image_w));
  }
  const auto mask =
      std::make_shared<const AttentionMask>(build_block_causal_mask(layout));

  ModelParameters params = init_parameters<float>(model_cfg, train_cfg.seed);
  OptimizerState opt = OptimizerState::init(params);
  Rng master = derive_rng(train_cfg.seed, 0x3457ull);

  TrainLog log;
  log.steps_per_epoch =
      batches_per_epoch(dataset.size(), train_cfg.batch_size, true);
  if (log.steps_per_epoch < 1) {
    throw ContractError("pretrain: dataset smaller than one batch");
  }
  std::size_t step = 0;
  if (!resume_path.empty()) {
    step = apply_checkpoint(load_checkpoint(resume_path), params, opt, master);
  }
  log.start_step = step;

  const std::size_t total_steps = train_cfg.total_epochs * log.steps_per_epoch;
  const AdamWConfig adam{train_cfg.beta1, train_cfg.beta2, train_cfg.weight_decay,
                         train_cfg.adam_eps};

  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  auto save = [&](std::uint64_t at_step, const std::string& stem) {
    if (out_dir.empty()) return std::string();
    const std::string path = out_dir + "/" + stem + ".xckp";
    save_checkpoint(params, opt, master, at_step, path);
    return path;
  };

  const std::size_t stop_steps =
      stop_after_epochs > 0
          ? std::min(total_steps, stop_after_epochs * log.steps_per_epoch)
          : total_steps;

  double epoch_acc = 0.0;
  std::size_t epoch_steps = 0;
  for (; step < stop_steps; ++step) {
    const std::size_t epoch = step / log.steps_per_epoch;
    const std::size_t batch_index = step % log.steps_per_epoch;
    const Batch batch =
        make_batch(dataset, train_cfg.batch_size, train_cfg.seed, epoch,
                   batch_index, true, train_cfg.augment, layout.image_h);
    const Tensor tokens = patchify_batch(batch.pixels, layout);
    const BlockTargets targets =
        normalize_blocks(block_pixels(tokens, layout), 1e-6f);

    Graph g;
    Rng drop_rng = derive_rng(train_cfg.seed, 0xd209ull, step);
    const auto nodes = build_forward(g, model_cfg, params, tokens, mask,
                                     RunMode::kTrain, &drop_rng, true);
    const auto loss_node =
        reconstruction_loss_node(g, nodes.predictions, targets, train_cfg.loss);
    const double loss = static_cast<double>(g.value(loss_node).data[0]);
    if (!std::isfinite(loss)) {
      throw ContractError("pretrain: non-finite loss at step " +
                          std::to_string(step) +
                          "; aborted, last checkpoint retained");
    }
    auto grads = g.backward(loss_node);
    clip_gradients(grads, train_cfg.grad_clip);
    adamw_step(params, grads, opt, lr_at(step, log.steps_per_epoch, train_cfg),
               adam);

    log.step_loss.push_back(loss);
    epoch_acc += loss;
    epoch_steps += 1;
    if (batch_index + 1 == log.steps_per_epoch) {
      log.epoch_loss.push_back(epoch_acc / static_cast<double>(epoch_steps));
      epoch_acc = 0.0;
      epoch_steps = 0;
      if (train_cfg.checkpoint_every > 0 &&
          (epoch + 1) % train_cfg.checkpoint_every == 0) {
        save(step + 1, "checkpoint_epoch_" + std::to_string(epoch + 1));
      }
    }
  }
  if (step == total_steps) {
    log.final_checkpoint = save(step, "checkpoint_final");
  } else {
    log.final_checkpoint =
        save(step, "checkpoint_epoch_" + std::to_string(step / log.steps_per_epoch));
  }
  return log;
}

}  // namespace xtra
