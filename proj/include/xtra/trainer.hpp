#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xtra/data.hpp"
#include "xtra/model.hpp"
#include "xtra/objective.hpp"
#include "xtra/rng.hpp"
#include "xtra/tensor.hpp"

namespace xtra {

struct TrainConfig {
  double peak_lr = 1e-3;
  double min_lr = 1e-6;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t warmup_epochs = 2;
  std::size_t total_epochs = 20;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
  LossNorm loss = LossNorm::kL2;
  AugmentConfig augment;

  void validate() const {
    if (!(min_lr > 0.0 && min_lr <= peak_lr)) {
      throw ContractError("train config: need 0 < min_lr <= peak_lr");
    }
    if (warmup_epochs >= total_epochs) {
      throw ContractError("train config: warmup_epochs must be < total_epochs");
    }
    if (batch_size < 1) throw ContractError("train config: batch_size >= 1");
    if (grad_clip <= 0.0) throw ContractError("train config: grad_clip > 0");
  }
};

// Linear warmup from 0 to peak over the warmup steps, then cosine decay to
// min_lr, hitting it exactly on the last step of the run.
double lr_at(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.05;
  double eps = 1e-8;
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  static OptimizerState init(const ModelParameters& params);
};

// Layer-norm gains/shifts and biases are exempt from decay.
bool parameter_decays(const std::string& name);

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
double clip_gradients(std::map<std::string, Tensor>& grads, double max_norm);

// Decoupled weight decay first, then bias-corrected Adam.
void adamw_step(ModelParameters& params, const std::map<std::string, Tensor>& grads,
                OptimizerState& state, double lr, const AdamWConfig& cfg);

// ---- checkpoints ----

struct CheckpointTensor {
  std::string name;
  std::uint8_t dtype = 0;  // 0 = f32, 1 = f64
  Shape shape;
  std::vector<std::uint8_t> raw;
};

struct CheckpointData {
  std::uint64_t step = 0;
  std::uint32_t rng_algorithm = Rng::kAlgorithmId;
  std::array<std::uint8_t, 32> rng_state{};
  std::vector<CheckpointTensor> tensors;
};

void save_checkpoint(const ModelParameters& params, const OptimizerState& state,
                     const Rng& rng, std::uint64_t step, const std::string& path);
CheckpointData load_checkpoint(const std::string& path);

// Copies checkpoint tensors into params/state, validating names and shapes
// against the existing (config-derived) layout. Returns the stored step.
std::uint64_t apply_checkpoint(const CheckpointData& data, ModelParameters& params,
                               OptimizerState& state, Rng& rng);

// Loads just the model parameters from a checkpoint into a config-shaped set.
ModelParameters load_parameters(const ModelConfig& cfg, const std::string& path);

// ---- the pre-training loop ----

struct TrainLog {
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;  // mean over the epoch's steps
  std::size_t start_step = 0;
  std::size_t steps_per_epoch = 0;
  std::string final_checkpoint;
};

// Runs (or resumes) pre-training; writes checkpoints under out_dir unless it
// is empty. A non-finite loss aborts before the parameter update so the most
// recent checkpoint on disk stays valid. stop_after_epochs > 0 pauses the run
// at that epoch boundary without touching the schedule, so a later resume
// continues step-for-step as if uninterrupted.
TrainLog pretrain(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const Dataset& dataset, const std::string& out_dir,
                  const std::string& resume_path = "",
                  std::size_t stop_after_epochs = 0);

}  // namespace xtra
