#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xtra/data.hpp"
#include "xtra/model.hpp"
#include "xtra/tensor.hpp"

namespace xtra {

enum class ProbeMode { kLinear, kAttentive };

ProbeMode parse_probe_mode(const std::string& name);
std::string probe_mode_name(ProbeMode mode);

struct ProbeConfig {
  ProbeMode mode = ProbeMode::kAttentive;
  // Peak learning rates tried in turn; the best test accuracy is reported.
  std::vector<double> lr_grid = {1e-4, 3e-4, 5e-4, 1e-3, 1.5e-3, 2e-3, 4e-3, 8e-3};
  double min_lr = 1e-5;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double grad_clip = 3.0;
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (lr_grid.empty()) throw ContractError("probe config: lr grid is empty");
    if (epochs < 1 || batch_size < 1) {
      throw ContractError("probe config: epochs and batch_size must be >= 1");
    }
  }
};

struct ProbeResult {
  ProbeMode mode = ProbeMode::kLinear;
  std::vector<double> lr_grid;
  std::vector<double> accuracies;  // test accuracy per grid point
  double best_lr = 0.0;
  double accuracy = 0.0;
};

// Eval-mode encoder output under the block-causal mask; [B x T x enc_width].
Tensor extract_features(const ModelConfig& cfg, const ModelParameters& params,
                        const Tensor& pixels, const AttentionMask& mask);

// Features for a whole dataset (no augmentation), batched; [N x T x enc_width].
Tensor dataset_features(const ModelConfig& cfg, const ModelParameters& params,
                        const Dataset& dataset, std::size_t batch_size = 64);

// [N x T x E] -> [N x E]
Tensor mean_pool_tokens(const Tensor& features);

// Fraction of argmax matches; ties break toward the lowest class index.
double top1(const Tensor& predictions, const std::vector<std::uint16_t>& labels);

// Softmax cross-entropy classifier on mean-pooled frozen features.
ProbeResult linear_probe(const Tensor& train_pooled,
                         const std::vector<std::uint16_t>& train_labels,
                         const Tensor& test_pooled,
                         const std::vector<std::uint16_t>& test_labels,
                         std::size_t num_classes, const ProbeConfig& cfg);

// One multi-head cross-attention layer with a single learned query over the
// frozen token features, then a linear classifier.
ProbeResult attentive_probe(const Tensor& train_features,
                            const std::vector<std::uint16_t>& train_labels,
                            const Tensor& test_features,
                            const std::vector<std::uint16_t>& test_labels,
                            std::size_t num_classes, std::size_t heads,
                            const ProbeConfig& cfg);

// Convenience driver: extracts features from both splits and runs the probe.
ProbeResult run_probe(const ModelConfig& cfg, const ModelParameters& params,
                      const Dataset& train, const Dataset& test,
                      const ProbeConfig& probe_cfg);

}  // namespace xtra
