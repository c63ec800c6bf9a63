#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "xtra/graph.hpp"
#include "xtra/tensor.hpp"

namespace xtra {

enum class LossNorm { kL2, kL1 };

inline LossNorm parse_loss_norm(const std::string& name) {
  if (name == "l2" || name == "L2" || name == "mse") return LossNorm::kL2;
  if (name == "l1" || name == "L1" || name == "mae") return LossNorm::kL1;
  throw ContractError("unknown loss norm '" + name + "' (l1|l2)");
}

inline std::string loss_norm_name(LossNorm norm) {
  return norm == LossNorm::kL2 ? "l2" : "l1";
}

// Ground-truth block pixels standardized per (image, block), with the stats
// kept around for denormalization.
template <typename T>
struct BlockTargetsT {
  TensorT<T> values;  // [B x K x Dblk], normalized
  TensorT<T> mean;    // [B x K]
  TensorT<T> var;     // [B x K], population variance of the raw block
  T eps = T(1e-6);
};

using BlockTargets = BlockTargetsT<float>;

// x <- (x - mean) / sqrt(var + eps) per (image, block); population variance.
template <typename T>
BlockTargetsT<T> normalize_blocks(const TensorT<T>& raw, T eps = T(1e-6)) {
  if (raw.ndim() != 3) throw ShapeError("normalize_blocks: need [B x K x D]");
  const std::size_t B = raw.shape[0], K = raw.shape[1], D = raw.shape[2];
  BlockTargetsT<T> out;
  out.eps = eps;
  out.values = TensorT<T>::zeros(raw.shape);
  out.mean = TensorT<T>::zeros({B, K});
  out.var = TensorT<T>::zeros({B, K});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < K; ++k) {
      const T* in = raw.data.data() + (b * K + k) * D;
      T* o = out.values.data.data() + (b * K + k) * D;
      T mean = 0;
      for (std::size_t i = 0; i < D; ++i) mean += in[i];
      mean /= T(D);
      T var = 0;
      for (std::size_t i = 0; i < D; ++i) {
        const T c = in[i] - mean;
        var += c * c;
      }
      var /= T(D);
      const T inv = T(1) / std::sqrt(var + eps);
      for (std::size_t i = 0; i < D; ++i) o[i] = (in[i] - mean) * inv;
      out.mean.data[b * K + k] = mean;
      out.var.data[b * K + k] = var;
    }
  }
  return out;
}

// Slot (j, m) targets block rank j+1+m; valid iff that rank exists. Block
// rank 0 is never a target.
inline bool slot_is_valid(std::size_t K, std::size_t j, std::size_t m) {
  return j + 1 + m <= K - 1;
}

inline std::size_t valid_slots_per_image(std::size_t K, std::size_t M) {
  std::size_t n = 0;
  for (std::size_t j = 0; j + 1 < K; ++j) {
    for (std::size_t m = 0; m < M; ++m) {
      if (slot_is_valid(K, j, m)) ++n;
    }
  }
  return n;
}

// [K-1 x M] 0/1 mask of in-range slots.
template <typename T>
TensorT<T> valid_slot_mask(std::size_t K, std::size_t M) {
  if (K < 2) throw ContractError("valid_slot_mask: K=1 leaves no valid slots");
  TensorT<T> out = TensorT<T>::zeros({K - 1, M});
  for (std::size_t j = 0; j + 1 < K; ++j) {
    for (std::size_t m = 0; m < M; ++m) {
      out.data[j * M + m] = slot_is_valid(K, j, m) ? T(1) : T(0);
    }
  }
  return out;
}

// Normalized targets arranged per prediction slot: [B x (K-1) x M x Dblk];
// invalid slots are zero-filled.
template <typename T>
TensorT<T> slot_targets(const BlockTargetsT<T>& targets, std::size_t M) {
  const std::size_t B = targets.values.shape[0];
  const std::size_t K = targets.values.shape[1];
  const std::size_t D = targets.values.shape[2];
  if (K < 2) throw ContractError("slot_targets: K=1 leaves no valid slots");
  TensorT<T> out = TensorT<T>::zeros({B, K - 1, M, D});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j + 1 < K; ++j) {
      for (std::size_t m = 0; m < M; ++m) {
        if (!slot_is_valid(K, j, m)) continue;
        const std::size_t rank = j + 1 + m;
        const T* src = targets.values.data.data() + (b * K + rank) * D;
        T* dst = out.data.data() + ((b * (K - 1) + j) * M + m) * D;
        std::copy(src, src + D, dst);
      }
    }
  }
  return out;
}

// Squared (or absolute) error summed over valid slots, divided by
// batch * slots-per-image. With M=1 the scale is exactly 1/(B*(K-1)).
template <typename T>
double reconstruction_loss(const TensorT<T>& pred, const BlockTargetsT<T>& targets,
                           const TensorT<T>& valid, LossNorm norm) {
  const std::size_t B = targets.values.shape[0];
  const std::size_t K = targets.values.shape[1];
  const std::size_t D = targets.values.shape[2];
  if (K < 2) throw ContractError("reconstruction_loss: K=1 leaves no valid slots");
  if (pred.ndim() != 4 || pred.shape[0] != B || pred.shape[1] != K - 1 ||
      pred.shape[3] != D) {
    throw ShapeError("reconstruction_loss: pred " + pred.shape_string() +
                     " does not match targets");
  }
  const std::size_t M = pred.shape[2];
  if (valid.shape != Shape{K - 1, M}) {
    throw ShapeError("reconstruction_loss: valid mask " + valid.shape_string() +
                     " must be [" + std::to_string(K - 1) + "x" +
                     std::to_string(M) + "]");
  }
  std::size_t slots = 0;
  for (T v : valid.data) slots += v != T(0) ? 1 : 0;
  if (slots == 0) throw ContractError("reconstruction_loss: no valid slots");
  const TensorT<T> tgt = slot_targets(targets, M);
  double acc = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j + 1 < K; ++j) {
      for (std::size_t m = 0; m < M; ++m) {
        if (valid.data[j * M + m] == T(0)) continue;
        const std::size_t off = ((b * (K - 1) + j) * M + m) * D;
        for (std::size_t i = 0; i < D; ++i) {
          const double d = static_cast<double>(pred.data[off + i]) -
                           static_cast<double>(tgt.data[off + i]);
          acc += norm == LossNorm::kL2 ? d * d : std::abs(d);
        }
      }
    }
  }
  return acc / (static_cast<double>(B) * static_cast<double>(slots));
}

template <typename T>
double reconstruction_loss(const TensorT<T>& pred, const BlockTargetsT<T>& targets,
                           LossNorm norm = LossNorm::kL2) {
  const std::size_t K = targets.values.shape[1];
  if (K < 2) throw ContractError("reconstruction_loss: K=1 leaves no valid slots");
  return reconstruction_loss(pred, targets, valid_slot_mask<T>(K, pred.shape[2]),
                             norm);
}

// Same loss assembled from graph primitives so gradients flow to the
// prediction head: sum(valid * |pred - target|^p) / (B * slots).
template <typename T>
typename GraphT<T>::Id reconstruction_loss_node(GraphT<T>& g,
                                                typename GraphT<T>::Id pred,
                                                const BlockTargetsT<T>& targets,
                                                LossNorm norm) {
  const Shape& ps = g.value(pred).shape;
  const std::size_t B = ps[0], M = ps[2];
  const std::size_t K = targets.values.shape[1];
  if (K < 2) throw ContractError("reconstruction_loss: K=1 leaves no valid slots");
  auto tgt = g.input(slot_targets(targets, M));
  auto diff = g.add(pred, g.scale(tgt, T(-1)));
  auto per_elem = norm == LossNorm::kL2 ? g.mul(diff, diff) : g.abs(diff);

  const TensorT<T> valid2d = valid_slot_mask<T>(K, M);
  std::size_t slots = 0;
  for (T v : valid2d.data) slots += v != T(0) ? 1 : 0;
  TensorT<T> valid = TensorT<T>::zeros({B, K - 1, M});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy(valid2d.data.begin(), valid2d.data.end(),
              valid.data.begin() + b * valid2d.numel());
  }
  auto masked = g.row_scale(per_elem, g.input(std::move(valid)));
  return g.scale(g.sum_all(masked),
                 T(1.0 / (static_cast<double>(B) * static_cast<double>(slots))));
}

// Inverse of per-block normalization, clamped to the displayable range.
template <typename T>
TensorT<T> denormalize_block(const TensorT<T>& pred_norm, T mean, T var, T eps) {
  TensorT<T> out = pred_norm;
  const T s = std::sqrt(var + eps);
  for (auto& v : out.data) {
    v = v * s + mean;
    v = std::min(T(1), std::max(T(0), v));
  }
  return out;
}

}  // namespace xtra
