#pragma once

#include <string>
#include <vector>

#include "xtra/model.hpp"
#include "xtra/objective.hpp"
#include "xtra/tensor.hpp"

namespace xtra {

struct TeacherForcedResult {
  Tensor blocks;        // [K x Dblk] normalized predictions; rank 0 row is zero
  Tensor mean;          // [K] ground-truth per-block mean
  Tensor var;           // [K] ground-truth per-block variance
  float eps = 1e-6f;
};

// One masked forward pass per image; the prediction for block rank r >= 1 is
// the M=0 slot emitted at context rank r-1. Rank 0 has no prediction.
TeacherForcedResult teacher_forced_predict(const ModelConfig& cfg,
                                           const ModelParameters& params,
                                           const Tensor& image,
                                           const AttentionMask& mask);

// Denormalized reconstruction: predicted blocks are mapped back through the
// ground-truth block stats and clamped to [0,1]; the rank-0 block is shown
// as ground truth.
Tensor reconstruct_image(const ModelConfig& cfg, const TeacherForcedResult& pred,
                         const Tensor& image);

// Binary PPM (P6), 8-bit. Single-channel images replicate to gray.
std::string encode_ppm(const Tensor& image);
Tensor decode_ppm(const std::string& bytes);

// Side-by-side original | reconstruction pairs stacked vertically, written
// as one P6 file.
void render_grid(const std::vector<Tensor>& originals,
                 const std::vector<Tensor>& reconstructions,
                 const std::string& path);

}  // namespace xtra
