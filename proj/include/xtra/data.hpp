#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xtra/rng.hpp"
#include "xtra/tensor.hpp"

namespace xtra {

// In-memory dataset: u8 pixels, one label per image, shared geometry.
struct Dataset {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<std::vector<std::uint8_t>> images;  // each C*H*W, channel-major
  std::vector<std::uint16_t> labels;

  std::size_t size() const { return images.size(); }
  std::size_t pixels_per_image() const { return channels * height * width; }
};

// XID container (little-endian): magic "XID1", u32 version=1, u32 count,
// u16 C, u16 H, u16 W, u16 num_classes, then count records of
// (u16 label, C*H*W u8 pixels).
void save_xid(const Dataset& dataset, const std::string& path);
Dataset load_xid(const std::string& path);

// Deterministic images whose class is encoded by low-frequency structure:
// a per-class luminance ramp direction and a per-class base hue, buried
// under seeded low-frequency color waves and pixel noise.
Dataset synth_dataset(std::size_t classes, std::size_t count, std::size_t size,
                      std::uint64_t seed, std::size_t channels = 3);

// f32 image in [0,1], channel-major [C x H x W].
Tensor image_to_f32(const Dataset& dataset, std::size_t index);

// Bilinear resize with half-pixel centers; exact on constant images.
Tensor bilinear_resize(const Tensor& image, std::size_t out_h, std::size_t out_w);

// Sampled crop: area ~ U(scale)*H*W, aspect ~ exp(U(ln ratio)), up to 10
// attempts to fit, else a centered crop; resized to out_size square.
Tensor random_resized_crop(const Tensor& image, double scale_lo, double scale_hi,
                           double ratio_lo, double ratio_hi, std::size_t out_size,
                           Rng& rng);

// Mirrors columns with probability p.
Tensor horizontal_flip(const Tensor& image, double p, Rng& rng);

struct AugmentConfig {
  bool enabled = true;
  double scale_lo = 0.3;
  double scale_hi = 1.0;
  double ratio_lo = 0.75;
  double ratio_hi = 1.33;
  double flip_p = 0.5;
};

struct Batch {
  Tensor pixels;                 // [B x C x H' x W'] in [0,1]
  std::vector<std::uint16_t> labels;
};

// Seeded per-epoch shuffle.
std::vector<std::size_t> epoch_permutation(std::size_t count, std::uint64_t seed,
                                           std::size_t epoch);

std::size_t batches_per_epoch(std::size_t count, std::size_t batch_size,
                              bool drop_last);

// One batch of an epoch. Augmentation randomness is derived from
// (seed, epoch, batch_index) so any batch can be regenerated in isolation;
// resuming a run mid-way reproduces the exact same stream.
Batch make_batch(const Dataset& dataset, std::size_t batch_size,
                 std::uint64_t seed, std::size_t epoch, std::size_t batch_index,
                 bool drop_last, const AugmentConfig& augment,
                 std::size_t out_size);

// Whole epoch at once; pretraining drops the last partial batch, evaluation
// keeps it.
std::vector<Batch> make_epoch_batches(const Dataset& dataset,
                                      std::size_t batch_size, std::uint64_t seed,
                                      std::size_t epoch, bool drop_last,
                                      const AugmentConfig& augment,
                                      std::size_t out_size);

}  // namespace xtra
