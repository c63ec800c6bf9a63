#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xtra/error.hpp"

namespace xtra {

enum class BlockPattern { kRaster, kFixedRandom };

BlockPattern parse_block_pattern(const std::string& name);
std::string block_pattern_name(BlockPattern pattern);

// Auto-regressive order over blocks: raster is the identity, fixed_random is
// a seed-determined permutation held constant for a whole run. Entry i is the
// rank of the block whose raster index is i.
std::vector<std::size_t> make_block_order(std::size_t num_blocks,
                                          BlockPattern pattern,
                                          std::uint64_t seed = 0);

// Mapping between pixels, patch tokens and k x k token blocks for one image
// geometry. Token index runs in raster order over the (grid_h x grid_w)
// token grid; block rank runs in block_order over the block grid.
struct BlockLayout {
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::size_t channels = 0;
  std::size_t patch_px = 0;     // p
  std::size_t block_tokens = 0; // k

  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t tokens = 0;   // T = grid_h * grid_w
  std::size_t blocks_h = 0;
  std::size_t blocks_w = 0;
  std::size_t blocks = 0;   // K = T / k^2

  std::vector<std::size_t> block_order;  // raster block index -> rank

  static BlockLayout create(std::size_t image_h, std::size_t image_w,
                            std::size_t channels, std::size_t patch_px,
                            std::size_t block_tokens,
                            std::vector<std::size_t> block_order = {});

  static BlockLayout square(std::size_t image_px, std::size_t channels,
                            std::size_t patch_px, std::size_t block_tokens,
                            BlockPattern pattern = BlockPattern::kRaster,
                            std::uint64_t pattern_seed = 0);

  std::size_t patch_dim() const { return patch_px * patch_px * channels; }
  std::size_t block_pixel_count() const {
    return block_tokens * block_tokens * patch_dim();
  }
  std::size_t token_row(std::size_t token) const { return token / grid_w; }
  std::size_t token_col(std::size_t token) const { return token % grid_w; }
};

// Rank of the block containing a token.
std::size_t token_to_block(const BlockLayout& layout, std::size_t token);

// Token indices of the block with the given rank, in within-block raster
// order. Concatenation order of block embeddings follows this list.
std::vector<std::size_t> block_token_list(const BlockLayout& layout,
                                          std::size_t rank);

// Boolean matrix over (query, key) token pairs; true marks a permitted edge.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allow;

  AttentionMask() = default;
  AttentionMask(std::size_t r, std::size_t c)
      : rows(r), cols(c), allow(r * c, 0) {}

  bool at(std::size_t q, std::size_t k) const { return allow[q * cols + k] != 0; }
  void set(std::size_t q, std::size_t k, bool v) { allow[q * cols + k] = v ? 1 : 0; }

  bool operator==(const AttentionMask& o) const {
    return rows == o.rows && cols == o.cols && allow == o.allow;
  }
};

AttentionMask full_mask(std::size_t rows, std::size_t cols);

// allow[i][j] == (rank(block(j)) <= rank(block(i))): full attention inside a
// block, causal across blocks in rank order.
AttentionMask build_block_causal_mask(const BlockLayout& layout);

// Rows of contiguous 0/1 characters, one row per line.
std::string mask_to_ascii(const AttentionMask& mask);
// P1 bitmap; permitted edges map to 1.
std::string mask_to_pbm(const AttentionMask& mask);

}  // namespace xtra
