#include "xtra/masking.hpp"

#include <sstream>

#include "xtra/rng.hpp"

namespace xtra {

BlockPattern parse_block_pattern(const std::string& name) {
  if (name == "raster") return BlockPattern::kRaster;
  if (name == "random" || name == "fixed_random") return BlockPattern::kFixedRandom;
  throw ContractError("unknown block pattern '" + name + "' (raster|random)");
}

std::string block_pattern_name(BlockPattern pattern) {
  return pattern == BlockPattern::kRaster ? "raster" : "fixed_random";
}

std::vector<std::size_t> make_block_order(std::size_t num_blocks,
                                          BlockPattern pattern,
                                          std::uint64_t seed) {
  if (num_blocks < 1) throw ContractError("make_block_order: need K >= 1");
  if (pattern == BlockPattern::kRaster) {
    std::vector<std::size_t> order(num_blocks);
    for (std::size_t i = 0; i < num_blocks; ++i) order[i] = i;
    return order;
  }
  Rng rng = derive_rng(seed, 0xb10c0d3ull);
  return random_permutation(num_blocks, rng);
}

BlockLayout BlockLayout::create(std::size_t image_h, std::size_t image_w,
                                std::size_t channels, std::size_t patch_px,
                                std::size_t block_tokens,
                                std::vector<std::size_t> block_order) {
  if (image_h == 0 || image_w == 0 || channels == 0 || patch_px == 0 ||
      block_tokens == 0) {
    throw ContractError("layout: all dimensions must be positive");
  }
  if (image_h % patch_px != 0 || image_w % patch_px != 0) {
    throw ContractError("layout: patch size " + std::to_string(patch_px) +
                        " does not divide image " + std::to_string(image_h) +
                        "x" + std::to_string(image_w));
  }
  BlockLayout l;
  l.image_h = image_h;
  l.image_w = image_w;
  l.channels = channels;
  l.patch_px = patch_px;
  l.block_tokens = block_tokens;
  l.grid_h = image_h / patch_px;
  l.grid_w = image_w / patch_px;
  l.tokens = l.grid_h * l.grid_w;
  if (l.grid_h % block_tokens != 0 || l.grid_w % block_tokens != 0) {
    throw ContractError("layout: block of " + std::to_string(block_tokens) +
                        " tokens does not divide token grid " +
                        std::to_string(l.grid_h) + "x" + std::to_string(l.grid_w));
  }
  l.blocks_h = l.grid_h / block_tokens;
  l.blocks_w = l.grid_w / block_tokens;
  l.blocks = l.blocks_h * l.blocks_w;
  if (block_order.empty()) {
    block_order = make_block_order(l.blocks, BlockPattern::kRaster);
  }
  if (block_order.size() != l.blocks) {
    throw ContractError("layout: block order has " +
                        std::to_string(block_order.size()) + " entries for " +
                        std::to_string(l.blocks) + " blocks");
  }
  std::vector<std::uint8_t> seen(l.blocks, 0);
  for (std::size_t rank : block_order) {
    if (rank >= l.blocks || seen[rank]) {
      throw ContractError("layout: block order is not a permutation");
    }
    seen[rank] = 1;
  }
  l.block_order = std::move(block_order);
  return l;
}

BlockLayout BlockLayout::square(std::size_t image_px, std::size_t channels,
                                std::size_t patch_px, std::size_t block_tokens,
                                BlockPattern pattern, std::uint64_t pattern_seed) {
  BlockLayout base = create(image_px, image_px, channels, patch_px, block_tokens);
  return create(image_px, image_px, channels, patch_px, block_tokens,
                make_block_order(base.blocks, pattern, pattern_seed));
}

std::size_t token_to_block(const BlockLayout& layout, std::size_t token) {
  if (token >= layout.tokens) {
    throw ContractError("token_to_block: token " + std::to_string(token) +
                        " out of range [0, " + std::to_string(layout.tokens) + ")");
  }
  const std::size_t r = layout.token_row(token) / layout.block_tokens;
  const std::size_t c = layout.token_col(token) / layout.block_tokens;
  return layout.block_order[r * layout.blocks_w + c];
}

std::vector<std::size_t> block_token_list(const BlockLayout& layout,
                                          std::size_t rank) {
  if (rank >= layout.blocks) {
    throw ContractError("block_token_list: rank out of range");
  }
  std::size_t raster = layout.blocks;
  for (std::size_t i = 0; i < layout.blocks; ++i) {
    if (layout.block_order[i] == rank) {
      raster = i;
      break;
    }
  }
  const std::size_t br = raster / layout.blocks_w;
  const std::size_t bc = raster % layout.blocks_w;
  const std::size_t k = layout.block_tokens;
  std::vector<std::size_t> out;
  out.reserve(k * k);
  for (std::size_t dr = 0; dr < k; ++dr) {
    for (std::size_t dc = 0; dc < k; ++dc) {
      out.push_back((br * k + dr) * layout.grid_w + (bc * k + dc));
    }
  }
  return out;
}

AttentionMask full_mask(std::size_t rows, std::size_t cols) {
  AttentionMask m(rows, cols);
  for (auto& v : m.allow) v = 1;
  return m;
}

AttentionMask build_block_causal_mask(const BlockLayout& layout) {
  const std::size_t T = layout.tokens;
  std::vector<std::size_t> rank_of(T);
  for (std::size_t t = 0; t < T; ++t) rank_of[t] = token_to_block(layout, t);
  AttentionMask m(T, T);
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = 0; j < T; ++j) {
      m.allow[i * T + j] = rank_of[j] <= rank_of[i] ? 1 : 0;
    }
  }
  return m;
}

std::string mask_to_ascii(const AttentionMask& mask) {
  std::string out;
  out.reserve(mask.rows * (mask.cols + 1));
  for (std::size_t i = 0; i < mask.rows; ++i) {
    for (std::size_t j = 0; j < mask.cols; ++j) {
      out.push_back(mask.at(i, j) ? '1' : '0');
    }
    out.push_back('\n');
  }
  return out;
}

std::string mask_to_pbm(const AttentionMask& mask) {
  std::ostringstream os;
  os << "P1\n" << mask.cols << ' ' << mask.rows << '\n';
  for (std::size_t i = 0; i < mask.rows; ++i) {
    for (std::size_t j = 0; j < mask.cols; ++j) {
      if (j) os << ' ';
      os << (mask.at(i, j) ? '1' : '0');
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace xtra
