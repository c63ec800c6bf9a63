#include <doctest.h>

#include <cstring>

#include "xtra/masking.hpp"
#include "xtra/rng.hpp"

using namespace xtra;

namespace {

// Independent brute-force definition: token -> block rank via floor division
// over the token grid, then allow[i][j] <=> rank(j) <= rank(i).
std::size_t oracle_rank(std::size_t token, std::size_t grid_h, std::size_t grid_w,
                        std::size_t k, const std::vector<std::size_t>& order) {
  const std::size_t row = token / grid_w;
  const std::size_t col = token % grid_w;
  const std::size_t braster = (row / k) * (grid_w / k) + (col / k);
  (void)grid_h;
  return order[braster];
}

AttentionMask oracle_mask(std::size_t grid_h, std::size_t grid_w, std::size_t k,
                          const std::vector<std::size_t>& order) {
  const std::size_t T = grid_h * grid_w;
  AttentionMask m(T, T);
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = 0; j < T; ++j) {
      m.set(i, j, oracle_rank(j, grid_h, grid_w, k, order) <=
                      oracle_rank(i, grid_h, grid_w, k, order));
    }
  }
  return m;
}

}  // namespace

TEST_CASE("token_to_block basics") {
  const BlockLayout one = BlockLayout::create(4, 4, 1, 1, 4);
  for (std::size_t t = 0; t < one.tokens; ++t) CHECK(token_to_block(one, t) == 0);

  const BlockLayout four = BlockLayout::create(4, 4, 1, 1, 2);
  CHECK(token_to_block(four, 2) == 1);  // grid row 0, col 2

  const BlockLayout deg = BlockLayout::create(4, 4, 1, 1, 1);
  for (std::size_t t = 0; t < deg.tokens; ++t) CHECK(token_to_block(deg, t) == t);

  CHECK_THROWS_AS(token_to_block(one, 16), ContractError);
}

TEST_CASE("single block gives full attention") {
  const BlockLayout l = BlockLayout::create(2, 2, 1, 1, 2);
  const AttentionMask m = build_block_causal_mask(l);
  CHECK(m.rows == 4);
  for (std::uint8_t v : m.allow) CHECK(v == 1);
}

TEST_CASE("k=1 raster order is exactly the lower-triangular causal mask") {
  const BlockLayout l = BlockLayout::create(4, 4, 1, 1, 1);
  const AttentionMask m = build_block_causal_mask(l);
  AttentionMask tri(16, 16);
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t j = 0; j <= i; ++j) tri.set(i, j, true);
  }
  CHECK(m == tri);
}

TEST_CASE("4x4 grid, k=2: a block-2 token sees exactly 12 keys") {
  const BlockLayout l = BlockLayout::create(4, 4, 1, 1, 2);
  const AttentionMask m = build_block_causal_mask(l);
  std::size_t query = l.tokens;
  for (std::size_t t = 0; t < l.tokens; ++t) {
    if (token_to_block(l, t) == 2) {
      query = t;
      break;
    }
  }
  REQUIRE(query < l.tokens);
  std::size_t permitted = 0;
  for (std::size_t j = 0; j < l.tokens; ++j) permitted += m.at(query, j) ? 1 : 0;
  CHECK(permitted == 12);
}

TEST_CASE("oracle equivalence for every grid up to 6x6 and every dividing k") {
  for (std::size_t gh = 1; gh <= 6; ++gh) {
    for (std::size_t gw = 1; gw <= 6; ++gw) {
      for (std::size_t k = 1; k <= std::min(gh, gw); ++k) {
        if (gh % k != 0 || gw % k != 0) continue;
        const std::size_t K = (gh / k) * (gw / k);
        for (int pat = 0; pat < 2; ++pat) {
          const auto order = make_block_order(
              K, pat == 0 ? BlockPattern::kRaster : BlockPattern::kFixedRandom,
              41);
          const BlockLayout l = BlockLayout::create(gh, gw, 1, 1, k, order);
          const AttentionMask got = build_block_causal_mask(l);
          const AttentionMask want = oracle_mask(gh, gw, k, order);
          CHECK(got == want);
        }
      }
    }
  }
}

TEST_CASE("mask invariants: reflexive, >=1 key per row, monotone in rank") {
  Rng rng(17);
  for (int iter = 0; iter < 50; ++iter) {
    const std::size_t k = 1 + rng.index(3);
    const std::size_t gh = k * (1 + rng.index(3));
    const std::size_t gw = k * (1 + rng.index(3));
    const std::size_t K = (gh / k) * (gw / k);
    const auto order = make_block_order(K, BlockPattern::kFixedRandom, iter);
    const BlockLayout l = BlockLayout::create(gh, gw, 1, 1, k, order);
    const AttentionMask m = build_block_causal_mask(l);
    for (std::size_t i = 0; i < l.tokens; ++i) {
      CHECK(m.at(i, i));
      bool any = false;
      for (std::size_t j = 0; j < l.tokens; ++j) any = any || m.at(i, j);
      CHECK(any);
      for (std::size_t j = 0; j < l.tokens; ++j) {
        if (!m.at(i, j)) continue;
        for (std::size_t j2 = 0; j2 < l.tokens; ++j2) {
          if (token_to_block(l, j2) < token_to_block(l, j)) CHECK(m.at(i, j2));
        }
      }
    }
  }
}

TEST_CASE("make_block_order") {
  CHECK(make_block_order(1, BlockPattern::kRaster) == std::vector<std::size_t>{0});
  CHECK(make_block_order(1, BlockPattern::kFixedRandom, 9) ==
        std::vector<std::size_t>{0});

  std::vector<std::size_t> identity(16);
  for (std::size_t i = 0; i < 16; ++i) identity[i] = i;
  CHECK(make_block_order(16, BlockPattern::kRaster) == identity);

  const auto a = make_block_order(16, BlockPattern::kFixedRandom, 1234);
  const auto b = make_block_order(16, BlockPattern::kFixedRandom, 1234);
  CHECK(a == b);
  std::vector<bool> seen(16, false);
  for (std::size_t v : a) {
    REQUIRE(v < 16);
    CHECK(!seen[v]);
    seen[v] = true;
  }
  const auto c = make_block_order(16, BlockPattern::kFixedRandom, 4321);
  CHECK(a != c);
}

TEST_CASE("layout validation") {
  CHECK_THROWS_AS(BlockLayout::create(5, 4, 1, 2, 1), ContractError);   // p | H
  CHECK_THROWS_AS(BlockLayout::create(4, 4, 1, 1, 3), ContractError);   // k | grid
  CHECK_THROWS_AS(BlockLayout::create(4, 4, 1, 1, 2, {0, 0, 1, 2}), ContractError);
  const BlockLayout l = BlockLayout::create(8, 4, 3, 2, 2);
  CHECK(l.tokens == 8);
  CHECK(l.blocks == 2);
  CHECK(l.blocks * l.block_tokens * l.block_tokens == l.tokens);
  CHECK(l.block_pixel_count() == 2 * 2 * 2 * 2 * 3);
}

TEST_CASE("ascii and pbm rendering") {
  const BlockLayout l = BlockLayout::create(2, 2, 1, 1, 1);
  const AttentionMask m = build_block_causal_mask(l);
  CHECK(mask_to_ascii(m) == "1000\n1100\n1110\n1111\n");
  CHECK(mask_to_pbm(m) ==
        "P1\n4 4\n1 0 0 0\n1 1 0 0\n1 1 1 0\n1 1 1 1\n");
}

TEST_CASE("block_token_list matches token_to_block and in-block raster order") {
  const auto order = make_block_order(4, BlockPattern::kFixedRandom, 3);
  const BlockLayout l = BlockLayout::create(4, 4, 1, 1, 2, order);
  for (std::size_t rank = 0; rank < l.blocks; ++rank) {
    const auto toks = block_token_list(l, rank);
    REQUIRE(toks.size() == 4);
    for (std::size_t t : toks) CHECK(token_to_block(l, t) == rank);
    // raster order inside the block
    CHECK(toks[0] + 1 == toks[1]);
    CHECK(toks[2] + 1 == toks[3]);
    CHECK(toks[0] + l.grid_w == toks[2]);
  }
}
