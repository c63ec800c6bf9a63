#include <doctest.h>

#include <cmath>

#include "xtra/gradcheck.hpp"
#include "xtra/graph.hpp"
#include "xtra/rng.hpp"
#include "xtra/tensor.hpp"

using namespace xtra;

TEST_CASE("matmul identity, hand product, annihilator") {
  TensorD id3 = TensorD::zeros({3, 3});
  for (int i = 0; i < 3; ++i) id3.data[i * 3 + i] = 1.0;
  TensorD m({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const TensorD r = matmul(id3, m);
  CHECK(r.data == m.data);

  TensorD a({2, 2}, {1, 2, 3, 4});
  TensorD b({2, 2}, {5, 6, 7, 8});
  const TensorD c = matmul(a, b);
  CHECK(c.data == std::vector<double>{19, 22, 43, 50});

  TensorD z = TensorD::zeros({2, 3});
  Rng rng(7);
  TensorD any = uniform_tensor<double>({3, 4}, -1, 1, rng);
  const TensorD zr = matmul(z, any);
  CHECK(zr.shape == Shape{2, 4});
  for (double v : zr.data) CHECK(v == 0.0);
}

TEST_CASE("matmul shape error names both shapes") {
  TensorD a = TensorD::zeros({2, 3});
  TensorD b = TensorD::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("masked softmax basics") {
  AttentionMask one(1, 4);
  one.set(0, 2, true);
  TensorD logits = TensorD::zeros({1, 4});
  const TensorD r = masked_softmax(logits, one);
  CHECK(r.data == std::vector<double>{0, 0, 1, 0});

  const TensorD u = masked_softmax(TensorD::zeros({1, 4}), full_mask(1, 4));
  for (double v : u.data) CHECK(v == doctest::Approx(0.25));

  TensorD two({1, 2}, {std::log(3.0), std::log(1.0)});
  const TensorD t = masked_softmax(two, full_mask(1, 2));
  CHECK(t.data[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(t.data[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("masked softmax rejects a fully masked row") {
  AttentionMask mask(2, 2);
  mask.set(0, 0, true);
  CHECK_THROWS_AS(masked_softmax(TensorD::zeros({2, 2}), mask), MaskError);
}

TEST_CASE("masked softmax property: permitted rows sum to 1, masked are exact zeros") {
  Rng rng(123);
  for (int iter = 0; iter < 1000; ++iter) {
    const std::size_t q = 1 + rng.index(5);
    const std::size_t t = 1 + rng.index(6);
    AttentionMask mask(q, t);
    for (std::size_t i = 0; i < q; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < t; ++j) {
        const bool allow = rng.uniform01() < 0.6;
        mask.set(i, j, allow);
        any = any || allow;
      }
      if (!any) mask.set(i, rng.index(t), true);
    }
    const TensorD logits = uniform_tensor<double>({q, t}, -30, 30, rng);
    const TensorD out = masked_softmax(logits, mask);
    for (std::size_t i = 0; i < q; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < t; ++j) {
        if (mask.at(i, j)) {
          sum += out.data[i * t + j];
        } else {
          CHECK(out.data[i * t + j] == 0.0);
        }
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("layer norm basics") {
  TensorD gamma = TensorD::full({4}, 1.0);
  TensorD beta = TensorD::zeros({4});
  const TensorD c = layer_norm(TensorD::full({1, 4}, 3.5), gamma, beta);
  for (double v : c.data) CHECK(v == 0.0);

  TensorD row({1, 2}, {1.0, -1.0});
  const TensorD r = layer_norm(row, TensorD::full({2}, 1.0), TensorD::zeros({2}),
                               1e-12);
  CHECK(r.data[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.data[1] == doctest::Approx(-1.0).epsilon(1e-9));

  Rng rng(3);
  const TensorD x = uniform_tensor<double>({3, 5}, -2, 2, rng);
  const TensorD k = layer_norm(x, TensorD::zeros({5}), TensorD::full({5}, 7.25));
  for (double v : k.data) CHECK(v == 7.25);
}

TEST_CASE("gelu values") {
  const TensorD z = gelu(TensorD::scalar(0.0));
  CHECK(z.data[0] == 0.0);
  const TensorD big = gelu(TensorD::scalar(10.0));
  CHECK(big.data[0] == doctest::Approx(10.0).epsilon(1e-5));
  const TensorD one = gelu(TensorD::scalar(1.0));
  CHECK(one.data[0] == doctest::Approx(0.8412).epsilon(1.5e-3));
}

TEST_CASE("backward: linear form and quadratic") {
  GraphD g;
  Rng rng(11);
  TensorD xval = uniform_tensor<double>({3, 4}, -1, 1, rng);
  auto w = g.param("w", uniform_tensor<double>({3, 4}, -1, 1, rng));
  auto x = g.input(xval);
  auto loss = g.sum_all(g.mul(w, x));
  auto grads = g.backward(loss);
  CHECK(grads.at("w").data == xval.data);

  GraphD g2;
  TensorD wval = uniform_tensor<double>({5}, -2, 2, rng);
  auto w2 = g2.param("w", wval);
  auto loss2 = g2.sum_all(g2.mul(w2, w2));
  auto grads2 = g2.backward(loss2);
  for (std::size_t i = 0; i < wval.numel(); ++i) {
    CHECK(grads2.at("w").data[i] == doctest::Approx(2 * wval.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward rejects non-scalar loss") {
  GraphD g;
  auto w = g.param("w", TensorD::zeros({2, 2}));
  auto y = g.scale(w, 2.0);
  CHECK_THROWS_AS(g.backward(y), ContractError);
}

TEST_CASE("backward: unused leaves get zero gradients") {
  GraphD g;
  auto used = g.param("used", TensorD::full({3}, 1.0));
  g.param("unused", TensorD::full({2}, 4.0));
  auto loss = g.sum_all(used);
  auto grads = g.backward(loss);
  CHECK(grads.at("unused").shape == Shape{2});
  for (double v : grads.at("unused").data) CHECK(v == 0.0);
  for (double v : grads.at("used").data) CHECK(v == 1.0);
}

namespace {

// A small net touching every op kind used by the model.
GraphD::Id composed_net(GraphD& g, Rng& rng) {
  const std::size_t B = 2, S = 4, D = 6, H = 2;
  auto x = g.input(uniform_tensor<double>({B, S, D}, -1, 1, rng));
  auto w1 = g.param("w1", uniform_tensor<double>({D, D}, -0.5, 0.5, rng));
  auto b1 = g.param("b1", uniform_tensor<double>({D}, -0.1, 0.1, rng));
  auto gamma = g.param("gamma", uniform_tensor<double>({D}, 0.5, 1.5, rng));
  auto beta = g.param("beta", uniform_tensor<double>({D}, -0.2, 0.2, rng));
  auto pos = g.param("pos", uniform_tensor<double>({S, D}, -0.3, 0.3, rng));

  auto h = g.add_broadcast(g.matmul(x, w1), b1);
  h = g.add_broadcast(h, pos);
  h = g.layer_norm_op(h, gamma, beta);
  auto q = g.swap_axes12(g.reshape(h, {B, S, H, D / H}));
  auto scores = g.scale(g.matmul(q, g.transpose_last2(q)), 0.7);
  AttentionMask mask(S, S);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j <= i; ++j) mask.set(i, j, true);
  }
  auto probs = g.masked_softmax_op(scores,
                                   std::make_shared<const AttentionMask>(mask));
  auto ctx = g.reshape(g.swap_axes12(g.matmul(probs, q)), {B, S, D});
  ctx = g.gelu_op(ctx);
  auto picked = g.gather_axis1(ctx, {0, 2, 2});
  auto scaled = g.row_scale(picked, g.input(TensorD({B}, {0.5, 1.5})));
  auto diff = g.add(scaled, g.scale(g.input(uniform_tensor<double>({B, 3, D}, -1, 1, rng)), -1.0));
  return g.sum_all(g.mul(diff, diff));
}

}  // namespace

TEST_CASE("backward matches finite differences on a composed net") {
  GraphD g;
  Rng rng(2024);
  auto loss = composed_net(g, rng);
  const auto report = check_gradients(g, loss, 1e-5);
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("check_gradients passes a linear layer at 1e-6") {
  GraphD g;
  Rng rng(5);
  auto w = g.param("w", uniform_tensor<double>({4, 3}, -1, 1, rng));
  auto b = g.param("b", uniform_tensor<double>({3}, -1, 1, rng));
  auto x = g.input(uniform_tensor<double>({2, 4}, -1, 1, rng));
  auto y = g.add_broadcast(g.matmul(x, w), b);
  auto loss = g.sum_all(g.mul(y, y));
  const auto report = check_gradients(g, loss, 1e-6);
  CHECK(report.pass);
}

TEST_CASE("a corrupted gradient is reported as a failure") {
  GraphD g;
  Rng rng(6);
  auto w = g.param("w", uniform_tensor<double>({3}, -1, 1, rng));
  auto loss = g.sum_all(g.mul(w, w));
  auto grads = g.backward(loss);
  grads.at("w").data[1] = -grads.at("w").data[1];
  const auto report = compare_gradients(g, loss, grads, 1e-5);
  CHECK(!report.pass);
  REQUIRE(report.failures.size() == 1);
  CHECK(report.failures[0].find("w") != std::string::npos);
}

TEST_CASE("check_gradients enforces the parameter-count guard") {
  GraphD g;
  auto w = g.param("w", TensorD::zeros({50001}));
  auto loss = g.sum_all(w);
  CHECK_THROWS_AS(check_gradients(g, loss, 1e-5), ContractError);
}

TEST_CASE("cross entropy gradient and value") {
  GraphD g;
  TensorD logits({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
  auto l = g.param("logits", logits);
  auto loss = g.cross_entropy(l, {1, 2});
  // manual: mean over batch of logsumexp - logit[label]
  double expect = 0.0;
  for (int b = 0; b < 2; ++b) {
    double lse = 0;
    for (int c = 0; c < 3; ++c) lse += std::exp(logits.data[b * 3 + c]);
    lse = std::log(lse);
    expect += lse - logits.data[b * 3 + (b == 0 ? 1 : 2)];
  }
  expect /= 2.0;
  CHECK(g.value(loss).data[0] == doctest::Approx(expect).epsilon(1e-12));
  const auto report = check_gradients(g, loss, 1e-7);
  CHECK(report.pass);
}

TEST_CASE("operations are deterministic: identical inputs, identical bits") {
  auto build = [] {
    GraphD g;
    Rng rng(99);
    auto loss = composed_net(g, rng);
    return g.value(loss).data[0];
  };
  const double a = build();
  const double b = build();
  CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}
