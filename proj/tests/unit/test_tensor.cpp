#include <cmath>
#include <limits>

#include "doctest.h"
#include "hrt/tensor/grad_check.hpp"
#include "hrt/tensor/ops.hpp"
#include "test_util.hpp"

using namespace hrt;
using namespace hrt::tensor;
using hrt::testing::random_tensor;

namespace {
using Fn = std::function<Tensor<double>(const Tensor<double>&)>;

// Reduces any tensor to a scalar with non-uniform weights so that gradient
// errors cannot cancel out.
Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  auto w = random_tensor<double>(y.shape(), rng);
  return sum(mul(y, w));
}
}  // namespace

TEST_CASE("matmul identity and annihilation") {
  Tensor<float> eye({2, 2}, {1, 0, 0, 1});
  Tensor<float> m({2, 2}, {1, 2, 3, 4});
  auto r = matmul(eye, m);
  CHECK(std::vector<float>(r.values().begin(), r.values().end()) == std::vector<float>{1, 2, 3, 4});
  auto z = matmul(Tensor<float>({1, 2}, {1, 0}), Tensor<float>({2, 1}, {0, 5}));
  CHECK(z.shape() == Shape{1, 1});
  CHECK(z.item() == 0.0f);
}

TEST_CASE("matmul agrees with a brute-force triple loop") {
  Rng rng(7);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({4, 2}, rng);
  auto c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double ref = 0;
      for (std::size_t k = 0; k < 4; ++k) ref += a.values()[i * 4 + k] * b.values()[k * 2 + j];
      CHECK(c.values()[i * 2 + j] == doctest::Approx(ref).epsilon(1e-12));
    }
  }
  auto bt = matmul_bt(a, Tensor<double>(Shape{2, 4}, [&] {
                        std::vector<double> t(8);
                        for (std::size_t k = 0; k < 4; ++k)
                          for (std::size_t j = 0; j < 2; ++j) t[j * 4 + k] = b.values()[k * 2 + j];
                        return t;
                      }()));
  for (std::size_t i = 0; i < 6; ++i) CHECK(bt.values()[i] == doctest::Approx(c.values()[i]).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor<float> a({2, 3}, std::vector<float>(6, 1));
  Tensor<float> b({2, 3}, std::vector<float>(6, 1));
  try {
    matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  auto s = softmax_lastdim(Tensor<float>({2}, {0, 0}));
  CHECK(s.values()[0] == doctest::Approx(0.5));
  CHECK(s.values()[1] == doctest::Approx(0.5));

  auto big = softmax_lastdim(Tensor<float>({3}, {1000, 1000, 1000}));
  for (float v : big.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-6));

  // Reference evaluated in long double.
  long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L);
  long double z = e1 + e2 + e3;
  auto r = softmax_lastdim(Tensor<double>({3}, {1, 2, 3}));
  CHECK(r.values()[0] == doctest::Approx(static_cast<double>(e1 / z)).epsilon(1e-14));
  CHECK(r.values()[1] == doctest::Approx(static_cast<double>(e2 / z)).epsilon(1e-14));
  CHECK(r.values()[2] == doctest::Approx(static_cast<double>(e3 / z)).epsilon(1e-14));
}

TEST_CASE("softmax rows are non-negative and sum to one for finite inputs") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t cols = 1 + rng.uniform_int(40);
    auto x = random_tensor<float>({5, cols}, rng, 1.0 + 50.0 * rng.uniform());
    auto y = softmax_lastdim(x);
    for (std::size_t r = 0; r < 5; ++r) {
      double total = 0;
      for (std::size_t j = 0; j < cols; ++j) {
        CHECK(y.values()[r * cols + j] >= 0.0f);
        total += y.values()[r * cols + j];
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("grad_check closed forms") {
  Fn linear_fn = [](const Tensor<double>& x) { return sum(x); };
  Rng rng(3);
  auto x = random_tensor<double>({6}, rng);
  CHECK(grad_check<double>(linear_fn, x, 1e-5) < 1e-9);

  Tensor<double> p({2}, {1, 2});
  Fn square = [](const Tensor<double>& v) { return sum(mul(v, v)); };
  {
    Graph<double> g;
    GraphScope<double> scope(g);
    p.set_requires_grad(true);
    auto y = square(p);
    g.backward(y);
    CHECK(p.grad()[0] == doctest::Approx(2.0));
    CHECK(p.grad()[1] == doctest::Approx(4.0));
    p.zero_grad();
  }
  CHECK(grad_check<double>(square, p, 1e-5) < 1e-6);

  Fn vector_out = [](const Tensor<double>& v) { return v; };
  CHECK_THROWS_AS(grad_check<double>(vector_out, p, 1e-5), std::invalid_argument);
}

TEST_CASE("every differentiable op passes a 64-bit gradient check") {
  Rng rng(2024);
  const double eps = 1e-5;
  auto check = [&](const std::string& name, Fn f, Tensor<double> x) {
    const double err = grad_check<double>(f, x, eps);
    INFO(name << " error " << err);
    CHECK(err < 1e-4);
  };
  auto w = random_tensor<double>({4, 3}, rng);
  auto bias = random_tensor<double>({3}, rng);
  auto gamma = random_tensor<double>({4}, rng);
  auto beta = random_tensor<double>({4}, rng);
  auto other = random_tensor<double>({5, 4}, rng);
  auto x = random_tensor<double>({5, 4}, rng);

  check("matmul lhs", [&](const Tensor<double>& v) { return weighted_sum(matmul(v, w), 1); }, x.clone());
  check("matmul rhs", [&](const Tensor<double>& v) { return weighted_sum(matmul(x, v), 2); }, w.clone());
  check("matmul_bt", [&](const Tensor<double>& v) { return weighted_sum(matmul_bt(v, other), 3); }, x.clone());
  check("matmul_bt rhs", [&](const Tensor<double>& v) { return weighted_sum(matmul_bt(x, v), 4); }, other.clone());
  check("linear x", [&](const Tensor<double>& v) { return weighted_sum(linear(v, w, bias), 5); }, x.clone());
  check("linear w", [&](const Tensor<double>& v) { return weighted_sum(linear(x, v, bias), 6); }, w.clone());
  check("linear b", [&](const Tensor<double>& v) { return weighted_sum(linear(x, w, v), 7); }, bias.clone());
  check("add", [&](const Tensor<double>& v) { return weighted_sum(add(v, other), 8); }, x.clone());
  check("scale", [&](const Tensor<double>& v) { return weighted_sum(scale(v, 0.37), 9); }, x.clone());
  check("gelu", [&](const Tensor<double>& v) { return weighted_sum(gelu(v), 10); }, x.clone());
  check("softmax", [&](const Tensor<double>& v) { return weighted_sum(softmax_lastdim(v), 11); }, x.clone());
  check("log_softmax", [&](const Tensor<double>& v) { return weighted_sum(log_softmax_lastdim(v), 12); }, x.clone());
  check("layer_norm x", [&](const Tensor<double>& v) { return weighted_sum(layer_norm(v, gamma, beta), 13); },
        x.clone());
  check("layer_norm gain", [&](const Tensor<double>& v) { return weighted_sum(layer_norm(x, v, beta), 14); },
        gamma.clone());
  check("layer_norm bias", [&](const Tensor<double>& v) { return weighted_sum(layer_norm(x, gamma, v), 15); },
        beta.clone());
  std::vector<std::int32_t> ids{2, 0, 2, 4, 1};
  check("embedding", [&](const Tensor<double>& v) { return weighted_sum(embedding<double>(ids, v, 1.7), 16); },
        x.clone());
  check("concat", [&](const Tensor<double>& v) {
    std::vector<Tensor<double>> parts{other, v, v};
    return weighted_sum(concat_rows<double>(parts), 17);
  }, x.clone());
  check("slice", [&](const Tensor<double>& v) { return weighted_sum(slice_rows(v, 1, 4), 18); }, x.clone());
  std::vector<std::size_t> rows{4, 0, 0, 3};
  check("gather", [&](const Tensor<double>& v) { return weighted_sum(gather_rows<double>(v, rows), 19); },
        x.clone());
  std::vector<std::size_t> offs{0, 2}, lens{2, 3};
  check("segment_mean", [&](const Tensor<double>& v) { return weighted_sum(segment_mean<double>(v, offs, lens), 20); },
        x.clone());
  std::vector<std::int32_t> targets{1, kIgnoreIndex, 3, 0, kIgnoreIndex};
  check("cross_entropy", [&](const Tensor<double>& v) { return cross_entropy<double>(v, targets, 0.1); }, x.clone());

  AttentionLayout layout;
  layout.q_offset = {0, 2, 5};
  layout.q_len = {2, 3, 2};
  layout.k_offset = {0, 0, 3};
  layout.k_len = {3, 3, 3};
  auto q = random_tensor<double>({7, 4}, rng);
  auto k = random_tensor<double>({6, 4}, rng);
  auto v = random_tensor<double>({6, 4}, rng);
  check("attention q", [&](const Tensor<double>& t) { return weighted_sum(attention(t, k, v, layout, 2), 21); },
        q.clone());
  check("attention k", [&](const Tensor<double>& t) { return weighted_sum(attention(q, t, v, layout, 2), 22); },
        k.clone());
  check("attention v", [&](const Tensor<double>& t) { return weighted_sum(attention(q, k, t, layout, 2), 23); },
        v.clone());
  AttentionLayout causal;
  causal.q_offset = {0, 3};
  causal.q_len = {3, 2};
  causal.k_offset = {0, 3};
  causal.k_len = {3, 3};
  causal.causal = true;
  causal.key_blocked = {0, 0, 0, 0, 0, 1};
  check("causal attention", [&](const Tensor<double>& t) { return weighted_sum(attention(t, t, t, causal, 2), 24); },
        random_tensor<double>({6, 4}, rng));
}

TEST_CASE("cross-entropy ignores marked rows entirely") {
  Rng rng(5);
  auto logits = random_tensor<double>({3, 6}, rng, 1.0, true);
  std::vector<std::int32_t> targets{kIgnoreIndex, 2, kIgnoreIndex};
  std::vector<double> rows(3);
  Graph<double> g;
  {
    GraphScope<double> scope(g);
    auto loss = cross_entropy<double>(logits, targets, 0.1, rows);
    g.backward(loss);
    CHECK(loss.item() == doctest::Approx(rows[1]));
  }
  CHECK(rows[0] == 0.0);
  CHECK(rows[2] == 0.0);
  for (std::size_t j = 0; j < 6; ++j) {
    CHECK(logits.grad()[j] == 0.0);
    CHECK(logits.grad()[12 + j] == 0.0);
  }
  // Label smoothing: loss = (1-e) nll + e * mean(-log p).
  double lse = 0;
  for (std::size_t j = 0; j < 6; ++j) lse += std::exp(logits.values()[6 + j]);
  lse = std::log(lse);
  double mean_nll = 0;
  for (std::size_t j = 0; j < 6; ++j) mean_nll += lse - logits.values()[6 + j];
  mean_nll /= 6;
  CHECK(rows[1] == doctest::Approx(0.9 * (lse - logits.values()[8]) + 0.1 * mean_nll).epsilon(1e-12));
}

TEST_CASE("causal attention rows ignore later inputs") {
  Rng rng(9);
  auto x = random_tensor<float>({4, 8}, rng);
  AttentionLayout layout;
  layout.q_offset = {0};
  layout.q_len = {4};
  layout.k_offset = {0};
  layout.k_len = {4};
  layout.causal = true;
  auto before = attention(x, x, x, layout, 2);
  auto y = x.clone();
  for (std::size_t j = 0; j < 8; ++j) y.mutable_values()[3 * 8 + j] += 1.0f;
  auto after = attention(y, y, y, layout, 2);
  for (std::size_t i = 0; i < 3 * 8; ++i) CHECK(before.values()[i] == after.values()[i]);
}

TEST_CASE("backward without trainable inputs allocates nothing") {
  Rng rng(1);
  auto a = random_tensor<float>({3, 3}, rng);
  auto b = random_tensor<float>({3, 3}, rng);
  Graph<float> g;
  GraphScope<float> scope(g);
  auto loss = sum(matmul(a, b));
  CHECK(g.size() == 0);
  g.backward(loss);
  CHECK_FALSE(a.has_grad());
  CHECK_FALSE(b.has_grad());
  CHECK_FALSE(loss.has_grad());
}

TEST_CASE("gradients accumulate across backward passes until cleared") {
  Tensor<double> p({2}, {1, 2}, true);
  for (int i = 0; i < 2; ++i) {
    Graph<double> g;
    GraphScope<double> scope(g);
    g.backward(sum(scale(p, 3.0)));
  }
  CHECK(p.grad()[0] == 6.0);
  p.zero_grad();
  CHECK_FALSE(p.has_grad());
}

TEST_CASE("tensor shape invariants") {
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1, 2, 3}), ShapeError);
  Tensor<float> t({2, 3}, std::vector<float>(6, 0));
  CHECK(shape_size(t.shape()) == t.size());
  CHECK_THROWS_AS(slice_rows(t, 1, 3), ShapeError);
}
