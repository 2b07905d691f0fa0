#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_support.hpp"

using namespace rcvqa;
using rcvqa::testing::random_tensor;
using rcvqa::testing::weighted_sum;

namespace {

std::vector<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * m + j] += a.at(i, p) * b.at(p, j);
  return out;
}

std::vector<double> naive_depthwise(const Tensor<double>& x, const Tensor<double>& f) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.dim(0));
  const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(f.dim(0));
  const std::size_t d = x.dim(1);
  std::vector<double> out(x.size(), 0.0);
  for (std::ptrdiff_t t = 0; t < n; ++t)
    for (std::size_t c = 0; c < d; ++c)
      for (std::ptrdiff_t j = -k / 2; j <= k / 2; ++j) {
        if (t + j < 0 || t + j >= n) continue;
        out[static_cast<std::size_t>(t) * d + c] +=
            f.at(static_cast<std::size_t>(j + k / 2), c) * x.at(static_cast<std::size_t>(t + j), c);
      }
  return out;
}

}  // namespace

TEST(TensorCore, BroadcastAddsTrailingVector) {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b({3}, {10, 20, 30});
  auto y = add(a, b);
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
  EXPECT_EQ(y.values(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
}

TEST(TensorCore, BroadcastStretchesSizeOneAxis) {
  Tensor<double> a({2, 1}, {1, 2});
  Tensor<double> b({1, 3}, {10, 20, 30});
  EXPECT_EQ(mul(a, b).values(), (std::vector<double>{10, 20, 30, 20, 40, 60}));
}

TEST(TensorCore, BroadcastRejectsMismatch) {
  Tensor<double> a({2, 3}), b({2});
  EXPECT_THROW(add(a, b), DimensionError);
}

TEST(TensorCore, MatmulShapeMismatchRaises) {
  Tensor<double> a({2, 3}), b({2, 3});
  EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(TensorCore, MatmulMatchesNaiveOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(6), k = 1 + rng.below(6), m = 1 + rng.below(6);
    auto a = random_tensor({n, k}, rng), b = random_tensor({k, m}, rng);
    const auto expected = naive_matmul(a, b);
    const auto got = matmul(a, b).values();
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], expected[i], 1e-12);
  }
}

TEST(TensorCore, DepthwiseConvMatchesNaiveOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(9), d = 1 + rng.below(4), k = 1 + 2 * rng.below(4);
    auto x = random_tensor({n, d}, rng), f = random_tensor({k, d}, rng);
    const auto expected = naive_depthwise(x, f);
    const auto got = depthwise_conv1d(x, f).values();
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], expected[i], 1e-12);
  }
}

TEST(TensorCore, DepthwiseConvRejectsEvenKernel) {
  Tensor<double> x({4, 2}), f({4, 2});
  EXPECT_THROW(depthwise_conv1d(x, f), ConfigError);
}

TEST(TensorCore, SoftmaxOfLn2AndZero) {
  Tensor<double> x({2}, {std::log(2.0), 0.0});
  auto p = softmax_masked(x, Mask::all(2));
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-12);
}

TEST(TensorCore, SoftmaxMaskedPositionsAreExactlyZero) {
  Tensor<double> x({4}, {1.0, 5.0, -2.0, 3.0});
  auto p = softmax_masked(x, Mask({4}, std::vector<std::uint8_t>{1, 0, 1, 0}));
  EXPECT_EQ(p[1], 0.0);
  EXPECT_EQ(p[3], 0.0);
  EXPECT_NEAR(p[0] + p[2], 1.0, 1e-12);
}

TEST(TensorCore, SoftmaxIsStableForLargeLogits) {
  Tensor<double> x({3}, {1000.0, 1000.0, -1000.0});
  auto p = softmax_masked(x, Mask::all(3));
  EXPECT_NEAR(p[0], 0.5, 1e-12);
  EXPECT_TRUE(std::isfinite(p[2]));
}

TEST(TensorCore, SoftmaxFullyMaskedRowRaises) {
  Tensor<double> x({2, 2}, {1, 2, 3, 4});
  Mask m({2, 2}, std::vector<std::uint8_t>{1, 1, 0, 0});
  EXPECT_THROW(softmax_masked(x, m), InvalidMaskError);
}

TEST(TensorCore, LogSoftmaxAgreesWithSoftmax) {
  Rng rng(3);
  auto x = random_tensor({3, 5}, rng, -4, 4);
  Mask m({5}, std::vector<std::uint8_t>{1, 1, 0, 1, 1});
  auto p = softmax_masked(x, m);
  auto lp = log_softmax_masked(x, m);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!m[i % 5]) continue;
    EXPECT_NEAR(std::exp(lp[i]), p[i], 1e-12);
  }
}

TEST(TensorCore, LayerNormOfPlusMinusOne) {
  Tensor<double> x({2}, {1.0, -1.0});
  auto y = layer_norm(x, Tensor<double>({2}, 1.0), Tensor<double>({2}, 0.0));
  // 1 / sqrt(1 + 1e-6)
  EXPECT_NEAR(y[0], 0.9999995, 1e-9);
  EXPECT_NEAR(y[1], -0.9999995, 1e-9);
}

TEST(TensorCore, LayerNormConstantRowGivesBias) {
  Tensor<double> x({3}, {2.0, 2.0, 2.0});
  auto y = layer_norm(x, Tensor<double>({3}, 5.0), Tensor<double>({3}, 0.25));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(y[i], 0.25);
}

TEST(TensorCore, LayerNormRowsHaveZeroMeanUnitVariance) {
  Rng rng(8);
  auto x = random_tensor({6, 16}, rng, -3, 3);
  auto y = layer_norm(x, Tensor<double>({16}, 1.0), Tensor<double>({16}, 0.0));
  for (std::size_t r = 0; r < 6; ++r) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 16; ++j) mu += y.at(r, j) / 16;
    for (std::size_t j = 0; j < 16; ++j) var += (y.at(r, j) - mu) * (y.at(r, j) - mu) / 16;
    EXPECT_NEAR(mu, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(TensorCore, DropoutIsIdentityAtInference) {
  Rng rng(1);
  auto x = random_tensor({50}, rng);
  auto y = dropout(x, 0.5, false, rng);
  EXPECT_EQ(y.values(), x.values());
}

TEST(TensorCore, DropoutPreservesExpectation) {
  Rng rng(2);
  Tensor<double> x({100000}, 1.0);
  auto y = dropout(x, 0.5, true, rng);
  const double m = std::accumulate(y.values().begin(), y.values().end(), 0.0) / 1e5;
  EXPECT_GE(m, 0.98);
  EXPECT_LE(m, 1.02);
  for (double v : y.values()) EXPECT_TRUE(v == 0.0 || v == 2.0);
}

TEST(TensorCore, DropoutRejectsProbabilityOne) {
  Rng rng(0);
  EXPECT_THROW(dropout(Tensor<double>({3}), 1.0, true, rng), ConfigError);
}

TEST(TensorCore, CharMaxPool) {
  // chars: 0 pad, 1 -> [1,5], 2 -> [3,2]
  Tensor<double> table({3, 2}, {0, 0, 1, 5, 3, 2});
  std::vector<std::size_t> ids{1, 2, 0};
  auto y = char_max_pool(table, std::span<const std::size_t>(ids), 3);
  EXPECT_EQ(y.values(), (std::vector<double>{3, 5}));
}

TEST(TensorCore, CharMaxPoolAllPadIsZero) {
  Tensor<double> table({2, 2}, {0, 0, -4, -7});
  std::vector<std::size_t> ids{0, 0};
  auto y = char_max_pool(table, std::span<const std::size_t>(ids), 2);
  EXPECT_EQ(y.values(), (std::vector<double>{0, 0}));
}

TEST(TensorCore, GatherRowsOutOfRangeRaises) {
  Tensor<double> table({3, 2});
  std::vector<std::size_t> ids{3};
  EXPECT_THROW(gather_rows(table, std::span<const std::size_t>(ids)), IndexError);
}

TEST(TensorCore, GatherRowsSkipsFrozenRows) {
  Tensor<double> table({3, 2}, 1.0, true);
  std::vector<std::size_t> ids{0, 1, 2, 1};
  backward(sum(gather_rows(table, std::span<const std::size_t>(ids), {0, 1, 0})));
  EXPECT_EQ(std::vector<double>(table.grad().begin(), table.grad().end()), (std::vector<double>{0, 0, 2, 2, 0, 0}));
}

TEST(TensorCore, BackwardNeedsScalar) {
  Tensor<double> x({2}, 1.0, true);
  EXPECT_THROW(backward(x), ContractError);
}

TEST(TensorCore, BackwardNeedsDifferentiableInput) {
  Tensor<double> x({1}, 1.0, false);
  EXPECT_THROW(backward(sum(x)), ContractError);
}

TEST(TensorCore, LeafGradientsAccumulateAcrossCalls) {
  Tensor<double> x({2}, {1.0, 2.0}, true);
  backward(sum(mul(x, x)));
  backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
}

TEST(TensorCore, SharedSubexpressionGetsBothPaths) {
  Tensor<double> x({1}, {3.0}, true);
  auto y = mul(x, x);
  backward(add(y, y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(TensorCore, NarrowConcatRoundTrip) {
  Rng rng(5);
  auto x = random_tensor({3, 7}, rng);
  auto y = concat<double>({narrow(x, 1, 0, 2), narrow(x, 1, 2, 5)}, 1);
  EXPECT_EQ(y.values(), x.values());
  EXPECT_THROW(narrow(x, 1, 5, 3), DimensionError);
}

TEST(GradCheck, SumOfIntegersHasExactGradient) {
  Tensor<double> x({4}, {1, -2, 3, 0});
  // Integers and a power-of-two step make the differences exact.
  auto r = grad_check([](const Tensor<double>& t) { return sum(t); }, x, std::ldexp(1.0, -16));
  EXPECT_EQ(r.max_abs_error, 0.0);
}

TEST(GradCheck, DetectsWrongGradient) {
  Tensor<double> x({3}, {0.3, -0.7, 1.1});
  // A forward of x^2 with the derivative of x^3.
  auto bad = [](const Tensor<double>& t) {
    std::vector<double> v;
    for (double e : t.values()) v.push_back(e * e);
    return sum(detail::make_result<double>(t.shape(), v, {&t}, [](Node<double>& self) {
      Node<double>& in = *self.inputs[0];
      for (std::size_t i = 0; i < in.grad.size(); ++i) in.grad[i] += 3 * in.value[i] * in.value[i] * self.grad[i];
    }));
  };
  EXPECT_FALSE(grad_check(bad, x).passed);
}

TEST(GradCheck, NonFiniteValueRaises) {
  Tensor<double> x({1}, {-1.0});
  auto f = [](const Tensor<double>& t) {
    return sum(detail::make_result<double>(t.shape(), {std::nan("")}, {&t}, [](Node<double>&) {}));
  };
  EXPECT_THROW(grad_check(f, x), OracleError);
}

// Every differentiable op, checked over several seeds and shapes.
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, MatchFiniteDifferences) {
  const int seed = GetParam();
  Rng rng(static_cast<std::uint64_t>(seed) * 7919 + 1);
  const std::size_t n = 2 + rng.below(4), d = 2 + rng.below(4), m = 1 + rng.below(4);
  auto x = random_tensor({n, d}, rng, -1, 1, true);
  auto w = random_tensor({d, m}, rng, -1, 1, true);
  auto v = random_tensor({d}, rng, -1, 1, true);
  auto pos = random_tensor({n, d}, rng, 0.5, 2.0, true);
  const Mask mask = rcvqa::testing::random_prefix_mask(n, rng);
  Mask last({d}, false);
  for (std::size_t j = 0; j < d; ++j) last.on[j] = rng.bernoulli(0.7) ? 1 : 0;
  last.on[rng.below(d)] = 1;

  struct Case {
    const char* name;
    std::function<Tensor<double>()> f;
    std::vector<Tensor<double>> leaves;
  };
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(rng.below(n));
  std::vector<std::size_t> char_ids;
  for (std::size_t i = 0; i < 3 * 2; ++i) char_ids.push_back(rng.below(n));
  auto filt = random_tensor({3, d}, rng, -1, 1, true);

  std::vector<Case> cases = {
      {"add", [&] { return weighted_sum(add(x, v)); }, {x, v}},
      {"sub", [&] { return weighted_sum(sub(x, v)); }, {x, v}},
      {"mul", [&] { return weighted_sum(mul(x, v)); }, {x, v}},
      {"scale", [&] { return weighted_sum(scale(x, 1.7)); }, {x}},
      {"add_scalar", [&] { return weighted_sum(add_scalar(x, 0.3)); }, {x}},
      {"relu", [&] { return weighted_sum(relu(x)); }, {x}},
      {"sigmoid", [&] { return weighted_sum(sigmoid(x)); }, {x}},
      {"exp", [&] { return weighted_sum(exp(x)); }, {x}},
      {"log", [&] { return weighted_sum(log(pos)); }, {pos}},
      {"softplus", [&] { return weighted_sum(softplus(x)); }, {x}},
      {"mean", [&] { return mean(mul(x, x)); }, {x}},
      {"pick", [&] { return pick(mul(x, x), n * d - 1); }, {x}},
      {"matmul", [&] { return weighted_sum(matmul(x, w)); }, {x, w}},
      {"transpose", [&] { return weighted_sum(transpose(x)); }, {x}},
      {"linear", [&] { return weighted_sum(linear(x, w)); }, {x, w}},
      {"reshape", [&] { return weighted_sum(reshape(mul(x, x), {n * d})); }, {x}},
      {"concat", [&] { return weighted_sum(concat<double>({x, mul(x, x)}, 1)); }, {x}},
      {"narrow", [&] { return weighted_sum(narrow(mul(x, x), 1, 1, d - 1)); }, {x}},
      {"gather_rows", [&] { return weighted_sum(gather_rows(x, std::span<const std::size_t>(ids))); }, {x}},
      {"char_max_pool", [&] { return weighted_sum(char_max_pool(x, std::span<const std::size_t>(char_ids), 3)); }, {x}},
      {"mask_rows", [&] { return weighted_sum(mask_rows(x, mask)); }, {x}},
      {"masked_mean_rows", [&] { return weighted_sum(masked_mean_rows(x, mask)); }, {x}},
      {"softmax_masked", [&] { return weighted_sum(softmax_masked(x, last)); }, {x}},
      {"log_softmax_masked", [&] { return weighted_sum(masked_fill(log_softmax_masked(x, last), Mask(x.shape(), [&] {
                                                          std::vector<std::uint8_t> on;
                                                          for (std::size_t i = 0; i < n * d; ++i) on.push_back(last.on[i % d]);
                                                          return on;
                                                        }()), 0.0)); },
       {x}},
      {"layer_norm", [&] { return weighted_sum(layer_norm(x, v, mul(v, v))); }, {x, v}},
      {"dropout", [&] { Rng r(5); return weighted_sum(dropout(x, 0.3, true, r)); }, {x}},
      {"masked_fill", [&] { return weighted_sum(masked_fill(x, Mask(x.shape(), true), 0.0)); }, {x}},
      {"depthwise_conv1d", [&] { return weighted_sum(depthwise_conv1d(x, filt)); }, {x, filt}},
  };
  for (auto& c : cases) {
    auto r = grad_check(c.f, c.leaves);
    EXPECT_TRUE(r.passed) << c.name << " seed " << seed << " rel " << r.max_rel_error;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradients, ::testing::Range(0, 20));
