#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace rcvqa;
using rcvqa::testing::random_tensor;
using rcvqa::testing::weighted_sum;

namespace {

EncoderParams<double> random_encoder(ParameterStore<double>& store, EncoderConfig cfg, Rng& rng) {
  auto p = make_encoder(store, "enc", cfg, rng);
  // Non-trivial norms and biases so every parameter matters to the output.
  for (auto& [name, t] : store)
    if (t.rank() == 1)
      for (double& v : t.mutable_data()) v += rng.uniform(-0.3, 0.3);
  return p;
}

// Per-head attention computed with explicit loops.
std::vector<double> attention_oracle(const Tensor<double>& x, const Mask& mask, const AttentionParams<double>& p,
                                     std::size_t heads) {
  const std::size_t n = x.dim(0), d = x.dim(1), w = d / heads;
  auto proj = [&](const Tensor<double>& wm) {
    std::vector<double> out(n * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) out[i * d + j] += x.at(i, k) * wm.at(k, j);
    return out;
  };
  auto q = proj(p.wq), k = proj(p.wk), v = proj(p.wv);
  std::vector<double> concat(n * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> score(n, 0.0);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask[j]) continue;
        for (std::size_t c = 0; c < w; ++c) score[j] += q[i * d + h * w + c] * k[j * d + h * w + c];
        score[j] /= std::sqrt(static_cast<double>(w));
        mx = std::max(mx, score[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += mask[j] ? std::exp(score[j] - mx) : 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (!mask[j]) continue;
        const double a = std::exp(score[j] - mx) / z;
        for (std::size_t c = 0; c < w; ++c) concat[i * d + h * w + c] += a * v[j * d + h * w + c];
      }
    }
  }
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k2 = 0; k2 < d; ++k2) out[i * d + j] += concat[i * d + k2] * p.wo.at(k2, j);
  return out;
}

}  // namespace

TEST(PositionalEncoding, KnownValues) {
  auto pe = positional_encoding<double>(3, 4);
  EXPECT_EQ(pe.at(0, 0), 0.0);
  EXPECT_EQ(pe.at(0, 1), 1.0);
  EXPECT_EQ(pe.at(0, 2), 0.0);
  EXPECT_EQ(pe.at(0, 3), 1.0);
  EXPECT_NEAR(pe.at(1, 0), 0.841471, 1e-6);
  EXPECT_NEAR(pe.at(1, 2), std::sin(1.0 / 100.0), 1e-15);
  const auto wide = positional_encoding<double>(50, 8);
  for (double v : wide.values()) {
    EXPECT_LE(v, 1.0);
    EXPECT_GE(v, -1.0);
  }
}

TEST(PositionalEncoding, OddWidthRaises) { EXPECT_THROW(positional_encoding<double>(2, 3), ConfigError); }

TEST(SeparableConv, CenterSpikeAndIdentityGiveRelu) {
  Rng rng(1);
  const std::size_t n = 5, d = 4;
  std::vector<double> spike(3 * d, 0.0);
  for (std::size_t c = 0; c < d; ++c) spike[d + c] = 1.0;
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t c = 0; c < d; ++c) eye[c * d + c] = 1.0;
  SeparableConvParams<double> p{Tensor<double>({3, d}, spike), Tensor<double>({d, d}, eye), Tensor<double>({d}, 0.0)};
  auto x = random_tensor({n, d}, rng);
  auto y = depthwise_separable_conv(x, Mask::all(n), p);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], std::max(x[i], 0.0));
}

TEST(SeparableConv, ZeroFiltersGiveZero) {
  Rng rng(1);
  SeparableConvParams<double> p{Tensor<double>({3, 4}), Tensor<double>({4, 4}), Tensor<double>({4})};
  const auto y = depthwise_separable_conv(random_tensor({5, 4}, rng), Mask::all(5), p);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(SeparableConv, MatchesSlidingWindowOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(6), d = 1 + rng.below(4), k = 1 + 2 * rng.below(3);
    SeparableConvParams<double> p{random_tensor({k, d}, rng), random_tensor({d, d}, rng), random_tensor({d}, rng)};
    auto x = random_tensor({n, d}, rng);
    const Mask mask = rcvqa::testing::random_prefix_mask(n, rng);
    auto y = depthwise_separable_conv(x, mask, p);
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t o = 0; o < d; ++o) {
        double expected = 0.0;
        if (mask[t]) {
          double acc = p.bias[o];
          for (std::size_t c = 0; c < d; ++c) {
            double h = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(k / 2);
              if (s < 0 || s >= static_cast<std::ptrdiff_t>(n) || !mask[static_cast<std::size_t>(s)]) continue;
              h += p.depthwise.at(j, c) * x.at(static_cast<std::size_t>(s), c);
            }
            acc += h * p.pointwise.at(c, o);
          }
          expected = std::max(acc, 0.0);
        }
        ASSERT_NEAR(y.at(t, o), expected, 1e-12);
      }
    }
  }
}

TEST(SeparableConv, EvenKernelRaises) {
  ParameterStore<double> store;
  Rng rng(1);
  EXPECT_THROW(make_encoder(store, "e", EncoderConfig{8, 2, 1, 4, 1, 8}, rng), ConfigError);
}

TEST(SelfAttention, SinglePositionReturnsProjectedValue) {
  Rng rng(4);
  AttentionParams<double> p{random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), random_tensor({4, 4}, rng),
                            random_tensor({4, 4}, rng)};
  auto x = random_tensor({1, 4}, rng);
  auto y = multi_head_self_attention(x, Mask::all(1), p, 2);
  auto expected = matmul(matmul(x, p.wv), p.wo);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], expected[i], 1e-12);
}

TEST(SelfAttention, IdenticalPositionsGiveIdenticalRows) {
  Rng rng(4);
  AttentionParams<double> p{random_tensor({4, 4}, rng), random_tensor({4, 4}, rng), random_tensor({4, 4}, rng),
                            random_tensor({4, 4}, rng)};
  auto row = random_tensor({1, 4}, rng);
  auto y = multi_head_self_attention(concat<double>({row, row}, 0), Mask::all(2), p, 2);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y.at(0, j), y.at(1, j), 1e-14);
}

TEST(SelfAttention, MatchesPerHeadOracle) {
  Rng rng(30);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t heads = 1 + rng.below(3), d = heads * (1 + rng.below(3)), n = 1 + rng.below(5);
    AttentionParams<double> p{random_tensor({d, d}, rng), random_tensor({d, d}, rng), random_tensor({d, d}, rng),
                              random_tensor({d, d}, rng)};
    auto x = random_tensor({n, d}, rng);
    const Mask mask = rcvqa::testing::random_prefix_mask(n, rng);
    const auto expected = attention_oracle(x, mask, p, heads);
    const auto y = multi_head_self_attention(x, mask, p, heads);
    const auto& got = y.values();
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], expected[i], 1e-10);
  }
}

TEST(SelfAttention, IndivisibleWidthRaises) {
  Rng rng(1);
  AttentionParams<double> p{random_tensor({6, 6}, rng), random_tensor({6, 6}, rng), random_tensor({6, 6}, rng),
                            random_tensor({6, 6}, rng)};
  EXPECT_THROW(multi_head_self_attention(random_tensor({2, 6}, rng), Mask::all(2), p, 4), ConfigError);
}

TEST(Encoder, ZeroResidualBranchesGiveInputPlusPositions) {
  ParameterStore<double> store;
  Rng rng(2);
  auto p = make_encoder(store, "e", EncoderConfig{8, 2, 2, 3, 2, 8}, rng);
  for (auto& b : p.blocks) {
    for (auto& c : b.convs) std::fill(c.pointwise.mutable_data().begin(), c.pointwise.mutable_data().end(), 0.0);
    std::fill(b.attention.wo.mutable_data().begin(), b.attention.wo.mutable_data().end(), 0.0);
    std::fill(b.ff_w2.mutable_data().begin(), b.ff_w2.mutable_data().end(), 0.0);
  }
  auto x = random_tensor({5, 8}, rng);
  auto y = encoder_forward(x, Mask::all(5), p);
  auto pe = positional_encoding<double>(5, 8);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i] + pe[i], 1e-14);
}

TEST(Encoder, MaskedTailDoesNotInfluenceValidRows) {
  ParameterStore<double> store;
  Rng rng(3);
  auto p = random_encoder(store, EncoderConfig{8, 2, 2, 5, 2, 12}, rng);
  const std::size_t n = 7, valid = 4;
  auto x = random_tensor({n, 8}, rng);
  std::vector<double> junk = x.values();
  for (std::size_t i = valid * 8; i < junk.size(); ++i) junk[i] = rng.uniform(-50, 50);
  const Mask mask = Mask::prefix(n, valid);
  auto a = encoder_forward(x, mask, p);
  auto b = encoder_forward(Tensor<double>({n, 8}, junk), mask, p);
  auto c = encoder_forward(narrow(x, 0, 0, valid), Mask::all(valid), p);
  for (std::size_t i = 0; i < valid * 8; ++i) {
    EXPECT_NEAR(a[i], b[i], 1e-12);
    EXPECT_NEAR(a[i], c[i], 1e-12);
  }
}

TEST(Encoder, PreservesShape) {
  ParameterStore<double> store;
  Rng rng(3);
  auto p = make_encoder(store, "e", EncoderConfig{8, 4, 1, 3, 1, 8}, rng);
  for (std::size_t n : {1, 2, 9}) EXPECT_EQ(encoder_forward(random_tensor({n, 8}, rng), Mask::all(n), p).shape(), (Shape{n, 8}));
  EXPECT_THROW(encoder_forward(random_tensor({3, 6}, rng), Mask::all(3), p), DimensionError);
}

TEST(Encoder, EveryParameterReceivesGradient) {
  ParameterStore<double> store;
  Rng rng(8);
  auto p = random_encoder(store, EncoderConfig{8, 2, 2, 3, 2, 8}, rng);
  auto x = random_tensor({6, 8}, rng);
  backward(weighted_sum(encoder_forward(x, Mask::prefix(6, 5), p)));
  for (const auto& [name, t] : store) {
    bool any = false;
    for (double g : t.grad()) any = any || g != 0.0;
    EXPECT_TRUE(any) << name;
  }
}

TEST(Encoder, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < 20; ++seed) {
    ParameterStore<double> store;
    Rng rng(static_cast<std::uint64_t>(seed) + 500);
    const std::size_t n = 2 + rng.below(3);
    auto p = random_encoder(store, EncoderConfig{8, 2, 1 + rng.below(2), 3, 1, 8}, rng);
    auto x = random_tensor({n, 8}, rng, -1, 1, true);
    const Mask mask = rcvqa::testing::random_prefix_mask(n, rng);
    std::vector<Tensor<double>> leaves{x};
    for (const auto& [name, t] : store) leaves.push_back(t);
    auto r = grad_check([&] { return weighted_sum(encoder_forward(x, mask, p)); }, leaves);
    EXPECT_TRUE(r.passed) << "seed " << seed << " rel " << r.max_rel_error << " leaf " << r.worst_leaf;
  }
}
