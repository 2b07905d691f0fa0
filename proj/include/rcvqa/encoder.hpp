#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcvqa/ops.hpp"
#include "rcvqa/params.hpp"

namespace rcvqa {

struct EncoderConfig {
  std::size_t d = 32;
  std::size_t heads = 4;
  std::size_t conv_layers = 4;
  std::size_t kernel = 7;
  std::size_t blocks = 1;
  std::size_t ff_hidden = 32;

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0) {
      throw ConfigError("model width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
    }
    if (kernel % 2 == 0) throw ConfigError("convolution kernel width must be odd, got " + std::to_string(kernel));
    if (d % 2 != 0) throw ConfigError("positional encoding needs an even model width, got " + std::to_string(d));
    if (blocks == 0 || ff_hidden == 0) throw ConfigError("encoder needs at least one block and a feed-forward width");
  }
};

inline void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"d", c.d}, {"heads", c.heads}, {"conv_layers", c.conv_layers},
       {"kernel", c.kernel}, {"blocks", c.blocks}, {"ff_hidden", c.ff_hidden}};
}

inline void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.d = j.value("d", c.d);
  c.heads = j.value("heads", c.heads);
  c.conv_layers = j.value("conv_layers", c.conv_layers);
  c.kernel = j.value("kernel", c.kernel);
  c.blocks = j.value("blocks", c.blocks);
  c.ff_hidden = j.value("ff_hidden", c.ff_hidden);
}

template <class T>
struct LayerNormParams {
  Tensor<T> gain, bias;
};

template <class T>
struct SeparableConvParams {
  Tensor<T> depthwise;  // kernel x d
  Tensor<T> pointwise;  // d x d
  Tensor<T> bias;       // d
};

template <class T>
struct AttentionParams {
  Tensor<T> wq, wk, wv, wo;  // d x d each
};

template <class T>
struct EncoderBlockParams {
  std::vector<SeparableConvParams<T>> convs;
  std::vector<LayerNormParams<T>> conv_norms;
  AttentionParams<T> attention;
  LayerNormParams<T> attention_norm;
  Tensor<T> ff_w1, ff_b1, ff_w2, ff_b2;
  LayerNormParams<T> ff_norm;
};

template <class T>
struct EncoderParams {
  EncoderConfig config;
  std::vector<EncoderBlockParams<T>> blocks;
};

template <class T>
LayerNormParams<T> make_layer_norm(ParameterStore<T>& store, const std::string& prefix, std::size_t d) {
  return {store.add(prefix + ".gain", constant<T>({d}, T(1))), store.add(prefix + ".bias", constant<T>({d}, T(0)))};
}

template <class T>
EncoderParams<T> make_encoder(ParameterStore<T>& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d;
  EncoderParams<T> p{cfg, {}};
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string bp = prefix + ".block" + std::to_string(b);
    EncoderBlockParams<T> block;
    for (std::size_t c = 0; c < cfg.conv_layers; ++c) {
      const std::string cp = bp + ".conv" + std::to_string(c);
      block.conv_norms.push_back(make_layer_norm(store, cp + ".norm", d));
      block.convs.push_back({store.add(cp + ".depthwise", glorot<T>({cfg.kernel, d}, cfg.kernel, cfg.kernel, rng)),
                             store.add(cp + ".pointwise", glorot<T>({d, d}, d, d, rng)),
                             store.add(cp + ".bias", constant<T>({d}, T(0)))});
    }
    block.attention_norm = make_layer_norm(store, bp + ".attention.norm", d);
    block.attention.wq = store.add(bp + ".attention.wq", glorot<T>({d, d}, d, d, rng));
    block.attention.wk = store.add(bp + ".attention.wk", glorot<T>({d, d}, d, d, rng));
    block.attention.wv = store.add(bp + ".attention.wv", glorot<T>({d, d}, d, d, rng));
    block.attention.wo = store.add(bp + ".attention.wo", glorot<T>({d, d}, d, d, rng));
    block.ff_norm = make_layer_norm(store, bp + ".ff.norm", d);
    block.ff_w1 = store.add(bp + ".ff.w1", glorot<T>({d, cfg.ff_hidden}, d, cfg.ff_hidden, rng));
    block.ff_b1 = store.add(bp + ".ff.b1", constant<T>({cfg.ff_hidden}, T(0)));
    block.ff_w2 = store.add(bp + ".ff.w2", glorot<T>({cfg.ff_hidden, d}, cfg.ff_hidden, d, rng));
    block.ff_b2 = store.add(bp + ".ff.b2", constant<T>({d}, T(0)));
    p.blocks.push_back(std::move(block));
  }
  return p;
}

// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same angle).
template <class T>
Tensor<T> positional_encoding(std::size_t n, std::size_t d) {
  if (d % 2 != 0) throw ConfigError("positional encoding needs an even width, got " + std::to_string(d));
  std::vector<T> v(n * d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      v[pos * d + 2 * i] = static_cast<T>(std::sin(angle));
      v[pos * d + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return Tensor<T>({n, d}, std::move(v));
}

// Depthwise convolution, 1x1 pointwise mix, bias, relu. Masked rows are
// zeroed on the way in and out so padding never leaks into neighbors.
template <class T>
Tensor<T> depthwise_separable_conv(const Tensor<T>& x, const Mask& mask, const SeparableConvParams<T>& p) {
  Tensor<T> h = depthwise_conv1d(mask_rows(x, mask), p.depthwise);
  return mask_rows(relu(linear(h, p.pointwise, &p.bias)), mask);
}

// Scaled dot-product attention per head of width d/heads; masked key
// positions are excluded from every softmax.
template <class T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const Mask& mask, const AttentionParams<T>& p,
                                    std::size_t heads) {
  if (x.rank() != 2) throw DimensionError("attention input must be a matrix, got " + shape_str(x.shape()));
  const std::size_t d = x.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t width = d / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(width));
  Tensor<T> q = matmul(x, p.wq), k = matmul(x, p.wk), v = matmul(x, p.wv);
  std::vector<Tensor<T>> outputs;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor<T> qh = narrow(q, 1, h * width, width);
    Tensor<T> kh = narrow(k, 1, h * width, width);
    Tensor<T> vh = narrow(v, 1, h * width, width);
    Tensor<T> scores = scale(matmul(qh, transpose(kh)), scale_factor);
    outputs.push_back(matmul(softmax_masked(scores, mask), vh));
  }
  return matmul(concat(outputs, 1), p.wo);
}

template <class T>
Tensor<T> feed_forward(const Tensor<T>& x, const EncoderBlockParams<T>& b) {
  return linear(relu(linear(x, b.ff_w1, &b.ff_b1)), b.ff_w2, &b.ff_b2);
}

// x + PE, then per block: conv_layers x [x + conv(LN(x))],
// x + attention(LN(x)), x + ff(LN(x)).
template <class T>
Tensor<T> encoder_forward(const Tensor<T>& input, const Mask& mask, const EncoderParams<T>& params) {
  const auto& cfg = params.config;
  if (input.rank() != 2 || input.dim(1) != cfg.d) {
    throw DimensionError("encoder expects n x " + std::to_string(cfg.d) + " input, got " + shape_str(input.shape()));
  }
  Tensor<T> x = add(input, positional_encoding<T>(input.dim(0), cfg.d));
  for (const auto& block : params.blocks) {
    for (std::size_t c = 0; c < block.convs.size(); ++c) {
      const auto& norm = block.conv_norms[c];
      x = add(x, depthwise_separable_conv(layer_norm(x, norm.gain, norm.bias), mask, block.convs[c]));
    }
    x = add(x, multi_head_self_attention(layer_norm(x, block.attention_norm.gain, block.attention_norm.bias), mask,
                                         block.attention, cfg.heads));
    x = add(x, feed_forward(layer_norm(x, block.ff_norm.gain, block.ff_norm.bias), block));
  }
  return x;
}

}  // namespace rcvqa
