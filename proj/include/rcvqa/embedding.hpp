#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rcvqa/ops.hpp"
#include "rcvqa/params.hpp"
#include "rcvqa/vocab.hpp"

namespace rcvqa {

// Symbol vectors plus a per-row trainable flag. Row 0 (padding) is zero
// and never trainable.
template <class T>
struct EmbeddingTable {
  Tensor<T> rows;
  std::vector<std::uint8_t> trainable;

  std::size_t size() const { return rows.dim(0); }
  std::size_t dim() const { return rows.dim(1); }
};

// Per-token [word vector, row-max of character vectors].
template <class T>
Tensor<T> embed_tokens(std::span<const std::size_t> word_ids, std::span<const std::size_t> char_ids,
                       std::size_t max_word_len, const EmbeddingTable<T>& words,
                       const EmbeddingTable<T>& chars) {
  if (char_ids.size() != word_ids.size() * max_word_len) {
    throw DimensionError("embed_tokens: " + std::to_string(char_ids.size()) + " char ids for " +
                         std::to_string(word_ids.size()) + " words of width " + std::to_string(max_word_len));
  }
  Tensor<T> xw = gather_rows(words.rows, word_ids, words.trainable);
  Tensor<T> xc = char_max_pool(chars.rows, char_ids, max_word_len, Vocabulary::kPad, chars.trainable);
  return concat<T>({xw, xc}, 1);
}

template <class T>
Tensor<T> embed_tokens(const TokenizedText& text, const EmbeddingTable<T>& words, const EmbeddingTable<T>& chars) {
  return embed_tokens<T>(text.words, text.chars, text.max_word_len, words, chars);
}

template <class T>
struct HighwayLayer {
  Tensor<T> transform_w, transform_b;  // d x d, d
  Tensor<T> gate_w, gate_b;            // d x d, d
};

template <class T>
struct HighwayParams {
  Tensor<T> projection;  // (dw + dc) x d, undefined when widths already agree
  std::vector<HighwayLayer<T>> layers;

  std::size_t width() const { return layers.front().transform_w.dim(1); }
};

template <class T>
HighwayParams<T> make_highway(ParameterStore<T>& store, const std::string& prefix, std::size_t in_width,
                              std::size_t d, Rng& rng, std::size_t num_layers = 2) {
  HighwayParams<T> p;
  if (in_width != d) p.projection = store.add(prefix + ".projection", glorot<T>({in_width, d}, in_width, d, rng));
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::string name = prefix + ".layer" + std::to_string(l);
    HighwayLayer<T> layer;
    layer.transform_w = store.add(name + ".transform_w", glorot<T>({d, d}, d, d, rng));
    layer.transform_b = store.add(name + ".transform_b", constant<T>({d}, T(0)));
    layer.gate_w = store.add(name + ".gate_w", glorot<T>({d, d}, d, d, rng));
    layer.gate_b = store.add(name + ".gate_b", constant<T>({d}, T(0)));
    p.layers.push_back(std::move(layer));
  }
  return p;
}

// Each layer: t = sigmoid(x Wg + bg); y = t * relu(x Wt + bt) + (1 - t) * x.
template <class T>
Tensor<T> highway(const Tensor<T>& input, const HighwayParams<T>& params) {
  if (params.layers.empty()) throw ConfigError("highway network without layers");
  const std::size_t d = params.width();
  Tensor<T> x = input;
  if (x.rank() != 2) throw DimensionError("highway input must be a matrix, got " + shape_str(x.shape()));
  if (x.dim(1) != d) {
    if (!params.projection.defined() || params.projection.dim(0) != x.dim(1)) {
      throw DimensionError("highway: input width " + std::to_string(x.dim(1)) + " does not match model width " +
                           std::to_string(d) + " and no matching projection is configured");
    }
    x = matmul(x, params.projection);
  }
  for (const auto& layer : params.layers) {
    Tensor<T> gate = sigmoid(linear(x, layer.gate_w, &layer.gate_b));
    Tensor<T> transformed = relu(linear(x, layer.transform_w, &layer.transform_b));
    Tensor<T> carry = add_scalar(neg(gate), T(1));
    x = add(mul(gate, transformed), mul(carry, x));
  }
  return x;
}

}  // namespace rcvqa
