#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "rcvqa/ops.hpp"
#include "rcvqa/params.hpp"

namespace rcvqa {

// Outputs of three successive model-encoder passes over the fused context.
template <class T>
struct ModelEncoderOutputs {
  Tensor<T> m0, m1, m2;
  Mask mask;  // context positions
};

// ---- span head -------------------------------------------------------------

template <class T>
struct SpanHeadParams {
  Tensor<T> w_start;  // 2d x 1, scores [M0, M1]
  Tensor<T> w_end;    // 2d x 1, scores [M0, M2]
};

template <class T>
SpanHeadParams<T> make_span_head(ParameterStore<T>& store, const std::string& prefix, std::size_t d, Rng& rng) {
  return {store.add(prefix + ".w_start", glorot<T>({2 * d, 1}, 2 * d, 1, rng)),
          store.add(prefix + ".w_end", glorot<T>({2 * d, 1}, 2 * d, 1, rng))};
}

template <class T>
struct SpanHeadOutput {
  Tensor<T> logits_start, logits_end;  // n
  Tensor<T> p_start, p_end;            // n, masked positions exactly 0
  Mask mask;
};

template <class T>
SpanHeadOutput<T> span_head(const ModelEncoderOutputs<T>& m, const SpanHeadParams<T>& params) {
  const std::size_t n = m.m0.dim(0);
  SpanHeadOutput<T> out;
  out.mask = m.mask;
  out.logits_start = reshape(matmul(concat<T>({m.m0, m.m1}, 1), params.w_start), {n});
  out.logits_end = reshape(matmul(concat<T>({m.m0, m.m2}, 1), params.w_end), {n});
  out.p_start = softmax_masked(out.logits_start, m.mask);
  out.p_end = softmax_masked(out.logits_end, m.mask);
  return out;
}

struct SpanPrediction {
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;
};

// argmax over i <= j <= i + max_span of p_start[i] * p_end[j]; ties go to
// the smaller start, then the smaller end. For each end j the best start is
// the front of a sliding-window maximum over p_start.
template <class T>
SpanPrediction decode_span(std::span<const T> p_start, std::span<const T> p_end, std::size_t max_span = 30) {
  if (p_start.size() != p_end.size() || p_start.empty()) {
    throw DimensionError("decode_span: start/end distributions must be non-empty and equally long");
  }
  if (max_span == 0) throw ConfigError("max_span must be at least 1");
  const std::size_t n = p_start.size();
  std::deque<std::size_t> window;
  SpanPrediction best;
  bool have = false;
  for (std::size_t j = 0; j < n; ++j) {
    while (!window.empty() && p_start[window.back()] < p_start[j]) window.pop_back();
    window.push_back(j);
    while (window.front() + max_span < j) window.pop_front();
    const std::size_t lo = j > max_span ? j - max_span : 0;
    // With p_end[j] == 0 every start in the window ties at zero.
    const std::size_t i = p_end[j] == T(0) ? lo : window.front();
    const T score = p_start[i] * p_end[j];
    const bool better = !have || score > static_cast<T>(best.score) ||
                        (score == static_cast<T>(best.score) && (i < best.start || (i == best.start && j < best.end)));
    if (better) {
      best = {i, j, static_cast<double>(score)};
      have = true;
    }
  }
  return best;
}

template <class T>
SpanPrediction decode_span(const SpanHeadOutput<T>& out, std::size_t max_span = 30) {
  return decode_span<T>(out.p_start.data(), out.p_end.data(), max_span);
}

// ---- open-ended classification head ----------------------------------------

template <class T>
struct ClassificationParams {
  Tensor<T> w;  // K x 3d
};

template <class T>
ClassificationParams<T> make_classification_head(ParameterStore<T>& store, const std::string& prefix, std::size_t d,
                                                 std::size_t classes, Rng& rng) {
  if (classes == 0) throw ConfigError("classification head needs at least one class");
  return {store.add(prefix + ".w", glorot<T>({classes, 3 * d}, 3 * d, classes, rng))};
}

template <class T>
struct ClassificationOutput {
  Tensor<T> logits;  // K
  Tensor<T> p;       // K
};

// v_i = masked mean of M_i; p = softmax(W [v0; v1; v2]).
template <class T>
ClassificationOutput<T> classification_head(const ModelEncoderOutputs<T>& m, const ClassificationParams<T>& params) {
  Tensor<T> v = concat<T>({masked_mean_rows(m.m0, m.mask), masked_mean_rows(m.m1, m.mask),
                           masked_mean_rows(m.m2, m.mask)}, 0);
  const std::size_t k = params.w.dim(0);
  if (params.w.dim(1) != v.size()) {
    throw DimensionError("classification_head: W " + shape_str(params.w.shape()) + " with pooled width " +
                         std::to_string(v.size()));
  }
  ClassificationOutput<T> out;
  out.logits = reshape(matmul(params.w, reshape(v, {v.size(), 1})), {k});
  out.p = softmax_masked(out.logits, Mask::all(k));
  return out;
}

// ---- multiple-choice head --------------------------------------------------

template <class T>
struct MultiChoiceParams {
  Tensor<T> w1;  // 4d x hidden
  Tensor<T> b1;  // hidden
  Tensor<T> w2;  // hidden x 1
  Tensor<T> b2;  // 1
};

template <class T>
MultiChoiceParams<T> make_multichoice_head(ParameterStore<T>& store, const std::string& prefix, std::size_t d,
                                           std::size_t hidden, Rng& rng) {
  return {store.add(prefix + ".w1", glorot<T>({4 * d, hidden}, 4 * d, hidden, rng)),
          store.add(prefix + ".b1", constant<T>({hidden}, T(0))),
          store.add(prefix + ".w2", glorot<T>({hidden, 1}, hidden, 1, rng)),
          store.add(prefix + ".b2", constant<T>({1}, T(0)))};
}

struct ChoiceScore {
  double e = 0.0;
  double probability = 0.5;
};

// e = W2 dropout(relu(W1 [v0a; v1a; v0q; v1q] + b1)) + b2, a 1-element tensor.
template <class T>
Tensor<T> multichoice_logit(const Tensor<T>& v0q, const Tensor<T>& v1q, const Tensor<T>& v0a, const Tensor<T>& v1a,
                            const MultiChoiceParams<T>& params, bool training, Rng& rng, double dropout_p = 0.5) {
  const std::size_t d = v0q.size();
  if (v1q.size() != d || v0a.size() != d || v1a.size() != d || params.w1.dim(0) != 4 * d) {
    throw DimensionError("multichoice_head: pooled vectors of width " + std::to_string(d) + " with W1 " +
                         shape_str(params.w1.shape()));
  }
  Tensor<T> features = reshape(concat<T>({reshape(v0a, {d}), reshape(v1a, {d}), reshape(v0q, {d}), reshape(v1q, {d})}, 0),
                               {1, 4 * d});
  Tensor<T> hidden = relu(linear(features, params.w1, &params.b1));
  hidden = dropout(hidden, dropout_p, training, rng);
  return reshape(linear(hidden, params.w2, &params.b2), {1});
}

inline ChoiceScore choice_score(double e) { return {e, sigmoid_value(e)}; }

template <class T>
ChoiceScore multichoice_head(const Tensor<T>& v0q, const Tensor<T>& v1q, const Tensor<T>& v0a, const Tensor<T>& v1a,
                             const MultiChoiceParams<T>& params, bool training, Rng& rng) {
  return choice_score(static_cast<double>(multichoice_logit(v0q, v1q, v0a, v1a, params, training, rng).item()));
}

// ---- losses ----------------------------------------------------------------

// -log p[gold] from a probability vector.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& p, std::size_t gold) {
  if (gold >= p.size()) {
    throw IndexError("gold class " + std::to_string(gold) + " outside " + std::to_string(p.size()) + " classes");
  }
  return neg(log(pick(p, gold)));
}

// -log softmax(logits)[gold], evaluated in log-sum-exp form.
template <class T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, std::size_t gold) {
  if (gold >= logits.size()) {
    throw IndexError("gold class " + std::to_string(gold) + " outside " + std::to_string(logits.size()) + " classes");
  }
  return neg(pick(log_softmax_masked(logits, Mask::all(logits.size())), gold));
}

// -[y log sigmoid(e) + (1 - y) log(1 - sigmoid(e))] = softplus(-e) or softplus(e).
template <class T>
Tensor<T> binary_logistic_loss(const Tensor<T>& e, int label) {
  if (e.size() != 1) throw DimensionError("binary_logistic_loss expects a scalar score");
  if (label != 0 && label != 1) throw IndexError("binary label must be 0 or 1");
  return label == 1 ? softplus(neg(e)) : softplus(e);
}

template <class T>
Tensor<T> span_loss(const Tensor<T>& p_start, const Tensor<T>& p_end, std::size_t gold_start, std::size_t gold_end) {
  if (gold_start >= p_start.size() || gold_end >= p_end.size()) {
    throw IndexError("gold span (" + std::to_string(gold_start) + ", " + std::to_string(gold_end) +
                     ") outside context of " + std::to_string(p_start.size()));
  }
  return add(neg(log(pick(p_start, gold_start))), neg(log(pick(p_end, gold_end))));
}

// Same objective from the head's logits.
template <class T>
Tensor<T> span_loss(const SpanHeadOutput<T>& out, std::size_t gold_start, std::size_t gold_end) {
  const std::size_t n = out.logits_start.size();
  if (gold_start >= n || gold_end >= n || !out.mask[gold_start] || !out.mask[gold_end]) {
    throw IndexError("gold span (" + std::to_string(gold_start) + ", " + std::to_string(gold_end) +
                     ") outside the unmasked context");
  }
  return add(neg(pick(log_softmax_masked(out.logits_start, out.mask), gold_start)),
             neg(pick(log_softmax_masked(out.logits_end, out.mask), gold_end)));
}

}  // namespace rcvqa
