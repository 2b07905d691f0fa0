#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rcvqa/ops.hpp"
#include "rcvqa/params.hpp"

namespace rcvqa {

template <class T>
struct CQAttentionParams {
  Tensor<T> w0;          // 3d: weights on [q, c, q * c]
  Tensor<T> projection;  // 4d x d, applied to the fused rows
};

template <class T>
CQAttentionParams<T> make_cq_attention(ParameterStore<T>& store, const std::string& prefix, std::size_t d, Rng& rng) {
  return {store.add(prefix + ".w0", glorot<T>({3 * d}, 3 * d, 1, rng)),
          store.add(prefix + ".projection", glorot<T>({4 * d, d}, 4 * d, d, rng))};
}

// Pair mask for an n x m similarity matrix.
inline Mask pair_mask(const Mask& context, const Mask& question) {
  Mask m({context.size(), question.size()}, false);
  for (std::size_t i = 0; i < context.size(); ++i)
    for (std::size_t j = 0; j < question.size(); ++j) m.on[i * question.size() + j] = context[i] && question[j];
  return m;
}

// S[i, j] = w0 . [q_j, c_i, q_j * c_i], with masked pairs set to the
// softmax sentinel. Computed as (C * w_qc) Q^T + C w_c + (Q w_q)^T.
template <class T>
Tensor<T> similarity_matrix(const Tensor<T>& c, const Tensor<T>& q, const Tensor<T>& w0, const Mask& context_mask,
                            const Mask& question_mask) {
  if (c.rank() != 2 || q.rank() != 2 || c.dim(1) != q.dim(1)) {
    throw DimensionError("similarity_matrix: context " + shape_str(c.shape()) + " and question " +
                         shape_str(q.shape()) + " must share their width");
  }
  const std::size_t d = c.dim(1);
  if (w0.size() != 3 * d) {
    throw DimensionError("similarity_matrix: w0 has " + std::to_string(w0.size()) + " entries, expected " +
                         std::to_string(3 * d));
  }
  if (context_mask.size() != c.dim(0) || question_mask.size() != q.dim(0)) {
    throw DimensionError("similarity_matrix: masks do not match sequence lengths");
  }
  Tensor<T> w_q = narrow(w0, 0, 0, d);
  Tensor<T> w_c = narrow(w0, 0, d, d);
  Tensor<T> w_qc = narrow(w0, 0, 2 * d, d);
  Tensor<T> trilinear = matmul(mul(c, w_qc), transpose(q));
  Tensor<T> context_term = matmul(c, reshape(w_c, {d, 1}));
  Tensor<T> question_term = matmul(reshape(w_q, {1, d}), transpose(q));
  Tensor<T> s = add(add(trilinear, context_term), question_term);
  return masked_fill(s, pair_mask(context_mask, question_mask), mask_sentinel<T>());
}

// Row softmax over unmasked question positions.
template <class T>
Tensor<T> row_softmax(const Tensor<T>& s, const Mask& question_mask) {
  return softmax_masked(s, question_mask);
}

// Column softmax over unmasked context positions, returned transposed
// (m x n) so rows are the normalized columns.
template <class T>
Tensor<T> column_softmax_t(const Tensor<T>& s, const Mask& context_mask) {
  return softmax_masked(transpose(s), context_mask);
}

// A = row_softmax(S) Q: each row a convex combination of question vectors.
template <class T>
Tensor<T> c2q_attention(const Tensor<T>& s, const Tensor<T>& q, const Mask& question_mask) {
  if (s.rank() != 2 || q.rank() != 2 || s.dim(1) != q.dim(0)) {
    throw DimensionError("c2q_attention: S " + shape_str(s.shape()) + " with Q " + shape_str(q.shape()));
  }
  return matmul(row_softmax(s, question_mask), q);
}

// B = row_softmax(S) column_softmax(S)^T C.
template <class T>
Tensor<T> q2c_attention(const Tensor<T>& s, const Tensor<T>& c, const Mask& context_mask, const Mask& question_mask) {
  if (s.rank() != 2 || c.rank() != 2 || s.dim(0) != c.dim(0)) {
    throw DimensionError("q2c_attention: S " + shape_str(s.shape()) + " with C " + shape_str(c.shape()));
  }
  return matmul(matmul(row_softmax(s, question_mask), column_softmax_t(s, context_mask)), c);
}

// Rows [c, a, c * a, c * b].
template <class T>
Tensor<T> fuse(const Tensor<T>& c, const Tensor<T>& a, const Tensor<T>& b) {
  if (c.shape() != a.shape() || c.shape() != b.shape()) {
    throw DimensionError("fuse: C " + shape_str(c.shape()) + ", A " + shape_str(a.shape()) + ", B " +
                         shape_str(b.shape()) + " must agree");
  }
  return concat<T>({c, a, mul(c, a), mul(c, b)}, 1);
}

template <class T>
struct AttentionArtifacts {
  Tensor<T> s;
  Tensor<T> s_row;
  Tensor<T> s_col_t;  // column-normalized S, transposed (m x n)
  Tensor<T> a;
  Tensor<T> b;
  Tensor<T> fused;      // n x 4d
  Tensor<T> projected;  // n x d
};

// The whole block: similarity, both attentions, fusion, 4d -> d projection.
template <class T>
AttentionArtifacts<T> cq_attention(const Tensor<T>& c, const Tensor<T>& q, const Mask& context_mask,
                                   const Mask& question_mask, const CQAttentionParams<T>& params) {
  AttentionArtifacts<T> out;
  out.s = similarity_matrix(c, q, params.w0, context_mask, question_mask);
  out.s_row = row_softmax(out.s, question_mask);
  out.s_col_t = column_softmax_t(out.s, context_mask);
  out.a = matmul(out.s_row, q);
  out.b = matmul(matmul(out.s_row, out.s_col_t), c);
  out.fused = fuse(c, out.a, out.b);
  out.projected = matmul(out.fused, params.projection);
  return out;
}

}  // namespace rcvqa
