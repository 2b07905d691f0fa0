#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rcvqa/rng.hpp"
#include "rcvqa/tensor.hpp"

namespace rcvqa {

// Logit assigned to masked positions before exponentiation.
template <class T>
constexpr T mask_sentinel() {
  return T(-1e30);
}

namespace detail {

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_stride;  // per output axis, 0 where a is stretched
  std::vector<std::size_t> b_stride;
  enum class Kind { Same, TrailingB, General } kind = Kind::General;
};

inline std::vector<std::size_t> aligned_strides(const Shape& s, std::size_t rank, const Shape& out) {
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  const std::size_t offset = rank - s.size();
  for (std::size_t i = s.size(); i-- > 0;) {
    strides[offset + i] = (s[i] == 1 && out[offset + i] != 1) ? 0 : stride;
    stride *= s[i];
  }
  return strides;
}

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t db = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                           shape_str(b));
    }
    plan.out[i] = std::max(da, db);
  }
  if (a == b) {
    plan.kind = BroadcastPlan::Kind::Same;
  } else if (a == plan.out && b.size() <= a.size() &&
             std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) {
    plan.kind = BroadcastPlan::Kind::TrailingB;
  }
  plan.a_stride = aligned_strides(a, rank, plan.out);
  plan.b_stride = aligned_strides(b, rank, plan.out);
  return plan;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <class Fn>
void for_each_broadcast(const BroadcastPlan& plan, std::size_t b_size, Fn&& fn) {
  const std::size_t total = shape_size(plan.out);
  switch (plan.kind) {
    case BroadcastPlan::Kind::Same:
      for (std::size_t o = 0; o < total; ++o) fn(o, o, o);
      return;
    case BroadcastPlan::Kind::TrailingB:
      for (std::size_t o = 0; o < total; ++o) fn(o, o, o % b_size);
      return;
    case BroadcastPlan::Kind::General:
      break;
  }
  const std::size_t rank = plan.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    fn(o, ia, ib);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      ia += plan.a_stride[ax];
      ib += plan.b_stride[ax];
      if (idx[ax] < plan.out[ax]) break;
      ia -= plan.a_stride[ax] * idx[ax];
      ib -= plan.b_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

template <class T, class Fwd, class DA, class DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, DA da, DB db) {
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  std::vector<T> out(shape_size(plan.out));
  const auto av = a.data();
  const auto bv = b.data();
  for_each_broadcast(plan, b.size(), [&](std::size_t o, std::size_t i, std::size_t j) {
    out[o] = fwd(av[i], bv[j]);
  });
  const std::size_t b_size = b.size();
  return make_result<T>(plan.out, std::move(out), {&a, &b},
                        [plan, b_size, da, db](Node<T>& self) {
                          Node<T>& na = *self.inputs[0];
                          Node<T>& nb = *self.inputs[1];
                          for_each_broadcast(plan, b_size, [&](std::size_t o, std::size_t i, std::size_t j) {
                            const T g = self.grad[o];
                            if (na.requires_grad) na.grad[i] += g * da(na.value[i], nb.value[j]);
                            if (nb.requires_grad) nb.grad[j] += g * db(na.value[i], nb.value[j]);
                          });
                        });
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  // deriv(x, y) receives both input and output values.
  return make_result<T>(x.shape(), std::move(out), {&x}, [deriv](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      in.grad[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
    }
  });
}

inline void check_mask_for(const Mask& mask, const Shape& shape, const char* op) {
  const std::size_t total = shape_size(shape);
  const std::size_t last = shape.empty() ? 1 : shape.back();
  if (mask.size() != total && mask.size() != last) {
    throw DimensionError(std::string(op) + ": mask " + shape_str(mask.shape) +
                         " does not cover " + shape_str(shape));
  }
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary<T>(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary<T>(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) { return scale(x, T(-1)); }

// Subgradient at exactly 0 is 0.
template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
T sigmoid_value(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>(x, [](T v) { return sigmoid_value(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

// log clamped below at the smallest normal value so it never yields -inf.
template <class T>
Tensor<T> log(const Tensor<T>& x) {
  const T tiny = std::numeric_limits<T>::min();
  return detail::unary<T>(
      x, [tiny](T v) { return std::log(std::max(v, tiny)); },
      [tiny](T v, T) { return v > tiny ? T(1) / v : T(0); });
}

// log(1 + e^x) without overflow.
template <class T>
T softplus_value(T v) {
  return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary<T>(x, [](T v) { return softplus_value(v); }, [](T v, T) { return sigmoid_value(v); });
}

// ---- reductions ------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return detail::make_result<T>(Shape{1}, {total}, {&x}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    for (T& g : in.grad) g += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

// Element at a flat index, as a one-element tensor.
template <class T>
Tensor<T> pick(const Tensor<T>& x, std::size_t index) {
  if (index >= x.size()) {
    throw IndexError("pick index " + std::to_string(index) + " outside " + shape_str(x.shape()));
  }
  return detail::make_result<T>(Shape{1}, {x[index]}, {&x}, [index](Node<T>& self) {
    self.inputs[0]->grad[index] += self.grad[0];
  });
}

// Mean over the rows of x[n x d] whose mask entry is on.
template <class T>
Tensor<T> masked_mean_rows(const Tensor<T>& x, const Mask& mask) {
  if (x.rank() != 2 || mask.size() != x.dim(0)) {
    throw DimensionError("masked_mean_rows: x " + shape_str(x.shape()) + " with mask " +
                         shape_str(mask.shape));
  }
  const std::size_t n = x.dim(0), d = x.dim(1);
  const std::size_t count = mask.count();
  if (count == 0) throw InvalidMaskError("masked_mean_rows: every row is masked");
  const T inv = T(1) / static_cast<T>(count);
  std::vector<T> out(d, T(0));
  const auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    for (std::size_t j = 0; j < d; ++j) out[j] += xv[i * d + j] * inv;
  }
  return detail::make_result<T>(Shape{d}, std::move(out), {&x}, [mask, n, d, inv](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask[i]) continue;
      for (std::size_t j = 0; j < d; ++j) in.grad[i * d + j] += self.grad[j] * inv;
    }
  });
}

// ---- linear algebra --------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<T> out(n * m, T(0));
  const T* av = a.data().data();
  const T* bv = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T s = av[i * k + p];
      if (s == T(0)) continue;
      const T* brow = bv + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += s * brow[j];
    }
  }
  return detail::make_result<T>(Shape{n, m}, std::move(out), {&a, &b}, [n, k, m](Node<T>& self) {
    Node<T>& na = *self.inputs[0];
    Node<T>& nb = *self.inputs[1];
    const T* g = self.grad.data();
    if (na.requires_grad) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = nb.value.data() + p * m;
          const T* grow = g + i * m;
          T acc = T(0);
          for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
          na.grad[i * k + p] += acc;
        }
      }
    }
    if (nb.requires_grad) {
      for (std::size_t i = 0; i < n; ++i) {
        const T* grow = g + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const T s = na.value[i * k + p];
          if (s == T(0)) continue;
          T* gb = nb.grad.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) gb[j] += s * grow[j];
        }
      }
    }
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("transpose needs a matrix, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), m = x.dim(1);
  std::vector<T> out(n * m);
  const auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = xv[i * m + j];
  return detail::make_result<T>(Shape{m, n}, std::move(out), {&x}, [n, m](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) in.grad[i * m + j] += self.grad[j * n + i];
  });
}

// x[n x k] * w[k x m] (+ bias[m])
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias = nullptr) {
  Tensor<T> y = matmul(x, w);
  return bias ? add(y, *bias) : y;
}

// ---- shape ops -------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  return detail::make_result<T>(std::move(shape), x.values(), {&x}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat axis " + std::to_string(axis) + " out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(first) +
                           " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  if (parts.size() == 1) return parts.front();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_block = out_shape[axis] * inner;
  std::vector<T> out(shape_size(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t block = p.dim(axis) * inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.begin() + static_cast<std::ptrdiff_t>(o * out_block + offset));
    offset += block;
  }
  return detail::make_result<T>(out_shape, std::move(out), parts,
                                [offsets, outer, out_block](Node<T>& self) {
                                  for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                    Node<T>& in = *self.inputs[k];
                                    if (!in.requires_grad) continue;
                                    const std::size_t block = in.value.size() / outer;
                                    for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t i = 0; i < block; ++i)
                                        in.grad[o * block + i] += self.grad[o * out_block + offsets[k] + i];
                                  }
                                });
}

// Slice [start, start+len) along one axis.
template <class T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = x.shape();
  if (axis >= s.size() || start + len > s[axis] || len == 0) {
    throw DimensionError("narrow: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = len;
  const std::size_t in_block = s[axis] * inner, out_block = len * inner, skip = start * inner;
  std::vector<T> out(outer * out_block);
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(o * in_block + skip), out_block,
                out.begin() + static_cast<std::ptrdiff_t>(o * out_block));
  return detail::make_result<T>(out_shape, std::move(out), {&x},
                                [outer, in_block, out_block, skip](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t i = 0; i < out_block; ++i)
                                      in.grad[o * in_block + skip + i] += self.grad[o * out_block + i];
                                });
}

// Rows of table[V x D] selected by ids. Gradient reaches only rows whose
// trainable flag is set (all rows when the flag vector is empty).
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> ids,
                      const std::vector<std::uint8_t>& trainable = {}) {
  if (table.rank() != 2) throw DimensionError("gather_rows needs a matrix table");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  std::vector<T> out(idx.size() * d);
  const auto tv = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) {
      throw IndexError("row id " + std::to_string(idx[i]) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return detail::make_result<T>(Shape{idx.size(), d}, std::move(out), {&table},
                                [idx, d, trainable](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  for (std::size_t i = 0; i < idx.size(); ++i) {
                                    if (!trainable.empty() && !trainable[idx[i]]) continue;
                                    for (std::size_t j = 0; j < d; ++j)
                                      in.grad[idx[i] * d + j] += self.grad[i * d + j];
                                  }
                                });
}

// For each word (row of char_ids[n x width]) the per-dimension maximum of its
// character vectors. Columns holding pad_id are skipped; an all-pad word
// yields zeros. Gradient goes to the first maximizing character.
template <class T>
Tensor<T> char_max_pool(const Tensor<T>& table, std::span<const std::size_t> char_ids,
                        std::size_t width, std::size_t pad_id = 0,
                        const std::vector<std::uint8_t>& trainable = {}) {
  if (table.rank() != 2) throw DimensionError("char_max_pool needs a matrix table");
  if (width == 0 || char_ids.size() % width != 0) {
    throw DimensionError("char_max_pool: " + std::to_string(char_ids.size()) +
                         " ids do not form rows of width " + std::to_string(width));
  }
  const std::size_t rows = table.dim(0), d = table.dim(1), n = char_ids.size() / width;
  std::vector<T> out(n * d, T(0));
  std::vector<std::size_t> argmax(n * d, rows);  // rows == no source
  const auto tv = table.data();
  for (std::size_t w = 0; w < n; ++w) {
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t id = char_ids[w * width + c];
      if (id >= rows) {
        throw IndexError("char id " + std::to_string(id) + " outside table of " +
                         std::to_string(rows) + " rows");
      }
      if (id == pad_id) continue;
      for (std::size_t j = 0; j < d; ++j) {
        const T v = tv[id * d + j];
        if (argmax[w * d + j] == rows || v > out[w * d + j]) {
          out[w * d + j] = v;
          argmax[w * d + j] = id;
        }
      }
    }
  }
  return detail::make_result<T>(Shape{n, d}, std::move(out), {&table},
                                [argmax, rows, d, trainable](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  for (std::size_t k = 0; k < argmax.size(); ++k) {
                                    const std::size_t id = argmax[k];
                                    if (id == rows || (!trainable.empty() && !trainable[id])) continue;
                                    in.grad[id * d + k % d] += self.grad[k];
                                  }
                                });
}

// Zeroes rows of x[n x d] whose mask entry is off.
template <class T>
Tensor<T> mask_rows(const Tensor<T>& x, const Mask& mask) {
  if (x.rank() != 2 || mask.size() != x.dim(0)) {
    throw DimensionError("mask_rows: x " + shape_str(x.shape()) + " with mask " + shape_str(mask.shape));
  }
  if (mask.count() == mask.size()) return x;
  const std::size_t d = x.dim(1);
  std::vector<T> out(x.values());
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * d), d, T(0));
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [mask, d](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) continue;
      for (std::size_t j = 0; j < d; ++j) in.grad[i * d + j] += self.grad[i * d + j];
    }
  });
}

// Positions whose mask entry is off are replaced by `value` and receive no
// gradient. The mask must match x exactly.
template <class T>
Tensor<T> masked_fill(const Tensor<T>& x, const Mask& mask, T value) {
  if (mask.size() != x.size()) {
    throw DimensionError("masked_fill: mask " + shape_str(mask.shape) + " does not match " + shape_str(x.shape()));
  }
  std::vector<T> out(x.values());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!mask[i]) out[i] = value;
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [mask](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (mask[i]) in.grad[i] += self.grad[i];
  });
}

// ---- normalization ---------------------------------------------------------

// Softmax over the last axis with masked positions excluded. Masked outputs
// are exactly zero; a row with no unmasked position is an error.
template <class T>
Tensor<T> softmax_masked(const Tensor<T>& x, const Mask& mask) {
  detail::check_mask_for(mask, x.shape(), "softmax_masked");
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.size() / len;
  const bool per_row = mask.size() == x.size() && rows > 1;
  std::vector<T> out(x.size(), T(0));
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * len;
    const std::size_t mbase = per_row ? base : 0;
    T mx = mask_sentinel<T>();
    bool any = false;
    for (std::size_t i = 0; i < len; ++i) {
      if (!mask[mbase + i]) continue;
      mx = any ? std::max(mx, xv[base + i]) : xv[base + i];
      any = true;
    }
    if (!any) throw InvalidMaskError("softmax_masked: row " + std::to_string(r) + " is fully masked");
    T total = T(0);
    for (std::size_t i = 0; i < len; ++i) {
      if (!mask[mbase + i]) continue;
      out[base + i] = std::exp(xv[base + i] - mx);
      total += out[base + i];
    }
    for (std::size_t i = 0; i < len; ++i) out[base + i] /= total;
  }
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [len, rows](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * len;
      T dot = T(0);
      for (std::size_t i = 0; i < len; ++i) dot += self.grad[base + i] * self.value[base + i];
      for (std::size_t i = 0; i < len; ++i)
        in.grad[base + i] += self.value[base + i] * (self.grad[base + i] - dot);
    }
  });
}

// log-softmax over the last axis; masked positions hold mask_sentinel and
// carry no gradient.
template <class T>
Tensor<T> log_softmax_masked(const Tensor<T>& x, const Mask& mask) {
  detail::check_mask_for(mask, x.shape(), "log_softmax_masked");
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.size() / len;
  const bool per_row = mask.size() == x.size() && rows > 1;
  std::vector<T> out(x.size(), mask_sentinel<T>());
  std::vector<T> probs(x.size(), T(0));
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * len;
    const std::size_t mbase = per_row ? base : 0;
    T mx = T(0);
    bool any = false;
    for (std::size_t i = 0; i < len; ++i) {
      if (!mask[mbase + i]) continue;
      mx = any ? std::max(mx, xv[base + i]) : xv[base + i];
      any = true;
    }
    if (!any) throw InvalidMaskError("log_softmax_masked: row " + std::to_string(r) + " is fully masked");
    T total = T(0);
    for (std::size_t i = 0; i < len; ++i)
      if (mask[mbase + i]) total += std::exp(xv[base + i] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t i = 0; i < len; ++i) {
      if (!mask[mbase + i]) continue;
      out[base + i] = xv[base + i] - lse;
      probs[base + i] = std::exp(out[base + i]);
    }
  }
  return detail::make_result<T>(x.shape(), std::move(out), {&x},
                                [len, rows, probs = std::move(probs), mask, per_row](Node<T>& self) {
                                  Node<T>& in = *self.inputs[0];
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const std::size_t base = r * len;
                                    const std::size_t mbase = per_row ? base : 0;
                                    T total = T(0);
                                    for (std::size_t i = 0; i < len; ++i)
                                      if (mask[mbase + i]) total += self.grad[base + i];
                                    for (std::size_t i = 0; i < len; ++i) {
                                      if (!mask[mbase + i]) continue;
                                      in.grad[base + i] += self.grad[base + i] - probs[base + i] * total;
                                    }
                                  }
                                });
}

// Per-row normalization over the last axis, then gain * x_hat + bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-6)) {
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: width " + std::to_string(d) + " with gain " +
                         shape_str(gain.shape()) + " and bias " + shape_str(bias.shape()));
  }
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size()), xhat(x.size()), rstd(rows);
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * rstd[r];
      out[r * d + j] = gv[j] * xhat[r * d + j] + bv[j];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        Node<T>& nx = *self.inputs[0];
        Node<T>& ng = *self.inputs[1];
        Node<T>& nb = *self.inputs[2];
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* g = self.grad.data() + r * d;
          const T* xh = xhat.data() + r * d;
          T mean_d = T(0), mean_dx = T(0);
          for (std::size_t j = 0; j < d; ++j) {
            if (ng.requires_grad) ng.grad[j] += g[j] * xh[j];
            if (nb.requires_grad) nb.grad[j] += g[j];
            dxhat[j] = g[j] * ng.value[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
          }
          if (!nx.requires_grad) continue;
          mean_d /= static_cast<T>(d);
          mean_dx /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j)
            nx.grad[r * d + j] += rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
      });
}

// Inverted dropout: survivors are scaled by 1/(1-p) while training;
// identity otherwise.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> factor(x.size());
  for (T& f : factor) f = rng.bernoulli(p) ? T(0) : keep_scale;
  std::vector<T> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor[i];
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [factor = std::move(factor)](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    for (std::size_t i = 0; i < factor.size(); ++i) in.grad[i] += self.grad[i] * factor[i];
  });
}

// ---- convolution -----------------------------------------------------------

// Per-channel 1-D convolution of x[n x d] with filters[kernel x d],
// zero-padded so the output keeps length n. kernel must be odd.
template <class T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& filters) {
  if (x.rank() != 2 || filters.rank() != 2 || filters.dim(1) != x.dim(1)) {
    throw DimensionError("depthwise_conv1d: input " + shape_str(x.shape()) + " with filters " +
                         shape_str(filters.shape()));
  }
  const std::size_t kernel = filters.dim(0);
  if (kernel % 2 == 0) throw ConfigError("convolution kernel width must be odd, got " + std::to_string(kernel));
  const std::size_t n = x.dim(0), d = x.dim(1);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel / 2);
  std::vector<T> out(n * d, T(0));
  const T* xv = x.data().data();
  const T* fv = filters.data().data();
  for (std::size_t t = 0; t < n; ++t) {
    T* orow = out.data() + t * d;
    for (std::size_t j = 0; j < kernel; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
      const T* xrow = xv + static_cast<std::size_t>(src) * d;
      const T* frow = fv + j * d;
      for (std::size_t c = 0; c < d; ++c) orow[c] += frow[c] * xrow[c];
    }
  }
  return detail::make_result<T>(Shape{n, d}, std::move(out), {&x, &filters}, [n, d, kernel, half](Node<T>& self) {
    Node<T>& nx = *self.inputs[0];
    Node<T>& nf = *self.inputs[1];
    for (std::size_t t = 0; t < n; ++t) {
      const T* g = self.grad.data() + t * d;
      for (std::size_t j = 0; j < kernel; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        const std::size_t s = static_cast<std::size_t>(src);
        for (std::size_t c = 0; c < d; ++c) {
          if (nx.requires_grad) nx.grad[s * d + c] += g[c] * nf.value[j * d + c];
          if (nf.requires_grad) nf.grad[j * d + c] += g[c] * nx.value[s * d + c];
        }
      }
    }
  });
}

}  // namespace rcvqa
