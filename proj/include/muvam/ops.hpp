#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "muvam/errors.hpp"
#include "muvam/tape.hpp"
#include "muvam/tensor.hpp"

// Differentiable primitives over Tape/Var. All reductions accumulate left to
// right in index order so results are reproducible bit for bit.
namespace muvam::ops {

namespace detail {

template <typename T>
inline void require_same_tape(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw UsageError("operands recorded on different tapes");
}

inline std::string pair_shapes(const Shape& a, const Shape& b) {
  return shape_string(a) + " and " + shape_string(b);
}

// Supported broadcast forms for binary elementwise kinds.
enum class Broadcast { kSame, kScalar, kColumns };

inline Broadcast broadcast_mode(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::kSame;
  if (shape_numel(b) == 1) return Broadcast::kScalar;
  // 1xn (or n) against dxn: scale/shift column j by b[j].
  if (a.size() == 2 && ((b.size() == 1 && b[0] == a[1]) ||
                        (b.size() == 2 && b[0] == 1 && b[1] == a[1]))) {
    return Broadcast::kColumns;
  }
  throw DimensionError(std::string(op) + ": incompatible shapes " + pair_shapes(a, b));
}

}  // namespace detail

enum class Elementwise { kTanh, kSigmoid, kRelu, kAdd, kSub, kHadamard };

template <typename T>
inline T sigmoid_scalar(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

// ---------------------------------------------------------------------------
// Unary activations

template <typename T>
Var<T> unary(Elementwise kind, const Var<T>& x) {
  Tape<T>& tape = x.tape();
  Tensor<T> out(x.shape());
  const auto& in = x.value().data;
  for (std::size_t i = 0; i < in.size(); ++i) {
    switch (kind) {
      case Elementwise::kTanh: out[i] = std::tanh(in[i]); break;
      case Elementwise::kSigmoid: out[i] = sigmoid_scalar(in[i]); break;
      case Elementwise::kRelu: out[i] = in[i] > T{0} ? in[i] : T{0}; break;
      default: throw UsageError("unary() called with a binary kind");
    }
  }
  const std::size_t xi = x.id();
  return tape.record(std::move(out), {xi}, [kind, xi](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self).data;
    const auto& g = t.grad(self);
    const auto& xv = t.value(xi).data;
    auto& gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      switch (kind) {
        case Elementwise::kTanh: gx[i] += g[i] * (T{1} - y[i] * y[i]); break;
        case Elementwise::kSigmoid: gx[i] += g[i] * y[i] * (T{1} - y[i]); break;
        case Elementwise::kRelu: gx[i] += xv[i] > T{0} ? g[i] : T{0}; break;
        default: break;
      }
    }
  });
}

template <typename T> Var<T> tanh(const Var<T>& x) { return unary(Elementwise::kTanh, x); }
template <typename T> Var<T> sigmoid(const Var<T>& x) { return unary(Elementwise::kSigmoid, x); }
template <typename T> Var<T> relu(const Var<T>& x) { return unary(Elementwise::kRelu, x); }

// ---------------------------------------------------------------------------
// Binary elementwise with the documented broadcasts (B scalar, or B a 1xn row
// applied per column of a dxn A).

template <typename T>
Var<T> binary(Elementwise kind, const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  const char* name = kind == Elementwise::kAdd ? "add" : kind == Elementwise::kSub ? "sub" : "hadamard";
  if (kind != Elementwise::kAdd && kind != Elementwise::kSub && kind != Elementwise::kHadamard) {
    throw UsageError("binary() called with a unary kind");
  }
  const auto mode = detail::broadcast_mode(a.shape(), b.shape(), name);
  const std::size_t cols = a.shape().size() == 2 ? a.shape()[1] : 1;
  auto b_index = [mode, cols](std::size_t i) -> std::size_t {
    switch (mode) {
      case detail::Broadcast::kSame: return i;
      case detail::Broadcast::kScalar: return 0;
      case detail::Broadcast::kColumns: return i % cols;
    }
    return 0;
  };
  Tensor<T> out(a.shape());
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T bi = bv[b_index(i)];
    switch (kind) {
      case Elementwise::kAdd: out[i] = av[i] + bi; break;
      case Elementwise::kSub: out[i] = av[i] - bi; break;
      default: out[i] = av[i] * bi; break;
    }
  }
  const std::size_t ai = a.id(), bi_id = b.id();
  return a.tape().record(std::move(out), {ai, bi_id},
                         [kind, b_index, ai, bi_id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.tracked(ai)) {
      auto& ga = t.grad(ai);
      const auto& bv = t.value(bi_id).data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += kind == Elementwise::kHadamard ? g[i] * bv[b_index(i)] : g[i];
      }
    }
    if (t.tracked(bi_id)) {
      auto& gb = t.grad(bi_id);
      const auto& av = t.value(ai).data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T contrib = kind == Elementwise::kHadamard ? g[i] * av[i]
                          : kind == Elementwise::kSub    ? -g[i]
                                                         : g[i];
        gb[b_index(i)] += contrib;
      }
    }
  });
}

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b) { return binary(Elementwise::kAdd, a, b); }
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b) { return binary(Elementwise::kSub, a, b); }
template <typename T> Var<T> hadamard(const Var<T>& a, const Var<T>& b) { return binary(Elementwise::kHadamard, a, b); }

// Dispatcher mirroring the single elementwise entry point.
template <typename T>
Var<T> elementwise(Elementwise kind, const Var<T>& a, const Var<T>* b = nullptr) {
  switch (kind) {
    case Elementwise::kTanh:
    case Elementwise::kSigmoid:
    case Elementwise::kRelu:
      return unary(kind, a);
    default:
      if (!b) throw UsageError("binary elementwise kind requires a second operand");
      return binary(kind, a, *b);
  }
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out(a.shape());
  const auto& av = a.value().data;
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  const std::size_t ai = a.id();
  return a.tape().record(std::move(out), {ai}, [ai, factor](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

// Copy with no gradient path.
template <typename T>
Var<T> detach(const Var<T>& a) {
  Tensor<T> copy(a.shape(), a.value().data);
  return a.tape().constant(std::move(copy));
}

// ---------------------------------------------------------------------------
// Linear algebra

// A [p x q] times B [q x r] -> [p x r]; a 1-D B of length q is treated as a
// column and yields a 1-D result of length p.
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_tape(a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const bool b_vec = bs.size() == 1;
  if (as.size() != 2 || (bs.size() != 2 && !b_vec) || as[1] != bs[0]) {
    throw DimensionError("matmul: inner dimensions disagree for " + detail::pair_shapes(as, bs));
  }
  const std::size_t p = as[0], q = as[1], r = b_vec ? 1 : bs[1];
  Tensor<T> out(b_vec ? Shape{p} : Shape{p, r});
  const auto& A = a.value().data;
  const auto& B = b.value().data;
  for (std::size_t i = 0; i < p; ++i) {
    T* row = out.data.data() + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const T aik = A[i * q + k];
      const T* brow = B.data() + k * r;
      for (std::size_t j = 0; j < r; ++j) row[j] += aik * brow[j];
    }
  }
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi, p, q, r](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.tracked(ai)) {
      // dA = dC * B^T
      const auto& B = t.value(bi).data;
      auto& ga = t.grad(ai);
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t k = 0; k < q; ++k) {
          T acc{0};
          for (std::size_t j = 0; j < r; ++j) acc += g[i * r + j] * B[k * r + j];
          ga[i * q + k] += acc;
        }
      }
    }
    if (t.tracked(bi)) {
      // dB = A^T * dC
      const auto& A = t.value(ai).data;
      auto& gb = t.grad(bi);
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t k = 0; k < q; ++k) {
          const T aik = A[i * q + k];
          for (std::size_t j = 0; j < r; ++j) gb[k * r + j] += aik * g[i * r + j];
        }
      }
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const Shape& s = a.shape();
  if (s.size() != 2) throw DimensionError("transpose expects a matrix, got " + shape_string(s));
  const std::size_t r = s[0], c = s[1];
  Tensor<T> out(Shape{c, r});
  const auto& av = a.value().data;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  const std::size_t ai = a.id();
  return a.tape().record(std::move(out), {ai}, [ai, r, c](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ai);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  Tensor<T> out(std::move(shape), a.value().data);
  const std::size_t ai = a.id();
  return a.tape().record(std::move(out), {ai}, [ai](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc{0};
  for (const T& x : a.value().data) acc += x;
  const std::size_t ai = a.id();
  return a.tape().record(Tensor<T>::scalar(acc), {ai}, [ai](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    auto& ga = t.grad(ai);
    for (auto& x : ga) x += g;
  });
}

// ---------------------------------------------------------------------------
// Softmax (max-subtracted) along an axis of a 1-D or 2-D tensor.

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis = 0) {
  const Shape& s = x.shape();
  if (s.empty() || s.size() > 2 || axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_string(s));
  }
  const std::size_t rows = s[0], cols = s.size() == 2 ? s[1] : 1;
  // Lines run along `axis`: `len` elements separated by `stride`.
  const std::size_t len = axis == 0 ? rows : cols;
  const std::size_t lines = axis == 0 ? cols : rows;
  const std::size_t stride = axis == 0 ? cols : 1;
  const std::size_t line_step = axis == 0 ? 1 : cols;
  Tensor<T> out(s);
  const auto& in = x.value().data;
  for (std::size_t l = 0; l < lines; ++l) {
    const std::size_t base = l * line_step;
    T mx = in[base];
    for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, in[base + k * stride]);
    T total{0};
    for (std::size_t k = 0; k < len; ++k) {
      const T e = std::exp(in[base + k * stride] - mx);
      out[base + k * stride] = e;
      total += e;
    }
    for (std::size_t k = 0; k < len; ++k) out[base + k * stride] /= total;
  }
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi},
                         [xi, len, lines, stride, line_step](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self).data;
    const auto& g = t.grad(self);
    auto& gx = t.grad(xi);
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t base = l * line_step;
      T dot{0};
      for (std::size_t k = 0; k < len; ++k) dot += g[base + k * stride] * y[base + k * stride];
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t i = base + k * stride;
        gx[i] += y[i] * (g[i] - dot);
      }
    }
  });
}

// Softmax over the first `valid` entries of a vector; the rest get weight 0.
// valid == 0 or valid >= length falls back to the plain softmax.
template <typename T>
Var<T> masked_softmax(const Var<T>& x, std::size_t valid) {
  const Shape& s = x.shape();
  if (s.size() != 1) throw DimensionError("masked_softmax expects a vector, got " + shape_string(s));
  const std::size_t n = s[0];
  if (valid == 0 || valid >= n) return softmax(x, 0);
  Tensor<T> out(s);
  const auto& in = x.value().data;
  T mx = in[0];
  for (std::size_t k = 1; k < valid; ++k) mx = std::max(mx, in[k]);
  T total{0};
  for (std::size_t k = 0; k < valid; ++k) {
    out[k] = std::exp(in[k] - mx);
    total += out[k];
  }
  for (std::size_t k = 0; k < valid; ++k) out[k] /= total;
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {xi}, [xi, valid](Tape<T>& t, std::size_t self) {
    const auto& y = t.value(self).data;
    const auto& g = t.grad(self);
    auto& gx = t.grad(xi);
    T dot{0};
    for (std::size_t k = 0; k < valid; ++k) dot += g[k] * y[k];
    for (std::size_t k = 0; k < valid; ++k) gx[k] += y[k] * (g[k] - dot);
  });
}

// ---------------------------------------------------------------------------
// Structural ops

namespace detail {

// View of a tensor as [outer x extent x inner] around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 0, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace detail

template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b, std::size_t axis = 0) {
  detail::require_same_tape(a, b);
  if (b.numel() == 0) return a;
  if (a.numel() == 0) return b;
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != bs.size() || axis >= as.size()) {
    throw DimensionError("concat: incompatible ranks/axis for " + detail::pair_shapes(as, bs));
  }
  for (std::size_t i = 0; i < as.size(); ++i) {
    if (i != axis && as[i] != bs[i]) {
      throw DimensionError("concat: shapes " + detail::pair_shapes(as, bs) + " differ off axis " +
                           std::to_string(axis));
    }
  }
  Shape os = as;
  os[axis] += bs[axis];
  const auto sa = detail::split_at(as, axis);
  const auto sb = detail::split_at(bs, axis);
  Tensor<T> out(os);
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  const std::size_t ca = sa.extent * sa.inner, cb = sb.extent * sb.inner;
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy_n(av.begin() + o * ca, ca, out.data.begin() + o * (ca + cb));
    std::copy_n(bv.begin() + o * cb, cb, out.data.begin() + o * (ca + cb) + ca);
  }
  const std::size_t ai = a.id(), bi = b.id(), outer = sa.outer;
  return a.tape().record(std::move(out), {ai, bi}, [ai, bi, ca, cb, outer](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.tracked(ai)) {
      auto& ga = t.grad(ai);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < ca; ++k) ga[o * ca + k] += g[o * (ca + cb) + k];
    }
    if (t.tracked(bi)) {
      auto& gb = t.grad(bi);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < cb; ++k) gb[o * cb + k] += g[o * (ca + cb) + ca + k];
    }
  });
}

// Elements [begin, end) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " out of range for " + shape_string(s));
  }
  Shape os = s;
  os[axis] = end - begin;
  const auto sp = detail::split_at(s, axis);
  const std::size_t src_block = sp.extent * sp.inner, dst_block = (end - begin) * sp.inner,
                    offset = begin * sp.inner;
  Tensor<T> out(os);
  const auto& av = a.value().data;
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(av.begin() + o * src_block + offset, dst_block, out.data.begin() + o * dst_block);
  const std::size_t ai = a.id(), outer = sp.outer;
  return a.tape().record(std::move(out), {ai},
                         [ai, outer, src_block, dst_block, offset](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ai);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < dst_block; ++k) ga[o * src_block + offset + k] += g[o * dst_block + k];
  });
}

// Column j of a matrix as a vector.
template <typename T>
Var<T> column(const Var<T>& a, std::size_t j) {
  const Shape& s = a.shape();
  if (s.size() != 2 || j >= s[1]) {
    throw DimensionError("column " + std::to_string(j) + " out of range for " + shape_string(s));
  }
  const std::size_t r = s[0], c = s[1];
  Tensor<T> out(Shape{r});
  for (std::size_t i = 0; i < r; ++i) out[i] = a.value().data[i * c + j];
  const std::size_t ai = a.id();
  return a.tape().record(std::move(out), {ai}, [ai, r, c, j](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ai);
    for (std::size_t i = 0; i < r; ++i) ga[i * c + j] += g[i];
  });
}

// Equal-length vectors as the columns of a matrix.
template <typename T>
Var<T> stack_columns(std::span<const Var<T>> columns) {
  if (columns.empty()) throw DimensionError("stack_columns needs at least one column");
  const std::size_t r = columns[0].numel(), c = columns.size();
  Tensor<T> out(Shape{r, c});
  std::vector<std::size_t> ids;
  ids.reserve(c);
  for (std::size_t j = 0; j < c; ++j) {
    detail::require_same_tape(columns[0], columns[j]);
    if (columns[j].shape().size() != 1 || columns[j].numel() != r) {
      throw DimensionError("stack_columns: column " + std::to_string(j) + " has shape " +
                           shape_string(columns[j].shape()) + ", expected [" + std::to_string(r) + "]");
    }
    const auto& v = columns[j].value().data;
    for (std::size_t i = 0; i < r; ++i) out[i * c + j] = v[i];
    ids.push_back(columns[j].id());
  }
  Tape<T>& tape = columns[0].tape();
  return tape.record(std::move(out), ids, [ids, r, c](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (std::size_t j = 0; j < c; ++j) {
      if (!t.tracked(ids[j])) continue;
      auto& gc = t.grad(ids[j]);
      for (std::size_t i = 0; i < r; ++i) gc[i] += g[i * c + j];
    }
  });
}

// Columns of the result are rows `ids[k]` of table [V x d]. Ids equal to
// `frozen_row` read as a zero column and pass no gradient.
template <typename T>
Var<T> gather_rows_as_columns(const Var<T>& table, std::span<const std::size_t> ids,
                              std::size_t frozen_row = std::numeric_limits<std::size_t>::max()) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw DimensionError("embedding table must be a matrix, got " + shape_string(s));
  const std::size_t vocab = s[0], d = s[1], n = ids.size();
  for (std::size_t id : ids) {
    if (id >= vocab) {
      throw VocabularyError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                            std::to_string(vocab));
    }
  }
  Tensor<T> out(Shape{d, n});
  const auto& tv = table.value().data;
  for (std::size_t k = 0; k < n; ++k)
    if (ids[k] != frozen_row)
      for (std::size_t i = 0; i < d; ++i) out[i * n + k] = tv[ids[k] * d + i];
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  const std::size_t ti = table.id();
  return table.tape().record(std::move(out), {ti}, [ti, idv, d, n, frozen_row](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gt = t.grad(ti);
    for (std::size_t k = 0; k < n; ++k) {
      if (idv[k] == frozen_row) continue;
      for (std::size_t i = 0; i < d; ++i) gt[idv[k] * d + i] += g[i * n + k];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling on [c x h x w] maps, valid padding.

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, const Var<T>& bias, std::size_t stride) {
  const Shape& is = input.shape();
  const Shape& ks = kernels.shape();
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  if (is.size() != 3 || ks.size() != 4 || ks[1] != is[0]) {
    throw DimensionError("conv2d: input " + shape_string(is) + " incompatible with kernels " + shape_string(ks));
  }
  if (bias.numel() != ks[0]) {
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " for " + std::to_string(ks[0]) +
                         " output channels");
  }
  const std::size_t c = is[0], h = is[1], w = is[2];
  const std::size_t o = ks[0], kh = ks[2], kw = ks[3];
  if (h < kh || w < kw) {
    throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than input " + shape_string(is));
  }
  const std::size_t oh = (h - kh) / stride + 1, ow = (w - kw) / stride + 1;
  Tensor<T> out(Shape{o, oh, ow});
  const auto& X = input.value().data;
  const auto& K = kernels.value().data;
  const auto& B = bias.value().data;
  for (std::size_t f = 0; f < o; ++f) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        T acc = B[f];
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx)
              acc += K[((f * c + ch) * kh + dy) * kw + dx] * X[(ch * h + y * stride + dy) * w + x * stride + dx];
        out[(f * oh + y) * ow + x] = acc;
      }
    }
  }
  const std::size_t ii = input.id(), ki = kernels.id(), bi = bias.id();
  return input.tape().record(std::move(out), {ii, ki, bi},
                             [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& X = t.value(ii).data;
    const auto& K = t.value(ki).data;
    T* gx = t.tracked(ii) ? t.grad(ii).data() : nullptr;
    T* gk = t.tracked(ki) ? t.grad(ki).data() : nullptr;
    T* gb = t.tracked(bi) ? t.grad(bi).data() : nullptr;
    for (std::size_t f = 0; f < o; ++f) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          const T go = g[(f * oh + y) * ow + x];
          if (gb) gb[f] += go;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t dy = 0; dy < kh; ++dy)
              for (std::size_t dx = 0; dx < kw; ++dx) {
                const std::size_t kidx = ((f * c + ch) * kh + dy) * kw + dx;
                const std::size_t xidx = (ch * h + y * stride + dy) * w + x * stride + dx;
                if (gk) gk[kidx] += go * X[xidx];
                if (gx) gx[xidx] += go * K[kidx];
              }
        }
      }
    }
  });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& input, std::size_t size, std::size_t stride) {
  const Shape& is = input.shape();
  if (is.size() != 3 || size == 0 || stride == 0) {
    throw DimensionError("maxpool2d: bad input " + shape_string(is) + " or window");
  }
  const std::size_t c = is[0], h = is[1], w = is[2];
  if (h < size || w < size) {
    throw DimensionError("maxpool2d: window " + std::to_string(size) + " larger than input " + shape_string(is));
  }
  const std::size_t oh = (h - size) / stride + 1, ow = (w - size) / stride + 1;
  Tensor<T> out(Shape{c, oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  const auto& X = input.value().data;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (ch * h + y * stride) * w + x * stride;
        for (std::size_t dy = 0; dy < size; ++dy)
          for (std::size_t dx = 0; dx < size; ++dx) {
            const std::size_t idx = (ch * h + y * stride + dy) * w + x * stride + dx;
            if (X[idx] > X[best]) best = idx;
          }
        const std::size_t o = (ch * oh + y) * ow + x;
        out[o] = X[best];
        argmax[o] = best;
      }
  const std::size_t ii = input.id();
  return input.tape().record(std::move(out), {ii}, [ii, argmax](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gi = t.grad(ii);
    for (std::size_t o = 0; o < g.size(); ++o) gi[argmax[o]] += g[o];
  });
}

// Average over all spatial positions: [c x h x w] -> [c].
template <typename T>
Var<T> meanpool(const Var<T>& input) {
  const Shape& is = input.shape();
  if (is.size() != 3) throw DimensionError("meanpool expects [c x h x w], got " + shape_string(is));
  const std::size_t c = is[0], hw = is[1] * is[2];
  Tensor<T> out(Shape{c});
  const auto& X = input.value().data;
  const T inv = T{1} / static_cast<T>(hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T acc{0};
    for (std::size_t k = 0; k < hw; ++k) acc += X[ch * hw + k];
    out[ch] = acc * inv;
  }
  const std::size_t ii = input.id();
  return input.tape().record(std::move(out), {ii}, [ii, c, hw, inv](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& gi = t.grad(ii);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < hw; ++k) gi[ch * hw + k] += g[ch] * inv;
  });
}

// ---------------------------------------------------------------------------
// Binary cross-entropy summed over slots. Probabilities are clamped to
// [clamp, 1 - clamp] before the log; clamped slots pass no gradient.

template <typename T>
Var<T> bce_sum(const Var<T>& probs, const Tensor<T>& targets, T clamp = T(1e-7)) {
  if (probs.numel() != targets.numel()) {
    throw DimensionError("bce: predictions " + shape_string(probs.shape()) + " vs targets " +
                         shape_string(targets.shape));
  }
  const auto& p = probs.value().data;
  const T lo = clamp, hi = T{1} - clamp;
  T acc{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T pc = std::clamp(p[i], lo, hi);
    const T y = targets[i];
    acc += -(y * std::log(pc) + (T{1} - y) * std::log(T{1} - pc));
  }
  const std::size_t pi = probs.id();
  return probs.tape().record(Tensor<T>::scalar(acc), {pi}, [pi, targets, lo, hi](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    const auto& p = t.value(pi).data;
    auto& gp = t.grad(pi);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] < lo || p[i] > hi) continue;
      const T y = targets[i];
      gp[i] += g * (-y / p[i] + (T{1} - y) / (T{1} - p[i]));
    }
  });
}

}  // namespace muvam::ops
