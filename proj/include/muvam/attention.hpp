#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "muvam/errors.hpp"
#include "muvam/init.hpp"
#include "muvam/ops.hpp"
#include "muvam/tape.hpp"

namespace muvam {

enum class AttentionView { kW2T, kI2Q };

inline const char* to_string(AttentionView v) { return v == AttentionView::kW2T ? "W2T" : "I2Q"; }

// Per-word weights on the n-simplex, detached from any tape.
struct AttentionWeights {
  std::vector<double> weights;
  AttentionView view = AttentionView::kW2T;

  std::size_t size() const { return weights.size(); }
  double operator[](std::size_t i) const { return weights[i]; }
};

template <typename T>
AttentionWeights to_attention_weights(const Var<T>& a, AttentionView view) {
  AttentionWeights w;
  w.view = view;
  w.weights.assign(a.value().data.begin(), a.value().data.end());
  return w;
}

// Word-to-text weights: W1, W2 map the stacked [D; Q] column to d_s, W3
// reduces the gated result to one score per word.
template <typename T>
struct W2TWeights {
  Tensor<T> w1;  // d_s x (d_h + d_s)
  Tensor<T> w2;  // d_s x (d_h + d_s)
  Tensor<T> w3;  // 1 x d_s

  static W2TWeights init(std::size_t d_h, std::size_t d_s, Rng& rng) {
    W2TWeights w;
    w.w1 = xavier_param<T>({d_s, d_h + d_s}, d_h + d_s, d_s, rng);
    w.w2 = xavier_param<T>({d_s, d_h + d_s}, d_h + d_s, d_s, rng);
    w.w3 = xavier_param<T>({1, d_s}, d_s, 1, rng);
    return w;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + "w1", w1);
    fn(prefix + "w2", w2);
    fn(prefix + "w3", w3);
  }
};

// MLP(v): d_k -> hidden (ReLU) -> d_s.
template <typename T>
struct I2QProjection {
  Tensor<T> w_hidden, b_hidden;  // hidden x d_k, hidden
  Tensor<T> w_out, b_out;        // d_s x hidden, d_s

  static I2QProjection init(std::size_t d_k, std::size_t hidden, std::size_t d_s, Rng& rng) {
    I2QProjection p;
    p.w_hidden = xavier_param<T>({hidden, d_k}, d_k, hidden, rng);
    p.b_hidden = zero_param<T>({hidden});
    p.w_out = xavier_param<T>({d_s, hidden}, hidden, d_s, rng);
    p.b_out = zero_param<T>({d_s});
    return p;
  }

  std::size_t output_dim() const { return w_out.shape.at(0); }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + "w_hidden", w_hidden);
    fn(prefix + "b_hidden", b_hidden);
    fn(prefix + "w_out", w_out);
    fn(prefix + "b_out", b_out);
  }
};

namespace detail {

template <typename T>
Var<T> attention_softmax(const Var<T>& scores, std::optional<std::size_t> valid) {
  return valid ? ops::masked_softmax(scores, *valid) : ops::softmax(scores, 0);
}

}  // namespace detail

// Unnormalized W2T scores (W3 * (tanh(W1 Qc) . sigmoid(W2 Qc)))^T, Qc = [D; Q].
template <typename T>
Var<T> w2t_scores(Tape<T>& tape, const Var<T>& d, const Var<T>& q, W2TWeights<T>& w) {
  using namespace ops;
  if (d.shape().size() != 2 || q.shape().size() != 2 || d.shape()[1] != q.shape()[1]) {
    throw DimensionError("w2t_attention: D " + shape_string(d.shape()) + " and Q " + shape_string(q.shape()) +
                         " must share n columns");
  }
  Var<T> qc = concat(d, q, 0);
  Var<T> gated = hadamard(tanh(matmul(tape.parameter(w.w1), qc)), sigmoid(matmul(tape.parameter(w.w2), qc)));
  Var<T> row = matmul(tape.parameter(w.w3), gated);  // 1 x n
  return reshape(row, Shape{row.shape()[1]});
}

// a_q [n]. `valid` restricts the softmax to the first `valid` words.
template <typename T>
Var<T> w2t_attention(Tape<T>& tape, const Var<T>& d, const Var<T>& q, W2TWeights<T>& w,
                     std::optional<std::size_t> valid = std::nullopt) {
  return detail::attention_softmax(w2t_scores(tape, d, q, w), valid);
}

template <typename T>
Var<T> i2q_projection(Tape<T>& tape, const Var<T>& v, I2QProjection<T>& proj) {
  using namespace ops;
  if (v.shape().size() != 1 || v.shape()[0] != proj.w_hidden.shape.at(1)) {
    throw DimensionError("i2q_attention: image feature " + shape_string(v.shape()) + " but projection expects [" +
                         std::to_string(proj.w_hidden.shape.at(1)) + "]");
  }
  Var<T> h = relu(add(matmul(tape.parameter(proj.w_hidden), v), tape.parameter(proj.b_hidden)));
  return add(matmul(tape.parameter(proj.w_out), h), tape.parameter(proj.b_out));
}

// Unnormalized I2Q scores Q^T MLP(v), one per word.
template <typename T>
Var<T> i2q_scores(Tape<T>& tape, const Var<T>& q, const Var<T>& v, I2QProjection<T>& proj) {
  Var<T> m = i2q_projection(tape, v, proj);
  if (q.shape().size() != 2 || q.shape()[0] != m.numel()) {
    throw DimensionError("i2q_attention: Q " + shape_string(q.shape()) + " does not match projected image [" +
                         std::to_string(m.numel()) + "]");
  }
  return ops::matmul(ops::transpose(q), m);
}

// a_m [n].
template <typename T>
Var<T> i2q_attention(Tape<T>& tape, const Var<T>& q, const Var<T>& v, I2QProjection<T>& proj,
                     std::optional<std::size_t> valid = std::nullopt) {
  return detail::attention_softmax(i2q_scores(tape, q, v, proj), valid);
}

// Q_m: column j of Q scaled by a_m[j].
template <typename T>
Var<T> apply_visual_guidance(const Var<T>& q, const Var<T>& a_m) {
  if (q.shape().size() != 2 || a_m.shape().size() != 1 || a_m.shape()[0] != q.shape()[1]) {
    throw DimensionError("apply_visual_guidance: weights " + shape_string(a_m.shape()) + " vs Q " +
                         shape_string(q.shape()));
  }
  return ops::hadamard(q, a_m);
}

}  // namespace muvam
