#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "muvam/errors.hpp"
#include "muvam/init.hpp"
#include "muvam/ops.hpp"
#include "muvam/tape.hpp"

namespace muvam {

// ---------------------------------------------------------------------------
// Low-rank bilinear attention fusion.
//
// Per glimpse g with rank r:
//   hv    = relu(U_g v)                      [r]
//   H     = relu(V_g Q_m)                    [r x n]
//   alpha = softmax(H^T (p_g . hv))          [n]   bilinear word attention
//   f_g   = hv . (H alpha)                   [r]   attended joint feature
// and M = sum_g P_g f_g                      [d_f]
//
// No biases, so all-zero projections give M = 0.

struct FusionConfig {
  std::size_t rank = 256;
  std::size_t glimpses = 2;
  std::size_t out_dim = 1024;
};

template <typename T>
struct FusionGlimpse {
  Tensor<T> u;    // r x d_k
  Tensor<T> v;    // r x d_s
  Tensor<T> p;    // r
  Tensor<T> out;  // d_f x r
};

template <typename T>
struct FusionWeights {
  std::vector<FusionGlimpse<T>> glimpses;

  static FusionWeights init(std::size_t d_k, std::size_t d_s, const FusionConfig& c, Rng& rng) {
    FusionWeights w;
    for (std::size_t g = 0; g < c.glimpses; ++g) {
      FusionGlimpse<T> gl;
      gl.u = xavier_param<T>({c.rank, d_k}, d_k, c.rank, rng);
      gl.v = xavier_param<T>({c.rank, d_s}, d_s, c.rank, rng);
      gl.p = xavier_param<T>({c.rank}, c.rank, 1, rng);
      gl.out = xavier_param<T>({c.out_dim, c.rank}, c.rank, c.out_dim, rng);
      w.glimpses.push_back(std::move(gl));
    }
    return w;
  }

  std::size_t out_dim() const { return glimpses.at(0).out.shape.at(0); }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    for (std::size_t g = 0; g < glimpses.size(); ++g) {
      const std::string p = prefix + "glimpse" + std::to_string(g) + ".";
      fn(p + "u", glimpses[g].u);
      fn(p + "v", glimpses[g].v);
      fn(p + "p", glimpses[g].p);
      fn(p + "out", glimpses[g].out);
    }
  }
};

template <typename T>
Var<T> bilinear_fuse(Tape<T>& tape, const Var<T>& v, const Var<T>& q_m, FusionWeights<T>& w) {
  using namespace ops;
  if (w.glimpses.empty()) throw ConfigError("bilinear_fuse: at least one glimpse is required");
  const auto& g0 = w.glimpses.front();
  if (v.shape().size() != 1 || v.shape()[0] != g0.u.shape.at(1)) {
    throw DimensionError("bilinear_fuse: image feature " + shape_string(v.shape()) + " vs expected [" +
                         std::to_string(g0.u.shape.at(1)) + "]");
  }
  if (q_m.shape().size() != 2 || q_m.shape()[0] != g0.v.shape.at(1)) {
    throw DimensionError("bilinear_fuse: question feature " + shape_string(q_m.shape()) + " vs expected " +
                         std::to_string(g0.v.shape.at(1)) + " x n");
  }
  Var<T> fused;
  for (auto& gl : w.glimpses) {
    Var<T> hv = relu(matmul(tape.parameter(gl.u), v));
    Var<T> hq = relu(matmul(tape.parameter(gl.v), q_m));
    Var<T> alpha = softmax(matmul(transpose(hq), hadamard(tape.parameter(gl.p), hv)), 0);
    Var<T> joint = hadamard(hv, matmul(hq, alpha));
    Var<T> out = matmul(tape.parameter(gl.out), joint);
    fused = fused.valid() ? add(fused, out) : out;
  }
  return fused;
}

// ---------------------------------------------------------------------------
// Two-layer MLP classifier with per-answer sigmoid scores.

template <typename T>
struct ClassifierHead {
  Tensor<T> w1, b1;  // hidden x d_f, hidden
  Tensor<T> w2, b2;  // answers x hidden, answers

  static ClassifierHead init(std::size_t d_f, std::size_t hidden, std::size_t answers, Rng& rng) {
    ClassifierHead h;
    h.w1 = xavier_param<T>({hidden, d_f}, d_f, hidden, rng);
    // Nonzero so a dead fusion glimpse (M = 0) does not park every hidden
    // unit on the ReLU kink.
    h.b1 = uniform_param<T>({hidden}, 1.0 / std::sqrt(static_cast<double>(d_f)), rng);
    h.w2 = xavier_param<T>({answers, hidden}, hidden, answers, rng);
    h.b2 = zero_param<T>({answers});
    return h;
  }

  std::size_t answers() const { return w2.shape.at(0); }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    fn(prefix + "w1", w1);
    fn(prefix + "b1", b1);
    fn(prefix + "w2", w2);
    fn(prefix + "b2", b2);
  }
};

template <typename T>
Var<T> classifier_logits(Tape<T>& tape, const Var<T>& m, ClassifierHead<T>& head) {
  using namespace ops;
  if (m.shape().size() != 1 || m.shape()[0] != head.w1.shape.at(1)) {
    throw DimensionError("classify: fused feature " + shape_string(m.shape()) + " vs head input [" +
                         std::to_string(head.w1.shape.at(1)) + "]");
  }
  Var<T> h = relu(add(matmul(tape.parameter(head.w1), m), tape.parameter(head.b1)));
  return add(matmul(tape.parameter(head.w2), h), tape.parameter(head.b2));
}

struct AnswerDistribution {
  std::vector<double> probabilities;
  std::size_t predicted = 0;
};

// Index of the largest value; ties resolve to the lowest index.
template <typename Range>
std::size_t argmax_lowest(const Range& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

// The prediction is taken over logits: sigmoid is strictly increasing, so
// this is the probability argmax without saturation-induced ties.
template <typename T>
AnswerDistribution distribution_from_logits(const Tensor<T>& logits) {
  AnswerDistribution d;
  d.probabilities.reserve(logits.numel());
  for (const T& z : logits.data) d.probabilities.push_back(static_cast<double>(ops::sigmoid_scalar(z)));
  d.predicted = argmax_lowest(logits.data);
  return d;
}

template <typename T>
AnswerDistribution classify(Tape<T>& tape, const Var<T>& m, ClassifierHead<T>& head) {
  return distribution_from_logits(classifier_logits(tape, m, head).value());
}

// ---------------------------------------------------------------------------
// Losses

struct LossBreakdown {
  double l_c = 0.0;
  double l_mq = 0.0;
  double gamma = 0.0;
  double total = 0.0;
};

// One head's BCE: per-sample sum over answer slots, averaged over samples.
// No samples contributes exactly 0.
template <typename T>
Var<T> head_bce(Tape<T>& tape, std::span<const Var<T>> probs, std::span<const Tensor<T>> targets) {
  using namespace ops;
  if (probs.size() != targets.size()) {
    throw DimensionError("classification_loss: " + std::to_string(probs.size()) + " predictions vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (probs.empty()) return tape.constant(Tensor<T>::scalar(T{0}));
  Var<T> total;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    Var<T> l = bce_sum(probs[i], targets[i]);
    total = total.valid() ? add(total, l) : l;
  }
  return scale(total, T{1} / static_cast<T>(probs.size()));
}

// L_c = BCE(closed) + BCE(open).
template <typename T>
Var<T> classification_loss(Tape<T>& tape, std::span<const Var<T>> closed_probs,
                           std::span<const Tensor<T>> closed_targets, std::span<const Var<T>> open_probs,
                           std::span<const Tensor<T>> open_targets) {
  return ops::add(head_bce(tape, closed_probs, closed_targets), head_bce(tape, open_probs, open_targets));
}

// L_mq = ||a_m - a_q||^2.
template <typename T>
Var<T> iqc_loss(const Var<T>& a_m, const Var<T>& a_q) {
  if (a_m.shape() != a_q.shape()) {
    throw DimensionError("iqc_loss: attention lengths differ, " + shape_string(a_m.shape()) + " vs " +
                         shape_string(a_q.shape()));
  }
  Var<T> diff = ops::sub(a_m, a_q);
  return ops::sum(ops::hadamard(diff, diff));
}

inline void require_valid_gamma(double gamma) {
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0, got " + std::to_string(gamma));
}

// Loss = L_c + gamma * L_mq.
template <typename T>
Var<T> composite_loss(const Var<T>& l_c, const Var<T>& l_mq, double gamma) {
  require_valid_gamma(gamma);
  return ops::add(l_c, ops::scale(l_mq, static_cast<T>(gamma)));
}

inline LossBreakdown composite_loss(double l_c, double l_mq, double gamma) {
  require_valid_gamma(gamma);
  return LossBreakdown{l_c, l_mq, gamma, l_c + gamma * l_mq};
}

}  // namespace muvam
