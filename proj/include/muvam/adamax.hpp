#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "muvam/errors.hpp"
#include "muvam/tensor.hpp"

namespace muvam {

struct AdamaxOptions {
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First moment and exponentially weighted infinity norm for one tensor.
template <typename T>
struct AdamaxSlot {
  std::vector<T> m;
  std::vector<T> u;
};

// One coordinatewise Adamax update with bias-corrected step size
// lr / (1 - beta1^t), where t is the (already incremented) step count:
//   m <- b1 m + (1 - b1) g
//   u <- max(b2 u, |g|)
//   theta <- theta - lr_t * m / (u + eps)
template <typename T>
void adamax_update(std::span<T> params, std::span<const T> grads, AdamaxSlot<T>& slot, std::size_t step,
                   const AdamaxOptions& opt) {
  if (params.size() != grads.size()) {
    throw DimensionError("adamax: " + std::to_string(params.size()) + " parameters vs " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (!(opt.learning_rate > 0.0)) throw ConfigError("adamax: learning rate must be positive");
  if (step == 0) throw UsageError("adamax: step count starts at 1");
  if (slot.m.empty()) {
    slot.m.assign(params.size(), T{0});
    slot.u.assign(params.size(), T{0});
  }
  if (slot.m.size() != params.size()) throw DimensionError("adamax: optimizer state does not match parameter size");
  const T b1 = static_cast<T>(opt.beta1);
  const T b2 = static_cast<T>(opt.beta2);
  const T eps = static_cast<T>(opt.epsilon);
  const T lr_t = static_cast<T>(opt.learning_rate / (1.0 - std::pow(opt.beta1, static_cast<double>(step))));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    slot.m[i] = b1 * slot.m[i] + (T{1} - b1) * g;
    slot.u[i] = std::max(b2 * slot.u[i], std::abs(g));
    params[i] -= lr_t * slot.m[i] / (slot.u[i] + eps);
  }
}

// Optimizer state for an ordered parameter list. The list order must be the
// same on every call (MuvamModel::visit guarantees this).
template <typename T>
class Adamax {
 public:
  explicit Adamax(AdamaxOptions opt = {}) : opt_(opt) {}

  const AdamaxOptions& options() const { return opt_; }
  std::size_t steps() const { return t_; }
  const std::vector<AdamaxSlot<T>>& slots() const { return slots_; }

  void step(std::span<Tensor<T>* const> params) {
    if (slots_.empty()) slots_.resize(params.size());
    if (slots_.size() != params.size()) throw DimensionError("adamax: parameter list changed between steps");
    ++t_;
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& p = *params[k];
      if (!p.requires_grad) continue;
      if (!p.grad) throw UsageError("adamax: parameter without gradient");
      adamax_update<T>(std::span<T>(p.data), std::span<const T>(*p.grad), slots_[k], t_, opt_);
    }
  }

 private:
  AdamaxOptions opt_;
  std::vector<AdamaxSlot<T>> slots_;
  std::size_t t_ = 0;
};

}  // namespace muvam
