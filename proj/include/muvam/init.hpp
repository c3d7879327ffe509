#pragma once

#include <cmath>
#include <cstddef>

#include "muvam/rng.hpp"
#include "muvam/tensor.hpp"

namespace muvam {

template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& x : t.data) x = static_cast<T>(rng.uniform(-bound, bound));
  t.requires_grad = true;
  return t;
}

// Glorot/Xavier uniform: bound sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> xavier_param(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_param<T>(std::move(shape), bound, rng);
}

template <typename T>
Tensor<T> zero_param(Shape shape) {
  Tensor<T> t(std::move(shape));
  t.requires_grad = true;
  return t;
}

}  // namespace muvam
