#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "muvam/errors.hpp"
#include "muvam/rng.hpp"
#include "muvam/tensor.hpp"

namespace muvam {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor = nullptr;
};

struct GradCheckEntry {
  std::string name;
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  // ||a - n|| / max(||a||, ||n||, 1e-8) over the probed coordinates.
  double tensor_rel_error = 0.0;
  double epsilon = 0.0;  // step the reported numbers come from
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::string worst;
  double max_tensor_rel_error = 0.0;
  std::string worst_tensor;
};

// |a - n| / max(|a|, |n|, 1e-8)
inline double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Probe at most this many coordinates per tensor (0: all of them).
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // A tensor whose error exceeds `retry_above` is probed again at each of
  // `fallback_steps`, keeping the step with the smallest error. A step that
  // straddles a ReLU kink or drowns a tiny gradient in roundoff fails at one
  // end of the ladder only; a wrong derivative fails at every step.
  double retry_above = std::numeric_limits<double>::infinity();
  std::vector<double> fallback_steps;
};

// Compares analytic gradients against central differences.
//
// `analytic` must run forward + backward so that every tensor's grad field is
// populated; `loss` evaluates the scalar objective only.
template <typename T>
GradCheckReport grad_check(const std::function<T()>& loss, const std::function<void()>& analytic,
                           std::span<const NamedTensor<T>> params, const GradCheckOptions& opt) {
  if (!(opt.epsilon > 0.0)) throw UsageError("grad_check: epsilon must be positive");
  for (double h : opt.fallback_steps) {
    if (!(h > 0.0)) throw UsageError("grad_check: fallback steps must be positive");
  }
  analytic();
  Rng rng(opt.seed);
  GradCheckReport report;
  for (const auto& p : params) {
    Tensor<T>& tensor = *p.tensor;
    if (!tensor.grad || tensor.grad->size() != tensor.numel()) {
      throw UsageError("grad_check: tensor '" + p.name + "' has no gradient after the analytic pass");
    }
    const std::vector<T> grads = *tensor.grad;
    std::vector<std::size_t> coords(tensor.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords != 0 && opt.max_coords < coords.size()) {
      rng.shuffle(coords);
      coords.resize(opt.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    auto probe = [&](double step) {
      const T h = static_cast<T>(step);
      GradCheckEntry entry;
      entry.name = p.name;
      entry.epsilon = step;
      double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
      for (std::size_t idx : coords) {
        const T saved = tensor.data[idx];
        tensor.data[idx] = saved + h;
        const T plus = loss();
        tensor.data[idx] = saved - h;
        const T minus = loss();
        tensor.data[idx] = saved;
        const double numeric = (static_cast<double>(plus) - static_cast<double>(minus)) / (2.0 * static_cast<double>(h));
        const double a = static_cast<double>(grads[idx]);
        const double err = gradient_relative_error(a, numeric);
        diff2 += (a - numeric) * (a - numeric);
        a2 += a * a;
        n2 += numeric * numeric;
        ++entry.coords_checked;
        if (err > entry.max_rel_error || entry.coords_checked == 1) {
          entry.max_rel_error = err;
          entry.worst_index = idx;
          entry.analytic = a;
          entry.numeric = numeric;
        }
      }
      entry.tensor_rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
      return entry;
    };
    GradCheckEntry entry = probe(opt.epsilon);
    if (entry.tensor_rel_error > opt.retry_above) {
      for (double step : opt.fallback_steps) {
        GradCheckEntry again = probe(step);
        if (again.tensor_rel_error < entry.tensor_rel_error) entry = std::move(again);
        if (entry.tensor_rel_error <= opt.retry_above) break;
      }
    }
    if (entry.tensor_rel_error > report.max_tensor_rel_error || report.entries.empty()) {
      report.max_tensor_rel_error = entry.tensor_rel_error;
      report.worst_tensor = entry.name;
    }
    if (entry.max_rel_error > report.max_rel_error || report.entries.empty()) {
      report.max_rel_error = entry.max_rel_error;
      report.worst = entry.name;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

// Single-step form: every tensor at `epsilon`, optionally sampled.
template <typename T>
GradCheckReport grad_check(const std::function<T()>& loss, const std::function<void()>& analytic,
                           std::span<const NamedTensor<T>> params, T epsilon = T(1e-5),
                           std::size_t max_coords = 0, std::uint64_t seed = 0) {
  GradCheckOptions opt;
  opt.epsilon = static_cast<double>(epsilon);
  opt.max_coords = max_coords;
  opt.seed = seed;
  return grad_check<T>(loss, analytic, params, opt);
}

}  // namespace muvam
