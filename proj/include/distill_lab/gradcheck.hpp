#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "distill_lab/tensor.hpp"

namespace distill_lab {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +-1e-3 neighbourhood crosses a ReLU kink.
  std::size_t skipped = 0;
};

/// Compares the reverse-mode gradient of a scalar function at `point` with
/// central differences (f(x+h) - f(x-h)) / 2h, coordinate by coordinate.
/// Relative error uses the denominator max(|g_autodiff|, |g_numeric|, 1e-8).
template <std::floating_point T>
GradCheckResult finite_diff_check(const std::function<BasicTensor<T>(const BasicTensor<T>&)>& fn,
                                  const BasicTensor<T>& point, T h = T(1e-5), T kink_radius = T(1e-3)) {
  auto x = point.detach();
  x.set_requires_grad(true);
  fn(x).backward();
  const auto analytic = x.grad_tensor();

  auto eval = [&](std::size_t i, T offset, std::uint64_t* pattern) {
    auto probe = point.detach();
    probe.mutable_data()[i] += offset;
    std::uint64_t hash = 0;
    detail::kink_probe = &hash;
    T value;
    {
      NoGradGuard guard;
      value = fn(probe).item();
    }
    detail::kink_probe = nullptr;
    if (pattern) *pattern = hash;
    return value;
  };

  GradCheckResult result;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    std::uint64_t lo = 0, hi = 0;
    eval(i, -kink_radius, &lo);
    eval(i, kink_radius, &hi);
    if (lo != hi) {
      ++result.skipped;
      continue;
    }
    const T numeric = (eval(i, h, nullptr) - eval(i, -h, nullptr)) / (T{2} * h);
    const T g = analytic[i];
    const double denom = std::max({std::abs(double(g)), std::abs(double(numeric)), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(double(g) - double(numeric)) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace distill_lab
