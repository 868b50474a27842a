#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "cdpad/rng.hpp"
#include "cdpad/tensor.hpp"

namespace cdpad {

/// Central-difference verification of an analytic gradient. The error per
/// coordinate is |analytic - numeric| / max(1, |numeric|); the result holds
/// the maximum over the checked coordinates. Only deterministic functions
/// give a reliable verdict.
struct GradCheckResult {
  bool pass = false;
  double max_rel_error = 0.0;
  std::int64_t coords_checked = 0;
};

template <class T>
constexpr T gradcheck_default_step() {
  return sizeof(T) >= 8 ? T(1e-6) : T(1e-4);
}

/// f: scalar-valued function of x. analytic: df/dx at x, same shape as x.
/// When max_coords > 0 and smaller than numel, a deterministic pseudo-random
/// subset of coordinates is probed.
template <class T>
GradCheckResult finite_difference_check(
    const std::function<T(const TensorT<T>&)>& f, const TensorT<T>& x,
    const TensorT<T>& analytic, T tolerance,
    T step = gradcheck_default_step<T>(), std::int64_t max_coords = -1,
    std::uint64_t sample_seed = 17) {
  GradCheckResult result;
  const std::int64_t n = x.numel();
  std::vector<std::int64_t> coords;
  if (max_coords > 0 && max_coords < n) {
    Rng rng(derive_seed(sample_seed, "gradcheck-coords"));
    coords.reserve(static_cast<std::size_t>(max_coords));
    for (std::int64_t i = 0; i < max_coords; ++i)
      coords.push_back(static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(n))));
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  } else {
    coords.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
  }

  TensorT<T> probe = x;
  for (std::int64_t i : coords) {
    const std::size_t ii = static_cast<std::size_t>(i);
    const T original = probe.data[ii];
    probe.data[ii] = original + step;
    const double fp = static_cast<double>(f(probe));
    probe.data[ii] = original - step;
    const double fm = static_cast<double>(f(probe));
    probe.data[ii] = original;
    const double numeric = (fp - fm) / (2.0 * static_cast<double>(step));
    const double err = std::abs(static_cast<double>(analytic.data[ii]) - numeric) /
                       std::max(1.0, std::abs(numeric));
    result.max_rel_error = std::max(result.max_rel_error, err);
    ++result.coords_checked;
  }
  result.pass = result.max_rel_error < static_cast<double>(tolerance);
  return result;
}

}  // namespace cdpad
