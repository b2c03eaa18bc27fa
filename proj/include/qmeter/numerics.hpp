#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "qmeter/errors.hpp"

namespace qmeter {

using cplx = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;

/// Uniform abscissae x_i = start + i * step, i = 0..size-1.
struct UniformGrid {
  double start = 0.0;
  double step = 1.0;
  std::size_t size = 0;

  double operator[](std::size_t i) const { return start + step * static_cast<double>(i); }
  double back() const { return (*this)[size - 1]; }

  static UniformGrid symmetric(double half_width, std::size_t n) {
    return {-half_width, 2.0 * half_width / static_cast<double>(n - 1), n};
  }
};

/// Composite Simpson weights for an odd number of uniform points.
inline std::vector<double> simpson_weights(std::size_t n, double h) {
  if (n < 3 || n % 2 == 0) {
    throw ValidationError("Simpson quadrature needs an odd number of points >= 3");
  }
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = (i == 0 || i == n - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    w[i] *= h / 3.0;
  }
  return w;
}

template <typename T>
T simpson(std::span<const T> f, double h) {
  const std::size_t n = f.size();
  if (n < 3 || n % 2 == 0) {
    throw ValidationError("Simpson quadrature needs an odd number of points >= 3");
  }
  T odd{}, even{};
  for (std::size_t i = 1; i + 1 < n; i += 2) odd += f[i];
  for (std::size_t i = 2; i + 1 < n; i += 2) even += f[i];
  return (f[0] + f[n - 1] + 4.0 * odd + 2.0 * even) * (h / 3.0);
}

/// Fourth-order finite-difference derivative on a uniform grid: five-point central
/// stencil in the interior, five-point one-sided stencils at the two outermost
/// nodes on either side.
template <typename T>
std::vector<T> derivative4(std::span<const T> f, double h) {
  const std::size_t n = f.size();
  if (n < 5) throw ValidationError("derivative stencil needs at least 5 points");
  std::vector<T> d(n);
  const double s = 1.0 / (12.0 * h);
  for (std::size_t i = 2; i + 2 < n; ++i) {
    d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) * s;
  }
  d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) * s;
  d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) * s;
  const std::size_t m = n - 1;
  d[m] = (25.0 * f[m] - 48.0 * f[m - 1] + 36.0 * f[m - 2] - 16.0 * f[m - 3] + 3.0 * f[m - 4]) * s;
  d[m - 1] = (3.0 * f[m] + 10.0 * f[m - 1] - 18.0 * f[m - 2] + 6.0 * f[m - 3] - f[m - 4]) * s;
  return d;
}

/// Four-point Lagrange interpolation of uniformly sampled values; zero outside the grid.
template <typename T>
T interpolate_cubic(const UniformGrid& grid, std::span<const T> f, double x) {
  const double u = (x - grid.start) / grid.step;
  if (u < 0.0 || u > static_cast<double>(grid.size - 1)) return T{};
  auto i = static_cast<std::ptrdiff_t>(std::floor(u));
  const auto last = static_cast<std::ptrdiff_t>(grid.size) - 1;
  i = std::clamp<std::ptrdiff_t>(i - 1, 0, last - 3);
  const double t = u - static_cast<double>(i);
  // Nodes at t = 0, 1, 2, 3.
  const double l0 = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0;
  const double l1 = t * (t - 2.0) * (t - 3.0) / 2.0;
  const double l2 = -t * (t - 1.0) * (t - 3.0) / 2.0;
  const double l3 = t * (t - 1.0) * (t - 2.0) / 6.0;
  return f[i] * l0 + f[i + 1] * l1 + f[i + 2] * l2 + f[i + 3] * l3;
}

inline bool approx_equal(double a, double b, double rel, double abs = 0.0) {
  return std::abs(a - b) <= std::max(abs, rel * std::max(std::abs(a), std::abs(b)));
}

}  // namespace qmeter
