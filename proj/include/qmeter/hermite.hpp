#pragma once

// Hermite-function superpositions: a smooth, square-integrable family of
// non-Gaussian reduction functions used to probe the noise inequality.

#include <algorithm>
#include <cmath>
#include <vector>

#include "qmeter/numerics.hpp"
#include "qmeter/random.hpp"
#include "qmeter/reduction_kernels.hpp"

namespace qmeter {

/// Orthonormal Hermite functions psi_0..psi_{n_max} at y (three-term recurrence).
inline std::vector<double> hermite_functions(int n_max, double y) {
  std::vector<double> psi(static_cast<std::size_t>(n_max) + 1);
  psi[0] = std::pow(kPi, -0.25) * std::exp(-0.5 * y * y);
  if (n_max >= 1) psi[1] = std::sqrt(2.0) * y * psi[0];
  for (int n = 1; n < n_max; ++n) {
    psi[n + 1] = std::sqrt(2.0 / (n + 1)) * y * psi[n] - std::sqrt(static_cast<double>(n) / (n + 1)) * psi[n - 1];
  }
  return psi;
}

/// Omega(x) = sum_n c_n psi_n((x + shift) / scale) / sqrt(scale).
struct HermiteSuperposition {
  std::vector<cplx> coefficients;
  double scale = 1.0;
  double shift = 0.0;

  int max_order() const { return static_cast<int>(coefficients.size()) - 1; }

  cplx operator()(double x) const {
    const auto psi = hermite_functions(max_order(), (x + shift) / scale);
    cplx s{};
    for (std::size_t n = 0; n < coefficients.size(); ++n) s += coefficients[n] * psi[n];
    return s / std::sqrt(scale);
  }

  /// <y> of the unshifted superposition, from ladder-operator matrix elements.
  double unshifted_mean() const {
    double m = 0.0;
    for (std::size_t n = 0; n + 1 < coefficients.size(); ++n) {
      m += 2.0 * std::sqrt((n + 1) / 2.0) * (std::conj(coefficients[n]) * coefficients[n + 1]).real();
    }
    return m * scale;
  }
};

/// Random normalized superposition of psi_0..psi_max_order with complex coefficients,
/// shifted so that its first moment vanishes.
inline HermiteSuperposition random_hermite_superposition(Rng& rng, int max_order, double scale = 1.0) {
  HermiteSuperposition h;
  h.scale = scale;
  h.coefficients.resize(static_cast<std::size_t>(max_order) + 1);
  double norm = 0.0;
  for (auto& c : h.coefficients) {
    c = cplx(rng.normal(), rng.normal());
    norm += std::norm(c);
  }
  for (auto& c : h.coefficients) c /= std::sqrt(norm);
  h.shift = h.unshifted_mean();
  return h;
}

/// Grid-sampled kernel for a superposition, on a grid wide and fine enough for
/// its highest Hermite component and never coarser than the default grid rule.
inline ReductionKernel hermite_kernel(const HermiteSuperposition& h, double dt, double hbar = 1.0) {
  double second = 0.0;  // unshifted <y^2> scale^2 minus shift^2 gives the variance
  {
    const auto& c = h.coefficients;
    for (std::size_t n = 0; n < c.size(); ++n) {
      second += std::norm(c[n]) * (n + 0.5);
      if (n + 2 < c.size()) {
        second += 2.0 * 0.5 * std::sqrt((n + 1.0) * (n + 2.0)) * (std::conj(c[n]) * c[n + 2]).real();
      }
    }
    second = second * h.scale * h.scale - h.shift * h.shift;
  }
  const double delta_q = std::sqrt(std::max(second, 0.0));
  const double reach = (std::sqrt(2.0 * h.max_order() + 1.0) + 8.0) * h.scale + std::abs(h.shift);
  const double half_width = std::max(KernelGridRule::kMinHalfWidth * delta_q * 1.05, reach);
  const double h_max = h.scale / 64.0;
  auto n = static_cast<std::size_t>(std::ceil(2.0 * half_width / h_max)) + 1;
  n = std::max(n, KernelGridRule::kDefaultPoints);
  if (n % 2 == 0) ++n;
  return ReductionKernel::tabulate(h, UniformGrid::symmetric(half_width, n), dt, hbar);
}

}  // namespace qmeter
