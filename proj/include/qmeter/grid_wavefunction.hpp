#pragma once

// Pure states sampled on a periodic position grid, with split-step evolution
// under the quadratic Hamiltonian. Used by the brute-force oracles.

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "qmeter/dynamics.hpp"
#include "qmeter/errors.hpp"
#include "qmeter/fft.hpp"
#include "qmeter/numerics.hpp"

namespace qmeter {

/// n points on [center - half_width, center + half_width) with periodic wrap.
struct PositionGrid {
  double center = 0.0;
  double half_width = 1.0;
  std::size_t n = 2048;

  double dx() const { return 2.0 * half_width / static_cast<double>(n); }
  double x(std::size_t i) const { return center - half_width + dx() * static_cast<double>(i); }
  /// Angular wavenumber of FFT bin i.
  double k(std::size_t i) const {
    const auto s = static_cast<std::ptrdiff_t>(i);
    const auto m = static_cast<std::ptrdiff_t>(n);
    const std::ptrdiff_t j = s < (m + 1) / 2 ? s : s - m;
    return 2.0 * kPi * static_cast<double>(j) / (static_cast<double>(n) * dx());
  }
};

using Wavefunction = std::vector<cplx>;

inline double wavefunction_norm(const PositionGrid& g, const Wavefunction& psi) {
  double s = 0.0;
  for (const cplx& v : psi) s += std::norm(v);
  return s * g.dx();
}

struct PositionMoments {
  double mass = 0.0;  // int |psi|^2
  double first = 0.0;  // int x |psi|^2
  double second = 0.0;  // int x^2 |psi|^2
};

inline PositionMoments position_moments(const PositionGrid& g, const Wavefunction& psi) {
  PositionMoments m;
  for (std::size_t i = 0; i < g.n; ++i) {
    const double p = std::norm(psi[i]);
    const double x = g.x(i);
    m.mass += p;
    m.first += x * p;
    m.second += x * x * p;
  }
  const double h = g.dx();
  m.mass *= h;
  m.first *= h;
  m.second *= h;
  return m;
}

/// Pure Gaussian with means (q, p) and covariance sigma (det sigma = hbar^2/4).
inline Wavefunction gaussian_wavefunction(const PositionGrid& g, const Eigen::Vector2d& means,
                                          const Eigen::Matrix2d& sigma, double hbar) {
  const double sqq = sigma(0, 0);
  const cplx a(-1.0 / (4.0 * sqq), sigma(0, 1) / (2.0 * hbar * sqq));
  Wavefunction psi(g.n);
  for (std::size_t i = 0; i < g.n; ++i) {
    const double y = g.x(i) - means(0);
    psi[i] = std::exp(a * y * y + cplx(0.0, means(1) * g.x(i) / hbar));
  }
  const double s = 1.0 / std::sqrt(wavefunction_norm(g, psi));
  for (cplx& v : psi) v *= s;
  return psi;
}

/// Strang split-step propagator over a fixed duration.
class SplitStepPropagator {
 public:
  SplitStepPropagator(const PositionGrid& g, const ObjectModel& model, double duration,
                      double max_step)
      : forward_(g.n, Fft::Direction::kForward), backward_(g.n, Fft::Direction::kBackward) {
    require_unitary(model, "split-step evolution");
    if (duration < 0.0) throw DomainError("negative evolution time");
    const bool potential = model.kind == ModelKind::kOscillator;
    steps_ = duration == 0.0 ? 0
             : potential   ? static_cast<std::size_t>(std::ceil(duration / max_step - 1e-9))
                           : 1;
    if (steps_ == 0) return;
    const double h = duration / static_cast<double>(steps_);
    const double hbar = model.hbar;
    half_potential_.assign(g.n, cplx(1.0, 0.0));
    full_potential_.assign(g.n, cplx(1.0, 0.0));
    kinetic_.resize(g.n);
    const double inv_n = 1.0 / static_cast<double>(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
      if (potential) {
        const double x = g.x(i);
        const double v = 0.5 * model.m * model.omega0 * model.omega0 * x * x;
        half_potential_[i] = std::polar(1.0, -0.5 * v * h / hbar);
        full_potential_[i] = std::polar(1.0, -v * h / hbar);
      }
      const double kk = g.k(i);
      kinetic_[i] = std::polar(inv_n, -hbar * kk * kk * h / (2.0 * model.m));
    }
  }

  void apply(Wavefunction& psi) {
    if (steps_ == 0) return;
    multiply(psi, half_potential_);
    for (std::size_t s = 0; s < steps_; ++s) {
      forward_(psi);
      multiply(psi, kinetic_);
      backward_(psi);
      multiply(psi, s + 1 == steps_ ? half_potential_ : full_potential_);
    }
  }

 private:
  static void multiply(Wavefunction& psi, const std::vector<cplx>& f) {
    for (std::size_t i = 0; i < psi.size(); ++i) psi[i] *= f[i];
  }

  Fft forward_;
  Fft backward_;
  std::size_t steps_ = 0;
  std::vector<cplx> half_potential_, full_potential_, kinetic_;
};

}  // namespace qmeter
