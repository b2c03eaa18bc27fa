#pragma once

// Reduction functions Omega(dq) of linear QND measurements and the noise
// functionals derived from them: imprecision S_q, back-action S_F, their cross
// correlation S_qF and the mean back-action force.

#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <vector>

#include "qmeter/errors.hpp"
#include "qmeter/numerics.hpp"

namespace qmeter {

/// Grid rule for sampled kernels.
struct KernelGridRule {
  static constexpr double kMinHalfWidth = 8.0;  // in units of delta_q
  static constexpr std::size_t kMinPoints = 1025;
  static constexpr std::size_t kDefaultPoints = 4097;
};

/// Tolerances used when validating kernels.
struct KernelTolerance {
  static constexpr double kNorm = 1e-8;
  static constexpr double kLinearity = 1e-8;   // relative to delta_q
  static constexpr double kImagResidue = 1e-9; // relative to the natural scale of the quantity
};

enum class KernelVariant { kParametricGaussian, kGridSampled };

/// The integrals of Omega from which every noise functional is assembled.
struct KernelIntegrals {
  double norm = 0.0;           // int |W|^2
  double first_moment = 0.0;   // int x |W|^2
  double second_moment = 0.0;  // int x^2 |W|^2
  double gradient_norm = 0.0;  // int |W'|^2
  cplx overlap;                // int W* W'
  cplx cross;                  // int (W* W' - W'* W) x
};

class ReductionKernel {
 public:
  /// Complex Gaussian with prescribed imprecision, cross correlation and mean force.
  static ReductionKernel gaussian(double s_q, double s_qf, double f_bar, double dt,
                                  double hbar = 1.0) {
    if (!(s_q > 0.0) || !std::isfinite(s_q)) throw DomainError("s_q must be positive");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("dt must be positive");
    if (!(hbar > 0.0) || !std::isfinite(hbar)) throw DomainError("hbar must be positive");
    if (!std::isfinite(s_qf) || !std::isfinite(f_bar)) throw DomainError("non-finite kernel parameter");
    ReductionKernel k;
    k.variant_ = KernelVariant::kParametricGaussian;
    k.dt_ = dt;
    k.hbar_ = hbar;
    k.delta_q_ = std::sqrt(s_q / dt);
    k.s_qf_ = s_qf;
    k.f_bar_ = f_bar;
    return k;
  }

  /// Grid-sampled kernel from values on a uniform grid. Structure (odd point
  /// count, minimum size, +-8 delta_q coverage) is validated here; normalization
  /// and linearity are checked by kernel_diagnostics / noise_budget.
  static ReductionKernel sampled(UniformGrid grid, std::vector<cplx> values, double dt,
                                 double hbar = 1.0) {
    if (!(dt > 0.0)) throw DomainError("dt must be positive");
    if (!(hbar > 0.0)) throw DomainError("hbar must be positive");
    if (values.size() != grid.size) throw ValidationError("grid and value counts differ");
    if (grid.size < KernelGridRule::kMinPoints || grid.size % 2 == 0) {
      throw ValidationError("sampled kernel needs an odd number of points >= 1025");
    }
    if (!(grid.step > 0.0)) throw ValidationError("grid step must be positive");
    ReductionKernel k;
    k.variant_ = KernelVariant::kGridSampled;
    k.dt_ = dt;
    k.hbar_ = hbar;
    k.grid_ = grid;
    k.values_ = std::move(values);
    k.cached_ = k.grid_integrals();
    if (!(k.cached_.norm > 0.0)) throw InvalidKernelError("kernel has zero norm");
    k.delta_q_ = std::sqrt(k.cached_.second_moment / k.cached_.norm);
    const double need = KernelGridRule::kMinHalfWidth * k.delta_q_;
    if (grid.start > -need * (1.0 - 1e-9) || grid.back() < need * (1.0 - 1e-9)) {
      throw ValidationError("grid does not cover [-8 delta_q, +8 delta_q]");
    }
    k.s_qf_ = (-0.5 * hbar * cplx(0.0, 1.0) * k.cached_.cross).real();
    k.f_bar_ = (cplx(0.0, hbar / dt) * k.cached_.overlap).real();
    return k;
  }

  /// Tabulates a callable Omega(x) on `grid`.
  template <typename F>
  static ReductionKernel tabulate(F&& omega, UniformGrid grid, double dt, double hbar = 1.0) {
    std::vector<cplx> v(grid.size);
    for (std::size_t i = 0; i < grid.size; ++i) v[i] = omega(grid[i]);
    return sampled(grid, std::move(v), dt, hbar);
  }

  KernelVariant variant() const { return variant_; }
  bool is_parametric() const { return variant_ == KernelVariant::kParametricGaussian; }
  double delta_q() const { return delta_q_; }
  double dt() const { return dt_; }
  double hbar() const { return hbar_; }
  double s_q() const { return dt_ * delta_q_ * delta_q_; }
  /// Cross-correlation strength; parameter for Gaussians, quadrature readback for grids.
  double s_qf() const { return s_qf_; }
  double f_bar() const { return f_bar_; }

  const UniformGrid& grid() const { return grid_; }
  std::span<const cplx> values() const { return values_; }

  /// For the parametric kernel Omega(x) = N exp(c2 x^2 + c1 x).
  cplx quadratic_coefficient() const {
    return -cplx(1.0, -2.0 * s_qf_ / hbar_) / (4.0 * delta_q_ * delta_q_);
  }
  cplx linear_coefficient() const { return cplx(0.0, -dt_ * f_bar_ / hbar_); }

  cplx operator()(double x) const {
    if (is_parametric()) {
      const double norm = std::pow(2.0 * kPi * delta_q_ * delta_q_, -0.25);
      return norm * std::exp(quadratic_coefficient() * x * x + linear_coefficient() * x);
    }
    return interpolate_cubic<cplx>(grid_, values_, x);
  }

  /// |Omega(x)|^2 without forming the complex exponential for Gaussians.
  double density(double x) const {
    if (is_parametric()) {
      const double v = delta_q_ * delta_q_;
      return std::exp(-0.5 * x * x / v) / std::sqrt(2.0 * kPi * v);
    }
    return std::norm((*this)(x));
  }

  KernelIntegrals integrals() const {
    if (!is_parametric()) return cached_;
    const double a = 2.0 * s_qf_ / hbar_;
    const double c = dt_ * f_bar_ / hbar_;
    const double v = delta_q_ * delta_q_;
    KernelIntegrals r;
    r.norm = 1.0;
    r.first_moment = 0.0;
    r.second_moment = v;
    r.gradient_norm = (1.0 + a * a) / (4.0 * v) + c * c;
    r.overlap = cplx(0.0, -c);
    r.cross = cplx(0.0, a);
    return r;
  }

  /// Omega'(x) at the grid nodes (fourth-order differences).
  std::vector<cplx> grid_derivative() const {
    return derivative4<cplx>(values_, grid_.step);
  }

 private:
  ReductionKernel() = default;

  KernelIntegrals grid_integrals() const {
    const std::size_t n = grid_.size;
    const std::vector<cplx> d = grid_derivative();
    std::vector<double> dens(n), xd(n), x2d(n), grad(n);
    std::vector<cplx> ov(n), cr(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = grid_[i];
      const cplx w = values_[i];
      dens[i] = std::norm(w);
      xd[i] = x * dens[i];
      x2d[i] = x * x * dens[i];
      grad[i] = std::norm(d[i]);
      const cplx wd = std::conj(w) * d[i];
      ov[i] = wd;
      cr[i] = (wd - std::conj(wd)) * x;
    }
    const double h = grid_.step;
    KernelIntegrals r;
    r.norm = simpson<double>(dens, h);
    r.first_moment = simpson<double>(xd, h);
    r.second_moment = simpson<double>(x2d, h);
    r.gradient_norm = simpson<double>(grad, h);
    r.overlap = simpson<cplx>(ov, h);
    r.cross = simpson<cplx>(cr, h);
    return r;
  }

  KernelVariant variant_ = KernelVariant::kParametricGaussian;
  double dt_ = 1.0;
  double hbar_ = 1.0;
  double delta_q_ = 1.0;
  double s_qf_ = 0.0;
  double f_bar_ = 0.0;
  UniformGrid grid_{};
  std::vector<cplx> values_;
  KernelIntegrals cached_{};
};

struct KernelDiagnostics {
  double norm_residual = 0.0;       // int |W|^2 - 1
  double linearity_residual = 0.0;  // int x |W|^2
  double delta_q = 0.0;             // (int x^2 |W|^2)^(1/2)
};

/// Noise strengths of a single kernel.
struct NoiseBudget {
  double s_q = 0.0;
  double s_f = 0.0;
  double s_qf = 0.0;
  double f_bar = 0.0;
  double product_margin = 0.0;  // s_q s_f - s_qf^2 - hbar^2/4
};

inline ReductionKernel make_gaussian_kernel(double s_q, double s_qf, double f_bar, double dt,
                                            double hbar = 1.0) {
  return ReductionKernel::gaussian(s_q, s_qf, f_bar, dt, hbar);
}

/// Tabulates `kernel` on [-half_width, half_width] and renormalizes the samples.
inline ReductionKernel sample_kernel_on_grid(const ReductionKernel& kernel, double half_width,
                                             std::size_t n_points) {
  if (n_points < KernelGridRule::kMinPoints || n_points % 2 == 0) {
    throw ValidationError("n_points must be odd and >= 1025");
  }
  if (half_width < KernelGridRule::kMinHalfWidth * kernel.delta_q() * (1.0 - 1e-12)) {
    throw ValidationError("half_width must be at least 8 delta_q");
  }
  const UniformGrid grid = UniformGrid::symmetric(half_width, n_points);
  std::vector<cplx> v(n_points);
  std::vector<double> dens(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    v[i] = kernel(grid[i]);
    dens[i] = std::norm(v[i]);
  }
  const double scale = 1.0 / std::sqrt(simpson<double>(dens, grid.step));
  for (auto& x : v) x *= scale;
  return ReductionKernel::sampled(grid, std::move(v), kernel.dt(), kernel.hbar());
}

inline KernelDiagnostics kernel_diagnostics(const ReductionKernel& kernel) {
  const KernelIntegrals in = kernel.integrals();
  KernelDiagnostics d{in.norm - 1.0, in.first_moment, std::sqrt(in.second_moment)};
  if (std::abs(d.norm_residual) > KernelTolerance::kNorm) {
    throw InvalidKernelError("kernel normalization residual " + std::to_string(d.norm_residual) +
                             " exceeds tolerance");
  }
  return d;
}

/// Imprecision, back-action variance, cross correlation and mean force of a kernel.
/// The back-action strength is the variance form: its second term cancels the
/// square of the mean force.
inline NoiseBudget noise_budget(const ReductionKernel& kernel) {
  const KernelDiagnostics diag = kernel_diagnostics(kernel);
  if (std::abs(diag.linearity_residual) > KernelTolerance::kLinearity * diag.delta_q) {
    throw InvalidKernelError("kernel violates the linearity condition (first moment " +
                             std::to_string(diag.linearity_residual) + ")");
  }
  const KernelIntegrals in = kernel.integrals();
  const double hbar = kernel.hbar();
  const double dt = kernel.dt();
  const cplx i(0.0, 1.0);

  const cplx f_bar = i * hbar / dt * in.overlap;
  const cplx s_qf = -0.5 * i * hbar * in.cross;
  const cplx overlap_sq = in.overlap * in.overlap;
  const double force_scale = hbar / (dt * diag.delta_q);
  if (std::abs(f_bar.imag()) > KernelTolerance::kImagResidue * force_scale) {
    throw NumericalConsistencyError("mean force has imaginary residue " +
                                    std::to_string(f_bar.imag()));
  }
  if (std::abs(s_qf.imag()) > KernelTolerance::kImagResidue * hbar) {
    throw NumericalConsistencyError("S_qF has imaginary residue " + std::to_string(s_qf.imag()));
  }

  NoiseBudget b;
  b.s_q = dt * in.second_moment;
  b.s_f = hbar * hbar / dt * (in.gradient_norm + overlap_sq.real());
  b.s_qf = s_qf.real();
  b.f_bar = f_bar.real();
  b.product_margin = b.s_q * b.s_f - b.s_qf * b.s_qf - 0.25 * hbar * hbar;
  return b;
}

/// Smallest |sin(phi)| for which the optimal kernel is considered reachable.
inline constexpr double kSinPhiThreshold = 1e-3;

/// Gaussian kernel with exponent -(1 + i cot phi) x^2 / (4 dq^2), i.e.
/// S_qF = -(hbar/2) cot phi.
inline ReductionKernel make_quantum_limited_kernel(double phi, double s_qq, double dt,
                                                   double f_bar = 0.0, double hbar = 1.0) {
  const double s = std::sin(phi);
  if (!(std::abs(s) > kSinPhiThreshold)) {
    throw SingularPhaseError("|sin(phi)| below threshold: quantum limit unreachable");
  }
  const double cot = std::cos(phi) / s;
  return ReductionKernel::gaussian(s_qq, -0.5 * hbar * cot, f_bar, dt, hbar);
}

}  // namespace qmeter
