#pragma once

// Gaussian (q, p) state: means plus symmetrized covariance. Free evolution is
// the symplectic map of the quadratic Hamiltonian; a complex Gaussian kernel
// acts as Kalman conditioning on q, a momentum-diffusion term and a shear.

#include <cmath>

#include <Eigen/Dense>

#include "qmeter/dynamics.hpp"
#include "qmeter/errors.hpp"
#include "qmeter/reduction_kernels.hpp"

namespace qmeter {

struct GaussianState {
  Eigen::Vector2d means = Eigen::Vector2d::Zero();
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();

  static GaussianState from(const InitialState& s) { return {s.means, s.covariance}; }

  double var_q() const { return covariance(0, 0); }
  double purity(double hbar) const { return 0.5 * hbar / std::sqrt(covariance.determinant()); }

  void evolve(const ObjectModel& model, double duration) {
    if (duration == 0.0) return;
    const Eigen::Matrix2d M = heisenberg_map(model, duration);
    means = M * means;
    covariance = M * covariance * M.transpose();
  }
};

/// Mean and variance of the outcome density Tr[W^dag W rho] for a Gaussian kernel.
struct OutcomeMarginal {
  double mean = 0.0;
  double variance = 0.0;
};

inline void require_gaussian_kernel(const ReductionKernel& k) {
  if (!k.is_parametric()) {
    throw UnsupportedError("Gaussian fast path needs a parametric Gaussian kernel");
  }
}

inline OutcomeMarginal outcome_marginal(const GaussianState& s, const ReductionKernel& k) {
  require_gaussian_kernel(k);
  return {s.means(0), s.var_q() + k.delta_q() * k.delta_q()};
}

/// Post-measurement state for outcome `outcome` (unnormalized weights dropped).
inline GaussianState condition(const GaussianState& s, const ReductionKernel& k, double outcome) {
  require_gaussian_kernel(k);
  const double hbar = k.hbar();
  const double v = k.delta_q() * k.delta_q();
  const double a = 2.0 * k.s_qf() / hbar;
  const double c = k.dt() * k.f_bar() / hbar;

  GaussianState r = s;
  const double sqq = s.covariance(0, 0);
  const Eigen::Vector2d gain = s.covariance.col(0) / (sqq + v);
  r.means += gain * (outcome - s.means(0));
  r.covariance -= gain * s.covariance.row(0);
  r.covariance(1, 1) += hbar * hbar / (4.0 * v);

  const double shear = hbar * a / (2.0 * v);
  r.means(1) += shear * (r.means(0) - outcome) + hbar * c;
  Eigen::Matrix2d S;
  S << 1.0, 0.0, shear, 1.0;
  r.covariance = S * r.covariance * S.transpose();
  r.covariance(0, 1) = r.covariance(1, 0) = 0.5 * (r.covariance(0, 1) + r.covariance(1, 0));
  return r;
}

}  // namespace qmeter
