#pragma once

// Truncated Fock basis of the lossless oscillator: banded position operator,
// density matrices and position-space projections.

#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Dense>

#include "qmeter/dynamics.hpp"
#include "qmeter/errors.hpp"
#include "qmeter/hermite.hpp"
#include "qmeter/numerics.hpp"

namespace qmeter {

struct FockSpace {
  int dim = 60;
  double ell = 1.0;  // sqrt(hbar / (m omega0))
  double omega = 1.0;
  double hbar = 1.0;
  Eigen::VectorXd q_band;  // <n|q|n+1>

  static FockSpace of(const ObjectModel& model, int dim) {
    if (model.kind != ModelKind::kOscillator) {
      throw UnsupportedError("Fock basis needs the lossless oscillator");
    }
    if (dim < 4) throw DomainError("Fock dimension must be at least 4");
    FockSpace s;
    s.dim = dim;
    s.ell = std::sqrt(model.hbar / (model.m * model.omega0));
    s.omega = model.omega0;
    s.hbar = model.hbar;
    s.q_band.resize(dim - 1);
    for (int n = 0; n + 1 < dim; ++n) s.q_band(n) = s.ell * std::sqrt((n + 1) / 2.0);
    return s;
  }

  /// Y = q X.
  void q_left(const Eigen::MatrixXcd& X, Eigen::MatrixXcd& Y) const {
    const Eigen::Index d = dim;
    Y.resize(d, d);
    Y.topRows(d - 1).noalias() = q_band.asDiagonal() * X.bottomRows(d - 1);
    Y.row(d - 1).setZero();
    Y.bottomRows(d - 1).noalias() += q_band.asDiagonal() * X.topRows(d - 1);
  }

  Eigen::MatrixXcd q_matrix() const {
    Eigen::MatrixXcd q = Eigen::MatrixXcd::Zero(dim, dim);
    for (int n = 0; n + 1 < dim; ++n) q(n, n + 1) = q(n + 1, n) = q_band(n);
    return q;
  }

  Eigen::MatrixXcd p_matrix() const {
    Eigen::MatrixXcd p = Eigen::MatrixXcd::Zero(dim, dim);
    const double s = hbar / (ell * std::sqrt(2.0));
    for (int n = 0; n + 1 < dim; ++n) {
      p(n, n + 1) = cplx(0.0, -s * std::sqrt(n + 1.0));
      p(n + 1, n) = cplx(0.0, s * std::sqrt(n + 1.0));
    }
    return p;
  }

  /// Element-wise factors exp(-i omega (m - n) dt) of the free evolution.
  Eigen::MatrixXcd free_phases(double dt) const {
    Eigen::MatrixXcd f(dim, dim);
    for (int m = 0; m < dim; ++m) {
      for (int n = 0; n < dim; ++n) f(m, n) = std::polar(1.0, -omega * (m - n) * dt);
    }
    return f;
  }

  /// Hermite functions <q_g|n> as rows of a (points x dim) matrix.
  Eigen::MatrixXd position_basis(const UniformGrid& grid) const {
    Eigen::MatrixXd psi(grid.size, dim);
    const double s = 1.0 / std::sqrt(ell);
    for (std::size_t g = 0; g < grid.size; ++g) {
      const auto h = hermite_functions(dim - 1, grid[g] / ell);
      for (int n = 0; n < dim; ++n) psi(g, n) = s * h[n];
    }
    return psi;
  }

  /// Position grid resolving every basis function and a kernel of width delta_q.
  UniformGrid quadrature_grid(double delta_q) const {
    const double half = (std::sqrt(2.0 * dim + 1.0) + 8.0) * ell;
    const double h = std::min(ell / 16.0, delta_q / 8.0);
    auto n = static_cast<std::size_t>(std::ceil(2.0 * half / h)) + 1;
    return UniformGrid::symmetric(half, n);
  }
};

struct DensityState {
  Eigen::MatrixXcd rho;
  double t = 0.0;

  double trace() const { return rho.trace().real(); }
  double purity() const { return rho.cwiseAbs2().sum(); }
  double hermiticity_error() const { return (rho - rho.adjoint()).cwiseAbs().maxCoeff(); }
  double boundary_population(int levels = 2) const {
    const Eigen::Index d = rho.rows();
    double s = 0.0;
    for (Eigen::Index n = d - levels; n < d; ++n) s += rho(n, n).real();
    return s;
  }

  double expect_q(const FockSpace& s) const {
    double v = 0.0;
    for (int n = 0; n + 1 < s.dim; ++n) v += 2.0 * s.q_band(n) * rho(n + 1, n).real();
    return v;
  }
  cplx expect(const Eigen::MatrixXcd& op) const { return (op * rho).trace(); }

  static DensityState ground(const FockSpace& s) {
    DensityState d;
    d.rho = Eigen::MatrixXcd::Zero(s.dim, s.dim);
    d.rho(0, 0) = 1.0;
    return d;
  }

  static DensityState thermal(const FockSpace& s, double temperature) {
    if (temperature <= 0.0) return ground(s);
    DensityState d;
    d.rho = Eigen::MatrixXcd::Zero(s.dim, s.dim);
    const double x = s.hbar * s.omega / temperature;
    double z = 0.0;
    for (int n = 0; n < s.dim; ++n) z += std::exp(-x * n);
    for (int n = 0; n < s.dim; ++n) d.rho(n, n) = std::exp(-x * n) / z;
    return d;
  }

  /// Projection of a pure state psi(q) onto the basis.
  template <typename F>
  static DensityState pure(const FockSpace& s, F&& psi) {
    const UniformGrid g = s.quadrature_grid(s.ell);
    const Eigen::MatrixXd basis = s.position_basis(g);
    Eigen::VectorXcd c = Eigen::VectorXcd::Zero(s.dim);
    for (std::size_t i = 0; i < g.size; ++i) c += basis.row(i).transpose() * psi(g[i]) * g.step;
    c /= c.norm();
    DensityState d;
    d.rho = c * c.adjoint();
    return d;
  }
};

}  // namespace qmeter
