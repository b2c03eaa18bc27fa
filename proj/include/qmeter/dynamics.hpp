#pragma once

// Measured-object models: commutator kernel, generalized susceptibility,
// unperturbed correlation and the equilibrium intrinsic spectrum.
//
// Temperatures are in energy units (k_B = 1).

#include <cmath>
#include <complex>
#include <string>

#include <Eigen/Dense>

#include "qmeter/errors.hpp"
#include "qmeter/numerics.hpp"

namespace qmeter {

enum class ModelKind { kFreeMass, kOscillator, kDampedOscillator };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kFreeMass: return "free-mass";
    case ModelKind::kOscillator: return "oscillator";
    case ModelKind::kDampedOscillator: return "damped-oscillator";
  }
  return "?";
}

struct ObjectModel {
  ModelKind kind = ModelKind::kOscillator;
  double m = 1.0;
  double omega0 = 1.0;
  double gamma = 0.0;
  double hbar = 1.0;
  double t_bath = 0.0;

  static ObjectModel free_mass(double m, double hbar = 1.0) {
    return checked({ModelKind::kFreeMass, m, 0.0, 0.0, hbar, 0.0});
  }
  static ObjectModel oscillator(double m, double omega0, double hbar = 1.0) {
    return checked({ModelKind::kOscillator, m, omega0, 0.0, hbar, 0.0});
  }
  static ObjectModel damped(double m, double omega0, double gamma, double hbar = 1.0,
                            double t_bath = 0.0) {
    return checked({ModelKind::kDampedOscillator, m, omega0, gamma, hbar, t_bath});
  }

  bool unitary() const { return kind != ModelKind::kDampedOscillator; }

  void validate() const {
    if (!(m > 0.0)) throw DomainError("mass must be positive");
    if (!(hbar > 0.0)) throw DomainError("hbar must be positive");
    if (omega0 < 0.0 || gamma < 0.0 || t_bath < 0.0) {
      throw DomainError("omega0, gamma and t_bath must be non-negative");
    }
    if (kind == ModelKind::kFreeMass && (omega0 != 0.0 || gamma != 0.0)) {
      throw DomainError("free mass requires omega0 = 0 and gamma = 0");
    }
    if (kind == ModelKind::kOscillator && gamma != 0.0) {
      throw DomainError("lossless oscillator requires gamma = 0");
    }
    if (kind != ModelKind::kFreeMass && !(omega0 > 0.0)) {
      throw DomainError("oscillator frequency must be positive");
    }
  }

 private:
  static ObjectModel checked(ObjectModel m) {
    m.validate();
    return m;
  }
};

inline void require_unitary(const ObjectModel& model, const char* what) {
  if (!model.unitary()) {
    throw UnsupportedError(std::string(what) + " is not available for the damped oscillator");
  }
}

/// Heisenberg map (q, p)(t) = M(t) (q, p)(0) of the quadratic Hamiltonian.
inline Eigen::Matrix2d heisenberg_map(const ObjectModel& model, double t) {
  require_unitary(model, "time-domain evolution");
  Eigen::Matrix2d M;
  if (model.kind == ModelKind::kFreeMass) {
    M << 1.0, t / model.m, 0.0, 1.0;
  } else {
    const double w = model.omega0, c = std::cos(w * t), s = std::sin(w * t);
    M << c, s / (model.m * w), -model.m * w * s, c;
  }
  return M;
}

/// k(t, t') with [q(t), q(t')] = i k(t, t').
inline double commutator_kernel(const ObjectModel& model, double t, double t_prime) {
  require_unitary(model, "commutator kernel");
  const double tau = t_prime - t;
  if (model.kind == ModelKind::kFreeMass) return model.hbar * tau / model.m;
  return model.hbar / (model.m * model.omega0) * std::sin(model.omega0 * tau);
}

/// chi(tau) = -k(t, t - tau)/hbar for tau > 0, zero for tau <= 0.
inline double susceptibility_time(const ObjectModel& model, double tau) {
  require_unitary(model, "time-domain susceptibility");
  if (tau <= 0.0) return 0.0;
  return -commutator_kernel(model, 0.0, -tau) / model.hbar;
}

/// Fourier transform of chi(tau) with the e^{+i omega tau} kernel.
inline cplx susceptibility_freq(const ObjectModel& model, double omega) {
  switch (model.kind) {
    case ModelKind::kFreeMass:
      if (omega == 0.0) throw PoleError("free-mass susceptibility has a pole at omega = 0");
      return cplx(-1.0 / (model.m * omega * omega), 0.0);
    case ModelKind::kOscillator: {
      const double d = model.omega0 * model.omega0 - omega * omega;
      if (std::abs(d) <= 1e-12 * model.omega0 * model.omega0) {
        throw PoleError("lossless oscillator susceptibility has a pole at omega = omega0");
      }
      return cplx(1.0 / (model.m * d), 0.0);
    }
    case ModelKind::kDampedOscillator: {
      const cplx d(model.omega0 * model.omega0 - omega * omega, -model.gamma * omega);
      if (std::abs(d) == 0.0) throw PoleError("susceptibility pole");
      return 1.0 / (model.m * d);
    }
  }
  return {};
}

enum class InitKind { kOscillatorGround, kOscillatorThermal, kGaussianCustom };

/// Gaussian initial state: means of (q, p) and their symmetrized covariance.
struct InitialState {
  InitKind kind = InitKind::kGaussianCustom;
  Eigen::Vector2d means = Eigen::Vector2d::Zero();
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();

  static InitialState ground(const ObjectModel& model) {
    if (model.kind == ModelKind::kFreeMass) throw DomainError("free mass has no ground state");
    const double vq = model.hbar / (2.0 * model.m * model.omega0);
    InitialState s;
    s.kind = InitKind::kOscillatorGround;
    s.covariance << vq, 0.0, 0.0, model.hbar * model.m * model.omega0 / 2.0;
    return s;
  }

  static InitialState thermal(const ObjectModel& model, double temperature) {
    InitialState s = ground(model);
    s.kind = InitKind::kOscillatorThermal;
    if (temperature > 0.0) {
      s.covariance *= 1.0 / std::tanh(model.hbar * model.omega0 / (2.0 * temperature));
    }
    return s;
  }

  static InitialState custom(const Eigen::Vector2d& means, const Eigen::Matrix2d& cov, double hbar) {
    InitialState s;
    s.means = means;
    s.covariance = cov;
    s.validate(hbar);
    return s;
  }

  void validate(double hbar) const {
    if (std::abs(covariance(0, 1) - covariance(1, 0)) > 1e-12 * covariance.norm()) {
      throw DomainError("covariance must be symmetric");
    }
    if (!(covariance(0, 0) > 0.0) || !(covariance(1, 1) > 0.0)) {
      throw DomainError("covariance must be positive definite");
    }
    if (covariance.determinant() < 0.25 * hbar * hbar * (1.0 - 1e-10)) {
      throw DomainError("covariance violates det >= hbar^2/4");
    }
  }

  bool is_pure(double hbar) const {
    return std::abs(covariance.determinant() - 0.25 * hbar * hbar) <= 1e-10 * hbar * hbar;
  }
};

/// Symmetrized unperturbed correlation B_init(t, t') under free evolution.
inline double init_correlation(const ObjectModel& model, const InitialState& state, double t,
                               double t_prime) {
  const Eigen::RowVector2d a = heisenberg_map(model, t).row(0);
  const Eigen::RowVector2d b = heisenberg_map(model, t_prime).row(0);
  return a * state.covariance * b.transpose();
}

/// Equilibrium intrinsic spectrum hbar |coth(hbar omega / 2 T)| |Im chi(omega)|.
inline double init_spectrum(const ObjectModel& model, double omega) {
  if (model.kind != ModelKind::kDampedOscillator) {
    throw UnsupportedError("intrinsic spectrum requires the damped oscillator");
  }
  const double im = std::abs(susceptibility_freq(model, omega).imag());
  if (model.t_bath == 0.0) return model.hbar * im;
  if (omega == 0.0) throw DivergenceError("coth pole at omega = 0 for T_B > 0");
  const double x = model.hbar * omega / (2.0 * model.t_bath);
  return model.hbar * std::abs(1.0 / std::tanh(x)) * im;
}

}  // namespace qmeter
