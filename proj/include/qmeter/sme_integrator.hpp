#pragma once

// Conditional evolution under repeated measurement: exact Kraus stepping in a
// truncated Fock basis, the diffusive Ito limit for real kernels, its
// noise-averaged (Lindblad) form, and trajectory drivers for every backend.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "qmeter/csv.hpp"
#include "qmeter/dynamics.hpp"
#include "qmeter/errors.hpp"
#include "qmeter/fft.hpp"
#include "qmeter/fock.hpp"
#include "qmeter/gaussian_state.hpp"
#include "qmeter/parallel.hpp"
#include "qmeter/random.hpp"
#include "qmeter/reduction_kernels.hpp"

namespace qmeter {

inline constexpr double kBoundaryPopulation = 1e-6;

struct ForceStatistics {
  double mean = 0.0;           // E[F]
  double second_moment = 0.0;  // E[F^2]
  double variance = 0.0;       // E[F^2] - E[F]^2
  double dt = 0.0;
};

inline ForceStatistics force_statistics(const ReductionKernel& kernel) {
  const KernelIntegrals in = kernel.integrals();
  const double hbar = kernel.hbar(), dt = kernel.dt();
  ForceStatistics f;
  f.dt = dt;
  f.mean = (cplx(0.0, hbar / dt) * in.overlap).real();
  f.second_moment = hbar * hbar / (dt * dt) * in.gradient_norm;
  f.variance = f.second_moment - f.mean * f.mean;
  return f;
}

inline void check_boundary(const DensityState& s, const char* where) {
  const double pop = s.boundary_population();
  if (pop > kBoundaryPopulation) {
    throw TruncationError(std::string(where) + ": population " + std::to_string(pop) +
                          " in the top two Fock levels at t = " + std::to_string(s.t) +
                          "; increase the Fock dimension");
  }
}

/// Restores exact Hermiticity and unit trace in place.
inline void finish_step(DensityState& s) {
  Eigen::MatrixXcd& r = s.rho;
  const Eigen::Index d = r.rows();
  double tr = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      const cplx v = 0.5 * (r(i, j) + std::conj(r(j, i)));
      r(i, j) = v;
      r(j, i) = std::conj(v);
    }
    r(j, j) = r(j, j).real();
    tr += r(j, j).real();
  }
  const double inv = 1.0 / tr;
  double* p = reinterpret_cast<double*>(r.data());
  for (Eigen::Index i = 0; i < 2 * d * d; ++i) p[i] *= inv;
}

struct KrausOptions {
  std::size_t outcome_points = 257;
  double outcome_sigmas = 8.0;
};

/// Kraus operators of one kernel, evaluated by quadrature over a position grid.
class KrausEngine {
 public:
  using Options = KrausOptions;

  KrausEngine(const FockSpace& space, ReductionKernel kernel, Options opt = {})
      : space_(space), kernel_(std::move(kernel)), opt_(opt),
        grid_(space.quadrature_grid(kernel_.delta_q())), basis_(space.position_basis(grid_)),
        integrals_(kernel_.integrals()) {}

  const ReductionKernel& kernel() const { return kernel_; }
  const FockSpace& space() const { return space_; }

  /// Tabulated outcome density Tr[W^dag W rho] on nodes around the expected outcome.
  struct OutcomeTable {
    UniformGrid nodes;
    std::vector<double> density;
  };

  OutcomeTable outcome_table(const DensityState& s) const {
    const Eigen::VectorXd p = position_density(s);
    double m0 = 0.0, m1 = 0.0, m2 = 0.0;
    for (std::size_t g = 0; g < grid_.size; ++g) {
      m0 += p(g);
      m1 += p(g) * grid_[g];
      m2 += p(g) * grid_[g] * grid_[g];
    }
    const double mu = m1 / m0;
    const double var = std::max(0.0, m2 / m0 - mu * mu) + integrals_.second_moment;
    const UniformGrid u = UniformGrid::symmetric(opt_.outcome_sigmas * std::sqrt(var), opt_.outcome_points);
    OutcomeTable t{{u.start + mu + integrals_.first_moment, u.step, u.size}, {}};
    t.density.resize(t.nodes.size);
    for (std::size_t k = 0; k < t.nodes.size; ++k) {
      double w = 0.0;
      for (std::size_t g = 0; g < grid_.size; ++g) w += kernel_.density(t.nodes[k] - grid_[g]) * p(g);
      t.density[k] = w * grid_.step;
    }
    return t;
  }

  /// Inverse-CDF draw from the tabulated density (piecewise-linear CDF).
  double sample_outcome(const DensityState& s, Rng& rng) const {
    const OutcomeTable t = outcome_table(s);
    std::vector<double> cdf(t.nodes.size, 0.0);
    for (std::size_t k = 1; k < cdf.size(); ++k) {
      cdf[k] = cdf[k - 1] + 0.5 * (t.density[k - 1] + t.density[k]) * t.nodes.step;
    }
    const double u = rng.uniform() * cdf.back();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto k = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(it - cdf.begin(), 1,
                                                                     static_cast<std::ptrdiff_t>(cdf.size()) - 1));
    const double span = cdf[k] - cdf[k - 1];
    const double f = span > 0.0 ? (u - cdf[k - 1]) / span : 0.5;
    return t.nodes[k - 1] + f * t.nodes.step;
  }

  Eigen::MatrixXcd kraus_operator(double outcome) const {
    Eigen::VectorXcd w(static_cast<Eigen::Index>(grid_.size));
    for (std::size_t g = 0; g < grid_.size; ++g) w(g) = kernel_(outcome - grid_[g]) * grid_.step;
    const Eigen::MatrixXcd weighted = w.asDiagonal() * basis_.cast<cplx>();
    return basis_.transpose().cast<cplx>() * weighted;
  }

  /// rho -> W rho W^dag / Tr[...] for a given outcome (no free evolution).
  DensityState update(const DensityState& s, double outcome) const {
    const Eigen::MatrixXcd K = kraus_operator(outcome);
    DensityState r{K * s.rho * K.adjoint(), s.t};
    if (!(r.trace() > 0.0)) throw NumericalConsistencyError("outcome has zero probability");
    finish_step(r);
    return r;
  }

 private:
  Eigen::VectorXd position_density(const DensityState& s) const {
    const Eigen::MatrixXcd t = basis_.cast<cplx>() * s.rho;
    return (t.cwiseProduct(basis_.cast<cplx>())).rowwise().sum().real();
  }

  FockSpace space_;
  ReductionKernel kernel_;
  Options opt_;
  UniformGrid grid_;
  Eigen::MatrixXd basis_;
  KernelIntegrals integrals_;
};

inline void free_evolve(DensityState& s, const FockSpace& space, double dt) {
  s.rho = s.rho.cwiseProduct(space.free_phases(dt));
  s.t += dt;
}

struct KrausStepResult {
  DensityState state;
  double outcome = 0.0;
};

inline KrausStepResult kraus_step(const DensityState& s, const KrausEngine& engine, double dt, Rng& rng) {
  DensityState e = s;
  free_evolve(e, engine.space(), dt);
  const double q = engine.sample_outcome(e, rng);
  KrausStepResult r{engine.update(e, q), q};
  check_boundary(r.state, "kraus_step");
  return r;
}

inline KrausStepResult kraus_step(const DensityState& s, const ReductionKernel& kernel,
                                  const ObjectModel& model, double dt, Rng& rng, int dim) {
  return kraus_step(s, KrausEngine(FockSpace::of(model, dim), kernel), dt, rng);
}

enum class QBarMode { kTrace, kZero };

/// kPositiveMap: rho -> M rho M^dag / Tr with M = 1 - L^2 dt / 2 + L dy,
/// L = (sqrt(S_F) / hbar) q and dy = 2 <L> dt + dW. Positive by construction,
/// first order, and equal to the Euler-Maruyama step to O(dt) in the mean.
/// kEulerMaruyama: explicit step of the diffusive equation; trace preserving
/// but not positivity preserving.
enum class SmeScheme { kPositiveMap, kEulerMaruyama };

struct ItoStepInfo {
  double trace_before = 1.0;  // trace prior to renormalization
  double trace_error = 0.0;   // |Tr rho - 1| of the state carried to the next step
  double q_bar = 0.0;         // <q> after free evolution, before the measurement terms
};

/// One step of
///   d rho = -(S_F / 2 hbar^2) [q, [q, rho]] dt + (sqrt(S_F) / hbar) {q - qbar, rho} dW
/// preceded by exact free evolution over dt. Workspace is reused across steps.
class ItoIntegrator {
 public:
  ItoIntegrator(const FockSpace& space, double s_f, double dt, SmeScheme scheme = SmeScheme::kPositiveMap)
      : space_(space), dt_(dt), kappa_(s_f * dt / (2.0 * space.hbar * space.hbar)),
        gain_(std::sqrt(std::max(s_f, 0.0)) / space.hbar), scheme_(scheme) {
    if (s_f < 0.0) throw DomainError("S_F must be non-negative");
    if (!(dt > 0.0)) throw DomainError("dt must be positive");
    phases_ = space.free_phases(dt);
    const Eigen::Index d = space.dim;
    q2_diag_ = Eigen::VectorXd::Zero(d);
    q2_diag_.head(d - 1) += space.q_band.cwiseAbs2();
    q2_diag_.tail(d - 1) += space.q_band.cwiseAbs2();
    q2_band_ = space.q_band.head(d - 2).cwiseProduct(space.q_band.tail(d - 2));
    left_ = Eigen::MatrixXcd::Zero(d + 4, d);
    right_ = Eigen::MatrixXcd::Zero(d, d + 4);
    for (Eigen::VectorXd* v : {&c0_, &c1m_, &c1p_, &c2m_, &c2p_}) v->resize(d);
    for (Eigen::VectorXd* v : {&w0_, &w1m_, &w1p_, &w2m_, &w2p_}) v->resize(2 * d);
  }

  double dt() const { return dt_; }
  SmeScheme scheme() const { return scheme_; }
  const FockSpace& space() const { return space_; }

  ItoStepInfo step(DensityState& s, double dW, QBarMode mode = QBarMode::kTrace) {
    if (scheme_ == SmeScheme::kPositiveMap) return positive_map(s, dW, mode);
    s.rho = s.rho.cwiseProduct(phases_);
    s.t += dt_;
    ItoStepInfo info;
    info.q_bar = s.expect_q(space_);
    const double q_bar = mode == QBarMode::kTrace ? info.q_bar : 0.0;
    space_.q_left(s.rho, a_);  // a = q rho, so rho q = a^dag
    d_ = a_ - a_.adjoint();
    space_.q_left(d_, e_);  // [q, [q, rho]] = e + e^dag
    const double g = gain_ * dW;
    if (g != 0.0) s.rho *= 1.0 - 2.0 * g * q_bar;
    s.rho -= kappa_ * (e_ + e_.adjoint());
    if (g != 0.0) s.rho += g * (a_ + a_.adjoint());
    info.trace_before = s.trace();
    info.trace_error = std::abs(info.trace_before - 1.0);
    finish_step(s);
    return info;
  }

 private:
  // rho <- M rho M with the real pentadiagonal M = 1 + u q - kappa q^2, fused with
  // the free phases. Columns are zero-padded so every band is a branch-free axpy.
  ItoStepInfo positive_map(DensityState& s, double dW, QBarMode mode) {
    const Eigen::Index d = space_.dim;
    const Eigen::Index rows = d + 4;
    // Phase-rotated rho with two zero rows above and below each column.
    for (Eigen::Index j = 0; j < d; ++j) {
      double* __restrict out = reinterpret_cast<double*>(left_.data() + j * rows + 2);
      const double* __restrict in = reinterpret_cast<const double*>(s.rho.data() + j * d);
      const double* __restrict ph = reinterpret_cast<const double*>(phases_.data() + j * d);
      for (Eigen::Index n = 0; n < 2 * d; n += 2) {
        out[n] = in[n] * ph[n] - in[n + 1] * ph[n + 1];
        out[n + 1] = in[n] * ph[n + 1] + in[n + 1] * ph[n];
      }
    }
    s.t += dt_;
    ItoStepInfo info;
    for (Eigen::Index n = 0; n + 1 < d; ++n) {
      info.q_bar += 2.0 * space_.q_band(n) * left_(n + 3, n).real();
    }
    const double q_bar = mode == QBarMode::kTrace ? info.q_bar : 0.0;
    const double u = gain_ * (2.0 * gain_ * q_bar * dt_ + dW);
    for (Eigen::Index n = 0; n < d; ++n) {
      c0_(n) = 1.0 - kappa_ * q2_diag_(n);
      c1m_(n) = n >= 1 ? u * space_.q_band(n - 1) : 0.0;
      c1p_(n) = n + 1 < d ? u * space_.q_band(n) : 0.0;
      c2m_(n) = n >= 2 ? -kappa_ * q2_band_(n - 2) : 0.0;
      c2p_(n) = n + 2 < d ? -kappa_ * q2_band_(n) : 0.0;
      for (int k = 0; k < 2; ++k) {
        w0_(2 * n + k) = c0_(n);
        w1m_(2 * n + k) = c1m_(n);
        w1p_(2 * n + k) = c1p_(n);
        w2m_(2 * n + k) = c2m_(n);
        w2p_(2 * n + k) = c2p_(n);
      }
    }
    // Left: column j + 2 of right_ = M * column j of left_.
    const Eigen::Index len = 2 * d;
    const double* __restrict w2m = w2m_.data();
    const double* __restrict w1m = w1m_.data();
    const double* __restrict w0 = w0_.data();
    const double* __restrict w1p = w1p_.data();
    const double* __restrict w2p = w2p_.data();
    for (Eigen::Index j = 0; j < d; ++j) {
      const double* __restrict x = reinterpret_cast<const double*>(left_.data() + j * rows);
      double* __restrict y = reinterpret_cast<double*>(right_.data() + (j + 2) * d);
      for (Eigen::Index i = 0; i < len; ++i) {
        y[i] = w2m[i] * x[i] + w1m[i] * x[i + 2] + w0[i] * x[i + 4] + w1p[i] * x[i + 6] + w2p[i] * x[i + 8];
      }
    }
    // Right: column j of rho = sum over the five neighbouring columns of right_.
    for (Eigen::Index j = 0; j < d; ++j) {
      const double* __restrict a = reinterpret_cast<const double*>(right_.data() + j * d);
      double* __restrict y = reinterpret_cast<double*>(s.rho.data() + j * d);
      const double k0 = c2m_(j), k1 = c1m_(j), k2 = c0_(j), k3 = c1p_(j), k4 = c2p_(j);
      for (Eigen::Index i = 0; i < len; ++i) {
        y[i] = k0 * a[i] + k1 * a[i + len] + k2 * a[i + 2 * len] + k3 * a[i + 3 * len] + k4 * a[i + 4 * len];
      }
    }
    info.trace_before = s.trace();
    finish_step(s);
    info.trace_error = std::abs(s.trace() - 1.0);
    return info;
  }

  FockSpace space_;
  double dt_;
  double kappa_, gain_;
  SmeScheme scheme_;
  Eigen::MatrixXcd phases_;
  Eigen::VectorXd q2_diag_, q2_band_;  // diagonals of q^2 in the truncated basis
  Eigen::VectorXd c0_, c1m_, c1p_, c2m_, c2p_;  // M(n, n + k) for k = 0, -1, +1, -2, +2
  Eigen::VectorXd w0_, w1m_, w1p_, w2m_, w2p_;  // the same, repeated for re/im parts
  Eigen::MatrixXcd left_, right_;                // zero-padded work buffers
  Eigen::MatrixXcd a_, d_, e_;
};

inline void require_real_kernel(const ReductionKernel& k) {
  const double tol = 1e-12;
  if (std::abs(k.s_qf()) > tol * k.hbar() || std::abs(k.dt() * k.f_bar()) > tol * k.hbar() / k.delta_q()) {
    throw UnsupportedError("diffusive step needs a real kernel; use kraus_step for complex kernels");
  }
}

inline DensityState ito_step(const DensityState& s, double s_f, const ObjectModel& model, double dt,
                             double dW, QBarMode mode = QBarMode::kTrace,
                             SmeScheme scheme = SmeScheme::kPositiveMap) {
  ItoIntegrator it(FockSpace::of(model, static_cast<int>(s.rho.rows())), s_f, dt, scheme);
  DensityState r = s;
  it.step(r, dW, mode);
  return r;
}

inline DensityState ito_step(const DensityState& s, const ReductionKernel& kernel,
                             const ObjectModel& model, double dW) {
  require_real_kernel(kernel);
  return ito_step(s, noise_budget(kernel).s_f, model, kernel.dt(), dW);
}

/// Noise-averaged evolution: exact free phases, then an explicit step of the
/// double commutator (the Euler-Maruyama step with dW = 0).
inline DensityState lindblad_step(const DensityState& s, double s_f, const ObjectModel& model, double dt) {
  return ito_step(s, s_f, model, dt, 0.0, QBarMode::kTrace, SmeScheme::kEulerMaruyama);
}

/// Coefficient int |W'|^2 / (2 dt) of the double commutator for a kernel.
inline double lindblad_coefficient(const ReductionKernel& kernel) {
  return kernel.integrals().gradient_norm / (2.0 * kernel.dt());
}

inline DensityState lindblad_step(const DensityState& s, const ReductionKernel& kernel,
                                  const ObjectModel& model) {
  require_real_kernel(kernel);
  const double s_f = noise_budget(kernel).s_f;
  const double c = lindblad_coefficient(kernel);
  const double expected = s_f / (2.0 * kernel.hbar() * kernel.hbar());
  if (std::abs(c - expected) > 1e-8 * expected) {
    throw NumericalConsistencyError("double-commutator coefficient differs from S_F / 2 hbar^2");
  }
  return lindblad_step(s, s_f, model, kernel.dt());
}

/// Fock-basis density matrix for a Gaussian initial state of the oscillator.
inline DensityState fock_state(const FockSpace& space, const ObjectModel& model, const InitialState& init) {
  const bool centered = init.means.isZero(0.0) && init.covariance(0, 1) == 0.0;
  const double ground_q = model.hbar / (2.0 * model.m * model.omega0);
  const double ratio = init.covariance(0, 0) / ground_q;
  const bool isotropic =
      std::abs(init.covariance(1, 1) - ratio * model.hbar * model.m * model.omega0 / 2.0) <=
      1e-12 * init.covariance(1, 1);
  if (centered && isotropic && ratio >= 1.0) {
    if (ratio - 1.0 <= 1e-12) return DensityState::ground(space);
    const double temperature = model.hbar * model.omega0 / (2.0 * std::atanh(1.0 / ratio));
    return DensityState::thermal(space, temperature);
  }
  if (!init.is_pure(model.hbar)) {
    throw UnsupportedError("Fock path supports thermal or pure Gaussian initial states");
  }
  const double sqq = init.covariance(0, 0);
  const cplx a(-1.0 / (4.0 * sqq), init.covariance(0, 1) / (2.0 * model.hbar * sqq));
  return DensityState::pure(space, [&](double x) {
    const double y = x - init.means(0);
    return std::exp(a * y * y + cplx(0.0, init.means(1) * x / model.hbar));
  });
}

/// Two-sided zero-point-plus-thermal bath force with spectrum
/// hbar m gamma |w| coth(hbar |w| / 2T), synthesized in the frequency domain.
inline std::vector<double> bath_force(const ObjectModel& model, std::size_t n, double dt, Rng& rng) {
  std::vector<cplx> x(n);
  const double nn = static_cast<double>(n);
  auto spectrum = [&](double w) {
    w = std::abs(w);
    if (model.t_bath == 0.0) return model.hbar * model.m * model.gamma * w;
    if (w == 0.0) return 2.0 * model.m * model.gamma * model.t_bath;
    return model.hbar * model.m * model.gamma * w / std::tanh(model.hbar * w / (2.0 * model.t_bath));
  };
  for (std::size_t k = 0; k <= n / 2; ++k) {
    const double w = 2.0 * kPi * static_cast<double>(k) / (nn * dt);
    const double amp = std::sqrt(nn * spectrum(w) / dt);
    if (k == 0 || 2 * k == n) {
      x[k] = amp * rng.normal();
    } else {
      x[k] = amp * cplx(rng.normal(), rng.normal()) / std::sqrt(2.0);
      x[n - k] = std::conj(x[k]);
    }
  }
  Fft(n, Fft::Direction::kBackward)(x);
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = x[i].real() / nn;
  return f;
}

/// Damped oscillator driven by the bath and by measurement back-action: each
/// sample records x + delta with delta ~ N(0, dq^2), and the momentum receives
/// -(S_qF/dq^2) delta + N(0, hbar^2/(4 dq^2)) + dt F_bar.
inline std::vector<double> simulate_damped_record(const ObjectModel& model, const ReductionKernel& kernel,
                                                  std::size_t n_samples, std::uint64_t seed,
                                                  std::uint64_t trajectory = 0, std::size_t burn_in = 0) {
  if (model.kind != ModelKind::kDampedOscillator) {
    throw UnsupportedError("classical-equivalent record needs the damped oscillator");
  }
  require_gaussian_kernel(kernel);
  const double dt = kernel.dt();
  if (burn_in == 0) {
    burn_in = static_cast<std::size_t>(std::ceil(20.0 / (std::max(model.gamma, 1e-12) * dt)));
  }
  std::size_t n = 1;
  while (n < n_samples + burn_in) n *= 2;
  Rng bath_rng(seed, 2 * trajectory), meas_rng(seed, 2 * trajectory + 1);
  const std::vector<double> force = bath_force(model, n, dt, bath_rng);

  Eigen::Matrix3d aug = Eigen::Matrix3d::Zero();
  aug(0, 1) = 1.0;
  aug(1, 0) = -model.omega0 * model.omega0;
  aug(1, 1) = -model.gamma;
  aug(1, 2) = 1.0 / model.m;
  const Eigen::Matrix3d step = (aug * dt).exp();
  const Eigen::Matrix2d phi = step.topLeftCorner<2, 2>();
  const Eigen::Vector2d gam = step.topRightCorner<2, 1>();

  const double hbar = kernel.hbar();
  const double dq = kernel.delta_q();
  const double shear = kernel.s_qf() / (dq * dq);
  const double diffusion = hbar / (2.0 * dq);
  const double mean_kick = dt * kernel.f_bar();
  Eigen::Vector2d state = Eigen::Vector2d::Zero();  // (x, v)
  std::vector<double> out;
  out.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples + burn_in; ++i) {
    state = phi * state + gam * force[i];
    const double delta = dq * meas_rng.normal();
    const double kick = -shear * delta + diffusion * meas_rng.normal() + mean_kick;
    if (i >= burn_in) out.push_back(state(0) + delta);
    state(1) += kick / model.m;
  }
  return out;
}

enum class TrajectoryBackend { kGaussian, kFockKraus, kFockIto, kLangevin };

struct TrajectoryOptions {
  TrajectoryBackend backend = TrajectoryBackend::kGaussian;
  int fock_dim = 60;
  SmeScheme scheme = SmeScheme::kPositiveMap;  // Fock Ito only
  std::size_t burn_in = 0;                     // Langevin only; 0 picks 20 / (gamma dt)
};

struct TrajectorySample {
  std::size_t step = 0;
  double t = 0.0;
  double outcome = 0.0;
  double trace = 1.0;
  double purity = 1.0;
};

struct TrajectoryResult {
  std::vector<TrajectorySample> samples;
  std::optional<DensityState> fock;
  std::optional<GaussianState> gaussian;

  std::vector<double> outcomes() const {
    std::vector<double> o;
    o.reserve(samples.size());
    for (const auto& s : samples) o.push_back(s.outcome);
    return o;
  }
};

inline std::size_t step_count(double duration, double dt) {
  if (!(dt > 0.0) || !(duration > 0.0)) throw DomainError("duration and dt must be positive");
  const double r = duration / dt;
  const double n = std::round(r);
  if (std::abs(r - n) > 1e-9 * std::max(1.0, n)) {
    throw ValidationError("duration must be an integer multiple of dt");
  }
  return static_cast<std::size_t>(n);
}

/// Constant-rate measurement for `duration`: one kernel application per dt,
/// each preceded by free evolution over dt.
inline TrajectoryResult run_trajectory(const InitialState& init, const ObjectModel& model,
                                       const ReductionKernel& kernel, double duration, double dt,
                                       std::uint64_t seed, const TrajectoryOptions& opt = {},
                                       std::uint64_t trajectory = 0) {
  const std::size_t steps = step_count(duration, dt);
  if (std::abs(kernel.dt() - dt) > 1e-12 * dt) throw ValidationError("kernel dt differs from the step");
  TrajectoryResult r;
  r.samples.reserve(steps);
  Rng rng(seed, trajectory);
  switch (opt.backend) {
    case TrajectoryBackend::kGaussian: {
      require_unitary(model, "Gaussian trajectory");
      init.validate(model.hbar);
      GaussianState s = GaussianState::from(init);
      for (std::size_t i = 1; i <= steps; ++i) {
        s.evolve(model, dt);
        const OutcomeMarginal m = outcome_marginal(s, kernel);
        const double q = m.mean + std::sqrt(m.variance) * rng.normal();
        s = condition(s, kernel, q);
        r.samples.push_back({i, static_cast<double>(i) * dt, q, 1.0, s.purity(model.hbar)});
      }
      r.gaussian = s;
      break;
    }
    case TrajectoryBackend::kFockKraus: {
      const FockSpace space = FockSpace::of(model, opt.fock_dim);
      const KrausEngine engine(space, kernel);
      DensityState s = fock_state(space, model, init);
      for (std::size_t i = 1; i <= steps; ++i) {
        KrausStepResult k = kraus_step(s, engine, dt, rng);
        s = std::move(k.state);
        r.samples.push_back({i, static_cast<double>(i) * dt, k.outcome, s.trace(), s.purity()});
      }
      r.fock = std::move(s);
      break;
    }
    case TrajectoryBackend::kFockIto: {
      require_real_kernel(kernel);
      const FockSpace space = FockSpace::of(model, opt.fock_dim);
      ItoIntegrator it(space, noise_budget(kernel).s_f, dt, opt.scheme);
      DensityState s = fock_state(space, model, init);
      const double sq = std::sqrt(dt);
      for (std::size_t i = 1; i <= steps; ++i) {
        const double z = rng.normal();
        const ItoStepInfo info = it.step(s, sq * z);
        check_boundary(s, "ito_step");
        r.samples.push_back({i, s.t, info.q_bar + kernel.delta_q() * z, s.trace(), s.purity()});
      }
      r.fock = std::move(s);
      break;
    }
    case TrajectoryBackend::kLangevin: {
      const std::vector<double> rec = simulate_damped_record(model, kernel, steps, seed, trajectory, opt.burn_in);
      for (std::size_t i = 0; i < steps; ++i) {
        r.samples.push_back({i + 1, static_cast<double>(i + 1) * dt, rec[i], 1.0,
                             std::numeric_limits<double>::quiet_NaN()});
      }
      break;
    }
  }
  return r;
}

/// Trajectory as CSV `step,t,outcome,trace,purity`.
inline std::string trajectory_csv(const std::vector<TrajectorySample>& samples) {
  std::string out = "step,t,outcome,trace,purity\n";
  for (const auto& s : samples) {
    out += std::to_string(s.step) + ',' + csv::number(s.t) + ',' + csv::number(s.outcome) + ',' +
           csv::number(s.trace) + ',' + csv::number(s.purity) + '\n';
  }
  return out;
}

/// Step indices (1-based) of `count` evenly spaced snapshots ending at `steps`.
inline std::vector<std::size_t> checkpoint_steps(std::size_t steps, std::size_t count) {
  count = std::min(count, steps);
  std::vector<std::size_t> out;
  for (std::size_t c = 1; c <= count; ++c) out.push_back(c * steps / count);
  return out;
}

/// Noise-free evolution of the double-commutator equation with snapshots.
inline std::vector<DensityState> lindblad_evolve(const DensityState& init, const FockSpace& space,
                                                 double s_f, double duration, double dt,
                                                 std::size_t checkpoints) {
  const std::size_t steps = step_count(duration, dt);
  ItoIntegrator it(space, s_f, dt, SmeScheme::kEulerMaruyama);
  DensityState s = init;
  const std::vector<std::size_t> at = checkpoint_steps(steps, checkpoints);
  std::vector<DensityState> snaps;
  std::size_t c = 0;
  for (std::size_t i = 1; i <= steps; ++i) {
    it.step(s, 0.0);
    if (c < at.size() && i == at[c]) {
      snaps.push_back(s);
      ++c;
    }
  }
  return snaps;
}

struct ItoEnsembleResult {
  std::vector<double> times;                // checkpoint times
  std::vector<Eigen::MatrixXcd> mean_rho;   // ensemble mean per checkpoint
  double max_trace_error = 0.0;             // max ItoStepInfo::trace_error
  double max_purity = 0.0;
  std::size_t trajectories = 0;
  std::vector<TrajectorySample> first_trajectory;
};

/// Ensemble of diffusive trajectories. Trajectory i draws from stream (seed, i);
/// blocks are summed in a fixed tree order, so the mean is thread-count independent.
inline ItoEnsembleResult run_ito_ensemble(const DensityState& init, const FockSpace& space, double s_f,
                                          double delta_q, double duration, double dt, std::size_t n_traj,
                                          std::uint64_t seed, unsigned threads = 1,
                                          std::size_t checkpoints = 10,
                                          SmeScheme scheme = SmeScheme::kPositiveMap) {
  const std::size_t steps = step_count(duration, dt);
  if (n_traj == 0) throw ValidationError("ensemble needs at least one trajectory");
  const std::vector<std::size_t> at = checkpoint_steps(steps, checkpoints);
  checkpoints = at.size();
  const std::size_t nb = std::min<std::size_t>(50, n_traj);
  struct Block {
    std::vector<Eigen::MatrixXcd> sums;
    double trace_error = 0.0;
    double purity = 0.0;
  };
  std::vector<Block> blocks(nb);
  std::vector<TrajectorySample> first;

  parallel_for(nb, threads, [&](std::size_t b) {
    const auto [lo, hi] = block_range(n_traj, nb, b);
    Block blk;
    blk.sums.assign(checkpoints, Eigen::MatrixXcd::Zero(space.dim, space.dim));
    ItoIntegrator it(space, s_f, dt, scheme);
    const double sq = std::sqrt(dt);
    for (std::size_t tr = lo; tr < hi; ++tr) {
      Rng rng(seed, tr);
      DensityState s = init;
      std::size_t c = 0;
      for (std::size_t i = 1; i <= steps; ++i) {
        const double z = rng.normal();
        const ItoStepInfo info = it.step(s, sq * z);
        check_boundary(s, "ito_step");
        const double pur = s.purity();
        blk.trace_error = std::max(blk.trace_error, info.trace_error);
        blk.purity = std::max(blk.purity, pur);
        if (tr == 0) first.push_back({i, s.t, info.q_bar + delta_q * z, s.trace(), pur});
        if (c < checkpoints && i == at[c]) blk.sums[c++] += s.rho;
      }
    }
    blocks[b] = std::move(blk);
  });

  const Block total = pairwise_reduce(blocks, [](const Block& a, const Block& b) {
    Block r;
    r.sums.resize(a.sums.size());
    for (std::size_t c = 0; c < a.sums.size(); ++c) r.sums[c] = a.sums[c] + b.sums[c];
    r.trace_error = std::max(a.trace_error, b.trace_error);
    r.purity = std::max(a.purity, b.purity);
    return r;
  });
  ItoEnsembleResult res;
  res.trajectories = n_traj;
  res.max_trace_error = total.trace_error;
  res.max_purity = total.purity;
  res.first_trajectory = std::move(first);
  for (std::size_t c = 0; c < checkpoints; ++c) {
    res.times.push_back(dt * static_cast<double>(at[c]));
    res.mean_rho.push_back(total.sums[c] / static_cast<double>(n_traj));
  }
  return res;
}

}  // namespace qmeter
