#pragma once

// Finite sequences of imprecise measurements: analytic moments and covariance,
// Monte Carlo sampling, and a brute-force grid oracle for N <= 3.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qmeter/csv.hpp"
#include "qmeter/dynamics.hpp"
#include "qmeter/errors.hpp"
#include "qmeter/gaussian_state.hpp"
#include "qmeter/grid_wavefunction.hpp"
#include "qmeter/parallel.hpp"
#include "qmeter/random.hpp"
#include "qmeter/reduction_kernels.hpp"

namespace qmeter {

struct ScheduledMeasurement {
  double t = 0.0;
  ReductionKernel kernel;
};

/// The initial state is given at t = 0; measurement times are absolute.
struct MeasurementSchedule {
  ObjectModel model;
  InitialState init;
  std::vector<ScheduledMeasurement> entries;

  std::size_t size() const { return entries.size(); }

  void validate() const {
    model.validate();
    require_unitary(model, "measurement sequences");
    init.validate(model.hbar);
    if (entries.empty()) throw ValidationError("schedule has no measurements");
    for (std::size_t j = 0; j < entries.size(); ++j) {
      if (entries[j].t < 0.0) throw ValidationError("measurement times must be >= 0");
      if (j > 0 && !(entries[j].t > entries[j - 1].t)) {
        throw ValidationError("measurement times must be strictly increasing");
      }
      if (entries[j].kernel.hbar() != model.hbar) {
        throw ValidationError("kernel hbar differs from the model");
      }
    }
  }

  bool gaussian() const {
    return std::all_of(entries.begin(), entries.end(),
                       [](const ScheduledMeasurement& e) { return e.kernel.is_parametric(); });
  }

  MeasurementSchedule prefix(std::size_t n) const {
    MeasurementSchedule s{model, init, {}};
    s.entries.assign(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(n));
    return s;
  }
};

struct MeasurementRecord {
  std::uint64_t seed = 0;
  std::uint64_t trajectory = 0;
  std::vector<double> outcomes;
};

struct MomentReport {
  Eigen::VectorXd means;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd mean_se;        // Monte Carlo only
  Eigen::MatrixXd covariance_se;  // Monte Carlo only
  Eigen::MatrixXd k;
  std::size_t samples = 0;

  bool has_errors() const { return mean_se.size() > 0; }
};

inline Eigen::MatrixXd commutator_matrix(const MeasurementSchedule& schedule) {
  const std::size_t n = schedule.size();
  Eigen::MatrixXd k(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t l = 0; l < n; ++l) {
      k(j, l) = commutator_kernel(schedule.model, schedule.entries[j].t, schedule.entries[l].t);
    }
  }
  return k;
}

/// Covariance split into its additive contributions (all symmetric).
struct CovarianceTerms {
  Eigen::MatrixXd init;         // B_init
  Eigen::MatrixXd imprecision;  // delta_q^2 on the diagonal
  Eigen::MatrixXd backaction;   // sum k_mj k_ml int |W'|^2
  Eigen::MatrixXd mean_force;   // sum k_mj k_ml (int W* W')^2
  Eigen::MatrixXd cross;        // (i k_lj / 2) int (W* W' - W'* W) x

  Eigen::MatrixXd total() const { return init + imprecision + backaction + mean_force + cross; }
};

inline CovarianceTerms covariance_terms(const MeasurementSchedule& schedule) {
  schedule.validate();
  const std::size_t n = schedule.size();
  const Eigen::MatrixXd k = commutator_matrix(schedule);
  std::vector<KernelIntegrals> in;
  in.reserve(n);
  for (const auto& e : schedule.entries) in.push_back(e.kernel.integrals());

  CovarianceTerms t;
  for (Eigen::MatrixXd* m : {&t.init, &t.imprecision, &t.backaction, &t.mean_force, &t.cross}) {
    m->setZero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  }
  const cplx i(0.0, 1.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t l = 0; l <= j; ++l) {
      const double tj = schedule.entries[j].t, tl = schedule.entries[l].t;
      t.init(j, l) = init_correlation(schedule.model, schedule.init, tj, tl);
      if (j == l) t.imprecision(j, j) = in[j].second_moment;
      for (std::size_t m = 0; m < l; ++m) {
        const double kk = k(m, j) * k(m, l);
        t.backaction(j, l) += kk * in[m].gradient_norm;
        t.mean_force(j, l) += kk * (in[m].overlap * in[m].overlap).real();
      }
      t.cross(j, l) = (0.5 * i * k(l, j) * in[l].cross).real();
    }
  }
  for (Eigen::MatrixXd* m : {&t.init, &t.imprecision, &t.backaction, &t.mean_force, &t.cross}) {
    *m = m->triangularView<Eigen::Lower>().toDenseMatrix() +
         m->triangularView<Eigen::StrictlyLower>().transpose().toDenseMatrix();
  }
  return t;
}

/// Means and covariance of the outcomes in closed form. The mean shift from a
/// nonzero mean force displaces later outcomes along chi (the direction the
/// grid oracle measures).
inline MomentReport analytic_moments(const MeasurementSchedule& schedule) {
  const CovarianceTerms terms = covariance_terms(schedule);
  const std::size_t n = schedule.size();
  MomentReport r;
  r.k = commutator_matrix(schedule);
  r.covariance = terms.total();
  r.means.resize(static_cast<Eigen::Index>(n));
  const cplx i(0.0, 1.0);
  for (std::size_t j = 0; j < n; ++j) {
    const Eigen::Vector2d row = heisenberg_map(schedule.model, schedule.entries[j].t).row(0);
    double mean = row.dot(schedule.init.means) + schedule.entries[j].kernel.integrals().first_moment;
    for (std::size_t l = 0; l < j; ++l) {
      mean += (-i * r.k(j, l) * schedule.entries[l].kernel.integrals().overlap).real();
    }
    r.means(j) = mean;
  }
  return r;
}

namespace detail {

inline Wavefunction apply_kernel(const PositionGrid& g, const ReductionKernel& kernel,
                                 double outcome, const Wavefunction& psi) {
  Wavefunction out(psi.size());
  for (std::size_t i = 0; i < g.n; ++i) out[i] = kernel(outcome - g.x(i)) * psi[i];
  return out;
}

/// Grid large enough for every branch of the schedule in both q and p.
inline PositionGrid oracle_grid(const MeasurementSchedule& schedule, std::size_t min_points,
                                double width_sigmas) {
  const double hbar = schedule.model.hbar;
  Eigen::Vector2d mean = schedule.init.means;
  Eigen::Matrix2d cov = schedule.init.covariance;
  double q_lo = mean(0) - width_sigmas * std::sqrt(cov(0, 0));
  double q_hi = mean(0) + width_sigmas * std::sqrt(cov(0, 0));
  double p_ext = std::abs(mean(1)) + width_sigmas * std::sqrt(cov(1, 1));
  double t = 0.0;
  for (const auto& e : schedule.entries) {
    const Eigen::Matrix2d M = heisenberg_map(schedule.model, e.t - t);
    mean = M * mean;
    cov = M * cov * M.transpose();
    t = e.t;
    const double sq = std::sqrt(cov(0, 0));
    q_lo = std::min(q_lo, mean(0) - width_sigmas * sq);
    q_hi = std::max(q_hi, mean(0) + width_sigmas * sq);
    const KernelIntegrals in = e.kernel.integrals();
    cov(1, 1) += hbar * hbar * in.gradient_norm;
    mean(1) += (cplx(0.0, hbar) * in.overlap).real();
    p_ext = std::max(p_ext, std::abs(mean(1)) + width_sigmas * std::sqrt(cov(1, 1)));
  }
  PositionGrid g;
  g.center = 0.5 * (q_lo + q_hi);
  g.half_width = 0.5 * (q_hi - q_lo);
  const double need = 2.0 * g.half_width * p_ext / (kPi * hbar);
  g.n = min_points;
  while (static_cast<double>(g.n) < need) g.n *= 2;
  return g;
}

/// Outcome quadrature nodes around the conditional mean of a branch.
inline UniformGrid outcome_nodes(const PositionGrid& g, const Wavefunction& psi,
                                 const KernelIntegrals& kernel, std::size_t points,
                                 double sigmas) {
  const PositionMoments m = position_moments(g, psi);
  const double mu = m.first / m.mass;
  const double var = std::max(0.0, m.second / m.mass - mu * mu);
  const double sd = std::sqrt(var + kernel.second_moment);
  const UniformGrid u = UniformGrid::symmetric(sigmas * sd, points);
  return {u.start + mu + kernel.first_moment, u.step, u.size};
}

}  // namespace detail

struct OracleOptions {
  std::size_t position_points = 2048;
  std::size_t outcome_points = 257;
  double position_sigmas = 12.0;
  double outcome_sigmas = 8.0;
  double step_factor = 0.01;  // split-step dt <= step_factor / omega0
};

/// Moments of the joint outcome distribution by nested quadrature over the
/// outcomes of a grid wavefunction. The last outcome is integrated analytically
/// against the kernel moments.
inline MomentReport brute_force_joint_moments(const MeasurementSchedule& schedule,
                                              const OracleOptions& opt = {}) {
  schedule.validate();
  const std::size_t n = schedule.size();
  if (n > 3) throw ComplexityError("grid oracle supports at most 3 measurements");
  if (!schedule.init.is_pure(schedule.model.hbar)) {
    throw UnsupportedError("grid oracle needs a pure initial state");
  }
  const ObjectModel& model = schedule.model;
  const PositionGrid g = detail::oracle_grid(schedule, opt.position_points, opt.position_sigmas);
  const double max_step = model.kind == ModelKind::kOscillator ? opt.step_factor / model.omega0 : 1.0;

  std::vector<KernelIntegrals> in;
  for (const auto& e : schedule.entries) in.push_back(e.kernel.integrals());
  std::vector<SplitStepPropagator> props;
  props.reserve(n);
  double t = 0.0;
  for (const auto& e : schedule.entries) {
    props.emplace_back(g, model, e.t - t, max_step);
    t = e.t;
  }

  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  double total = 0.0;
  std::vector<double> outcomes(n);

  // psi: unnormalized branch state just before measurement j; w: quadrature weight.
  std::function<void(std::size_t, const Wavefunction&, double)> level =
      [&](std::size_t j, const Wavefunction& psi, double w) {
        if (j + 1 == n) {
          const PositionMoments m = position_moments(g, psi);
          const double q1 = m.first + in[j].first_moment * m.mass;
          const double q2 = m.second + 2.0 * in[j].first_moment * m.first + in[j].second_moment * m.mass;
          total += w * m.mass;
          for (std::size_t a = 0; a < j; ++a) {
            s1(a) += w * outcomes[a] * m.mass;
            s2(j, a) += w * outcomes[a] * q1;
            for (std::size_t b = 0; b <= a; ++b) s2(a, b) += w * outcomes[a] * outcomes[b] * m.mass;
          }
          s1(j) += w * q1;
          s2(j, j) += w * q2;
          return;
        }
        const UniformGrid nodes =
            detail::outcome_nodes(g, psi, in[j], opt.outcome_points, opt.outcome_sigmas);
        const std::vector<double> weights = simpson_weights(nodes.size, nodes.step);
        for (std::size_t k = 0; k < nodes.size; ++k) {
          outcomes[j] = nodes[k];
          Wavefunction next = detail::apply_kernel(g, schedule.entries[j].kernel, nodes[k], psi);
          props[j + 1].apply(next);
          level(j + 1, next, w * weights[k]);
        }
      };

  Wavefunction psi0 = gaussian_wavefunction(g, schedule.init.means, schedule.init.covariance, model.hbar);
  props[0].apply(psi0);
  level(0, psi0, 1.0);

  MomentReport r;
  r.k = commutator_matrix(schedule);
  r.means = s1 / total;
  Eigen::MatrixXd second = s2.selfadjointView<Eigen::Lower>();
  second /= total;
  r.covariance = second - r.means * r.means.transpose();
  return r;
}

namespace detail {

/// One trajectory on the grid wavefunction: outcomes by rejection sampling on
/// the tabulated outcome density.
inline std::vector<double> sample_on_grid(const MeasurementSchedule& schedule, Rng& rng,
                                          const OracleOptions& opt) {
  const std::size_t n = schedule.size();
  if (n > 3) throw ComplexityError("grid sampling path supports at most 3 measurements");
  if (!schedule.init.is_pure(schedule.model.hbar)) {
    throw UnsupportedError("grid sampling path needs a pure initial state");
  }
  const ObjectModel& model = schedule.model;
  const PositionGrid g = oracle_grid(schedule, opt.position_points, opt.position_sigmas);
  const double max_step = model.kind == ModelKind::kOscillator ? opt.step_factor / model.omega0 : 1.0;
  Wavefunction psi = gaussian_wavefunction(g, schedule.init.means, schedule.init.covariance, model.hbar);
  std::vector<double> out(n);
  double t = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto& e = schedule.entries[j];
    SplitStepPropagator(g, model, e.t - t, max_step).apply(psi);
    t = e.t;
    const UniformGrid nodes = outcome_nodes(g, psi, e.kernel.integrals(), opt.outcome_points,
                                            opt.outcome_sigmas);
    std::vector<double> w(nodes.size, 0.0);
    for (std::size_t k = 0; k < nodes.size; ++k) {
      for (std::size_t i = 0; i < g.n; ++i) {
        w[k] += e.kernel.density(nodes[k] - g.x(i)) * std::norm(psi[i]);
      }
    }
    const double w_max = *std::max_element(w.begin(), w.end());
    double q = 0.0;
    for (;;) {
      const double u = rng.uniform() * static_cast<double>(nodes.size - 1);
      const auto k = std::min(static_cast<std::size_t>(u), nodes.size - 2);
      const double f = u - static_cast<double>(k);
      if (rng.uniform() * w_max < (1.0 - f) * w[k] + f * w[k + 1]) {
        q = nodes.start + u * nodes.step;
        break;
      }
    }
    out[j] = q;
    psi = apply_kernel(g, e.kernel, q, psi);
    const double s = 1.0 / std::sqrt(wavefunction_norm(g, psi));
    for (cplx& v : psi) v *= s;
  }
  return out;
}

}  // namespace detail

/// One trajectory. Gaussian kernels with a Gaussian state use the exact
/// conditional update; anything else falls back to the grid path.
inline MeasurementRecord sample_sequence(const MeasurementSchedule& schedule, std::uint64_t seed,
                                         std::uint64_t trajectory = 0) {
  Rng rng(seed, trajectory);
  MeasurementRecord rec{seed, trajectory, {}};
  if (!schedule.gaussian()) {
    rec.outcomes = detail::sample_on_grid(schedule, rng, OracleOptions{});
    return rec;
  }
  GaussianState s = GaussianState::from(schedule.init);
  rec.outcomes.reserve(schedule.size());
  double t = 0.0;
  for (const auto& e : schedule.entries) {
    s.evolve(schedule.model, e.t - t);
    t = e.t;
    const OutcomeMarginal m = outcome_marginal(s, e.kernel);
    const double q = m.mean + std::sqrt(m.variance) * rng.normal();
    rec.outcomes.push_back(q);
    s = condition(s, e.kernel, q);
  }
  return rec;
}

/// Streaming mean and co-moment with an order-defined merge.
struct MomentAccumulator {
  double count = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd comoment;

  explicit MomentAccumulator(Eigen::Index n = 0)
      : mean(Eigen::VectorXd::Zero(n)), comoment(Eigen::MatrixXd::Zero(n, n)) {}

  void add(const Eigen::VectorXd& x) {
    count += 1.0;
    const Eigen::VectorXd d = x - mean;
    mean += d / count;
    comoment += d * (x - mean).transpose();
  }

  static MomentAccumulator merge(const MomentAccumulator& a, const MomentAccumulator& b) {
    if (a.count == 0.0) return b;
    if (b.count == 0.0) return a;
    MomentAccumulator r(a.mean.size());
    r.count = a.count + b.count;
    const Eigen::VectorXd d = b.mean - a.mean;
    r.mean = a.mean + d * (b.count / r.count);
    r.comoment = a.comoment + b.comoment + d * d.transpose() * (a.count * b.count / r.count);
    return r;
  }

  Eigen::MatrixXd covariance() const { return comoment / (count - 1.0); }
};

struct MonteCarloOptions {
  unsigned threads = 1;
  std::size_t blocks = 100;
};

/// Sample moments with leave-one-block-out jackknife errors. Trajectory i always
/// uses the stream (seed, i), and blocks merge in a fixed order, so the result
/// does not depend on the thread count.
inline MomentReport monte_carlo_moments(const MeasurementSchedule& schedule, std::size_t n_traj,
                                        std::uint64_t seed, const MonteCarloOptions& opt = {}) {
  schedule.validate();
  if (n_traj < 100) throw ValidationError("monte_carlo_moments needs n_traj >= 100");
  const auto n = static_cast<Eigen::Index>(schedule.size());
  const std::size_t nb = std::min(opt.blocks, n_traj);
  std::vector<MomentAccumulator> blocks(nb, MomentAccumulator(n));
  parallel_for(nb, opt.threads, [&](std::size_t b) {
    const auto [lo, hi] = block_range(n_traj, nb, b);
    MomentAccumulator acc(n);
    for (std::size_t i = lo; i < hi; ++i) {
      const MeasurementRecord rec = sample_sequence(schedule, seed, i);
      acc.add(Eigen::Map<const Eigen::VectorXd>(rec.outcomes.data(), n));
    }
    blocks[b] = std::move(acc);
  });

  const MomentAccumulator all = pairwise_reduce(blocks, MomentAccumulator::merge);
  std::vector<MomentAccumulator> prefix(nb, MomentAccumulator(n)), suffix(nb, MomentAccumulator(n));
  for (std::size_t b = 0; b < nb; ++b) {
    prefix[b] = b == 0 ? blocks[0] : MomentAccumulator::merge(prefix[b - 1], blocks[b]);
    const std::size_t r = nb - 1 - b;
    suffix[r] = b == 0 ? blocks[r] : MomentAccumulator::merge(blocks[r], suffix[r + 1]);
  }
  Eigen::VectorXd mean_sum = Eigen::VectorXd::Zero(n), mean_sq = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd cov_sum = Eigen::MatrixXd::Zero(n, n), cov_sq = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t b = 0; b < nb; ++b) {
    MomentAccumulator loo(n);
    if (b > 0) loo = prefix[b - 1];
    if (b + 1 < nb) loo = MomentAccumulator::merge(loo, suffix[b + 1]);
    const Eigen::MatrixXd c = loo.covariance();
    mean_sum += loo.mean;
    mean_sq += loo.mean.cwiseAbs2();
    cov_sum += c;
    cov_sq += c.cwiseAbs2();
  }
  const double B = static_cast<double>(nb);
  const double f = (B - 1.0) / B;
  MomentReport r;
  r.k = commutator_matrix(schedule);
  r.means = all.mean;
  r.covariance = all.covariance();
  r.mean_se = (f * (mean_sq - mean_sum.cwiseAbs2() / B)).cwiseMax(0.0).cwiseSqrt();
  r.covariance_se = (f * (cov_sq - cov_sum.cwiseAbs2() / B)).cwiseMax(0.0).cwiseSqrt();
  r.samples = n_traj;
  return r;
}

/// Records as CSV `traj,t,outcome`.
inline std::string records_csv(const MeasurementSchedule& schedule,
                               const std::vector<MeasurementRecord>& records) {
  std::string out = "traj,t,outcome\n";
  for (const auto& rec : records) {
    for (std::size_t j = 0; j < rec.outcomes.size(); ++j) {
      out += std::to_string(rec.trajectory) + ',' + csv::number(schedule.entries[j].t) + ',' +
             csv::number(rec.outcomes[j]) + '\n';
    }
  }
  return out;
}

}  // namespace qmeter
