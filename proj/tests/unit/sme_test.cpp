#include <gtest/gtest.h>

#include <cmath>

#include <Eigen/Dense>

#include "qmeter/hermite.hpp"
#include "qmeter/sme_integrator.hpp"
#include "test_support.hpp"

using namespace qmeter;

namespace {

const ObjectModel kOsc = ObjectModel::oscillator(1.0, 1.0);

DensityState displaced(const FockSpace& s, double q0, double p0) {
  return fock_state(s, kOsc, InitialState::custom(Eigen::Vector2d(q0, p0), 0.5 * Eigen::Matrix2d::Identity(), 1.0));
}

double frobenius(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) { return (a - b).norm(); }

// Dense reference for one step: free phases, then the measurement map.
Eigen::MatrixXcd dense_step(const FockSpace& space, const Eigen::MatrixXcd& rho, double s_f, double dt, double dW,
                            SmeScheme scheme) {
  const Eigen::MatrixXcd Q = space.q_matrix();
  const Eigen::MatrixXcd I = Eigen::MatrixXcd::Identity(space.dim, space.dim);
  const Eigen::MatrixXcd r = rho.cwiseProduct(space.free_phases(dt));
  const double q_bar = (Q * r).trace().real();
  const double gain = std::sqrt(s_f) / space.hbar;
  const double kappa = s_f * dt / (2.0 * space.hbar * space.hbar);
  Eigen::MatrixXcd out;
  if (scheme == SmeScheme::kPositiveMap) {
    const Eigen::MatrixXcd M = I + gain * (2.0 * gain * q_bar * dt + dW) * Q - kappa * Q * Q;
    out = M * r * M;
  } else {
    const Eigen::MatrixXcd dc = Q * (Q * r - r * Q) - (Q * r - r * Q) * Q;
    out = r - kappa * dc + gain * dW * (Q * r + r * Q - 2.0 * q_bar * r);
  }
  return out / out.trace().real();
}

}  // namespace

TEST(Sme, ForceStatistics) {
  const ForceStatistics f = force_statistics(make_gaussian_kernel(0.01, 0.0, 3.0, 0.01));
  EXPECT_NEAR(f.mean, 3.0, 1e-12);
  EXPECT_NEAR(f.variance, 2500.0, 1e-9);
  EXPECT_NEAR(f.variance * f.dt, noise_budget(make_gaussian_kernel(0.01, 0.0, 3.0, 0.01)).s_f, 1e-10);
  EXPECT_NEAR(f.variance * f.dt, 25.0, 1e-10);
}

TEST(Sme, NoMeasurementIsFreeEvolution) {
  const FockSpace space = FockSpace::of(kOsc, 30);
  const DensityState s = displaced(space, 1.0, 0.5);
  DensityState expected = s;
  free_evolve(expected, space, 0.01);
  for (SmeScheme scheme : {SmeScheme::kPositiveMap, SmeScheme::kEulerMaruyama}) {
    const DensityState r = ito_step(s, 0.0, kOsc, 0.01, 0.0, QBarMode::kTrace, scheme);
    EXPECT_LT(frobenius(r.rho, expected.rho), 1e-13);
    EXPECT_NEAR(r.t, 0.01, 1e-15);
  }
}

TEST(Sme, StepsMatchDenseReference) {
  const FockSpace space = FockSpace::of(kOsc, 24);
  const DensityState s = displaced(space, 0.7, -0.4);
  for (SmeScheme scheme : {SmeScheme::kPositiveMap, SmeScheme::kEulerMaruyama}) {
    for (double dW : {0.0, 0.03, -0.05}) {
      const DensityState r = ito_step(s, 2.0, kOsc, 1e-3, dW, QBarMode::kTrace, scheme);
      EXPECT_LT(frobenius(r.rho, dense_step(space, s.rho, 2.0, 1e-3, dW, scheme)), 1e-13);
      EXPECT_NEAR(r.trace(), 1.0, 1e-13);
      EXPECT_LT(r.hermiticity_error(), 1e-15);
    }
  }
}

TEST(Sme, PositiveMapKeepsPurityBounded) {
  const FockSpace space = FockSpace::of(kOsc, 30);
  ItoIntegrator it(space, 1.0, 1e-3);
  DensityState s = DensityState::ground(space);
  Rng rng(4, 0);
  for (int i = 0; i < 2000; ++i) {
    const ItoStepInfo info = it.step(s, std::sqrt(1e-3) * rng.normal());
    EXPECT_LE(info.trace_error, 1e-12);
  }
  EXPECT_LE(s.purity(), 1.0 + 1e-9);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(s.rho);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8);
}

TEST(Sme, MomentumDiffusionRate) {
  // The double commutator adds S_F dt to <p^2> and leaves <q^2> unchanged.
  const FockSpace space = FockSpace::of(kOsc, 40);
  const Eigen::MatrixXcd P = space.p_matrix(), Q = space.q_matrix();
  const double s_f = 3.0, dt = 1e-3;
  const DensityState s = DensityState::ground(space);
  const DensityState r = lindblad_step(s, s_f, kOsc, dt);
  const double dp2 = r.expect(P * P).real() - s.expect(P * P).real();
  const double dq2 = r.expect(Q * Q).real() - s.expect(Q * Q).real();
  EXPECT_NEAR(dp2, s_f * dt, 1e-8);
  EXPECT_NEAR(dq2, 0.0, 1e-8);
}

TEST(Sme, EnsembleMeanFollowsNoiseAveragedEquation) {
  const FockSpace space = FockSpace::of(kOsc, 30);
  const DensityState init = displaced(space, 1.0, 0.0);
  const double s_f = 1.0, duration = 0.5, dt = 0.005;
  const std::size_t n = 400;
  const auto lind = lindblad_evolve(init, space, s_f, duration, dt, 5);
  const ItoEnsembleResult ens = run_ito_ensemble(init, space, s_f, 1.0, duration, dt, n, 77, 1, 5);
  ASSERT_EQ(lind.size(), ens.mean_rho.size());
  for (std::size_t c = 0; c < lind.size(); ++c) {
    EXPECT_LT(frobenius(ens.mean_rho[c], lind[c].rho), 5.0 / std::sqrt(static_cast<double>(n)));
  }
  EXPECT_LE(ens.max_trace_error, 1e-9);
  EXPECT_LE(ens.max_purity, 1.0 + 1e-9);
}

TEST(Sme, EnsembleIsDeterministicAcrossThreads) {
  const FockSpace space = FockSpace::of(kOsc, 20);
  const DensityState init = DensityState::ground(space);
  const auto a = run_ito_ensemble(init, space, 1.0, 1.0, 0.1, 0.002, 12, 5, 1, 3);
  const auto b = run_ito_ensemble(init, space, 1.0, 1.0, 0.1, 0.002, 12, 5, 3, 3);
  for (std::size_t c = 0; c < a.mean_rho.size(); ++c) EXPECT_EQ(a.mean_rho[c], b.mean_rho[c]);
  ASSERT_EQ(a.first_trajectory.size(), b.first_trajectory.size());
  EXPECT_EQ(a.first_trajectory.back().outcome, b.first_trajectory.back().outcome);
}

TEST(Sme, DiffusiveStepRejectsComplexKernels) {
  const FockSpace space = FockSpace::of(kOsc, 20);
  const DensityState s = DensityState::ground(space);
  EXPECT_THROW(ito_step(s, make_gaussian_kernel(0.01, 0.3, 0.0, 0.01), kOsc, 0.0), UnsupportedError);
  EXPECT_THROW(ito_step(s, make_gaussian_kernel(0.01, 0.0, 2.0, 0.01), kOsc, 0.0), UnsupportedError);
  EXPECT_NO_THROW(ito_step(s, make_gaussian_kernel(0.01, 0.0, 0.0, 0.01), kOsc, 0.0));
  EXPECT_THROW(ItoIntegrator(space, -1.0, 0.01), DomainError);
}

TEST(Sme, HermiteKernelDoubleCommutatorCoefficient) {
  HermiteSuperposition h{{cplx(0.6), cplx(0.0), cplx(0.8)}, 0.3, 0.0};
  h.shift = h.unshifted_mean();
  const ReductionKernel k = hermite_kernel(h, 0.01);
  const NoiseBudget b = noise_budget(k);
  EXPECT_NEAR(lindblad_coefficient(k), b.s_f / 2.0, 1e-10 * b.s_f);
  const FockSpace space = FockSpace::of(kOsc, 30);
  EXPECT_NO_THROW(lindblad_step(DensityState::ground(space), k, kOsc));
}

TEST(Kraus, OutcomeDensityOfGroundState) {
  const FockSpace space = FockSpace::of(kOsc, 30);
  const KrausEngine engine(space, make_gaussian_kernel(1.0, 0.0, 0.0, 1.0));
  const auto t = engine.outcome_table(DensityState::ground(space));
  double m0 = 0.0, m1 = 0.0, m2 = 0.0;
  for (std::size_t k = 0; k < t.nodes.size; ++k) {
    const double w = t.density[k] * t.nodes.step;
    m0 += w;
    m1 += w * t.nodes[k];
    m2 += w * t.nodes[k] * t.nodes[k];
  }
  EXPECT_NEAR(m0, 1.0, 1e-9);
  EXPECT_NEAR(m1, 0.0, 1e-12);
  EXPECT_NEAR(m2 / m0, 1.5, 1e-8);
}

TEST(Kraus, UpdateMatchesGaussianConditioning) {
  const FockSpace space = FockSpace::of(kOsc, 40);
  const Eigen::MatrixXcd Q = space.q_matrix(), P = space.p_matrix();
  const auto kernel = make_gaussian_kernel(0.5, -0.3, 0.8, 1.0);
  const KrausEngine engine(space, kernel);
  const double outcome = 0.6;
  const DensityState r = engine.update(DensityState::ground(space), outcome);
  const GaussianState g = condition(GaussianState::from(InitialState::ground(kOsc)), kernel, outcome);
  const double q = r.expect(Q).real(), p = r.expect(P).real();
  EXPECT_NEAR(q, g.means(0), 1e-8);
  EXPECT_NEAR(p, g.means(1), 1e-8);
  EXPECT_NEAR(r.expect(Q * Q).real() - q * q, g.covariance(0, 0), 1e-8);
  EXPECT_NEAR(r.expect(P * P).real() - p * p, g.covariance(1, 1), 1e-8);
  EXPECT_NEAR(0.5 * r.expect(Q * P + P * Q).real() - q * p, g.covariance(0, 1), 1e-8);
  EXPECT_NEAR(r.purity(), g.purity(1.0), 1e-8);
}

TEST(Kraus, WeakMeasurementBarelyDisturbs) {
  const FockSpace space = FockSpace::of(kOsc, 30);
  const DensityState s = displaced(space, 0.5, 0.0);
  double previous = 1.0;
  for (double s_q : {1.0, 100.0, 10000.0}) {
    const KrausEngine engine(space, make_gaussian_kernel(s_q, 0.0, 0.0, 1.0));
    const double change = frobenius(engine.update(s, 0.5).rho, s.rho);
    EXPECT_LT(change, previous);
    previous = change;
  }
  EXPECT_LT(previous, 1e-3);
}

TEST(Kraus, TruncationIsDetected) {
  const FockSpace space = FockSpace::of(kOsc, 8);
  Rng rng(1, 0);
  const auto sharp = make_gaussian_kernel(0.01 * 0.05 * 0.05, 0.0, 0.0, 0.01);
  EXPECT_THROW(kraus_step(DensityState::ground(space), sharp, kOsc, 0.01, rng, 8), TruncationError);
  ItoIntegrator it(space, 400.0, 0.01);
  DensityState s = DensityState::ground(space);
  EXPECT_THROW(
      {
        for (int i = 0; i < 100; ++i) {
          it.step(s, 0.1 * rng.normal());
          check_boundary(s, "test");
        }
      },
      TruncationError);
}

TEST(Kraus, FockOutcomesMatchGaussianSampler) {
  // Two-step trajectories: the second outcome depends on the first through
  // back-action, so its distribution tests the whole conditional update.
  const double dt = 0.5;
  const auto kernel = make_gaussian_kernel(0.5 * dt, 0.3, 0.4, dt);
  const InitialState init = InitialState::ground(kOsc);
  const FockSpace space = FockSpace::of(kOsc, 48);
  KrausOptions ko;
  ko.outcome_points = 129;
  const KrausEngine engine(space, kernel, ko);
  const std::size_t n = 2000;
  std::vector<double> fock, gauss;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(2024, i);
    KrausStepResult a = kraus_step(fock_state(space, kOsc, init), engine, dt, rng);
    fock.push_back(kraus_step(a.state, engine, dt, rng).outcome);
    gauss.push_back(run_trajectory(init, kOsc, kernel, 2.0 * dt, dt, 4048, {}, i).samples.back().outcome);
  }
  const auto ks = qmeter::testing::ks_two_sample(fock, gauss);
  EXPECT_GT(ks.p_value, 0.01) << "D = " << ks.statistic;
}

TEST(Kraus, StepCountValidation) {
  EXPECT_EQ(step_count(1.0, 0.1), 10u);
  EXPECT_THROW(step_count(1.0, 0.3), ValidationError);
  EXPECT_THROW(step_count(0.0, 0.1), DomainError);
  EXPECT_EQ(checkpoint_steps(100, 4), (std::vector<std::size_t>{25, 50, 75, 100}));
}
