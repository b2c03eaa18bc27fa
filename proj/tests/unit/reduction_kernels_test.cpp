#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include "qmeter/hermite.hpp"
#include "qmeter/kernel_io.hpp"
#include "qmeter/random.hpp"
#include "qmeter/reduction_kernels.hpp"
#include "test_support.hpp"

using namespace qmeter;
using qmeter::testing::trapezoid;

namespace {

// Closed-form Gaussian Omega and its derivative, written out independently.
struct GaussianOracle {
  double dq, a, c;
  cplx operator()(double x) const {
    return std::pow(2.0 * kPi * dq * dq, -0.25) * std::exp(-cplx(1.0, -a) * x * x / (4.0 * dq * dq) - cplx(0.0, c) * x);
  }
  cplx derivative(double x) const {
    return (*this)(x) * (-cplx(1.0, -a) * x / (2.0 * dq * dq) - cplx(0.0, c));
  }
};

}  // namespace

TEST(ReductionKernel, GaussianIntegralsMatchDirectQuadrature) {
  const double dt = 0.01, hbar = 1.0;
  const ReductionKernel k = make_gaussian_kernel(0.02, -0.7, 3.0, dt, hbar);
  const GaussianOracle g{k.delta_q(), 2.0 * -0.7 / hbar, dt * 3.0 / hbar};
  const double L = 12.0 * k.delta_q();
  const std::size_t n = 20000;
  const auto norm = trapezoid<double>([&](double x) { return std::norm(g(x)); }, -L, L, n);
  const auto second = trapezoid<double>([&](double x) { return x * x * std::norm(g(x)); }, -L, L, n);
  const auto grad = trapezoid<double>([&](double x) { return std::norm(g.derivative(x)); }, -L, L, n);
  const auto overlap = trapezoid<cplx>([&](double x) { return std::conj(g(x)) * g.derivative(x); }, -L, L, n);
  const auto cross = trapezoid<cplx>(
      [&](double x) {
        const cplx w = std::conj(g(x)) * g.derivative(x);
        return (w - std::conj(w)) * x;
      },
      -L, L, n);
  const KernelIntegrals in = k.integrals();
  EXPECT_NEAR(in.norm, norm, 1e-12);
  EXPECT_NEAR(in.second_moment, second, 1e-12 * second);
  EXPECT_NEAR(in.gradient_norm, grad, 1e-10 * grad);
  EXPECT_NEAR(std::abs(in.overlap - overlap), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(in.cross - cross), 0.0, 1e-12);
}

TEST(ReductionKernel, GaussianEqualityAnalytic) {
  Rng rng(11, 0);
  for (int i = 0; i < 200; ++i) {
    const double hbar = 0.5 + rng.uniform();
    const double s_q = std::pow(10.0, -4.0 + 4.0 * rng.uniform());
    const double s_qf = hbar * (-2.0 + 4.0 * rng.uniform());
    const NoiseBudget b = noise_budget(make_gaussian_kernel(s_q, s_qf, -5.0 + 10.0 * rng.uniform(), 0.01, hbar));
    EXPECT_NEAR(b.product_margin / (0.25 * hbar * hbar), 0.0, 1e-12);
    EXPECT_NEAR(b.s_q, s_q, 1e-14 * s_q);
    EXPECT_NEAR(b.s_qf, s_qf, 1e-14 * hbar);
  }
}

TEST(ReductionKernel, GridSampledAgreesWithParametric) {
  for (double s_qf : {-2.0, -0.5, 0.0, 1.3, 2.0}) {
    const ReductionKernel k = make_gaussian_kernel(0.05, s_qf, -4.0, 0.01);
    const ReductionKernel g = sample_kernel_on_grid(k, 8.0 * k.delta_q(), 4097);
    const NoiseBudget a = noise_budget(k), b = noise_budget(g);
    EXPECT_NEAR(b.s_q, a.s_q, 1e-6 * a.s_q);
    EXPECT_NEAR(b.s_f, a.s_f, 1e-6 * a.s_f);
    EXPECT_NEAR(b.s_qf, a.s_qf, 1e-6);
    EXPECT_NEAR(b.f_bar, a.f_bar, 1e-6 * std::abs(a.f_bar));
    EXPECT_NEAR(b.product_margin, 0.0, 1e-6 * 0.25);
  }
}

TEST(ReductionKernel, RealKernelHasNoMeanForceOrCrossCorrelation) {
  const ReductionKernel g = sample_kernel_on_grid(make_gaussian_kernel(0.3, 0.0, 0.0, 0.1), 10.0 * std::sqrt(3.0), 2049);
  const NoiseBudget b = noise_budget(g);
  EXPECT_NEAR(b.f_bar, 0.0, 1e-10);
  EXPECT_NEAR(b.s_qf, 0.0, 1e-10);

  Rng rng(5, 1);
  HermiteSuperposition h = random_hermite_superposition(rng, 4);
  for (auto& c : h.coefficients) c = cplx(c.real(), 0.0);
  double n = 0.0;
  for (const auto& c : h.coefficients) n += std::norm(c);
  for (auto& c : h.coefficients) c /= std::sqrt(n);
  h.shift = h.unshifted_mean();
  const NoiseBudget hb = noise_budget(hermite_kernel(h, 0.01));
  EXPECT_NEAR(hb.f_bar, 0.0, 1e-10);
  EXPECT_NEAR(hb.s_qf, 0.0, 1e-10);
}

TEST(ReductionKernel, MeanForcePhaseLeavesBackActionUnchanged) {
  const double dt = 0.02, f = 2.5;
  const ReductionKernel base = sample_kernel_on_grid(make_gaussian_kernel(0.01, -0.3, 0.0, dt), 6.0, 4097);
  const UniformGrid grid = base.grid();
  std::vector<cplx> shifted(grid.size);
  for (std::size_t i = 0; i < grid.size; ++i) shifted[i] = base.values()[i] * std::polar(1.0, -dt * f * grid[i]);
  const ReductionKernel moved = ReductionKernel::sampled(grid, shifted, dt);
  const NoiseBudget a = noise_budget(base), b = noise_budget(moved);
  EXPECT_NEAR(b.s_f, a.s_f, 1e-8 * a.s_f);
  EXPECT_NEAR(b.f_bar - a.f_bar, f, 1e-8 * f);
  EXPECT_NEAR(b.s_qf, a.s_qf, 1e-10);
}

TEST(ReductionKernel, HermiteKernelsRespectInequality) {
  Rng rng(99, 3);
  for (int i = 0; i < 40; ++i) {
    const auto h = random_hermite_superposition(rng, 1 + i % 6, 0.5 + rng.uniform());
    const NoiseBudget b = noise_budget(hermite_kernel(h, 0.01));
    EXPECT_GE(b.product_margin, -1e-9);
  }
  // A pure psi_1 kernel is far from optimal: margin = 9/4 - 1/4 = 2 in hbar = 1 units.
  HermiteSuperposition one{{cplx(0.0), cplx(1.0)}, 1.0, 0.0};
  EXPECT_NEAR(noise_budget(hermite_kernel(one, 0.01)).product_margin, 2.0, 1e-8);
}

TEST(ReductionKernel, HermiteFunctionsAreOrthonormal) {
  const int n_max = 8;
  for (int m = 0; m <= n_max; ++m) {
    for (int n = 0; n <= n_max; ++n) {
      const double v = trapezoid<double>(
          [&](double y) {
            const auto h = hermite_functions(n_max, y);
            return h[m] * h[n];
          },
          -15.0, 15.0, 6000);
      EXPECT_NEAR(v, m == n ? 1.0 : 0.0, 1e-12) << m << "," << n;
    }
  }
}

TEST(ReductionKernel, QuantumLimitedKernelBudgets) {
  const double phi = 1.1, s_qq = 0.4, hbar = 1.3;
  const NoiseBudget b = noise_budget(make_quantum_limited_kernel(phi, s_qq, 0.01, 0.0, hbar));
  const double cot = 1.0 / std::tan(phi);
  EXPECT_NEAR(b.s_q, s_qq, 1e-14);
  EXPECT_NEAR(b.s_qf, -0.5 * hbar * cot, 1e-14);
  EXPECT_NEAR(b.s_f, hbar * hbar * (1.0 + cot * cot) / (4.0 * s_qq), 1e-12);
  EXPECT_THROW(make_quantum_limited_kernel(1e-4, 1.0, 0.01), SingularPhaseError);
}

TEST(ReductionKernel, ValidationFailures) {
  const ReductionKernel k = make_gaussian_kernel(0.01, 0.0, 0.0, 0.01);
  EXPECT_THROW(sample_kernel_on_grid(k, 8.0, 1024), ValidationError);
  EXPECT_THROW(sample_kernel_on_grid(k, 8.0, 513), ValidationError);
  EXPECT_THROW(sample_kernel_on_grid(k, 4.0, 2049), ValidationError);
  EXPECT_THROW(make_gaussian_kernel(-1.0, 0.0, 0.0, 0.01), DomainError);
  EXPECT_THROW(make_gaussian_kernel(1.0, 0.0, 0.0, 0.0), DomainError);

  // Off-centre kernel violates linearity; unnormalized kernel fails the norm check.
  const UniformGrid grid = UniformGrid::symmetric(10.0, 2049);
  EXPECT_THROW(noise_budget(ReductionKernel::tabulate([](double x) { return cplx(std::pow(kPi, -0.25) * std::exp(-0.5 * (x - 0.5) * (x - 0.5))); },
                                                      grid, 0.01)),
               InvalidKernelError);
  EXPECT_THROW(noise_budget(ReductionKernel::tabulate([](double x) { return cplx(std::exp(-0.5 * x * x)); }, grid, 0.01)),
               InvalidKernelError);
}

TEST(ReductionKernel, CsvRoundTrip) {
  const auto dir = qmeter::testing::scratch_dir("kernel-io");
  const ReductionKernel g = sample_kernel_on_grid(make_gaussian_kernel(0.02, 0.4, 1.0, 0.01, 1.0), 12.0, 2049);
  write_kernel(g, dir / "k.csv");
  const ReductionKernel r = read_kernel(dir / "k.csv");
  const NoiseBudget a = noise_budget(g), b = noise_budget(r);
  EXPECT_EQ(r.grid().size, g.grid().size);
  EXPECT_DOUBLE_EQ(r.dt(), 0.01);
  EXPECT_NEAR(b.s_f, a.s_f, 1e-12 * a.s_f);
  EXPECT_NEAR(b.s_qf, a.s_qf, 1e-12);
}
