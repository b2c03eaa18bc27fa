#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "qmeter/random.hpp"
#include "qmeter/sme_integrator.hpp"
#include "qmeter/spectra.hpp"

using namespace qmeter;

namespace {

const ObjectModel kDamped = ObjectModel::damped(1.0, 1.0, 0.1);

std::vector<double> white_noise(std::size_t n, double sigma, std::uint64_t seed) {
  Rng rng(seed, 0);
  std::vector<double> x(n);
  for (double& v : x) v = sigma * rng.normal();
  return x;
}

}  // namespace

TEST(Spectra, NoiseInequalityMargin) {
  EXPECT_NEAR(verify_noise_inequality(1.0, 0.25, 0.0), 0.0, 1e-15);
  EXPECT_NEAR(verify_noise_inequality(1.0, 1.0, 0.0), 0.75, 1e-15);
  EXPECT_NEAR(verify_noise_inequality(1.0, 0.2, 0.3), -0.14, 1e-15);
  EXPECT_NEAR(verify_noise_inequality(2.0, 0.5, 0.5, 2.0), -0.25, 1e-15);
}

TEST(Spectra, AnalyticSpectrumOnResonance) {
  const SpectrumTable t = analytic_spectrum(kDamped, 5.0, 0.05, 0.0, {1.0});
  EXPECT_NEAR(t.intrinsic[0], 10.0, 1e-12);
  EXPECT_NEAR(t.imprecision[0], 5.0, 0.0);
  EXPECT_NEAR(t.backaction[0], 5.0, 1e-12);
  EXPECT_NEAR(t.cross[0], 0.0, 1e-14);
  EXPECT_NEAR(t.added[0], 10.0, 1e-12);
  EXPECT_NEAR(t.total[0], 20.0, 1e-12);
  EXPECT_NEAR(t.margin[0], 0.0, 1e-15);
}

TEST(Spectra, CrossChannelFollowsReChi) {
  // Above resonance Re chi < 0, so a positive S_qF lowers the added noise.
  const SpectrumTable t = analytic_spectrum(kDamped, 1.0, 1.0, 0.4, {0.5, 1.5});
  EXPECT_GT(t.cross[0], 0.0);
  EXPECT_LT(t.cross[1], 0.0);
  const SpectrumTable free = analytic_spectrum(kDamped, 1.0, 1.0, 0.0, {1.5});
  EXPECT_LT(t.added[1], free.added[0]);
  EXPECT_NEAR(t.total[1], t.intrinsic[1] + t.imprecision[1] + t.backaction[1] + t.cross[1], 1e-13);
}

TEST(Spectra, AddedNoiseAndBound) {
  const AddedNoise at = added_noise_budget(kDamped, 5.0, 0.05, 0.0, 1.0);
  EXPECT_NEAR(at.added, 10.0, 1e-12);
  EXPECT_NEAR(at.bound, 10.0, 1e-12);
  const AddedNoise off = added_noise_budget(kDamped, 10.0, 0.025, 0.0, 1.0);
  EXPECT_NEAR(off.added / at.added, 1.25, 1e-12);
  const AddedNoise imprecise = added_noise_budget(kDamped, 1000.0, 0.00025, 0.0, 1.0);
  EXPECT_NEAR(imprecise.added, 1000.025, 1e-9);
  EXPECT_GT(imprecise.added / imprecise.bound, 50.0);
  EXPECT_THROW(added_noise_budget(kDamped, 1.0, 0.1, 0.0, 1.0), ValidationError);
  EXPECT_THROW(added_noise_budget(kDamped, -1.0, 0.1, 0.0, 1.0), DomainError);
}

TEST(Spectra, ClosedFormOptimum) {
  const OptimalBudget o = optimal_budget(kDamped, 1.0);
  EXPECT_NEAR(o.s_qq, 5.0, 1e-12);
  EXPECT_NEAR(o.s_ff, 0.05, 1e-14);
  EXPECT_NEAR(o.s_qf, 0.0, 1e-14);
  EXPECT_NEAR(o.min_added, 10.0, 1e-12);
  for (double w : {0.3, 0.9, 1.7}) {
    OptimalBudget b = optimal_budget(kDamped, w);
    const cplx chi = susceptibility_freq(kDamped, w);
    EXPECT_NEAR(b.min_added, std::abs(chi.imag()), 1e-12 * b.min_added);
    EXPECT_NEAR(verify_noise_inequality(b.s_qq, b.s_ff, b.s_qf), 0.0, 1e-12);
    grid_search_minimum(kDamped, b, {});
    EXPECT_NEAR(b.search_added, b.min_added, 1e-6 * b.min_added);
    // No budget on the inequality boundary does better than the closed form.
    for (double f : {-0.5, 0.0, 0.5}) {
      for (double q : {0.5 * b.s_qq, b.s_qq, 2.0 * b.s_qq}) {
        const double s_ff = (0.25 + f * f) / q;
        EXPECT_GE(added_noise_budget(kDamped, q, s_ff, f, w).added, b.min_added * (1.0 - 1e-12));
      }
    }
  }
}

TEST(Spectra, FarOffResonanceIsExcluded) {
  EXPECT_THROW(optimal_budget(kDamped, 200.0), SingularPhaseError);
  const QuantumLimitScan scan = quantum_limit_scan(kDamped, {1.0, 200.0});
  ASSERT_EQ(scan.optimum.size(), 1u);
  ASSERT_EQ(scan.table.exclusions.size(), 1u);
  EXPECT_EQ(scan.table.exclusions[0].omega, 200.0);
  EXPECT_EQ(scan.table.exclusions[0].reason, "sin(phi) below threshold");
  EXPECT_EQ(scan.table.size(), 1u);
}

TEST(Spectra, WhiteNoisePeriodogram) {
  const double dt = 0.01;
  const auto x = white_noise(1u << 18, 1.0, 8);
  const SpectrumTable t = periodogram({x}, dt, {1024, 0.5});
  ASSERT_EQ(t.size(), 1024u);
  EXPECT_NEAR(t.omega.back(), kPi / dt, 1e-9);
  double mean = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    mean += t.total[i];
    sq += std::pow(t.total[i] / dt - 1.0, 2);
  }
  mean /= static_cast<double>(t.size());
  EXPECT_NEAR(mean, dt, 0.02 * dt);
  EXPECT_LT(std::sqrt(sq / static_cast<double>(t.size())), 0.1);

  // Parseval: int S dw / 2 pi reproduces the sample variance.
  const double dw = t.omega[1] - t.omega[0];
  const double power = std::accumulate(t.total.begin(), t.total.end(), 0.0) * dw / (2.0 * kPi);
  double var = 0.0;
  for (double v : x) var += v * v;
  var /= static_cast<double>(x.size());
  EXPECT_NEAR(power / var, 1.0, 0.01);
}

TEST(Spectra, SinusoidPeak) {
  const double dt = 0.05;
  const std::size_t L = 512;
  const double dw = 2.0 * kPi / (static_cast<double>(L) * dt);
  const double w0 = 40.0 * dw;
  std::vector<double> x(1u << 15);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2.0 * std::cos(w0 * dt * static_cast<double>(i));
  const SpectrumTable t = periodogram({x}, dt, {L, 0.5});
  const auto peak = static_cast<std::size_t>(std::max_element(t.total.begin(), t.total.end()) - t.total.begin());
  EXPECT_NEAR(std::abs(t.omega[peak]), w0, 1e-9);
  const double power = std::accumulate(t.total.begin(), t.total.end(), 0.0) * dw / (2.0 * kPi);
  EXPECT_NEAR(power, 2.0, 0.02);
}

TEST(Spectra, PeriodogramValidation) {
  EXPECT_THROW(periodogram({std::vector<double>(1000, 0.0)}, 0.1, {1024, 0.5}), ConfigError);
  EXPECT_THROW(periodogram({}, 0.1), ConfigError);
  EXPECT_THROW(periodogram({std::vector<double>(5000, 0.0)}, 0.0, {1024, 0.5}), ConfigError);
  EXPECT_THROW(periodogram({std::vector<double>(5000, 0.0)}, 0.1, {1024, 1.0}), ConfigError);
}

TEST(Spectra, PeriodogramIsThreadIndependent) {
  const auto x = white_noise(1u << 15, 1.0, 3);
  const SpectrumTable a = periodogram({x}, 0.1, {256, 0.5}, 1);
  const SpectrumTable b = periodogram({x}, 0.1, {256, 0.5}, 4);
  EXPECT_EQ(a.total, b.total);
}

TEST(Spectra, ImprecisionDominatedRecordIsFlat) {
  // Large delta_q: the record is essentially white imprecision noise of level S_q,
  // with the damped-oscillator motion and back-action as small additions.
  const ObjectModel model = ObjectModel::damped(1.0, 1.0, 0.5);
  const double dt = 0.01, s_q = 1.0;
  const auto kernel = make_gaussian_kernel(s_q, 0.0, 0.0, dt);
  const NoiseBudget b = noise_budget(kernel);
  const std::vector<double> rec = simulate_damped_record(model, kernel, 1u << 18, 12);
  const SpectrumTable psd = periodogram({rec}, dt, {1024, 0.5});
  std::vector<double> band;
  for (double w : psd.omega) {
    if (w >= 3.0 && w <= 10.0) band.push_back(w);
  }
  ASSERT_GT(band.size(), 5u);
  const SpectrumTable ref = analytic_spectrum(model, b.s_q, b.s_f, b.s_qf, band);
  double ratio = 0.0;
  for (std::size_t i = 0, k = 0; i < psd.size(); ++i) {
    if (psd.omega[i] >= 3.0 && psd.omega[i] <= 10.0) ratio += psd.total[i] / ref.total[k++];
  }
  ratio /= static_cast<double>(band.size());
  EXPECT_NEAR(ratio, 1.0, 0.05);
  for (double v : ref.total) EXPECT_NEAR(v / s_q, 1.0, 0.05);
}
