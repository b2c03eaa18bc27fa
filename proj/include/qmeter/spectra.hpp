#pragma once

// Frequency-domain analysis. All spectra are two-sided with the e^{+i w t}
// Fourier convention, so that int S(w) dw / 2pi equals the variance.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qmeter/csv.hpp"
#include "qmeter/dynamics.hpp"
#include "qmeter/errors.hpp"
#include "qmeter/fft.hpp"
#include "qmeter/numerics.hpp"
#include "qmeter/parallel.hpp"
#include "qmeter/reduction_kernels.hpp"

namespace qmeter {

struct SpectrumExclusion {
  double omega = 0.0;
  std::string reason;
};

struct SpectrumTable {
  std::vector<double> omega;
  std::vector<double> total, intrinsic, imprecision, backaction, cross, added, bound, margin;
  std::vector<SpectrumExclusion> exclusions;

  std::size_t size() const { return omega.size(); }

  void resize(std::size_t n) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    omega.assign(n, nan);
    for (auto* c : {&total, &intrinsic, &imprecision, &backaction, &cross, &added, &bound, &margin}) {
      c->assign(n, nan);
    }
  }
};

inline constexpr const char* kSpectrumConvention =
    "# two-sided spectra, S(w) = int <x(t) o x(0)> e^{i w t} dt, int S dw / 2pi = variance";

inline std::string spectrum_csv(const SpectrumTable& t) {
  std::string out = std::string(kSpectrumConvention) + '\n';
  out += "omega,total,intrinsic,imprecision,backaction,cross,added,bound,margin\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    out += csv::number(t.omega[i]);
    for (const auto* c : {&t.total, &t.intrinsic, &t.imprecision, &t.backaction, &t.cross, &t.added,
                          &t.bound, &t.margin}) {
      out += ',' + csv::number((*c)[i]);
    }
    out += '\n';
  }
  return out;
}

struct WelchConfig {
  std::size_t window = 4096;
  double overlap = 0.5;
};

/// Welch-averaged two-sided PSD of mean-subtracted records (periodic Hann
/// window). Only the `total` channel is filled; omega runs from -pi/dt upward.
inline SpectrumTable periodogram(const std::vector<std::vector<double>>& records, double dt,
                                 const WelchConfig& cfg = {}, unsigned threads = 1) {
  if (records.empty()) throw ConfigError("periodogram", "no records");
  if (!(dt > 0.0)) throw ConfigError("periodogram.dt", "dt must be positive");
  const std::size_t L = cfg.window;
  if (L < 8) throw ConfigError("periodogram.window", "window too short");
  if (!(cfg.overlap >= 0.0 && cfg.overlap < 1.0)) throw ConfigError("periodogram.overlap", "overlap must be in [0, 1)");
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(L * (1.0 - cfg.overlap))));

  std::vector<double> win(L);
  double w2 = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    win[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(L));
    w2 += win[i] * win[i];
  }

  struct Segment {
    std::size_t record, start;
  };
  std::vector<Segment> segs;
  std::vector<double> means(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& x = records[r];
    if (x.size() < 2 * L) throw ConfigError("periodogram.window", "record shorter than two windows");
    double m = 0.0;
    for (double v : x) m += v;
    means[r] = m / static_cast<double>(x.size());
    for (std::size_t s = 0; s + L <= x.size(); s += hop) segs.push_back({r, s});
  }

  const std::size_t nb = std::min<std::size_t>(segs.size(), 16);
  std::vector<std::vector<double>> partial(nb);
  parallel_for(nb, threads, [&](std::size_t b) {
    const auto [lo, hi] = block_range(segs.size(), nb, b);
    Fft fft(L, Fft::Direction::kForward);
    std::vector<cplx> buf(L);
    std::vector<double> acc(L, 0.0);
    for (std::size_t k = lo; k < hi; ++k) {
      const auto& x = records[segs[k].record];
      const double m = means[segs[k].record];
      for (std::size_t i = 0; i < L; ++i) buf[i] = (x[segs[k].start + i] - m) * win[i];
      fft(buf);
      for (std::size_t i = 0; i < L; ++i) acc[i] += std::norm(buf[i]);
    }
    partial[b] = std::move(acc);
  });
  const std::vector<double> sum = pairwise_reduce(partial, [](const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
    return r;
  });

  SpectrumTable t;
  t.resize(L);
  const double scale = dt / (w2 * static_cast<double>(segs.size()));
  const double dw = 2.0 * kPi / (static_cast<double>(L) * dt);
  for (std::size_t j = 0; j < L; ++j) {
    // Row j holds bin k = j - L/2 + 1, so omega ascends through (-pi/dt, pi/dt].
    const auto k = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(L / 2) + 1;
    const std::size_t bin = static_cast<std::size_t>((k + static_cast<std::ptrdiff_t>(L)) % static_cast<std::ptrdiff_t>(L));
    t.omega[j] = dw * static_cast<double>(k);
    t.total[j] = sum[bin] * scale;
  }
  return t;
}

/// S_qq S_FF - S_qF^2 - hbar^2/4; negative means an unphysical detector.
inline double verify_noise_inequality(double s_qq, double s_ff, double s_qf, double hbar = 1.0) {
  return s_qq * s_ff - s_qf * s_qf - 0.25 * hbar * hbar;
}

struct AddedNoise {
  double added = 0.0;
  double bound = 0.0;
};

namespace detail {

inline AddedNoise added_noise_unchecked(cplx chi, double s_qq, double s_ff, double s_qf) {
  const double mag = std::abs(chi);
  const double cos_phi = mag > 0.0 ? chi.real() / mag : 1.0;
  return {s_qq + mag * mag * s_ff + 2.0 * chi.real() * s_qf,
          2.0 * mag * (std::sqrt(s_qq * s_ff) + cos_phi * s_qf)};
}

}  // namespace detail

inline constexpr double kMarginTolerance = 1e-9;

inline AddedNoise added_noise_budget(const ObjectModel& model, double s_qq, double s_ff, double s_qf,
                                     double omega) {
  if (s_qq < 0.0 || s_ff < 0.0) throw DomainError("noise strengths must be non-negative");
  const double margin = verify_noise_inequality(s_qq, s_ff, s_qf, model.hbar);
  if (margin < -kMarginTolerance * model.hbar * model.hbar) {
    throw ValidationError("budgets violate S_qq S_FF - S_qF^2 >= hbar^2/4 (margin " +
                          std::to_string(margin) + ")");
  }
  const AddedNoise a = detail::added_noise_unchecked(susceptibility_freq(model, omega), s_qq, s_ff, s_qf);
  if (a.added < a.bound - 1e-10 * std::max(1.0, std::abs(a.added))) {
    throw NumericalConsistencyError("added noise below its bound");
  }
  return a;
}

/// Channel-resolved output spectrum for stationary budgets.
inline SpectrumTable analytic_spectrum(const ObjectModel& model, double s_qq, double s_ff, double s_qf,
                                       const std::vector<double>& omega_grid) {
  SpectrumTable t;
  t.resize(omega_grid.size());
  const double margin = verify_noise_inequality(s_qq, s_ff, s_qf, model.hbar);
  for (std::size_t i = 0; i < omega_grid.size(); ++i) {
    const double w = omega_grid[i];
    const cplx chi = susceptibility_freq(model, w);
    const AddedNoise a = detail::added_noise_unchecked(chi, s_qq, s_ff, s_qf);
    t.omega[i] = w;
    t.intrinsic[i] = init_spectrum(model, w);
    t.imprecision[i] = s_qq;
    t.backaction[i] = std::norm(chi) * s_ff;
    t.cross[i] = 2.0 * chi.real() * s_qf;
    t.added[i] = a.added;
    t.bound[i] = a.bound;
    t.total[i] = t.intrinsic[i] + t.added[i];
    t.margin[i] = margin;
  }
  return t;
}

struct OptimalBudget {
  double omega = 0.0;
  double phi = 0.0;
  double s_qq = 0.0;
  double s_ff = 0.0;
  double s_qf = 0.0;
  double min_added = 0.0;     // closed form
  double search_added = 0.0;  // numeric grid search
  double search_s_qq = 0.0;
  double search_s_qf = 0.0;
};

/// Closed-form optimum at one frequency. The phase is taken at |omega| so that
/// the budgets are even in omega.
inline OptimalBudget optimal_budget(const ObjectModel& model, double omega) {
  const cplx chi = susceptibility_freq(model, std::abs(omega));
  OptimalBudget o;
  o.omega = omega;
  o.phi = std::arg(chi);
  const double s = std::sin(o.phi);
  if (!(std::abs(s) > kSinPhiThreshold)) throw SingularPhaseError("sin(phi) below threshold");
  const double cot = std::cos(o.phi) / s;
  const double hbar = model.hbar;
  o.s_qq = std::abs(hbar * std::abs(chi) / (2.0 * s));
  o.s_ff = hbar * hbar * (1.0 + cot * cot) / (4.0 * o.s_qq);
  o.s_qf = -0.5 * hbar * cot;
  o.min_added = detail::added_noise_unchecked(chi, o.s_qq, o.s_ff, o.s_qf).added;
  return o;
}

namespace detail {

template <typename F>
double golden_minimize(F&& f, double a, double b, int iterations = 120) {
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < iterations && std::abs(b - a) > 1e-15 * (std::abs(a) + std::abs(b)); ++i) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return fc < fd ? c : d;
}

}  // namespace detail

struct ScanOptions {
  std::size_t grid = 400;
  double decades = 1.0;  // S_qq searched over [S*/10^d, S* 10^d]
  unsigned threads = 1;
};

/// Added noise minimized over (S_qq, S_qF) with S_FF on the inequality boundary,
/// by a log/linear grid search refined with nested golden sections.
inline void grid_search_minimum(const ObjectModel& model, OptimalBudget& o, const ScanOptions& opt) {
  const cplx chi = susceptibility_freq(model, std::abs(o.omega));
  const double hbar = model.hbar;
  auto added = [&](double log_sqq, double sqf) {
    const double sqq = std::exp(log_sqq);
    const double sff = (0.25 * hbar * hbar + sqf * sqf) / sqq;
    return detail::added_noise_unchecked(chi, sqq, sff, sqf).added;
  };
  const double l0 = std::log(o.s_qq) - opt.decades * std::log(10.0);
  const double l1 = std::log(o.s_qq) + opt.decades * std::log(10.0);
  const double half = 2.0 * std::max(0.5 * hbar, std::abs(o.s_qf));
  const double f0 = o.s_qf - half, f1 = o.s_qf + half;
  const std::size_t n = opt.grid;
  const double dl = (l1 - l0) / static_cast<double>(n - 1), df = (f1 - f0) / static_cast<double>(n - 1);
  double best = std::numeric_limits<double>::infinity();
  std::size_t bi = 0, bj = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = added(l0 + dl * static_cast<double>(i), f0 + df * static_cast<double>(j));
      if (v < best) {
        best = v;
        bi = i;
        bj = j;
      }
    }
  }
  const double la = l0 + dl * (static_cast<double>(bi) - 1.0), lb = l0 + dl * (static_cast<double>(bi) + 1.0);
  const double fa = f0 + df * (static_cast<double>(bj) - 2.0), fb = f0 + df * (static_cast<double>(bj) + 2.0);
  auto inner = [&](double l) { return detail::golden_minimize([&](double f) { return added(l, f); }, fa, fb); };
  const double l_best = detail::golden_minimize([&](double l) { return added(l, inner(l)); }, la, lb);
  const double f_best = inner(l_best);
  o.search_s_qq = std::exp(l_best);
  o.search_s_qf = f_best;
  o.search_added = std::min(best, added(l_best, f_best));
}

struct QuantumLimitScan {
  SpectrumTable table;  // rows only for included frequencies
  std::vector<OptimalBudget> optimum;
};

inline QuantumLimitScan quantum_limit_scan(const ObjectModel& model, const std::vector<double>& omega_grid,
                                           const ScanOptions& opt = {}) {
  QuantumLimitScan scan;
  std::vector<std::optional<OptimalBudget>> rows(omega_grid.size());
  parallel_for(omega_grid.size(), opt.threads, [&](std::size_t i) {
    try {
      OptimalBudget o = optimal_budget(model, omega_grid[i]);
      grid_search_minimum(model, o, opt);
      rows[i] = o;
    } catch (const SingularPhaseError&) {
    }
  });
  std::vector<double> included;
  for (std::size_t i = 0; i < omega_grid.size(); ++i) {
    if (rows[i]) {
      scan.optimum.push_back(*rows[i]);
      included.push_back(omega_grid[i]);
    } else {
      scan.table.exclusions.push_back({omega_grid[i], "sin(phi) below threshold"});
    }
  }
  SpectrumTable& t = scan.table;
  t.resize(included.size());
  for (std::size_t i = 0; i < included.size(); ++i) {
    const OptimalBudget& o = scan.optimum[i];
    const cplx chi = susceptibility_freq(model, o.omega);
    const AddedNoise a = detail::added_noise_unchecked(chi, o.s_qq, o.s_ff, o.s_qf);
    t.omega[i] = o.omega;
    t.intrinsic[i] = init_spectrum(model, o.omega);
    t.imprecision[i] = o.s_qq;
    t.backaction[i] = std::norm(chi) * o.s_ff;
    t.cross[i] = 2.0 * chi.real() * o.s_qf;
    t.added[i] = a.added;
    t.bound[i] = a.bound;
    t.total[i] = t.intrinsic[i] + a.added;
    t.margin[i] = verify_noise_inequality(o.s_qq, o.s_ff, o.s_qf, model.hbar);
  }
  return scan;
}

inline std::vector<double> linear_grid(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return g;
}

}  // namespace qmeter
