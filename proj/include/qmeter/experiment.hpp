#pragma once

// Config-driven experiments: schema-checked JSON config in, named checks and
// CSV/JSON artifacts out.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "qmeter/csv.hpp"
#include "qmeter/dynamics.hpp"
#include "qmeter/errors.hpp"
#include "qmeter/fock.hpp"
#include "qmeter/hermite.hpp"
#include "qmeter/kernel_io.hpp"
#include "qmeter/random.hpp"
#include "qmeter/reduction_kernels.hpp"
#include "qmeter/sequence_engine.hpp"
#include "qmeter/sme_integrator.hpp"
#include "qmeter/spectra.hpp"

namespace qmeter {

using json = nlohmann::json;

struct Check {
  std::string name;
  double value = 0.0;
  double reference = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct RunReport {
  std::string scenario;
  std::string config_hash;
  std::vector<Check> checks;
  std::vector<SpectrumExclusion> exclusions;
  std::vector<std::string> artifacts;
  std::filesystem::path out_dir;
  double wall_time = 0.0;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }

  const Check* find(const std::string& name) const {
    for (const auto& c : checks) {
      if (c.name == name) return &c;
    }
    return nullptr;
  }

  /// value <= reference + tolerance
  void at_most(std::string name, double value, double limit) {
    checks.push_back({std::move(name), value, limit, 0.0, value <= limit});
  }
  /// value >= reference
  void at_least(std::string name, double value, double limit) {
    checks.push_back({std::move(name), value, limit, 0.0, value >= limit});
  }
  /// |value - reference| <= tolerance
  void near(std::string name, double value, double reference, double tolerance) {
    checks.push_back({std::move(name), value, reference, tolerance, std::abs(value - reference) <= tolerance});
  }
};

struct RunOptions {
  std::filesystem::path out_dir;
  unsigned threads = 1;
};

namespace config {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline void allow_keys(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(join(path, k), "unknown field");
  }
}

inline const json& require(const json& j, const std::string& path, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(join(path, key), "missing required field");
  return j.at(key);
}

enum class Sign { kAny, kPositive, kNonNegative };

inline double number(const json& j, const std::string& path, const std::string& key,
                     std::optional<double> fallback = std::nullopt, Sign sign = Sign::kAny) {
  const std::string p = join(path, key);
  double v = 0.0;
  if (!j.contains(key)) {
    if (!fallback) throw ConfigError(p, "missing required field");
    v = *fallback;
  } else {
    if (!j.at(key).is_number()) throw ConfigError(p, "expected a number");
    v = j.at(key).get<double>();
  }
  if (!std::isfinite(v)) throw ConfigError(p, "must be finite");
  if (sign == Sign::kPositive && !(v > 0.0)) throw ConfigError(p, "must be positive");
  if (sign == Sign::kNonNegative && v < 0.0) throw ConfigError(p, "must be non-negative");
  return v;
}

inline std::size_t count(const json& j, const std::string& path, const std::string& key,
                         std::optional<std::size_t> fallback = std::nullopt, std::size_t min = 1) {
  const std::string p = join(path, key);
  std::size_t v = 0;
  if (!j.contains(key)) {
    if (!fallback) throw ConfigError(p, "missing required field");
    v = *fallback;
  } else {
    if (!j.at(key).is_number_unsigned()) throw ConfigError(p, "expected a non-negative integer");
    v = j.at(key).get<std::size_t>();
  }
  if (v < min) throw ConfigError(p, "must be at least " + std::to_string(min));
  return v;
}

inline std::string text(const json& j, const std::string& path, const std::string& key) {
  const json& v = require(j, path, key);
  if (!v.is_string()) throw ConfigError(join(path, key), "expected a string");
  return v.get<std::string>();
}

inline ObjectModel model(const json& root) {
  const json& j = require(root, "", "model");
  allow_keys(j, "model", {"kind", "m", "omega0", "gamma", "hbar", "t_bath"});
  const std::string kind = text(j, "model", "kind");
  ObjectModel m;
  if (kind == "free-mass") {
    m.kind = ModelKind::kFreeMass;
  } else if (kind == "oscillator") {
    m.kind = ModelKind::kOscillator;
  } else if (kind == "damped-oscillator") {
    m.kind = ModelKind::kDampedOscillator;
  } else {
    throw ConfigError("model.kind", "unknown model '" + kind + "'");
  }
  m.m = number(j, "model", "m", 1.0, Sign::kPositive);
  m.omega0 = number(j, "model", "omega0", kind == "free-mass" ? 0.0 : 1.0, Sign::kNonNegative);
  m.gamma = number(j, "model", "gamma", 0.0, Sign::kNonNegative);
  m.hbar = number(j, "model", "hbar", 1.0, Sign::kPositive);
  m.t_bath = number(j, "model", "t_bath", 0.0, Sign::kNonNegative);
  try {
    m.validate();
  } catch (const DomainError& e) {
    throw ConfigError("model", e.what());
  }
  return m;
}

inline InitialState init_state(const json& root, const ObjectModel& model) {
  const json& j = require(root, "", "init");
  allow_keys(j, "init", {"kind", "temperature", "means", "covariance"});
  const std::string kind = text(j, "init", "kind");
  try {
    if (kind == "oscillator-ground") return InitialState::ground(model);
    if (kind == "oscillator-thermal") {
      return InitialState::thermal(model, number(j, "init", "temperature", std::nullopt, Sign::kNonNegative));
    }
    if (kind == "gaussian-custom") {
      const json& mu = require(j, "init", "means");
      const json& cov = require(j, "init", "covariance");
      if (!mu.is_array() || mu.size() != 2) throw ConfigError("init.means", "expected [q, p]");
      if (!cov.is_array() || cov.size() != 2 || !cov[0].is_array() || !cov[1].is_array() ||
          cov[0].size() != 2 || cov[1].size() != 2) {
        throw ConfigError("init.covariance", "expected a 2x2 array");
      }
      Eigen::Vector2d m(mu[0].get<double>(), mu[1].get<double>());
      Eigen::Matrix2d c;
      c << cov[0][0].get<double>(), cov[0][1].get<double>(), cov[1][0].get<double>(), cov[1][1].get<double>();
      return InitialState::custom(m, c, model.hbar);
    }
  } catch (const DomainError& e) {
    throw ConfigError("init", e.what());
  } catch (const json::exception& e) {
    throw ConfigError("init", e.what());
  }
  throw ConfigError("init.kind", "unknown initial state '" + kind + "'");
}

/// Kernel section: parametric {s_q, s_qf, f_bar, dt}, quantum-limited
/// {quantum_limited_at, dt}, or a sampled kernel {file}.
inline ReductionKernel kernel(const json& j, const std::string& path, const ObjectModel& model,
                              const std::filesystem::path& base_dir) {
  allow_keys(j, path, {"s_q", "s_qf", "f_bar", "dt", "quantum_limited_at", "file"});
  try {
    if (j.contains("file")) {
      std::filesystem::path f = text(j, path, "file");
      if (f.is_relative()) f = base_dir / f;
      ReductionKernel k = read_kernel(f);
      if (k.hbar() != model.hbar) throw ConfigError(join(path, "file"), "kernel hbar differs from the model");
      return k;
    }
    const double dt = number(j, path, "dt", std::nullopt, Sign::kPositive);
    const double f_bar = number(j, path, "f_bar", 0.0);
    if (j.contains("quantum_limited_at")) {
      const double w = number(j, path, "quantum_limited_at", std::nullopt, Sign::kPositive);
      const OptimalBudget o = optimal_budget(model, w);
      return make_quantum_limited_kernel(o.phi, o.s_qq, dt, f_bar, model.hbar);
    }
    return make_gaussian_kernel(number(j, path, "s_q", std::nullopt, Sign::kPositive),
                                number(j, path, "s_qf", 0.0), f_bar, dt, model.hbar);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
}

inline std::uint64_t seed(const json& root) {
  const json& s = require(root, "", "seed");
  if (!s.is_number_unsigned()) throw ConfigError("seed", "expected a non-negative integer");
  return s.get<std::uint64_t>();
}

inline std::vector<double> omega_grid(const json& root) {
  const json& j = require(root, "", "omega");
  allow_keys(j, "omega", {"min", "max", "points"});
  const double lo = number(j, "omega", "min");
  const double hi = number(j, "omega", "max");
  if (!(hi > lo)) throw ConfigError("omega.max", "must exceed omega.min");
  return linear_grid(lo, hi, count(j, "omega", "points", std::nullopt, 2));
}

/// 64-bit FNV-1a of the canonical (sorted-key, compact) dump.
inline std::string hash(const json& root) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : root.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace config

namespace scenario {

inline void write_artifact(RunReport& r, const RunOptions& opt, const std::string& name, const std::string& body) {
  std::filesystem::create_directories(opt.out_dir);
  csv::write_file((opt.out_dir / name).string(), body);
  r.artifacts.push_back(name);
}

inline double rel(double a, double b, double floor = 0.0) {
  return std::abs(a - b) / std::max(std::abs(b), floor);
}

/// Property audit of random kernels: Gaussian equality, the noise inequality
/// on Hermite superpositions, and the back-action force identities.
inline void kernel_audit(const json& root, const RunOptions& opt, RunReport& r) {
  config::allow_keys(root, "", {"scenario", "seed", "model", "audit", "output"});
  const ObjectModel model = root.contains("model") ? config::model(root) : ObjectModel::oscillator(1.0, 1.0);
  const double hbar = model.hbar;
  const std::uint64_t seed = config::seed(root);
  const json audit = root.value("audit", json::object());
  config::allow_keys(audit, "audit", {"gaussian_kernels", "hermite_kernels", "hermite_max_order", "force_kernels", "dt"});
  const std::size_t n_gauss = config::count(audit, "audit", "gaussian_kernels", 50);
  const std::size_t n_herm = config::count(audit, "audit", "hermite_kernels", 1000);
  const std::size_t max_order = config::count(audit, "audit", "hermite_max_order", 6);
  const std::size_t n_force = config::count(audit, "audit", "force_kernels", 20, 2);
  const double dt = config::number(audit, "audit", "dt", 0.01, config::Sign::kPositive);
  const double h2 = 0.25 * hbar * hbar;

  // Parametric Gaussians over S_q in [1e-4, 1], S_qF in [-2, 2] hbar, F in [-5, 5].
  std::vector<ReductionKernel> gauss;
  {
    Rng rng(seed, 0);
    for (std::size_t i = 0; i < n_gauss; ++i) {
      const double s_q = std::pow(10.0, -4.0 + 4.0 * rng.uniform());
      const double s_qf = hbar * (-2.0 + 4.0 * rng.uniform());
      const double f = -5.0 + 10.0 * rng.uniform();
      gauss.push_back(make_gaussian_kernel(s_q, s_qf, f, dt, hbar));
    }
  }
  std::vector<NoiseBudget> analytic(n_gauss), grid(n_gauss);
  parallel_for(n_gauss, opt.threads, [&](std::size_t i) {
    analytic[i] = noise_budget(gauss[i]);
    grid[i] = noise_budget(sample_kernel_on_grid(gauss[i], 8.0 * gauss[i].delta_q(), KernelGridRule::kDefaultPoints));
  });
  double eq_analytic = 0.0, eq_grid = 0.0, agree = 0.0;
  std::string gcsv = "kernel,s_q,s_f,s_qf,f_bar,margin_analytic,margin_grid\n";
  for (std::size_t i = 0; i < n_gauss; ++i) {
    const NoiseBudget& a = analytic[i];
    const NoiseBudget& g = grid[i];
    eq_analytic = std::max(eq_analytic, std::abs(a.product_margin) / h2);
    eq_grid = std::max(eq_grid, std::abs(g.product_margin) / h2);
    agree = std::max({agree, rel(g.s_q, a.s_q), rel(g.s_f, a.s_f), rel(g.s_qf, a.s_qf, hbar),
                      rel(g.f_bar, a.f_bar, hbar / dt), rel(g.product_margin + h2, a.product_margin + h2)});
    gcsv += std::to_string(i) + ',' + csv::number(a.s_q) + ',' + csv::number(a.s_f) + ',' + csv::number(a.s_qf) +
            ',' + csv::number(a.f_bar) + ',' + csv::number(a.product_margin) + ',' + csv::number(g.product_margin) + '\n';
  }
  r.at_most("gaussian_equality_analytic", eq_analytic, 1e-12);
  r.at_most("gaussian_equality_grid", eq_grid, 1e-6);
  r.at_most("gaussian_grid_agreement", agree, 1e-6);
  write_artifact(r, opt, "gaussian_budgets.csv", gcsv);

  // Random Hermite superpositions (linearity enforced by a shift).
  std::vector<double> margins(n_herm);
  parallel_for(n_herm, opt.threads, [&](std::size_t i) {
    Rng rng(seed, 1000000 + i);
    const int order = 1 + static_cast<int>(rng.uniform() * static_cast<double>(max_order));
    const double scale = std::exp(std::log(0.5) + std::log(4.0) * rng.uniform());
    margins[i] = noise_budget(hermite_kernel(random_hermite_superposition(rng, order, scale), dt, hbar)).product_margin;
  });
  double min_margin = std::numeric_limits<double>::infinity();
  std::size_t strict = 0;
  std::string hcsv = "kernel,product_margin\n";
  for (std::size_t i = 0; i < n_herm; ++i) {
    min_margin = std::min(min_margin, margins[i]);
    if (margins[i] > 0.1 * h2) ++strict;
    hcsv += std::to_string(i) + ',' + csv::number(margins[i]) + '\n';
  }
  r.at_least("hermite_min_margin", min_margin, -1e-9);
  r.at_least("hermite_suboptimal_fraction", static_cast<double>(strict) / static_cast<double>(n_herm), 0.10);
  write_artifact(r, opt, "hermite_margins.csv", hcsv);

  // Force statistics: half real kernels, half complex; Gaussian and Hermite.
  double force_identity = 0.0, real_mean = 0.0;
  std::string fcsv = "kernel,real,mean,second_moment,variance_dt,s_f\n";
  for (std::size_t i = 0; i < n_force; ++i) {
    Rng rng(seed, 2000000 + i);
    const bool real = i % 2 == 0;
    const bool hermite = (i / 2) % 2 == 1;
    ReductionKernel k = make_gaussian_kernel(0.01, 0.0, 0.0, dt, hbar);
    if (hermite) {
      HermiteSuperposition h = random_hermite_superposition(rng, 1 + static_cast<int>(rng.uniform() * 4.0), 1.0);
      if (real) {
        for (auto& c : h.coefficients) c = cplx(c.real(), 0.0);
        double n = 0.0;
        for (auto& c : h.coefficients) n += std::norm(c);
        for (auto& c : h.coefficients) c /= std::sqrt(n);
        h.shift = h.unshifted_mean();
      }
      k = hermite_kernel(h, dt, hbar);
    } else {
      const double s_q = std::pow(10.0, -3.0 + 2.0 * rng.uniform());
      k = real ? make_gaussian_kernel(s_q, 0.0, 0.0, dt, hbar)
               : make_gaussian_kernel(s_q, hbar * (-1.0 + 2.0 * rng.uniform()), -5.0 + 10.0 * rng.uniform(), dt, hbar);
    }
    const ForceStatistics f = force_statistics(k);
    const NoiseBudget b = noise_budget(k);
    force_identity = std::max(force_identity, rel(f.variance * f.dt, b.s_f));
    if (real) real_mean = std::max(real_mean, std::abs(f.mean));
    fcsv += std::to_string(i) + ',' + (real ? "1" : "0") + ',' + csv::number(f.mean) + ',' +
            csv::number(f.second_moment) + ',' + csv::number(f.variance * f.dt) + ',' + csv::number(b.s_f) + '\n';
  }
  r.at_most("force_variance_identity", force_identity, 1e-8);
  r.at_most("real_kernel_mean_force", real_mean, 1e-10);
  write_artifact(r, opt, "force_statistics.csv", fcsv);
}

inline MeasurementSchedule schedule(const json& root, const std::filesystem::path& base_dir) {
  MeasurementSchedule s;
  s.model = config::model(root);
  s.init = config::init_state(root, s.model);
  const json& entries = config::require(root, "", "schedule");
  if (!entries.is_array() || entries.empty()) throw ConfigError("schedule", "expected a non-empty array");
  for (std::size_t j = 0; j < entries.size(); ++j) {
    const std::string p = "schedule[" + std::to_string(j) + "]";
    config::allow_keys(entries[j], p, {"t", "kernel"});
    const double t = config::number(entries[j], p, "t", std::nullopt, config::Sign::kNonNegative);
    s.entries.push_back({t, config::kernel(config::require(entries[j], p, "kernel"), p + ".kernel", s.model, base_dir)});
  }
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError("schedule", e.what());
  }
  return s;
}

/// Analytic moments against the grid oracle and Monte Carlo.
inline void sequence(const json& root, const RunOptions& opt, RunReport& r, const std::filesystem::path& base_dir) {
  config::allow_keys(root, "", {"scenario", "seed", "model", "init", "schedule", "n_traj", "oracle",
                                "expected_covariance", "export_records", "output"});
  const MeasurementSchedule s = schedule(root, base_dir);
  const std::uint64_t seed = config::seed(root);
  const std::size_t n_traj = config::count(root, "", "n_traj", 200000, 100);
  const std::size_t n_export = config::count(root, "", "export_records", 100, 0);
  const bool use_oracle = root.value("oracle", s.size() <= 3 && s.init.is_pure(s.model.hbar));
  const auto n = static_cast<Eigen::Index>(s.size());

  const MomentReport an = analytic_moments(s);
  if (root.contains("expected_covariance")) {
    const json& e = root.at("expected_covariance");
    if (!e.is_array() || e.size() != s.size()) throw ConfigError("expected_covariance", "expected an N x N array");
    double dev = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!e[j].is_array() || e[j].size() != s.size()) throw ConfigError("expected_covariance", "expected an N x N array");
      for (Eigen::Index l = 0; l < n; ++l) dev = std::max(dev, std::abs(an.covariance(j, l) - e[j][l].get<double>()));
    }
    r.at_most("analytic_vs_expected", dev, 1e-12);
  }
  r.at_least("covariance_min_eigenvalue", Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(an.covariance).eigenvalues().minCoeff(), -1e-10);

  std::optional<MomentReport> oracle;
  if (use_oracle) {
    oracle = brute_force_joint_moments(s);
    const double dm = (oracle->means - an.means).cwiseAbs().maxCoeff();
    const double dc = (oracle->covariance - an.covariance).cwiseAbs().maxCoeff();
    r.at_most("oracle_vs_analytic", std::max(dm, dc), 1e-4);
  }
  const MomentReport mc = monte_carlo_moments(s, n_traj, seed, {opt.threads, 100});
  const Eigen::ArrayXd zm = (mc.means - an.means).array().abs() / mc.mean_se.array();
  const Eigen::ArrayXXd zc = (mc.covariance - an.covariance).array().abs() / mc.covariance_se.array();
  r.at_most("monte_carlo_mean_z", zm.maxCoeff(), 4.0);
  r.at_most("monte_carlo_covariance_z", zc.maxCoeff(), 4.0);

  std::string m = "quantity,j,l,analytic,oracle,monte_carlo,standard_error\n";
  auto row = [&](const char* q, Eigen::Index j, Eigen::Index l, double a, double o, double c, double se) {
    m += std::string(q) + ',' + std::to_string(j + 1) + ',' + std::to_string(l + 1) + ',' + csv::number(a) + ',' +
         (oracle ? csv::number(o) : std::string()) + ',' + csv::number(c) + ',' + csv::number(se) + '\n';
  };
  for (Eigen::Index j = 0; j < n; ++j) {
    row("mean", j, j, an.means(j), oracle ? oracle->means(j) : 0.0, mc.means(j), mc.mean_se(j));
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index l = 0; l <= j; ++l) {
      row("covariance", j, l, an.covariance(j, l), oracle ? oracle->covariance(j, l) : 0.0, mc.covariance(j, l),
          mc.covariance_se(j, l));
    }
  }
  write_artifact(r, opt, "moments.csv", m);
  std::vector<MeasurementRecord> recs;
  for (std::size_t i = 0; i < std::min(n_export, n_traj); ++i) recs.push_back(sample_sequence(s, seed, i));
  write_artifact(r, opt, "records.csv", records_csv(s, recs));
}

/// Diffusive ensemble against the noise-averaged evolution, plus the
/// Kraus/Ito step-size study.
inline void sme(const json& root, const RunOptions& opt, RunReport& r) {
  config::allow_keys(root, "", {"scenario", "seed", "model", "init", "s_f", "duration", "dt", "fock_dim",
                                "n_traj", "checkpoints", "order_check", "kraus_steps", "scheme", "output"});
  const ObjectModel model = config::model(root);
  if (model.kind != ModelKind::kOscillator) throw ConfigError("model.kind", "sme scenario needs the oscillator");
  const InitialState init = config::init_state(root, model);
  const std::uint64_t seed = config::seed(root);
  const double s_f = config::number(root, "", "s_f", std::nullopt, config::Sign::kPositive);
  const double duration = config::number(root, "", "duration", std::nullopt, config::Sign::kPositive);
  const double dt = config::number(root, "", "dt", std::nullopt, config::Sign::kPositive);
  const auto dim = static_cast<int>(config::count(root, "", "fock_dim", 60, 4));
  const std::size_t n_traj = config::count(root, "", "n_traj", 2000);
  const std::size_t checkpoints = config::count(root, "", "checkpoints", 10);
  const std::size_t kraus_steps = config::count(root, "", "kraus_steps", 50);
  const json oc = root.value("order_check", json::object());
  config::allow_keys(oc, "order_check", {"offset", "dt"});
  SmeScheme scheme = SmeScheme::kPositiveMap;
  if (root.contains("scheme")) {
    const std::string name = config::text(root, "", "scheme");
    if (name == "euler-maruyama") {
      scheme = SmeScheme::kEulerMaruyama;
    } else if (name != "positive-map") {
      throw ConfigError("scheme", "expected positive-map or euler-maruyama");
    }
  }
  const double hbar = model.hbar;
  try {
    step_count(duration, dt);
  } catch (const Error& e) {
    throw ConfigError("duration", e.what());
  }

  const FockSpace space = FockSpace::of(model, dim);
  const DensityState rho0 = fock_state(space, model, init);
  const double s_q = hbar * hbar / (4.0 * s_f);
  const ReductionKernel kernel = make_gaussian_kernel(s_q, 0.0, 0.0, dt, hbar);

  const double coeff = lindblad_coefficient(kernel);
  r.at_most("double_commutator_coefficient", rel(coeff, s_f / (2.0 * hbar * hbar)), 1e-8);

  const ItoEnsembleResult ens =
      run_ito_ensemble(rho0, space, s_f, kernel.delta_q(), duration, dt, n_traj, seed, opt.threads, checkpoints, scheme);
  const std::vector<DensityState> ref = lindblad_evolve(rho0, space, s_f, duration, dt, checkpoints);
  const Eigen::MatrixXcd qop = space.q_matrix(), pop = space.p_matrix();
  double frob = 0.0;
  std::string e = "t,frobenius,mean_q_ito,mean_q_lindblad,mean_p2_ito,mean_p2_lindblad\n";
  for (std::size_t c = 0; c < ens.times.size(); ++c) {
    const double d = (ens.mean_rho[c] - ref[c].rho).norm();
    frob = std::max(frob, d);
    const DensityState avg{ens.mean_rho[c], ens.times[c]};
    e += csv::number(ens.times[c]) + ',' + csv::number(d) + ',' + csv::number(avg.expect(qop).real()) + ',' +
         csv::number(ref[c].expect(qop).real()) + ',' + csv::number(avg.expect(pop * pop).real()) + ',' +
         csv::number(ref[c].expect(pop * pop).real()) + '\n';
  }
  r.at_most("ito_vs_lindblad_frobenius", frob, 5.0 / std::sqrt(static_cast<double>(n_traj)));
  r.at_most("ito_trace_error", ens.max_trace_error, 1e-9);
  r.at_most("ito_max_purity", ens.max_purity, 1.0 + 1e-9);
  write_artifact(r, opt, "ensemble.csv", e);
  write_artifact(r, opt, "trajectory.csv", trajectory_csv(ens.first_trajectory));

  // Step-halving study: one Kraus step and one Ito step from the same state with
  // the same outcome offset; the difference in <q>, <p> should shrink as dt^2.
  const double offset = config::number(oc, "order_check", "offset", space.ell);
  const double dt0 = config::number(oc, "order_check", "dt", dt, config::Sign::kPositive);
  std::string o = "dt,delta_mean_q,delta_mean_p,delta_var_q,delta_var_p\n";
  std::vector<double> gaps;
  for (int level = 0; level < 3; ++level) {
    const double h = dt0 / std::pow(2.0, level);
    const ReductionKernel k = make_gaussian_kernel(s_q, 0.0, 0.0, h, hbar);
    const KrausEngine engine(space, k);
    DensityState base = rho0;
    free_evolve(base, space, h);
    const double q_bar = base.expect_q(space);
    const DensityState kr = engine.update(base, q_bar + offset);
    DensityState it = rho0;
    ItoIntegrator(space, s_f, h, scheme).step(it, offset * std::sqrt(h) / k.delta_q());
    const double dq = std::abs((kr.expect(qop) - it.expect(qop)).real());
    const double dp = std::abs((kr.expect(pop) - it.expect(pop)).real());
    auto var = [&](const DensityState& st, const Eigen::MatrixXcd& op) {
      const double m1 = st.expect(op).real();
      return st.expect(op * op).real() - m1 * m1;
    };
    o += csv::number(h) + ',' + csv::number(dq) + ',' + csv::number(dp) + ',' +
         csv::number(std::abs(var(kr, qop) - var(it, qop))) + ',' + csv::number(std::abs(var(kr, pop) - var(it, pop))) + '\n';
    gaps.push_back(std::hypot(dq, dp * space.ell * space.ell / hbar));
  }
  r.near("kraus_ito_order_ratio", gaps[0] / gaps[1], 4.0, 0.5);
  r.near("kraus_ito_order_ratio_fine", gaps[1] / gaps[2], 4.0, 0.5);
  write_artifact(r, opt, "order.csv", o);

  // Exact Kraus trajectory: trace and purity invariants.
  TrajectoryOptions to;
  to.backend = TrajectoryBackend::kFockKraus;
  to.fock_dim = dim;
  const TrajectoryResult kt = run_trajectory(init, model, kernel, dt * static_cast<double>(kraus_steps), dt, seed, to, n_traj);
  double tr_err = 0.0, pur = 0.0;
  for (const auto& smp : kt.samples) {
    tr_err = std::max(tr_err, std::abs(smp.trace - 1.0));
    pur = std::max(pur, smp.purity);
  }
  r.at_most("kraus_trace_error", tr_err, 1e-9);
  r.at_most("kraus_max_purity", pur, 1.0 + 1e-9);
  write_artifact(r, opt, "kraus_trajectory.csv", trajectory_csv(kt.samples));
}

/// Simulated record of a damped oscillator under constant-rate measurement
/// against the analytic output spectrum.
inline void spectrum(const json& root, const RunOptions& opt, RunReport& r, const std::filesystem::path& base_dir) {
  config::allow_keys(root, "", {"scenario", "seed", "model", "kernel", "samples", "window", "band", "output"});
  const ObjectModel model = config::model(root);
  if (model.kind != ModelKind::kDampedOscillator) throw ConfigError("model.kind", "spectrum scenario needs the damped oscillator");
  const std::uint64_t seed = config::seed(root);
  const ReductionKernel kernel = config::kernel(config::require(root, "", "kernel"), "kernel", model, base_dir);
  if (!kernel.is_parametric()) throw ConfigError("kernel", "spectrum scenario needs a Gaussian kernel");
  const std::size_t samples = config::count(root, "", "samples", 1000000);
  const std::size_t window = config::count(root, "", "window", 4096, 8);
  const json& band = config::require(root, "", "band");
  if (!band.is_array() || band.size() != 2 || !band[0].is_number() || !band[1].is_number() ||
      !(band[1].get<double>() > band[0].get<double>())) {
    throw ConfigError("band", "expected [lo, hi] with hi > lo");
  }
  const double dt = kernel.dt();
  const NoiseBudget b = noise_budget(kernel);
  r.at_least("kernel_margin", b.product_margin, -1e-9 * model.hbar * model.hbar);

  const std::vector<double> rec = simulate_damped_record(model, kernel, samples, seed);
  SpectrumTable psd;
  try {
    psd = periodogram({rec}, dt, {window, 0.5}, opt.threads);
  } catch (const ConfigError& e) {
    throw ConfigError("window", e.what());
  }

  double mean = 0.0, var = 0.0;
  for (double v : rec) mean += v;
  mean /= static_cast<double>(rec.size());
  for (double v : rec) var += (v - mean) * (v - mean);
  var /= static_cast<double>(rec.size());
  double integral = 0.0;
  for (double s : psd.total) integral += s;
  integral *= (psd.omega[1] - psd.omega[0]) / (2.0 * kPi);
  r.at_most("parseval", rel(integral, var), 0.01);

  std::vector<double> w_band, measured;
  for (std::size_t i = 0; i < psd.size(); ++i) {
    if (psd.omega[i] >= band[0].get<double>() && psd.omega[i] <= band[1].get<double>()) {
      w_band.push_back(psd.omega[i]);
      measured.push_back(psd.total[i]);
    }
  }
  if (w_band.empty()) throw ConfigError("band", "no periodogram bins inside the band");
  const SpectrumTable an = analytic_spectrum(model, b.s_q, b.s_f, b.s_qf, w_band);
  double ss = 0.0;
  std::string wcsv = std::string(kSpectrumConvention) + "\nomega,measured,analytic,relative_error\n";
  for (std::size_t i = 0; i < w_band.size(); ++i) {
    const double e = (measured[i] - an.total[i]) / an.total[i];
    ss += e * e;
    wcsv += csv::number(w_band[i]) + ',' + csv::number(measured[i]) + ',' + csv::number(an.total[i]) + ',' + csv::number(e) + '\n';
  }
  r.at_most("welch_rms_relative_error", std::sqrt(ss / static_cast<double>(w_band.size())), 0.10);
  write_artifact(r, opt, "welch.csv", wcsv);
  write_artifact(r, opt, "analytic.csv", spectrum_csv(an));
}

/// Closed-form quantum limit against a numeric search and the intrinsic spectrum.
inline void quantum_limit(const json& root, const RunOptions& opt, RunReport& r) {
  config::allow_keys(root, "", {"scenario", "seed", "model", "omega", "reference", "output"});
  const ObjectModel model = config::model(root);
  if (model.kind != ModelKind::kDampedOscillator) throw ConfigError("model.kind", "quantum-limit scenario needs the damped oscillator");
  if (model.t_bath != 0.0) throw ConfigError("model.t_bath", "quantum-limit scenario compares against the zero-temperature spectrum");
  config::seed(root);
  const std::vector<double> grid = config::omega_grid(root);
  const double hbar = model.hbar;

  ScanOptions so;
  so.threads = opt.threads;
  const QuantumLimitScan scan = quantum_limit_scan(model, grid, so);
  r.exclusions = scan.table.exclusions;
  double d_search = 0.0, d_imchi = 0.0, d_init = 0.0, d_match = 0.0, d_margin = 0.0, d_kernel = 0.0;
  std::string ocsv = "omega,phi,s_qq,s_ff,s_qf,min_added,search_added,search_s_qq,search_s_qf,hbar_abs_im_chi\n";
  for (const OptimalBudget& o : scan.optimum) {
    const cplx chi = susceptibility_freq(model, o.omega);
    const double floor = hbar * std::abs(chi.imag());
    d_search = std::max(d_search, rel(o.search_added, o.min_added));
    d_imchi = std::max(d_imchi, rel(o.min_added, floor));
    d_init = std::max(d_init, rel(o.min_added, init_spectrum(model, o.omega)));
    d_match = std::max(d_match, std::abs(o.s_qq - std::norm(chi) * o.s_ff) / o.s_qq);
    d_margin = std::max(d_margin, std::abs(verify_noise_inequality(o.s_qq, o.s_ff, o.s_qf, hbar)) / (0.25 * hbar * hbar));
    const NoiseBudget kb = noise_budget(make_quantum_limited_kernel(o.phi, o.s_qq, 0.01, 0.0, hbar));
    d_kernel = std::max({d_kernel, rel(kb.s_q, o.s_qq), rel(kb.s_f, o.s_ff), rel(kb.s_qf, o.s_qf, hbar)});
    ocsv += csv::number(o.omega) + ',' + csv::number(o.phi) + ',' + csv::number(o.s_qq) + ',' + csv::number(o.s_ff) + ',' +
            csv::number(o.s_qf) + ',' + csv::number(o.min_added) + ',' + csv::number(o.search_added) + ',' +
            csv::number(o.search_s_qq) + ',' + csv::number(o.search_s_qf) + ',' + csv::number(floor) + '\n';
  }
  r.at_least("included_frequencies", static_cast<double>(scan.optimum.size()), 1.0);
  r.at_most("closed_form_vs_search", d_search, 1e-6);
  r.at_most("min_added_vs_hbar_im_chi", d_imchi, 1e-10);
  r.at_most("min_added_vs_intrinsic", d_init, 1e-10);
  r.at_most("matching_condition", d_match, 1e-8);
  r.at_most("optimum_margin", d_margin, 1e-10);
  r.at_most("kernel_budget_consistency", d_kernel, 1e-8);

  if (root.contains("reference")) {
    const json& ref = root.at("reference");
    config::allow_keys(ref, "reference", {"omega", "s_qq", "s_ff", "s_qf", "min_added"});
    OptimalBudget o = optimal_budget(model, config::number(ref, "reference", "omega"));
    grid_search_minimum(model, o, so);
    const double tol = 1e-10;
    r.near("reference_s_qq", o.s_qq, config::number(ref, "reference", "s_qq"), tol * std::abs(o.s_qq));
    r.near("reference_s_ff", o.s_ff, config::number(ref, "reference", "s_ff"), tol * std::abs(o.s_ff));
    r.near("reference_s_qf", o.s_qf, config::number(ref, "reference", "s_qf"), tol * hbar);
    r.near("reference_min_added", o.min_added, config::number(ref, "reference", "min_added"), tol * o.min_added);
    r.near("reference_search_min_added", o.search_added, config::number(ref, "reference", "min_added"), 1e-6 * o.min_added);
  }
  write_artifact(r, opt, "quantum_limit.csv", spectrum_csv(scan.table));
  write_artifact(r, opt, "optimum.csv", ocsv);
}

}  // namespace scenario

inline json load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
}

/// Runs the scenario named in the config. Artifacts go to opt.out_dir, or to the
/// config's "output" field when out_dir is empty. Kernel files are resolved
/// relative to base_dir.
inline RunReport run_experiment(const json& root, RunOptions opt, const std::filesystem::path& base_dir = ".") {
  const auto start = std::chrono::steady_clock::now();
  if (!root.is_object()) throw ConfigError("", "config must be a JSON object");
  const std::string name = config::text(root, "", "scenario");
  config::seed(root);
  if (opt.out_dir.empty()) {
    std::filesystem::path out = root.contains("output") ? config::text(root, "", "output") : "qmeter-out";
    opt.out_dir = out;
  }
  RunReport r;
  r.scenario = name;
  r.config_hash = config::hash(root);
  r.out_dir = opt.out_dir;
  if (name == "kernel-audit") {
    scenario::kernel_audit(root, opt, r);
  } else if (name == "sequence") {
    scenario::sequence(root, opt, r, base_dir);
  } else if (name == "sme") {
    scenario::sme(root, opt, r);
  } else if (name == "spectrum") {
    scenario::spectrum(root, opt, r, base_dir);
  } else if (name == "quantum-limit") {
    scenario::quantum_limit(root, opt, r);
  } else {
    throw ConfigError("scenario", "unknown scenario '" + name + "'");
  }
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline RunReport run_experiment(const std::filesystem::path& config_path, RunOptions opt = {}) {
  return run_experiment(load_config(config_path), std::move(opt), config_path.parent_path());
}

enum class ReportFormat { kJson, kText };

/// Deterministic rendering; wall time is included only on request because it
/// differs between otherwise identical runs.
inline std::string emit_report(const RunReport& r, ReportFormat format, bool with_wall_time = false) {
  if (format == ReportFormat::kJson) {
    json j;
    j["scenario"] = r.scenario;
    j["config_hash"] = r.config_hash;
    j["passed"] = r.passed();
    j["checks"] = json::array();
    for (const auto& c : r.checks) {
      j["checks"].push_back({{"name", c.name}, {"value", c.value}, {"reference", c.reference},
                             {"tolerance", c.tolerance}, {"passed", c.passed}});
    }
    j["exclusions"] = json::array();
    for (const auto& e : r.exclusions) j["exclusions"].push_back({{"omega", e.omega}, {"reason", e.reason}});
    j["artifacts"] = r.artifacts;
    if (with_wall_time) j["wall_time"] = r.wall_time;
    return j.dump(2) + '\n';
  }
  std::string out = r.scenario + " " + (r.passed() ? "PASS" : "FAIL") + " config " + r.config_hash + '\n';
  std::vector<const Check*> order;
  for (const auto& c : r.checks) {
    if (!c.passed) order.push_back(&c);
  }
  for (const auto& c : r.checks) {
    if (c.passed) order.push_back(&c);
  }
  for (const Check* c : order) {
    out += std::string(c->passed ? "  pass " : "  FAIL ") + c->name + " value=" + csv::number(c->value) +
           " reference=" + csv::number(c->reference);
    if (c->tolerance != 0.0) out += " tolerance=" + csv::number(c->tolerance);
    out += '\n';
  }
  if (!r.exclusions.empty()) {
    out += "excluded frequencies:\n";
    for (const auto& e : r.exclusions) out += "  omega=" + csv::number(e.omega) + " " + e.reason + '\n';
  }
  for (const auto& a : r.artifacts) out += "  artifact " + a + '\n';
  if (with_wall_time) out += "  wall_time " + csv::number(r.wall_time) + " s\n";
  return out;
}

}  // namespace qmeter
