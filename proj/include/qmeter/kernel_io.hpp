#pragma once

// CSV round trip for grid-sampled kernels: `delta_q,re_omega,im_omega` rows plus
// a JSON sidecar carrying dt and hbar.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "qmeter/csv.hpp"
#include "qmeter/reduction_kernels.hpp"

namespace qmeter {

inline std::filesystem::path kernel_sidecar_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".json");
  return p;
}

inline std::string kernel_csv(const ReductionKernel& kernel) {
  if (kernel.is_parametric()) throw ValidationError("only grid-sampled kernels serialize to CSV");
  std::string out = "delta_q,re_omega,im_omega\n";
  const auto v = kernel.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    out += csv::number(kernel.grid()[i]) + ',' + csv::number(v[i].real()) + ',' +
           csv::number(v[i].imag()) + '\n';
  }
  return out;
}

inline void write_kernel(const ReductionKernel& kernel, const std::filesystem::path& csv_path) {
  csv::write_file(csv_path.string(), kernel_csv(kernel));
  nlohmann::json meta = {{"dt", kernel.dt()}, {"hbar", kernel.hbar()}};
  csv::write_file(kernel_sidecar_path(csv_path).string(), meta.dump(2) + "\n");
}

inline ReductionKernel read_kernel(const std::filesystem::path& csv_path) {
  std::ifstream meta_in(kernel_sidecar_path(csv_path));
  if (!meta_in) throw ValidationError("missing kernel sidecar " + kernel_sidecar_path(csv_path).string());
  const auto meta = nlohmann::json::parse(meta_in);
  const double dt = meta.at("dt").get<double>();
  const double hbar = meta.value("hbar", 1.0);

  std::ifstream in(csv_path);
  if (!in) throw ValidationError("cannot open " + csv_path.string());
  std::string line;
  std::getline(in, line);
  if (line != "delta_q,re_omega,im_omega") throw ValidationError("unexpected kernel CSV header");
  std::vector<double> x;
  std::vector<cplx> v;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b, c;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c)) {
      throw ValidationError("malformed kernel CSV row: " + line);
    }
    x.push_back(std::stod(a));
    v.emplace_back(std::stod(b), std::stod(c));
  }
  if (x.size() < 2) throw ValidationError("kernel CSV has too few rows");
  const double step = (x.back() - x.front()) / static_cast<double>(x.size() - 1);
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (std::abs((x[i] - x[i - 1]) - step) > 1e-9 * step) {
      throw ValidationError("kernel CSV abscissae are not uniform");
    }
  }
  return ReductionKernel::sampled({x.front(), step, x.size()}, std::move(v), dt, hbar);
}

}  // namespace qmeter
