#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "qmeter/experiment.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitNumerical = 1;
constexpr int kExitConfig = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qmeter: sequential quantum measurement experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string format = "text";
  unsigned threads = 1;

  CLI::App* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "Artifact directory (overrides the config's output field)");
  run->add_option("--format", format, "Report format on stdout")
      ->check(CLI::IsMember({"json", "text"}));
  run->add_option("--threads", threads, "Worker threads")->check(CLI::Range(1u, 1024u));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitConfig;
  }

  try {
    qmeter::RunOptions opt;
    opt.out_dir = out_dir;
    opt.threads = threads;
    const std::filesystem::path path(config_path);
    const qmeter::RunReport report = qmeter::run_experiment(path, opt);
    std::filesystem::create_directories(report.out_dir);
    qmeter::csv::write_file((report.out_dir / "report.json").string(),
                            qmeter::emit_report(report, qmeter::ReportFormat::kJson));

    const auto fmt = format == "json" ? qmeter::ReportFormat::kJson : qmeter::ReportFormat::kText;
    std::cout << qmeter::emit_report(report, fmt, fmt == qmeter::ReportFormat::kText);
    return report.passed() ? kExitPass : kExitNumerical;
  } catch (const qmeter::ConfigError& e) {
    std::cerr << "config error";
    if (!e.path().empty()) std::cerr << " at " << e.path();
    std::cerr << ": " << e.what() << '\n';
    return kExitConfig;
  } catch (const qmeter::Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitConfig;
  }
}
