// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner for the gradient-aligned multi-objective toolkit.
//
//   pga run --config <path> [--set key=value]...
//   pga gradcheck
//   pga dump-config
//
// Exit codes: 0 success, 1 configuration error, 2 runtime abort.

#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pga/gradcheck.hpp"
#include "pga/runner.hpp"

namespace {

int usage(std::ostream &out) {
  out << "usage:\n"
      << "  pga run --config <path> [--set key=value]...\n"
      << "  pga run [--set key=value]...   (flags only; experiment/method required)\n"
      << "  pga gradcheck\n"
      << "  pga dump-config\n";
  return 1;
}

int cmd_run(const std::vector<std::string> &args) {
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) {
        std::cerr << "config error: --config requires a path\n";
        return 1;
      }
      config_path = args[++i];
    } else if (args[i] == "--set") {
      if (i + 1 >= args.size()) {
        std::cerr << "config error: --set requires key=value\n";
        return 1;
      }
      overrides.push_back(args[++i]);
    } else {
      std::cerr << "config error: unknown argument " << args[i] << "\n";
      return 1;
    }
  }
  const pga::RunSpec spec = pga::parse_config(config_path, overrides);
  const pga::RunSummary summary = pga::run(spec);
  if (spec.experiment == pga::Experiment::zdt1) {
    std::cout << "convergence_mean=" << pga::format_g17(summary.convergence_mean)
              << "\n";
  } else {
    std::cout << "id_acc_mean=" << pga::format_g17(summary.id_acc_mean)
              << " ood_acc_mean=" << pga::format_g17(summary.ood_acc_mean)
              << "\n";
  }
  std::cout << "wrote " << spec.output_dir << "/summary.txt\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty())
    return usage(std::cerr);
  const std::string cmd = args[0];
  args.erase(args.begin());
  try {
    if (cmd == "run")
      return cmd_run(args);
    if (cmd == "gradcheck") {
      const bool ok = pga::run_gradcheck_suite(std::cout);
      if (!ok) {
        std::cerr << "abort: gradient check failed\n";
        return 2;
      }
      return 0;
    }
    if (cmd == "dump-config") {
      if (!args.empty()) {
        std::cerr << "config error: dump-config takes no arguments\n";
        return 1;
      }
      pga::dump_defaults(std::cout);
      return 0;
    }
    std::cerr << "config error: unknown subcommand " << cmd << "\n";
    return usage(std::cerr);
  } catch (const pga::ConfigError &e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "abort: " << e.what() << "\n";
    return 2;
  }
}
