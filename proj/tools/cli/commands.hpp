#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

#include "cli/config.hpp"

namespace bls::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kSolverFailure = 2, kVerificationFailure = 3 };

/// Command-line overrides applied on top of the config file.
struct CommandOptions {
  std::optional<std::string> out_dir;
  std::optional<Format> format;
  int jobs = 1;
  bool expect_inexact = false;
};

int cmd_tune(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log);
int cmd_gradcheck(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log);
int cmd_bounds(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log);
int cmd_landscape(const RunConfig& cfg, const CommandOptions& opts, std::ostream& log);

/// Loads the config and dispatches by name, mapping exceptions to exit codes.
int run_command(const std::string& name, const std::string& config_path,
                const CommandOptions& opts, std::ostream& log, std::ostream& err);

/// Runs fn(0..count-1) on up to `jobs` threads; rethrows the first failure in
/// index order after all tasks finish.
void run_parallel(int jobs, std::size_t count, const std::function<void(std::size_t)>& fn);

/// ||a - b||_F / ||b||_F, or ||a - b||_F when b = 0.
double relative_error(const Matrix& a, const Matrix& b);

}  // namespace bls::cli
