#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bls/instances.hpp"
#include "bls/solvers.hpp"
#include "cli/table.hpp"

namespace bls::cli {

/// Any problem with the configuration file; maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProblemConfig {
  std::string name;  // quadratic, cos, ridge, diag, lqr
  Index m = 4;       // quadratic
  Index n = 4;
  RidgeOptions ridge;
  LqrOptions lqr;
  std::optional<std::vector<double>> p0;  // overrides the instance default
};

struct GradcheckConfig {
  std::optional<std::vector<double>> p;  // defaults to the instance p0
  double oracle_tol = 1e-12;
  double tol_jacobian = 1e-5;
  double tol_hessian = 1e-4;
  double tol_gradient = 1e-5;
  double tol_total_hessian = 1e-4;
  bool expect_inexact = false;
};

struct BoundsConfig {
  std::optional<std::vector<double>> p;
  std::vector<double> deltas{1e-2, 1e-3, 1e-4};
  int trials = 100;
  double eps_max = 1.0;
  double oracle_tol = 1e-12;
};

struct LandscapeConfig {
  std::string method = "gd";
  int grid = 21;
  double span = 1.5;
};

struct RunConfig {
  ProblemConfig problem;
  std::vector<std::string> methods{"newton"};
  std::vector<std::uint64_t> seeds{0};
  LowerConfig lower;
  UpperConfig upper;
  DiffConfig diff;
  GradcheckConfig gradcheck;
  BoundsConfig bounds;
  LandscapeConfig landscape;
  std::string out_dir = "out";
  Format format = Format::csv;
  bool timing = true;
};

/// Strict JSON: comments, duplicate keys, unknown keys and wrong types are
/// rejected with the offending key path (and its line when it can be found).
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

UpperMethod parse_method(const std::string& s);

/// Builds the configured instance for one seed (seed ignored by cos).
ProblemInstance build_instance(const ProblemConfig& cfg, std::uint64_t seed);

}  // namespace bls::cli
