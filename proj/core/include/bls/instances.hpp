#pragma once

// Built-in problem instances. Synthetic data is drawn from std::mt19937_64
// with explicit Box-Muller normals so a seed reproduces bit-identical data on
// every platform.

#include <cstdint>
#include <optional>
#include <string>

#include "bls/problem.hpp"
#include "bls/solvers.hpp"

namespace bls {

struct KnownOptimum {
  double value = 0.0;
  std::string note;
};

/// Exact z*(p), D_p z*(p) and H_p z*(p) for instances that have them.
struct ClosedForms {
  std::function<Vector(const Vector& p)> z_star;
  std::function<Matrix(const Vector& p)> dp_z;
  std::function<StackedMatrix(const Vector& p)> hp_z;
};

struct ProblemInstance {
  std::string name;
  BilevelProblem problem;
  Vector p0;
  Vector z0;
  std::optional<KnownOptimum> known_optimum;
  std::uint64_t seed = 0;
  std::optional<ClosedForms> closed_forms;
};

/// Standard normal matrix, row-major fill order.
Matrix seeded_normal(Index rows, Index cols, std::uint64_t seed);

/// f_L = z^T A z / 2 - p^T z, f_U = ||z - z_target||^2 with a random SPD A
/// (eigenvalues in [1, 10]) and a random target. Requires m == n.
ProblemInstance make_quadratic_toy(Index m, Index n, std::uint64_t seed);
ProblemInstance make_quadratic_toy(const Matrix& a, const Vector& z_target);

/// k(z, p) = z - cos p, f_U = z^2.
ProblemInstance make_scalar_cos(double p0 = 1.0);

enum class RidgeUpper { squared, logistic };

struct RidgeOptions {
  Index features = 20;
  Index samples = 100;
  std::uint64_t seed = 0;
  double weight_scale = 0.01;  // planted weights ~ N(0, weight_scale^2)
  double noise = 0.1;
  RidgeUpper upper = RidgeUpper::squared;
};

/// Ridge regression with f_L = ||X z - Y||^2 + 10^p ||z||^2 on the training
/// half and the test-set loss as f_U. p is scalar.
ProblemInstance make_ridge(const RidgeOptions& opts);
ProblemInstance make_ridge(Index features, Index samples, std::uint64_t seed);

/// Same data with one log-weight per feature: sum_i 10^{p_i} z_i^2.
ProblemInstance make_diag_ridge(const RidgeOptions& opts);
ProblemInstance make_diag_ridge(Index features, Index samples, std::uint64_t seed);

struct LqrOptions {
  Index state_dim = 2;
  Index control_dim = 1;
  Index horizon = 10;
  std::optional<double> u_lim;
  std::optional<double> barrier_alpha;
  std::uint64_t seed = 0;
  double dt = 0.1;
  double control_weight = 0.1;
};

/// Linear dynamics rolled out over the horizon, X = Phi x0 + Gamma U.
struct LqrModel {
  Matrix a, b;
  Vector x0;
  Matrix phi_x0;   // N s x 1
  Matrix gamma;    // N s x N c
  Matrix hessian;  // Gamma^T Gamma + r I, the lower Hessian in U
  double control_weight = 0.1;
  Index state_dim = 0, control_dim = 0, horizon = 0;

  Index dim_z() const { return horizon * control_dim; }
  Index dim_p() const { return horizon * (state_dim + control_dim); }
  /// States x_1..x_N for controls u.
  Vector rollout(const Vector& u) const;
  /// Unconstrained lower solution at reference p = (X_ref, U_ref).
  Vector solve(const Vector& p) const;
  /// Exactly box-constrained lower solution, |u_j| <= u_lim (active-set).
  Vector solve_clamped(const Vector& p, double u_lim) const;
};

LqrModel make_lqr_model(const LqrOptions& opts);

struct InverseLqr {
  ProblemInstance instance;
  LqrModel model;
  Vector hidden_reference;
  Vector expert_x;
  Vector expert_u;
};

/// Inverse optimal control: the lower problem tracks a reference p with
/// states eliminated by rollout, the upper loss is the squared tracking error
/// to an expert trajectory generated at a hidden reference. With u_lim and
/// barrier_alpha the box |u| <= u_lim enters through a log barrier.
InverseLqr make_inverse_lqr_full(const LqrOptions& opts);
ProblemInstance make_inverse_lqr(const LqrOptions& opts);

}  // namespace bls
